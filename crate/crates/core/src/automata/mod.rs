//! Automata and their sequential semantics.

pub mod bool_ta;
pub mod counting;
pub mod hmm;
pub mod pfa;
pub mod tree;
pub mod wfa;
pub mod wta;

pub use bool_ta::{bool_ta_to_wta, BoolTreeAutomaton};
pub use counting::{default_alphabet, make_counting_wfa, make_k_counting_wfa, make_k_counting_wfa_over};
pub use hmm::{hmm_to_wfa, Hmm};
pub use pfa::{pfa_to_wfa, Pfa};
pub use tree::{parse_tree, str_to_tree, tokenize_tree, tree_to_str, BinaryTree, Token, TreeEncoding};
pub use wfa::{wfa_eval, wfa_states, StateSequence, Wfa};
pub use wta::{subtree_states, wta_eval, wta_mu, Wta};

/// Splits a word into symbols of `alphabet`: single characters when every
/// symbol is one character and the text has no whitespace, otherwise
/// whitespace-separated tokens.
pub fn split_word(alphabet: &[String], text: &str) -> Vec<String> {
    let single = alphabet.iter().all(|s| s.chars().count() == 1);
    if single && !text.trim().chars().any(char::is_whitespace) {
        text.trim().chars().map(String::from).collect()
    } else {
        text.split_whitespace().map(String::from).collect()
    }
}

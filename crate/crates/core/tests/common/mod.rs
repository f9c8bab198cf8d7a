#![allow(dead_code)]

use std::collections::BTreeMap;

use automata2attn::automata::{default_alphabet, Wfa, Wta};
use automata2attn::linalg::Matrix;
use automata2attn::tensor_ops::Tensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn chars(s: &str) -> Vec<String> {
    s.chars().map(String::from).collect()
}

/// WFA with every entry drawn from U[-1, 1].
pub fn random_wfa(rng: &mut ChaCha8Rng, n: usize, symbols: usize) -> Wfa {
    let alphabet = default_alphabet(symbols);
    let mut u = || rng.gen_range(-1.0..1.0);
    let alpha = (0..n).map(|_| u()).collect();
    let beta = (0..n).map(|_| u()).collect();
    let transitions: BTreeMap<String, Matrix> =
        alphabet.iter().map(|s| (s.clone(), Matrix::from_fn(n, n, |_, _| u()))).collect();
    Wfa::new(alphabet, alpha, transitions, beta).unwrap()
}

/// WTA with entries from U[-scale, scale].
pub fn random_wta(rng: &mut ChaCha8Rng, n: usize, symbols: usize, scale: f64) -> Wta {
    let alphabet = default_alphabet(symbols);
    let mut u = || rng.gen_range(-scale..scale);
    let alpha = (0..n).map(|_| u()).collect();
    let tensor = Tensor3::from_fn(n, n, n, |_, _, _| u());
    let leaf_vectors = alphabet.iter().map(|s| (s.clone(), (0..n).map(|_| u()).collect())).collect();
    let w = Wta { n, alphabet, alpha, tensor, leaf_vectors };
    w.validate().unwrap();
    w
}

pub fn random_word(rng: &mut ChaCha8Rng, alphabet: &[String], len: usize) -> Vec<String> {
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone()).collect()
}

pub fn max_abs_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

use automata2attn::automata::BinaryTree;

/// Every binary tree shape with exactly `leaves` leaves, labelled `sym`.
pub fn all_shapes(leaves: usize, sym: &str) -> Vec<BinaryTree> {
    if leaves == 1 {
        return vec![BinaryTree::leaf(sym)];
    }
    let mut out = Vec::new();
    for l in 1..leaves {
        for a in all_shapes(l, sym) {
            for b in all_shapes(leaves - l, sym) {
                out.push(BinaryTree::node(a.clone(), b));
            }
        }
    }
    out
}

/// Every tree with `leaves` leaves over `alphabet`.
pub fn all_labelled(leaves: usize, alphabet: &[String]) -> Vec<BinaryTree> {
    fn relabel(t: &BinaryTree, labels: &[String], next: &mut usize) -> BinaryTree {
        match t {
            BinaryTree::Leaf(_) => {
                *next += 1;
                BinaryTree::leaf(labels[*next - 1].clone())
            }
            BinaryTree::Node(l, r) => {
                let l = relabel(l, labels, next);
                BinaryTree::node(l, relabel(r, labels, next))
            }
        }
    }
    let mut out = Vec::new();
    let k = alphabet.len();
    for shape in all_shapes(leaves, "_") {
        for code in 0..k.pow(leaves as u32) {
            let labels: Vec<String> =
                (0..leaves).map(|p| alphabet[(code / k.pow(p as u32)) % k].clone()).collect();
            out.push(relabel(&shape, &labels, &mut 0));
        }
    }
    out
}

pub fn comb(syms: &[&str]) -> BinaryTree {
    let mut t = BinaryTree::leaf(syms[syms.len() - 1]);
    for s in syms[..syms.len() - 1].iter().rev() {
        t = BinaryTree::node(BinaryTree::leaf(*s), t);
    }
    t
}

/// Complete binary tree with `2^h` leaves.
pub fn balanced(h: usize, sym: &str) -> BinaryTree {
    if h == 0 {
        BinaryTree::leaf(sym)
    } else {
        BinaryTree::node(balanced(h - 1, sym), balanced(h - 1, sym))
    }
}

/// (1-based position, right-child position) for every internal node,
/// computed from the tree rather than the bracket string.
pub fn right_children(t: &BinaryTree) -> Vec<(usize, usize)> {
    fn walk(t: &BinaryTree, pos: usize, out: &mut Vec<(usize, usize)>) {
        if let BinaryTree::Node(l, r) = t {
            let rp = pos + 1 + l.token_len();
            out.push((pos, rp));
            walk(l, pos + 1, out);
            walk(r, rp, out);
        }
    }
    let mut out = Vec::new();
    walk(t, 1, &mut out);
    out
}

/// Depth of every subtree keyed by 1-based start position.
pub fn subtree_depths(t: &BinaryTree) -> BTreeMap<usize, usize> {
    fn walk(t: &BinaryTree, pos: usize, out: &mut BTreeMap<usize, usize>) {
        out.insert(pos, t.depth());
        if let BinaryTree::Node(l, r) = t {
            walk(l, pos + 1, out);
            walk(r, pos + 1 + l.token_len(), out);
        }
    }
    let mut out = BTreeMap::new();
    walk(t, 1, &mut out);
    out
}

/// Random shape with `leaves` leaves (uniform split sizes), uniform labels.
pub fn random_tree(rng: &mut ChaCha8Rng, alphabet: &[String], leaves: usize) -> BinaryTree {
    if leaves == 1 {
        return BinaryTree::leaf(alphabet[rng.gen_range(0..alphabet.len())].clone());
    }
    let l = rng.gen_range(1..leaves);
    let left = random_tree(rng, alphabet, l);
    BinaryTree::node(left, random_tree(rng, alphabet, leaves - l))
}

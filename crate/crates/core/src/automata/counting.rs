use std::collections::BTreeMap;

use crate::automata::wfa::Wfa;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Two states over {0, 1}; the final state on `w` is `(#0s in w, 1)`.
pub fn make_counting_wfa() -> Wfa {
    let mut t = BTreeMap::new();
    t.insert("0".to_string(), Matrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap());
    t.insert("1".to_string(), Matrix::identity(2));
    Wfa::new(vec!["0".into(), "1".into()], vec![0.0, 1.0], t, vec![1.0, 0.0])
        .expect("counting automaton is well formed")
}

/// Default alphabet of size `size`: `a`, `b`, ... up to 26 symbols, then
/// `s0`, `s1`, ...
pub fn default_alphabet(size: usize) -> Vec<String> {
    if size <= 26 {
        (0..size).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
    } else {
        (0..size).map(|i| format!("s{i}")).collect()
    }
}

/// Counts each of the first `k` symbols of a default alphabet of size
/// `alphabet_size`.
pub fn make_k_counting_wfa(k: usize, alphabet_size: usize) -> Result<Wfa> {
    make_k_counting_wfa_over(k, default_alphabet(alphabet_size))
}

/// `k + 1` states; component `i < k` counts occurrences of `alphabet[i]` and
/// the last component is the constant 1.
pub fn make_k_counting_wfa_over(k: usize, alphabet: Vec<String>) -> Result<Wfa> {
    if k == 0 || k > alphabet.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be between 1 and the alphabet size {}",
            alphabet.len()
        )));
    }
    let n = k + 1;
    let mut t = BTreeMap::new();
    for (i, s) in alphabet.iter().enumerate() {
        let mut m = Matrix::identity(n);
        if i < k {
            // row vector times (I + e_{k+1} e_iᵀ) adds the constant slot to slot i
            m[(k, i)] = 1.0;
        }
        t.insert(s.clone(), m);
    }
    let mut alpha = vec![0.0; n];
    alpha[k] = 1.0;
    let mut beta = vec![0.0; n];
    beta[0] = 1.0;
    Wfa::new(alphabet, alpha, t, beta)
}

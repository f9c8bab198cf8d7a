use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Weighted finite automaton `f(x) = αᵀ A^{x_1} ⋯ A^{x_T} β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wfa {
    pub n: usize,
    pub alphabet: Vec<String>,
    pub alpha: Vec<f64>,
    pub transitions: BTreeMap<String, Matrix>,
    pub beta: Vec<f64>,
}

/// Rows `αᵀ A^{x_1..x_t}` for t = 0..=T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSequence {
    pub rows: Vec<Vec<f64>>,
}

impl StateSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.rows.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Wfa {
    pub fn new(
        alphabet: Vec<String>,
        alpha: Vec<f64>,
        transitions: BTreeMap<String, Matrix>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let w = Wfa { n: alpha.len(), alphabet, alpha, transitions, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::InvalidModel("a WFA needs at least one state".into()));
        }
        if self.alpha.len() != n || self.beta.len() != n {
            return Err(Error::InvalidModel(format!(
                "alpha/beta have lengths {}/{}, expected {n}",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        for s in &self.alphabet {
            match self.transitions.get(s) {
                None => return Err(Error::InvalidModel(format!("no transition matrix for `{s}`"))),
                Some(m) if m.shape() != (n, n) => {
                    return Err(Error::InvalidModel(format!(
                        "transition for `{s}` is {:?}, expected ({n}, {n})",
                        m.shape()
                    )))
                }
                _ => {}
            }
        }
        if self.transitions.len() != self.alphabet.len() {
            return Err(Error::InvalidModel("transition symbols differ from the alphabet".into()));
        }
        Ok(())
    }

    pub fn matrix(&self, symbol: &str) -> Result<&Matrix> {
        self.transitions.get(symbol).ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    /// Matrices of a word in order, checking every symbol.
    pub fn word_matrices<S: AsRef<str>>(&self, word: &[S]) -> Result<Vec<&Matrix>> {
        word.iter().map(|s| self.matrix(s.as_ref())).collect()
    }

    /// Largest spectral norm over the transition matrices.
    pub fn max_spectral_norm(&self) -> f64 {
        self.transitions.values().map(Matrix::spectral_norm).fold(0.0, f64::max)
    }
}

pub fn wfa_states<S: AsRef<str>>(a: &Wfa, word: &[S]) -> Result<StateSequence> {
    let mats = a.word_matrices(word)?;
    let mut rows = Vec::with_capacity(word.len() + 1);
    let mut cur = a.alpha.clone();
    rows.push(cur.clone());
    for m in mats {
        cur = m.left_mul(&cur)?;
        rows.push(cur.clone());
    }
    Ok(StateSequence { rows })
}

pub fn wfa_eval<S: AsRef<str>>(a: &Wfa, word: &[S]) -> Result<f64> {
    let states = wfa_states(a, word)?;
    Ok(dot(states.last(), &a.beta))
}

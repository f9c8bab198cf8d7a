use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::automata::wfa::Wfa;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Hidden Markov model with row-stochastic `transition` (n×n), column-stochastic
/// `observation` (p×n, one row per symbol) and initial distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hmm {
    pub n: usize,
    pub alphabet: Vec<String>,
    pub transition: Matrix,
    pub observation: Matrix,
    pub initial: Vec<f64>,
}

impl Hmm {
    pub fn validate(&self) -> Result<()> {
        self.validate_with(STOCHASTIC_TOL)
    }

    pub fn validate_with(&self, tol: f64) -> Result<()> {
        let n = self.n;
        let p = self.alphabet.len();
        if self.transition.shape() != (n, n) {
            return Err(Error::InvalidModel(format!("transition must be {n}x{n}")));
        }
        if self.observation.shape() != (p, n) {
            return Err(Error::InvalidModel(format!("observation must be {p}x{n}")));
        }
        if self.initial.len() != n {
            return Err(Error::InvalidModel(format!("initial must have length {n}")));
        }
        let all = self
            .transition
            .data()
            .iter()
            .chain(self.observation.data())
            .chain(&self.initial);
        if all.clone().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidModel("probabilities must be finite and nonnegative".into()));
        }
        for i in 0..n {
            let s: f64 = self.transition.row(i).iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidModel(format!("transition row {i} sums to {s}")));
            }
            let c: f64 = (0..p).map(|x| self.observation[(x, i)]).sum();
            if (c - 1.0).abs() > tol {
                return Err(Error::InvalidModel(format!("observation column {i} sums to {c}")));
            }
        }
        let s: f64 = self.initial.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidModel(format!("initial distribution sums to {s}")));
        }
        Ok(())
    }
}

/// `α = π`, `A^x = diag(O_x)·T`, `β = 1`.
pub fn hmm_to_wfa(h: &Hmm) -> Result<Wfa> {
    h.validate()?;
    hmm_to_wfa_unchecked(h)
}

pub(crate) fn hmm_to_wfa_unchecked(h: &Hmm) -> Result<Wfa> {
    let mut transitions = BTreeMap::new();
    for (x, sym) in h.alphabet.iter().enumerate() {
        let d = Matrix::diag(h.observation.row(x));
        transitions.insert(sym.clone(), d.matmul(&h.transition)?);
    }
    Wfa::new(h.alphabet.clone(), h.initial.clone(), transitions, vec![1.0; h.n])
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::automata::wfa::Wfa;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Probabilistic finite automaton. `transitions[σ][q][q']` is P(q, σ, q').
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pfa {
    pub n: usize,
    pub alphabet: Vec<String>,
    pub initial: Vec<f64>,
    pub transitions: BTreeMap<String, Matrix>,
    #[serde(rename = "final")]
    pub final_weights: Vec<f64>,
}

impl Pfa {
    pub fn validate(&self) -> Result<()> {
        self.validate_with(super::hmm::STOCHASTIC_TOL)
    }

    pub fn validate_with(&self, tol: f64) -> Result<()> {
        let n = self.n;
        if self.initial.len() != n || self.final_weights.len() != n {
            return Err(Error::InvalidModel(format!("initial/final must have length {n}")));
        }
        for s in &self.alphabet {
            match self.transitions.get(s) {
                Some(m) if m.shape() == (n, n) => {}
                _ => return Err(Error::InvalidModel(format!("missing {n}x{n} transition for `{s}`"))),
            }
        }
        let weights = self
            .initial
            .iter()
            .chain(&self.final_weights)
            .chain(self.transitions.values().flat_map(|m| m.data()));
        if weights.clone().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidModel("weights must be finite and nonnegative".into()));
        }
        let s: f64 = self.initial.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidModel(format!("initial weights sum to {s}")));
        }
        for q in 0..n {
            let out: f64 = self.final_weights[q]
                + self.transitions.values().map(|m| m.row(q).iter().sum::<f64>()).sum::<f64>();
            if (out - 1.0).abs() > tol {
                return Err(Error::InvalidModel(format!("outgoing mass of state {q} is {out}")));
            }
        }
        Ok(())
    }
}

/// `α = I`, `A^σ_ij = P(i, σ, j)`, `β = F`.
pub fn pfa_to_wfa(p: &Pfa) -> Result<Wfa> {
    p.validate()?;
    pfa_to_wfa_unchecked(p)
}

pub(crate) fn pfa_to_wfa_unchecked(p: &Pfa) -> Result<Wfa> {
    Wfa::new(
        p.alphabet.clone(),
        p.initial.clone(),
        p.transitions.clone(),
        p.final_weights.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::wfa::wfa_eval;

    fn one_state() -> Pfa {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), Matrix::from_rows(vec![vec![0.5]]).unwrap());
        Pfa { n: 1, alphabet: vec!["a".into()], initial: vec![1.0], transitions: t, final_weights: vec![0.5] }
    }

    #[test]
    fn single_symbol_probability() {
        let w = pfa_to_wfa(&one_state()).unwrap();
        assert_eq!(wfa_eval(&w, &["a"]).unwrap(), 0.25);
        assert_eq!(wfa_eval(&w, &["a", "a"]).unwrap(), 0.125);
    }

    #[test]
    fn initial_copied() {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), Matrix::from_rows(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap());
        let p = Pfa {
            n: 2,
            alphabet: vec!["a".into()],
            initial: vec![1.0, 0.0],
            transitions: t,
            final_weights: vec![0.5, 0.5],
        };
        assert_eq!(pfa_to_wfa(&p).unwrap().alpha, vec![1.0, 0.0]);
    }

    #[test]
    fn negative_weight_rejected() {
        let mut p = one_state();
        p.transitions.insert("a".into(), Matrix::from_rows(vec![vec![-0.5]]).unwrap());
        p.final_weights = vec![1.5];
        assert!(matches!(pfa_to_wfa(&p), Err(Error::InvalidModel(_))));
    }
}

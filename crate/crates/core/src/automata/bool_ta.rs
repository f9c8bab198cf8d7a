use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::automata::tree::BinaryTree;
use crate::automata::wta::Wta;
use crate::error::{Error, Result};
use crate::tensor_ops::Tensor3;

/// Bottom-up (possibly nondeterministic) tree automaton.
///
/// `delta` holds triples `(q, q1, q2)`: children in states `q1`, `q2` may
/// produce `q`. `leaf_map[σ]` lists the states a leaf σ may take.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoolTreeAutomaton {
    pub n: usize,
    pub alphabet: Vec<String>,
    pub leaf_map: BTreeMap<String, Vec<usize>>,
    pub delta: Vec<(usize, usize, usize)>,
    pub accepting: Vec<usize>,
}

impl BoolTreeAutomaton {
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let bad = |what: &str| Err(Error::InvalidModel(format!("{what} refers to a state >= {n}")));
        if self.delta.iter().any(|&(a, b, c)| a >= n || b >= n || c >= n) {
            return bad("a transition");
        }
        if self.accepting.iter().any(|&q| q >= n) {
            return bad("the accepting set");
        }
        for (s, qs) in &self.leaf_map {
            if !self.alphabet.contains(s) {
                return Err(Error::UnknownSymbol(s.clone()));
            }
            if qs.iter().any(|&q| q >= n) {
                return bad("a leaf rule");
            }
        }
        Ok(())
    }

    /// Reachable states of the tree, computed directly on sets.
    pub fn run(&self, t: &BinaryTree) -> Result<BTreeSet<usize>> {
        match t {
            BinaryTree::Leaf(s) => {
                if !self.alphabet.contains(s) {
                    return Err(Error::UnknownSymbol(s.clone()));
                }
                Ok(self.leaf_map.get(s).map(|v| v.iter().copied().collect()).unwrap_or_default())
            }
            BinaryTree::Node(l, r) => {
                let ls = self.run(l)?;
                let rs = self.run(r)?;
                Ok(self
                    .delta
                    .iter()
                    .filter(|(_, a, b)| ls.contains(a) && rs.contains(b))
                    .map(|(q, _, _)| *q)
                    .collect())
            }
        }
    }

    pub fn accepts(&self, t: &BinaryTree) -> Result<bool> {
        Ok(self.run(t)?.iter().any(|q| self.accepting.contains(q)))
    }
}

/// 0/1 WTA whose value on a tree counts accepting runs, so it is nonzero
/// exactly on accepted trees.
pub fn bool_ta_to_wta(ta: &BoolTreeAutomaton) -> Result<Wta> {
    ta.validate()?;
    let n = ta.n;
    let mut tensor = Tensor3::zeros(n, n, n);
    for &(q, a, b) in &ta.delta {
        tensor.set(q, a, b, 1.0);
    }
    let leaf_vectors = ta
        .alphabet
        .iter()
        .map(|s| {
            let mut v = vec![0.0; n];
            for &q in ta.leaf_map.get(s).map(Vec::as_slice).unwrap_or(&[]) {
                v[q] = 1.0;
            }
            (s.clone(), v)
        })
        .collect();
    let mut alpha = vec![0.0; n];
    for &q in &ta.accepting {
        alpha[q] = 1.0;
    }
    let w = Wta { n, alphabet: ta.alphabet.clone(), alpha, tensor, leaf_vectors };
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::tree::parse_tree;
    use crate::automata::wta::wta_eval;

    fn only_a_leaves() -> BoolTreeAutomaton {
        // state 0: every leaf below is `a`; state 1: some leaf is `b`
        let mut leaf_map = BTreeMap::new();
        leaf_map.insert("a".to_string(), vec![0]);
        leaf_map.insert("b".to_string(), vec![1]);
        let mut delta = vec![(0, 0, 0)];
        for (x, y) in [(0, 1), (1, 0), (1, 1)] {
            delta.push((1, x, y));
        }
        BoolTreeAutomaton {
            n: 2,
            alphabet: vec!["a".into(), "b".into()],
            leaf_map,
            delta,
            accepting: vec![0],
        }
    }

    #[test]
    fn matches_boolean_run() {
        let ta = only_a_leaves();
        let w = bool_ta_to_wta(&ta).unwrap();
        for text in ["a", "b", "(aa)", "(ab)", "((aa)a)", "((ab)a)"] {
            let t = parse_tree(text).unwrap();
            assert_eq!(wta_eval(&w, &t).unwrap() > 0.0, ta.accepts(&t).unwrap(), "{text}");
        }
    }

    #[test]
    fn empty_accepting_set() {
        let mut ta = only_a_leaves();
        ta.accepting.clear();
        let w = bool_ta_to_wta(&ta).unwrap();
        assert_eq!(wta_eval(&w, &parse_tree("(aa)").unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn bad_state_index() {
        let mut ta = only_a_leaves();
        ta.delta.push((2, 0, 0));
        assert!(bool_ta_to_wta(&ta).is_err());
    }
}

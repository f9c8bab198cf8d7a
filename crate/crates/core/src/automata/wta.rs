use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::automata::tree::BinaryTree;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::tensor_ops::Tensor3;

/// Weighted tree automaton over binary trees.
///
/// A node with children states `x`, `y` gets state
/// `z[i] = Σ_jk tensor[i][j][k]·x[j]·y[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wta {
    pub n: usize,
    pub alphabet: Vec<String>,
    pub alpha: Vec<f64>,
    pub tensor: Tensor3,
    pub leaf_vectors: BTreeMap<String, Vec<f64>>,
}

impl Wta {
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::InvalidModel("a WTA needs at least one state".into()));
        }
        if self.alpha.len() != n {
            return Err(Error::InvalidModel(format!("alpha must have length {n}")));
        }
        if self.tensor.dims() != [n, n, n] {
            return Err(Error::InvalidModel(format!(
                "tensor is {:?}, expected [{n}, {n}, {n}]",
                self.tensor.dims()
            )));
        }
        for s in &self.alphabet {
            match self.leaf_vectors.get(s) {
                Some(v) if v.len() == n => {}
                _ => return Err(Error::InvalidModel(format!("leaf vector for `{s}` missing or not length {n}"))),
            }
        }
        if self.leaf_vectors.len() != self.alphabet.len() {
            return Err(Error::InvalidModel("leaf vector symbols differ from the alphabet".into()));
        }
        Ok(())
    }

    pub fn leaf(&self, s: &str) -> Result<&[f64]> {
        self.leaf_vectors.get(s).map(Vec::as_slice).ok_or_else(|| Error::UnknownSymbol(s.into()))
    }

    /// Contracts the tensor's second and third modes with `x` and `y`.
    pub fn combine(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for (j, xj) in x.iter().enumerate() {
                    if *xj == 0.0 {
                        continue;
                    }
                    for (k, yk) in y.iter().enumerate() {
                        s += self.tensor.get(i, j, k) * xj * yk;
                    }
                }
                s
            })
            .collect()
    }
}

pub fn wta_mu(a: &Wta, t: &BinaryTree) -> Result<Vec<f64>> {
    match t {
        BinaryTree::Leaf(s) => Ok(a.leaf(s)?.to_vec()),
        BinaryTree::Node(l, r) => {
            let x = wta_mu(a, l)?;
            let y = wta_mu(a, r)?;
            Ok(a.combine(&x, &y))
        }
    }
}

pub fn wta_eval(a: &Wta, t: &BinaryTree) -> Result<f64> {
    Ok(dot(&a.alpha, &wta_mu(a, t)?))
}

/// State of every subtree keyed by the 0-based token position where it
/// starts in the bracket string.
pub fn subtree_states(a: &Wta, t: &BinaryTree) -> Result<BTreeMap<usize, Vec<f64>>> {
    fn walk(
        a: &Wta,
        t: &BinaryTree,
        pos: &mut usize,
        out: &mut BTreeMap<usize, Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let start = *pos;
        let mu = match t {
            BinaryTree::Leaf(s) => {
                *pos += 1;
                a.leaf(s)?.to_vec()
            }
            BinaryTree::Node(l, r) => {
                *pos += 1;
                let x = walk(a, l, pos, out)?;
                let y = walk(a, r, pos, out)?;
                *pos += 1;
                a.combine(&x, &y)
            }
        };
        out.insert(start, mu.clone());
        Ok(mu)
    }
    let mut out = BTreeMap::new();
    walk(a, t, &mut 0, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::tree::parse_tree;

    fn scalar() -> Wta {
        let mut lv = BTreeMap::new();
        lv.insert("b".to_string(), vec![2.0]);
        Wta {
            n: 1,
            alphabet: vec!["b".into()],
            alpha: vec![1.0],
            tensor: Tensor3::from_fn(1, 1, 1, |_, _, _| 1.0),
            leaf_vectors: lv,
        }
    }

    #[test]
    fn scalar_examples() {
        let a = scalar();
        a.validate().unwrap();
        let t = parse_tree("(bb)").unwrap();
        assert_eq!(wta_mu(&a, &BinaryTree::leaf("b")).unwrap(), vec![2.0]);
        assert_eq!(wta_mu(&a, &t).unwrap(), vec![4.0]);
        assert_eq!(wta_eval(&a, &t).unwrap(), 4.0);
    }

    #[test]
    fn zero_alpha() {
        let mut a = scalar();
        a.alpha = vec![0.0];
        assert_eq!(wta_eval(&a, &parse_tree("((bb)b)").unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn unknown_leaf() {
        assert!(matches!(wta_mu(&scalar(), &BinaryTree::leaf("z")), Err(Error::UnknownSymbol(_))));
    }

    #[test]
    fn subtree_positions() {
        let a = scalar();
        let s = subtree_states(&a, &parse_tree("(b(bb))").unwrap()).unwrap();
        assert_eq!(s.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(s[&0], vec![8.0]);
        assert_eq!(s[&2], vec![4.0]);
    }
}

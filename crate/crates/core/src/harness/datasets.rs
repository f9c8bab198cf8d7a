//! Seeded word and tree datasets with oracle targets, stored as JSON lines.

use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::automata::{parse_tree, subtree_states, wfa_states, BinaryTree, Wfa, Wta};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Input {
    Word(Vec<String>),
    Tree(String),
}

impl Input {
    pub fn tree(&self) -> Result<Option<BinaryTree>> {
        match self {
            Input::Tree(t) => parse_tree(t).map(Some),
            Input::Word(_) => Ok(None),
        }
    }
}

/// One JSON line: the input plus, when known, its oracle target.
///
/// Word targets are the state rows 0..=|w|; tree targets are
/// `(position, μ)` pairs for every 1-based position in I_t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: usize,
    #[serde(flatten)]
    pub input: Input,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtrees: Option<Vec<(usize, Vec<f64>)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub seed: u64,
    pub records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub seed: u64,
    pub count: usize,
    pub mean_length: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol_sparsity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeFamily {
    Balanced,
    Comb,
    Uniform,
}

impl FromStr for TreeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(TreeFamily::Balanced),
            "comb" => Ok(TreeFamily::Comb),
            "uniform" | "uniform-random" => Ok(TreeFamily::Uniform),
            _ => Err(Error::InvalidArgument(format!("unknown tree family `{s}`"))),
        }
    }
}

/// `count` words of length `t` with i.i.d. uniform symbols.
pub fn gen_words(alphabet: &[String], t: usize, count: usize, seed: u64) -> Result<Dataset> {
    if alphabet.is_empty() {
        return Err(Error::InvalidArgument("alphabet is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|index| {
            let w = (0..t).map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone()).collect();
            Record { index, input: Input::Word(w), states: None, subtrees: None }
        })
        .collect();
    Ok(Dataset { seed, records })
}

/// Right comb `(σ₁,(σ₂,(…,σ_k)))` over the given leaf labels.
pub fn comb_tree(labels: &[String]) -> BinaryTree {
    let mut t = BinaryTree::leaf(labels[labels.len() - 1].clone());
    for s in labels[..labels.len() - 1].iter().rev() {
        t = BinaryTree::node(BinaryTree::leaf(s.clone()), t);
    }
    t
}

/// Balanced shape: the left half gets ⌈k/2⌉ leaves.
pub fn balanced_tree(labels: &[String]) -> BinaryTree {
    if labels.len() == 1 {
        return BinaryTree::leaf(labels[0].clone());
    }
    let h = labels.len().div_ceil(2);
    BinaryTree::node(balanced_tree(&labels[..h]), balanced_tree(&labels[h..]))
}

/// Number of binary shapes with `k` leaves, Catalan(k − 1).
pub fn shape_count(k: usize) -> Option<u128> {
    if k == 0 {
        return Some(0);
    }
    let mut c: u128 = 1;
    for m in 0..(k - 1) as u128 {
        // C(m+1) = C(m)·2(2m+1)/(m+2)
        c = c.checked_mul(2 * (2 * m + 1))? / (m + 2);
    }
    Some(c)
}

fn uniform_shape(rng: &mut ChaCha8Rng, labels: &[String]) -> BinaryTree {
    let k = labels.len();
    if k == 1 {
        return BinaryTree::leaf(labels[0].clone());
    }
    let total = shape_count(k).expect("leaf count checked by caller");
    let mut pick = rng.gen_range(0..total);
    let mut l = 1;
    loop {
        let w = shape_count(l).unwrap() * shape_count(k - l).unwrap();
        if pick < w {
            break;
        }
        pick -= w;
        l += 1;
    }
    let left = uniform_shape(rng, &labels[..l]);
    BinaryTree::node(left, uniform_shape(rng, &labels[l..]))
}

/// Largest leaf count with uniform shape sampling in exact integers.
pub const MAX_UNIFORM_LEAVES: usize = 64;

/// `count` trees with the most leaves that fit `max_tokens` (3k − 2 ≤ max).
pub fn gen_trees(alphabet: &[String], max_tokens: usize, family: TreeFamily, count: usize, seed: u64) -> Result<Dataset> {
    if alphabet.is_empty() {
        return Err(Error::InvalidArgument("alphabet is empty".into()));
    }
    let k = max_tokens.div_ceil(3);
    if k == 0 {
        return Err(Error::InvalidArgument("no tree fits in zero tokens".into()));
    }
    if family == TreeFamily::Uniform && k > MAX_UNIFORM_LEAVES {
        return Err(Error::InvalidArgument(format!("uniform shapes support at most {MAX_UNIFORM_LEAVES} leaves")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|index| {
            let labels: Vec<String> = (0..k).map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone()).collect();
            let t = match family {
                TreeFamily::Balanced => balanced_tree(&labels),
                TreeFamily::Comb => comb_tree(&labels),
                TreeFamily::Uniform => uniform_shape(&mut rng, &labels),
            };
            Record { index, input: Input::Tree(t.to_string()), states: None, subtrees: None }
        })
        .collect();
    Ok(Dataset { seed, records })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn words(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .filter_map(|r| match &r.input {
                Input::Word(w) => Some(w.clone()),
                Input::Tree(_) => None,
            })
            .collect()
    }

    pub fn trees(&self) -> Result<Vec<BinaryTree>> {
        self.records.iter().filter_map(|r| r.input.tree().transpose()).collect()
    }

    /// Fills word targets with the WFA state sequences.
    pub fn with_wfa_targets(mut self, a: &Wfa) -> Result<Self> {
        for r in &mut self.records {
            if let Input::Word(w) = &r.input {
                r.states = Some(wfa_states(a, w)?.rows);
            }
        }
        Ok(self)
    }

    /// Fills tree targets with the WTA subtree states.
    pub fn with_wta_targets(mut self, a: &Wta) -> Result<Self> {
        for r in &mut self.records {
            if let Some(t) = r.input.tree()? {
                let s = subtree_states(a, &t)?;
                r.subtrees = Some(s.into_iter().map(|(p, v)| (p + 1, v)).collect());
            }
        }
        Ok(self)
    }

    pub fn summary(&self, sparsity: Option<f64>) -> DatasetSummary {
        let total: usize = self
            .records
            .iter()
            .map(|r| match &r.input {
                Input::Word(w) => w.len(),
                Input::Tree(t) => parse_tree(t).map(|t| t.token_len()).unwrap_or(0),
            })
            .sum();
        DatasetSummary {
            seed: self.seed,
            count: self.len(),
            mean_length: if self.is_empty() { 0.0 } else { total as f64 / self.len() as f64 },
            symbol_sparsity: sparsity,
        }
    }

    /// One JSON object per line; every line carries the seed.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let mut v = serde_json::to_value(r)?;
            v["seed"] = self.seed.into();
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(f.flush()?)
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut seed = 0;
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line)?;
            if let Some(s) = v.get("seed").and_then(serde_json::Value::as_u64) {
                seed = s;
            }
            records.push(serde_json::from_value(v)?);
        }
        Ok(Dataset { seed, records })
    }
}

/// Fraction of (state, symbol) pairs whose transition row has a nonzero
/// weight.
pub fn symbol_sparsity(a: &Wfa) -> f64 {
    let mut nonzero = 0;
    for m in a.transitions.values() {
        for q in 0..a.n {
            if m.row(q).iter().any(|x| *x != 0.0) {
                nonzero += 1;
            }
        }
    }
    let total = a.n * a.transitions.len();
    if total == 0 {
        0.0
    } else {
        nonzero as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalan_counts() {
        let c: Vec<u128> = (1..=8).map(|k| shape_count(k).unwrap()).collect();
        assert_eq!(c, vec![1, 1, 2, 5, 14, 42, 132, 429]);
        assert!(shape_count(MAX_UNIFORM_LEAVES).is_some());
    }

    #[test]
    fn family_names() {
        assert_eq!("comb".parse::<TreeFamily>().unwrap(), TreeFamily::Comb);
        assert!("bushy".parse::<TreeFamily>().is_err());
    }
}

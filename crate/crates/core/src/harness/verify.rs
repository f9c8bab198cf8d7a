//! End-to-end checks of compiled networks against the automata.
//!
//! Besides the final outputs, every layer is compared with the intermediate
//! values the construction is meant to hold, computed directly from the
//! automaton: window products of transition matrices for word networks;
//! markers, depths and bottom-up subtree states for tree networks. A fault
//! therefore shows up at the first layer whose values drift.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automata::{subtree_states, tree_to_str, wfa_states, BinaryTree, StateSequence, Wfa, Wta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tensor_ops::vec;
use crate::transformer::{transformer_trace, TransformerSpec};
use crate::wfa_compiler::frobenius_error;
use crate::wta_compiler::WtaLayout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputResult {
    pub index: usize,
    pub input: String,
    /// ‖f(x) − 𝒜(x)‖_F over the compared rows.
    pub error: f64,
    pub max_abs: f64,
    /// Largest deviation from the expected intermediate values, per layer.
    pub layer_errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub kind: String,
    pub eps: f64,
    pub count: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub passed: bool,
    /// Per layer, the largest intermediate deviation over all inputs.
    pub layer_errors: Vec<f64>,
    /// First layer whose intermediate deviation reaches `eps`.
    pub first_bad_layer: Option<usize>,
    /// Tree networks: largest output error at subtrees of each depth.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub depth_errors: BTreeMap<usize, f64>,
    pub inputs: Vec<InputResult>,
    pub elapsed_ms: f64,
}

impl VerificationReport {
    fn assemble(kind: &str, eps: f64, inputs: Vec<InputResult>, depth_errors: BTreeMap<usize, f64>, start: Instant) -> Self {
        let count = inputs.len();
        let max_error = inputs.iter().map(|r| r.error).fold(0.0, nan_max);
        let mean_error = if count == 0 { 0.0 } else { inputs.iter().map(|r| r.error).sum::<f64>() / count as f64 };
        let layers = inputs.iter().map(|r| r.layer_errors.len()).max().unwrap_or(0);
        let layer_errors: Vec<f64> = (0..layers)
            .map(|l| inputs.iter().filter_map(|r| r.layer_errors.get(l).copied()).fold(0.0, nan_max))
            .collect();
        let first_bad_layer = layer_errors.iter().position(|e| !(*e < eps)).map(|l| l + 1);
        VerificationReport {
            kind: kind.to_string(),
            eps,
            count,
            max_error,
            mean_error,
            passed: max_error < eps,
            layer_errors,
            first_bad_layer,
            depth_errors,
            inputs,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }

    /// The report without its wall-clock field, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        VerificationReport { elapsed_ms: 0.0, ..self.clone() }
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} verification: {} inputs, eps = {:e}", self.kind, self.count, self.eps)?;
        writeln!(f, "max error   {:.3e}", self.max_error)?;
        writeln!(f, "mean error  {:.3e}", self.mean_error)?;
        writeln!(f, "layer  max deviation")?;
        for (l, e) in self.layer_errors.iter().enumerate() {
            writeln!(f, "{:>5}  {:.3e}", l + 1, e)?;
        }
        if !self.depth_errors.is_empty() {
            writeln!(f, "depth  max error")?;
            for (d, e) in &self.depth_errors {
                writeln!(f, "{d:>5}  {e:.3e}")?;
            }
        }
        match (self.passed, self.first_bad_layer) {
            (true, _) => writeln!(f, "PASS ({:.1} ms)", self.elapsed_ms),
            (false, Some(l)) => writeln!(f, "FAIL: first deviating layer {l} ({:.1} ms)", self.elapsed_ms),
            (false, None) => writeln!(f, "FAIL ({:.1} ms)", self.elapsed_ms),
        }
    }
}

fn max_abs_rows<'a>(pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> f64 {
    pairs.flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, nan_max)
}

/// Window product `M_{p−2^ℓ+1} ⋯ M_p` (positions before 1 are identity).
fn window_product(mats: &[&Matrix], n: usize, p: usize, width: usize) -> Result<Matrix> {
    let from = p.saturating_sub(width);
    let mut acc = Matrix::identity(n);
    for m in &mats[from..p] {
        acc = acc.matmul(m)?;
    }
    Ok(acc)
}

fn check_wfa_word(a: &Wfa, spec: &TransformerSpec, index: usize, word: &[String]) -> Result<InputResult> {
    let n = a.n;
    let nn = n * n;
    let trace = transformer_trace(spec, word)?;
    let len = word.len();
    let off = spec.embedding.offset(len);
    let mut rows = vec![spec.readout.apply_vec(&spec.embedding.pad)?];
    rows.extend((off..off + len).map(|r| trace.output.row(r).to_vec()));
    let got = StateSequence { rows };
    let want = wfa_states(a, word)?;
    let error = frobenius_error(&got, &want);
    let max_abs = max_abs_rows(got.rows.iter().map(Vec::as_slice).zip(want.rows.iter().map(Vec::as_slice)));

    let mats = a.word_matrices(word)?;
    let mut layer_errors = Vec::new();
    if spec.d == 2 * nn + 2 {
        for (l, layer) in trace.layers.iter().enumerate() {
            let width = 1usize << (l + 1);
            let mut worst = 0.0f64;
            for p in 1..=len {
                let want = vec(&window_product(&mats, n, p, width)?);
                let row = layer.output.row(off + p - 1);
                worst = nan_max(worst, max_abs_rows([(&row[..nn], &want[..]), (&row[nn..2 * nn], &want[..])].into_iter()));
            }
            layer_errors.push(worst);
        }
    }
    Ok(InputResult { index, input: word_text(word), error, max_abs, layer_errors })
}

fn word_text(word: &[String]) -> String {
    if word.iter().all(|s| s.chars().count() == 1) {
        word.concat()
    } else {
        word.join(" ")
    }
}

/// Compares a compiled word network with `wfa_states` on every word.
pub fn verify_wfa(a: &Wfa, spec: &TransformerSpec, words: &[Vec<String>], eps: f64) -> Result<VerificationReport> {
    let start = Instant::now();
    for w in words {
        if w.len() > spec.t_budget {
            return Err(Error::BudgetExceeded { len: w.len(), budget: spec.t_budget });
        }
    }
    let inputs = words
        .par_iter()
        .enumerate()
        .map(|(i, w)| check_wfa_word(a, spec, i, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport::assemble("wfa", eps, inputs, BTreeMap::new(), start))
}

fn subtree_depths(t: &BinaryTree) -> BTreeMap<usize, usize> {
    fn walk(t: &BinaryTree, pos: usize, out: &mut BTreeMap<usize, usize>) {
        out.insert(pos, t.depth());
        if let BinaryTree::Node(l, r) = t {
            walk(l, pos + 1, out);
            walk(r, pos + 1 + l.token_len(), out);
        }
    }
    let mut out = BTreeMap::new();
    walk(t, 0, &mut out);
    out
}

fn check_wta_tree(
    a: &Wta,
    spec: &TransformerSpec,
    index: usize,
    t: &BinaryTree,
) -> Result<(InputResult, BTreeMap<usize, f64>)> {
    let n = a.n;
    let enc = tree_to_str(t);
    let toks: Vec<String> = enc.tokens.iter().map(ToString::to_string).collect();
    let trace = transformer_trace(spec, &toks)?;
    let want = subtree_states(a, t)?;
    let depths = subtree_depths(t);

    let mut sq = 0.0;
    let mut max_abs = 0.0f64;
    let mut by_depth: BTreeMap<usize, f64> = BTreeMap::new();
    for (&p, mu) in &want {
        let row = trace.output.row(p);
        let e = max_abs_rows(std::iter::once((row, mu.as_slice())));
        sq += row.iter().zip(mu).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        max_abs = nan_max(max_abs, e);
        let slot = by_depth.entry(depths[&p]).or_insert(0.0);
        *slot = nan_max(*slot, e);
    }

    let lay = WtaLayout::new(n, spec.t_budget);
    let mut layer_errors = Vec::new();
    if spec.d == lay.d() && spec.layers.len() >= 2 {
        let len = enc.len();
        let l1 = &trace.layers[0].output;
        let shifted = (0..len)
            .map(|r| {
                let want = if r == 0 { 0.0 } else { enc.markers[r - 1] as f64 };
                (l1[(r, lay.depth())] - want).abs()
            })
            .fold(0.0, nan_max);
        layer_errors.push(shifted);
        let l2 = &trace.layers[1].output;
        let depth = (0..len)
            .map(|r| {
                let d = enc.depths[r] as f64;
                nan_max((l2[(r, lay.depth())] - d).abs(), (l2[(r, lay.depth_sq())] - d * d).abs())
            })
            .fold(0.0, nan_max);
        layer_errors.push(depth);
        let zero = vec![0.0; n];
        for (k, layer) in trace.layers[2..].iter().enumerate() {
            let l = k + 1;
            let worst = want
                .iter()
                .map(|(&p, mu)| {
                    let expect = if depths[&p] <= l { mu.as_slice() } else { zero.as_slice() };
                    max_abs_rows(std::iter::once((&layer.output.row(p)[..n], expect)))
                })
                .fold(0.0, nan_max);
            layer_errors.push(worst);
        }
    }
    let result = InputResult { index, input: t.to_string(), error: sq.sqrt(), max_abs, layer_errors };
    Ok((result, by_depth))
}

/// Compares a compiled tree network with `subtree_states` at every position
/// of I_t.
pub fn verify_wta(a: &Wta, spec: &TransformerSpec, trees: &[BinaryTree], eps: f64) -> Result<VerificationReport> {
    let start = Instant::now();
    let parsing = spec.layers.len().saturating_sub(2);
    for t in trees {
        if t.token_len() > spec.t_budget {
            return Err(Error::BudgetExceeded { len: t.token_len(), budget: spec.t_budget });
        }
        if t.depth() > parsing {
            return Err(Error::DepthExceeded { depth: t.depth(), budget: parsing });
        }
    }
    let results = trees
        .par_iter()
        .enumerate()
        .map(|(i, t)| check_wta_tree(a, spec, i, t))
        .collect::<Result<Vec<_>>>()?;
    let mut depth_errors: BTreeMap<usize, f64> = BTreeMap::new();
    let mut inputs = Vec::with_capacity(results.len());
    for (r, by_depth) in results {
        for (d, e) in by_depth {
            let slot = depth_errors.entry(d).or_insert(0.0);
            *slot = nan_max(*slot, e);
        }
        inputs.push(r);
    }
    Ok(VerificationReport::assemble("wta", eps, inputs, depth_errors, start))
}

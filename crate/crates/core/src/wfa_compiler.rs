//! WFA → transformer compilation.
//!
//! Row layout (d = 2n² + 2): `vec(L) ‖ vec(R) ‖ cos(πt/T) ‖ sin(πt/T)`.
//! Positions run from −T+1 to T; rows at t ≤ 0 hold identities, so layer ℓ
//! can always look back 2^{ℓ−1} positions. After layer ℓ both blocks of row
//! t hold the product of the 2^ℓ transition matrices ending at t.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::automata::wfa::{wfa_states, StateSequence, Wfa};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::tensor_ops::{
    binomial, matmul_tensor, quadratic_mlp_fit, unvec, vec, BilinearLayer, PolynomialMap,
};
use crate::transformer::{
    transformer_forward, transformer_trace, Align, AttentionHead, AttentionMode, Embedding,
    FeedForwardBlock, InputKind, LayerSpec, TokenMatrix, TransformerSpec,
};

/// Coordinates of the row layout for n states.
#[derive(Clone, Copy, Debug)]
struct Layout {
    n: usize,
}

impl Layout {
    fn nn(self) -> usize {
        self.n * self.n
    }
    fn d(self) -> usize {
        2 * self.nn() + 2
    }
    fn left(self) -> usize {
        0
    }
    fn right(self) -> usize {
        self.nn()
    }
    fn cos(self) -> usize {
        2 * self.nn()
    }
    fn sin(self) -> usize {
        2 * self.nn() + 1
    }
}

fn check_t(t: usize) -> Result<()> {
    if t == 0 || !t.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(t));
    }
    Ok(())
}

fn block_row(vec_a: &[f64], lay: Layout) -> Vec<f64> {
    let mut r = vec![0.0; lay.d()];
    r[lay.left()..lay.left() + lay.nn()].copy_from_slice(vec_a);
    r[lay.right()..lay.right() + lay.nn()].copy_from_slice(vec_a);
    r
}

fn build_embedding(a: &Wfa, t: usize) -> Embedding {
    let lay = Layout { n: a.n };
    let tokens = a
        .alphabet
        .iter()
        .map(|s| (s.clone(), block_row(&vec(&a.transitions[s]), lay)))
        .collect();
    let pad = block_row(&vec(&Matrix::identity(a.n)), lay);
    let positions = Matrix::from_fn(2 * t, lay.d(), |r, c| {
        let pos = r as f64 - t as f64 + 1.0;
        if c == lay.cos() {
            (PI * pos / t as f64).cos()
        } else if c == lay.sin() {
            (PI * pos / t as f64).sin()
        } else {
            0.0
        }
    });
    Embedding { tokens, pad, positions, align: Align::End }
}

/// The 2T×(2n²+2) input matrix for `word`, left-padded with identities.
pub fn embed_word<S: AsRef<str>>(a: &Wfa, word: &[S], t: usize) -> Result<TokenMatrix> {
    check_t(t)?;
    if word.len() > t {
        return Err(Error::BudgetExceeded { len: word.len(), budget: t });
    }
    build_embedding(a, t).embed(word)
}

/// d×2 matrix copying the positional pair.
fn position_selector(lay: Layout) -> Matrix {
    let mut m = Matrix::zeros(lay.d(), 2);
    m[(lay.cos(), 0)] = 1.0;
    m[(lay.sin(), 1)] = 1.0;
    m
}

/// Keys rotated by `phi`: scores become cos(a_j + phi − a_i).
fn rotated_key(lay: Layout, phi: f64) -> Matrix {
    let mut m = Matrix::zeros(lay.d(), 2);
    m[(lay.cos(), 0)] = phi.cos();
    m[(lay.sin(), 0)] = -phi.sin();
    m[(lay.cos(), 1)] = phi.sin();
    m[(lay.sin(), 1)] = phi.cos();
    m
}

fn block_selector(lay: Layout, from: usize, to: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(lay.d(), cols);
    for i in 0..lay.nn() {
        m[(from + i, to + i)] = 1.0;
    }
    m
}

/// Shift head and in-place head of layer `l` (1-based), scores scaled by `scale`.
fn layer_heads(lay: Layout, t: usize, l: u32, scale: f64) -> Vec<AttentionHead> {
    let shift = PI * f64::from(1u32 << (l - 1)) / t as f64;
    let q = position_selector(lay).scale(scale.sqrt());
    let left = AttentionHead::new(
        q.clone(),
        rotated_key(lay, shift).scale(scale.sqrt()),
        block_selector(lay, lay.left(), lay.left(), lay.d()),
    );
    let right = AttentionHead::new(
        q,
        position_selector(lay).scale(scale.sqrt()),
        block_selector(lay, lay.right(), lay.right(), lay.d()),
    );
    vec![left, right]
}

/// `[I; I]`: sums the two head outputs.
fn sum_merge(d: usize) -> Matrix {
    Matrix::identity(d).vcat(&Matrix::identity(d)).expect("same width")
}

/// n²×d map writing a vectorized product into both blocks.
fn duplicate_out(lay: Layout) -> Matrix {
    let mut m = Matrix::zeros(lay.nn(), lay.d());
    for i in 0..lay.nn() {
        m[(i, lay.left() + i)] = 1.0;
        m[(i, lay.right() + i)] = 1.0;
    }
    m
}

fn readout_matrix(a: &Wfa) -> Matrix {
    let lay = Layout { n: a.n };
    let mut m = Matrix::zeros(lay.d(), a.n);
    for j in 0..a.n {
        for i in 0..a.n {
            m[(lay.right() + j * a.n + i, j)] = a.alpha[i];
        }
    }
    m
}

/// Polynomial `vec(L·R)` over the merged row.
pub fn product_polynomial(n: usize) -> PolynomialMap {
    let lay = Layout { n };
    let mut p = PolynomialMap::new(lay.d(), lay.nn());
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                p.add(j * n + i, 1.0, &[lay.left() + k * n + i, lay.right() + j * n + k]);
            }
        }
    }
    p
}

/// Summary of a compiled network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompilationReport {
    pub kind: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    pub layers: usize,
    pub d: usize,
    pub heads_per_layer: usize,
    pub attention_width: usize,
    pub mlp_width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlp_active_units: Option<usize>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_budget: Option<ErrorBudget>,
}

impl fmt::Display for CompilationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind             {}", self.kind)?;
        writeln!(f, "T                {}", self.t)?;
        writeln!(f, "states           {}", self.n)?;
        writeln!(f, "layers (L)       {}", self.layers)?;
        writeln!(f, "embedding (d)    {}", self.d)?;
        writeln!(f, "heads per layer  {}", self.heads_per_layer)?;
        writeln!(f, "attention width  {}", self.attention_width)?;
        write!(f, "mlp width        {}", self.mlp_width)?;
        if let Some(u) = self.mlp_active_units {
            write!(f, " ({u} active)")?;
        }
        writeln!(f)?;
        if let Some(c) = self.c {
            writeln!(f, "saturation (C)   {c}")?;
        }
        if let Some(b) = &self.error_budget {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactCompilation {
    pub spec: TransformerSpec,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub report: CompilationReport,
}

fn scaffold(a: &Wfa, t: usize, layers: Vec<LayerSpec>) -> TransformerSpec {
    let lay = Layout { n: a.n };
    TransformerSpec {
        d: lay.d(),
        t_budget: t,
        input: InputKind::Word,
        embedding: build_embedding(a, t),
        layers,
        readout: readout_matrix(a).into(),
        reinject_positions: true,
    }
}

/// Hard-attention network with log₂T layers whose readout is the state
/// sequence.
pub fn compile_exact(a: &Wfa, t: usize) -> Result<ExactCompilation> {
    check_t(t)?;
    a.validate()?;
    let lay = Layout { n: a.n };
    let depth = t.trailing_zeros();
    let layers = (1..=depth)
        .map(|l| LayerSpec {
            mode: AttentionMode::Hard,
            heads: layer_heads(lay, t, l, 1.0),
            merge: sum_merge(lay.d()).into(),
            ff: FeedForwardBlock::Bilinear {
                left: block_selector(lay, lay.left(), 0, lay.nn()).into(),
                right: block_selector(lay, lay.right(), 0, lay.nn()).into(),
                layer: BilinearLayer::without_bias(matmul_tensor(a.n)),
                out: Some(duplicate_out(lay).into()),
            },
        })
        .collect();
    let spec = scaffold(a, t, layers);
    let report = CompilationReport {
        kind: "wfa-exact".into(),
        t,
        n: a.n,
        layers: depth as usize,
        d: lay.d(),
        heads_per_layer: 2,
        attention_width: lay.d(),
        mlp_width: 2 * lay.nn(),
        mlp_active_units: None,
        c: None,
        error_budget: None,
    };
    Ok(ExactCompilation { spec, n: a.n, t, report })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApproxCompilation {
    pub spec: TransformerSpec,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub hidden_width: usize,
    pub active_units: usize,
    pub report: CompilationReport,
}

/// Hidden width of the square-activation block: C(2n²+2, 2).
pub fn approx_mlp_width(n: usize) -> usize {
    binomial(2 * (n * n) as u64 + 2, 2) as usize
}

/// Soft-attention network with scores scaled by `c` and square-activation
/// feed-forward blocks.
pub fn compile_approx(a: &Wfa, t: usize, c: f64) -> Result<ApproxCompilation> {
    check_t(t)?;
    a.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("saturation constant must be positive, got {c}")));
    }
    let lay = Layout { n: a.n };
    let width = approx_mlp_width(a.n);
    let mlp = quadratic_mlp_fit(&product_polynomial(a.n))?.pad_hidden(width);
    let active = mlp.active_units();
    let depth = t.trailing_zeros();
    let layers = (1..=depth)
        .map(|l| LayerSpec {
            mode: AttentionMode::Soft,
            heads: layer_heads(lay, t, l, c),
            merge: sum_merge(lay.d()).into(),
            ff: FeedForwardBlock::Mlp { mlp: mlp.clone(), out: Some(duplicate_out(lay).into()) },
        })
        .collect();
    let spec = scaffold(a, t, layers);
    let report = CompilationReport {
        kind: "wfa-approx".into(),
        t,
        n: a.n,
        layers: depth as usize,
        d: lay.d(),
        heads_per_layer: 2,
        attention_width: lay.d(),
        mlp_width: width,
        mlp_active_units: Some(active),
        c: Some(c),
        error_budget: None,
    };
    Ok(ApproxCompilation { spec, n: a.n, t, c, hidden_width: width, active_units: active, report })
}

/// `αᵀ·unvec(right block)` for every row, preceded by α itself.
pub fn readout(alpha: &[f64], hidden_rows: &Matrix) -> Result<StateSequence> {
    let n = alpha.len();
    let lay = Layout { n };
    if hidden_rows.cols() != lay.d() {
        return Err(Error::Shape(format!(
            "rows have width {}, expected {}",
            hidden_rows.cols(),
            lay.d()
        )));
    }
    let mut rows = vec![alpha.to_vec()];
    for r in 0..hidden_rows.rows() {
        let block = &hidden_rows.row(r)[lay.right()..lay.right() + lay.nn()];
        rows.push(unvec(block, n)?.left_mul(alpha)?);
    }
    Ok(StateSequence { rows })
}

/// State sequence of `word` computed by a compiled word spec: the readout of
/// the identity padding row followed by the last |word| output rows.
pub fn simulate_word<S: AsRef<str>>(spec: &TransformerSpec, word: &[S]) -> Result<StateSequence> {
    let out = transformer_forward(spec, word)?;
    let first = spec.readout.apply_vec(&spec.embedding.pad)?;
    let mut rows = vec![first];
    let w = out.rows();
    for r in w - word.len()..w {
        rows.push(out.row(r).to_vec());
    }
    Ok(StateSequence { rows })
}

/// ‖f(x) − 𝒜(x)‖_F over the state rows.
pub fn frobenius_error(got: &StateSequence, want: &StateSequence) -> f64 {
    got.rows
        .iter()
        .zip(&want.rows)
        .flat_map(|(g, w)| g.iter().zip(w).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt()
}

/// Accumulated error bounds, one entry per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    #[serde(rename = "M")]
    pub m: f64,
    pub eps_attn: f64,
    pub eps_mlp: Vec<f64>,
    pub eps_total: Vec<f64>,
}

impl fmt::Display for ErrorBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "M = {:.6e}, eps_attn = {:.6e}", self.m, self.eps_attn)?;
        writeln!(f, "layer  eps_mlp       eps_total")?;
        for (l, (m, t)) in self.eps_mlp.iter().zip(&self.eps_total).enumerate() {
            writeln!(f, "{:<6} {:<13.6e} {:.6e}", l + 1, m, t)?;
        }
        Ok(())
    }
}

/// Layer 1: `ε_attn·M + ε_attn² + ε_mlp[1]`; layer ℓ: `ε[ℓ−1]·M + ε[ℓ−1]² + ε_mlp[ℓ]`.
/// Missing `eps_mlp` entries count as zero.
pub fn error_bound(m: f64, eps_attn: f64, eps_mlp: &[f64], layers: usize) -> ErrorBudget {
    let mlp: Vec<f64> = (0..layers).map(|l| eps_mlp.get(l).copied().unwrap_or(0.0)).collect();
    let mut total = Vec::with_capacity(layers);
    let mut prev = eps_attn;
    for e in &mlp {
        let cur = prev * m + prev * prev + e;
        total.push(cur);
        prev = cur;
    }
    ErrorBudget { m, eps_attn, eps_mlp: mlp, eps_total: total }
}

/// `2·max_σ ‖A^σ‖₂`.
pub fn norm_constant(a: &Wfa) -> f64 {
    2.0 * a.max_spectral_norm()
}

/// Errors observed while running an approximate network next to the exact one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasuredErrors {
    /// max over layers, heads and rows of ‖(A_soft − A_hard)·X·W_V‖.
    pub eps_attn: f64,
    /// per layer, max over rows of the feed-forward realization error.
    pub eps_mlp: Vec<f64>,
    /// per layer, max over word rows of ‖R_approx − R_exact‖_F.
    pub total: Vec<f64>,
}

/// Runs both networks on every word and records per-layer errors.
pub fn measure_errors<S: AsRef<str>>(
    approx: &ApproxCompilation,
    exact: &ExactCompilation,
    words: &[Vec<S>],
) -> Result<MeasuredErrors> {
    if approx.t != exact.t || approx.n != exact.n {
        return Err(Error::InvalidArgument("compilations differ in T or n".into()));
    }
    let lay = Layout { n: approx.n };
    let layers = approx.spec.layers.len();
    let mut eps_attn = 0.0f64;
    let mut eps_mlp = vec![0.0f64; layers];
    let mut total = vec![0.0f64; layers];
    for word in words {
        let ta = transformer_trace(&approx.spec, word)?;
        let te = transformer_trace(&exact.spec, word)?;
        let w = ta.embedded.rows();
        for l in 0..layers {
            let la = &ta.layers[l];
            for (att, vals) in la.attention.iter().zip(&la.values) {
                for i in 0..w {
                    let row = att.row(i);
                    let best = argmax(row);
                    let mut diff = vec![0.0; vals.cols()];
                    for (j, &p) in row.iter().enumerate() {
                        let h = if j == best { 1.0 } else { 0.0 };
                        if p != h {
                            for (dv, v) in diff.iter_mut().zip(vals.row(j)) {
                                *dv += (p - h) * v;
                            }
                        }
                    }
                    eps_attn = eps_attn.max(norm2(&diff));
                }
            }
            let exact_ff = &exact.spec.layers[l].ff;
            for i in 0..w {
                let x = la.merged.row(i);
                let ya = approx.spec.layers[l].ff.apply_row(x)?;
                let ye = exact_ff.apply_row(x)?;
                let e: Vec<f64> = ya.iter().zip(&ye).map(|(p, q)| p - q).collect();
                eps_mlp[l] = eps_mlp[l].max(norm2(&e[lay.right()..lay.right() + lay.nn()]));
            }
            let (oa, oe) = (&la.output, &te.layers[l].output);
            for r in w - approx.t..w {
                let ra = &oa.row(r)[lay.right()..lay.right() + lay.nn()];
                let re = &oe.row(r)[lay.right()..lay.right() + lay.nn()];
                let e: Vec<f64> = ra.iter().zip(re).map(|(p, q)| p - q).collect();
                total[l] = total[l].max(norm2(&e));
            }
        }
    }
    Ok(MeasuredErrors { eps_attn, eps_mlp, total })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Uniform random words of length `len`.
pub fn random_words(alphabet: &[String], len: usize, count: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone()).collect())
        .collect()
}

/// Largest Frobenius simulation error of `spec` over `words`.
pub fn max_simulation_error<S: AsRef<str>>(
    a: &Wfa,
    spec: &TransformerSpec,
    words: &[Vec<S>],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for w in words {
        let e = frobenius_error(&simulate_word(spec, w)?, &wfa_states(a, w)?);
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(rename = "C")]
    pub c: f64,
    pub probe_error: f64,
    pub steps: usize,
}

pub const PROBE_WORDS: usize = 32;
pub const PROBE_SEED: u64 = 0x5eed;
const C_CAP: f64 = 18446744073709551616.0; // 2^64

/// Doubles C from 1 until the probe error drops below `eps`.
pub fn calibrate_saturation(a: &Wfa, t: usize, eps: f64) -> Result<Calibration> {
    let probes = random_words(&a.alphabet, t, PROBE_WORDS, PROBE_SEED);
    calibrate_saturation_with(a, t, eps, &probes)
}

pub fn calibrate_saturation_with<S: AsRef<str>>(
    a: &Wfa,
    t: usize,
    eps: f64,
    probes: &[Vec<S>],
) -> Result<Calibration> {
    check_t(t)?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::NonConvergence(format!(
            "target {eps} is not reachable with soft attention"
        )));
    }
    let mut c = 1.0;
    let mut steps = 0;
    while c <= C_CAP {
        steps += 1;
        let comp = compile_approx(a, t, c)?;
        let err = max_simulation_error(a, &comp.spec, probes)?;
        if err < eps {
            return Ok(Calibration { c, probe_error: err, steps });
        }
        c *= 2.0;
    }
    Err(Error::NonConvergence(format!("no C up to 2^64 reaches error {eps}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::counting::make_counting_wfa;
    use std::collections::BTreeMap;

    fn scalar(v: f64) -> Wfa {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), Matrix::from_rows(vec![vec![v]]).unwrap());
        Wfa::new(vec!["a".into()], vec![1.0], t, vec![1.0]).unwrap()
    }

    #[test]
    fn embedding_of_scalar_word() {
        let x = embed_word(&scalar(2.0), &["a", "a"], 2).unwrap();
        assert_eq!(x.rows(), 4);
        // rows 0, 1 are positions −1, 0; rows 2, 3 are positions 1, 2
        assert_eq!(&x.row(0)[..2], &[1.0, 1.0]);
        assert_eq!(&x.row(1)[..2], &[1.0, 1.0]);
        assert_eq!(&x.row(2)[..2], &[2.0, 2.0]);
        assert_eq!(&x.row(3)[..2], &[2.0, 2.0]);
        assert_eq!(x.row(3)[2], -1.0);
        assert!(x.row(3)[3].abs() < 1e-15);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let a = make_counting_wfa();
        assert!(matches!(compile_exact(&a, 6), Err(Error::NotPowerOfTwo(6))));
        assert!(embed_word(&a, &["0"], 3).is_err());
    }

    #[test]
    fn dimensions() {
        let a = make_counting_wfa();
        let c = compile_exact(&a, 16).unwrap();
        assert_eq!(c.report.layers, 4);
        assert_eq!(c.report.d, 10);
        assert_eq!(c.report.mlp_width, 8);
        let p = compile_approx(&a, 8, 100.0).unwrap();
        assert_eq!(p.hidden_width, 45);
    }

    #[test]
    fn recursion_by_hand() {
        let z = error_bound(3.0, 0.0, &[0.0, 0.0, 0.0], 3);
        assert_eq!(z.eps_total, vec![0.0; 3]);
        let e = 0.1;
        let b = error_bound(3.0, 0.0, &[e, 0.0, 0.0], 3);
        let l2 = e * 3.0 + e * e;
        let l3 = l2 * 3.0 + l2 * l2;
        assert_eq!(b.eps_total, vec![e, l2, l3]);
    }

    #[test]
    fn readout_of_identity() {
        let lay = Layout { n: 2 };
        let row = block_row(&vec(&Matrix::identity(2)), lay);
        let s = readout(&[0.3, 0.7], &Matrix::row_vector(&row)).unwrap();
        assert_eq!(s.rows, vec![vec![0.3, 0.7], vec![0.3, 0.7]]);
    }

    #[test]
    fn calibration_edges() {
        let a = make_counting_wfa();
        assert_eq!(calibrate_saturation(&a, 4, f64::INFINITY).unwrap().c, 1.0);
        assert!(matches!(calibrate_saturation(&a, 4, 0.0), Err(Error::NonConvergence(_))));
    }
}

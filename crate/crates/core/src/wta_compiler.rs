//! WTA → transformer compilation.
//!
//! Row layout for n states and window T:
//!
//! | coords        | content                                              |
//! |---------------|------------------------------------------------------|
//! | `0..n`        | state (leaf vector, then μ of the subtree)           |
//! | `n`           | marker m: +1 open, −1 close, 0 leaf/pad              |
//! | `n+1`         | constant 1                                           |
//! | `n+2`         | shifted marker after layer 1, depth d after layer 2  |
//! | `n+3`         | d²                                                   |
//! | `n+4..`       | positional block p                                   |
//!
//! The positional block holds `cos(fπi/T), sin(fπi/T)` for every odd
//! f ≤ T, then `i/T`, then an indicator of the first position. The constant
//! and the positional block are re-added after every layer.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::automata::tree::{tree_to_str, BinaryTree, TreeEncoding};
use crate::automata::wta::{subtree_states, Wta};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Weight};
use crate::tensor_ops::{quadratic_mlp_fit, PolynomialMap};
use crate::transformer::{
    transformer_forward, Align, AttentionHead, AttentionMode, Embedding, FeedForwardBlock,
    InputKind, LayerSpec, TokenMatrix, TransformerSpec,
};

pub const OPEN: &str = "(";
pub const CLOSE: &str = ")";

/// Coordinates of the row layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WtaLayout {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
}

impl WtaLayout {
    pub fn new(n: usize, t: usize) -> Self {
        WtaLayout { n, t }
    }
    pub fn marker(self) -> usize {
        self.n
    }
    pub fn one(self) -> usize {
        self.n + 1
    }
    pub fn depth(self) -> usize {
        self.n + 2
    }
    pub fn depth_sq(self) -> usize {
        self.n + 3
    }
    /// Odd frequencies 1, 3, ..., up to T.
    pub fn frequencies(self) -> Vec<usize> {
        (1..=self.t.max(1)).step_by(2).collect()
    }
    pub fn cos_of(self, f: usize) -> usize {
        self.n + 4 + (f - 1)
    }
    pub fn sin_of(self, f: usize) -> usize {
        self.n + 4 + f
    }
    pub fn index(self) -> usize {
        self.n + 4 + 2 * self.frequencies().len()
    }
    pub fn first(self) -> usize {
        self.index() + 1
    }
    /// Size of the positional block.
    pub fn p(self) -> usize {
        2 * self.frequencies().len() + 2
    }
    pub fn d(self) -> usize {
        self.n + 4 + self.p()
    }
}

fn positional_table(lay: WtaLayout) -> Matrix {
    let t = lay.t as f64;
    let mut m = Matrix::zeros(lay.t, lay.d());
    for r in 0..lay.t {
        let i = (r + 1) as f64;
        m[(r, lay.one())] = 1.0;
        for f in lay.frequencies() {
            let a = f as f64 * PI * i / t;
            m[(r, lay.cos_of(f))] = a.cos();
            m[(r, lay.sin_of(f))] = a.sin();
        }
        m[(r, lay.index())] = i / t;
        if r == 0 {
            m[(r, lay.first())] = 1.0;
        }
    }
    m
}

fn build_embedding(a: &Wta, lay: WtaLayout) -> Result<Embedding> {
    let mut tokens = std::collections::BTreeMap::new();
    for s in &a.alphabet {
        if s == OPEN || s == CLOSE || s.chars().any(|c| c.is_whitespace() || c == '(' || c == ')') {
            return Err(Error::InvalidModel(format!("leaf symbol `{s}` clashes with the bracket syntax")));
        }
        let mut v = vec![0.0; lay.d()];
        v[..lay.n].copy_from_slice(a.leaf(s)?);
        tokens.insert(s.clone(), v);
    }
    for (s, m) in [(OPEN, 1.0), (CLOSE, -1.0)] {
        let mut v = vec![0.0; lay.d()];
        v[lay.marker()] = m;
        tokens.insert(s.to_string(), v);
    }
    Ok(Embedding { tokens, pad: vec![0.0; lay.d()], positions: positional_table(lay), align: Align::Start })
}

/// T×(n+4+p) input matrix of an encoded tree.
pub fn embed_tree(a: &Wta, enc: &TreeEncoding, t: usize) -> Result<TokenMatrix> {
    if enc.len() > t {
        return Err(Error::BudgetExceeded { len: enc.len(), budget: t });
    }
    let lay = WtaLayout::new(a.n, t);
    let toks: Vec<String> = enc.tokens.iter().map(ToString::to_string).collect();
    build_embedding(a, lay)?.embed(&toks)
}

/// Fourier-series stand-in for the indicator `[j − i ≥ 2]` on the integer
/// offsets of a length-T window, written over odd frequencies f ≤ T:
/// `H(x) = 1/2 + Σ_f sin_coef[f]·sin(fπx/T) + cos_coef[f]·cos(fπx/T)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeavisideApprox {
    #[serde(rename = "T")]
    pub t: usize,
    /// Number of series terms; `None` for exact interpolation on the grid.
    pub terms: Option<usize>,
    pub frequencies: Vec<usize>,
    pub sin_coef: Vec<f64>,
    pub cos_coef: Vec<f64>,
    /// Largest deviation from the indicator over offsets −(T−2)..=T−1.
    pub delta: f64,
}

impl HeavisideApprox {
    pub fn eval(&self, x: i64) -> f64 {
        let t = self.t as f64;
        let mut h = 0.5;
        for ((f, s), c) in self.frequencies.iter().zip(&self.sin_coef).zip(&self.cos_coef) {
            let a = *f as f64 * PI * x as f64 / t;
            h += s * a.sin() + c * a.cos();
        }
        h
    }

    /// `(x, H(x))` for x = −T..=T.
    pub fn table(&self) -> Vec<(i64, f64)> {
        let t = self.t as i64;
        (-t..=t).map(|x| (x, self.eval(x))).collect()
    }

    fn measure(&mut self) {
        let t = self.t as i64;
        self.delta = (-(t - 2)..t)
            .map(|x| (self.eval(x) - if x >= 2 { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
    }
}

fn odd_frequencies(t: usize) -> Vec<usize> {
    (1..=t.max(1)).step_by(2).collect()
}

/// Adds series terms `from..to` of
/// `1/2 + (2/π) Σ_l sin((2l+1)π(x − 1.25)/T) / (2l+1)` into `h`.
///
/// On integer x a frequency f acts like f mod 2T, which folds onto an odd
/// frequency ≤ T, so any number of terms fits the same feature set.
fn accumulate_terms(h: &mut HeavisideApprox, from: usize, to: usize) {
    let t = h.t;
    let two_t = 2 * t;
    let phase = 1.25 * PI / t as f64;
    for l in from..to {
        let f = 2 * l + 1;
        let c = 2.0 / (PI * f as f64);
        // sin(fπx/T − fφ) = sin(fπx/T)·cos(fφ) − cos(fπx/T)·sin(fφ)
        let (sp, cp) = ((f as f64 * phase).sin(), (f as f64 * phase).cos());
        let (mut s_part, c_part) = (c * cp, -c * sp);
        let mut g = f % two_t;
        if g > t {
            g = two_t - g;
            s_part = -s_part;
        }
        let slot = (g - 1) / 2;
        if g != t {
            h.sin_coef[slot] += s_part;
        }
        h.cos_coef[slot] += c_part;
    }
}

/// The `k`-term series folded onto odd frequencies ≤ T.
pub fn heaviside_fourier(k: usize, t: usize) -> HeavisideApprox {
    let frequencies = odd_frequencies(t);
    let f = frequencies.len();
    let mut h = HeavisideApprox {
        t,
        terms: Some(k),
        frequencies,
        sin_coef: vec![0.0; f],
        cos_coef: vec![0.0; f],
        delta: 0.0,
    };
    accumulate_terms(&mut h, 0, k);
    h.measure();
    h
}

/// Interpolates the indicator exactly on the grid (the limit of the series
/// on integer offsets).
pub fn heaviside_exact(t: usize) -> HeavisideApprox {
    let frequencies = odd_frequencies(t);
    let tf = t as f64;
    // g(x) = H(x) − 1/2 on 0..T, extended by g(x + T) = −g(x)
    let g = |x: usize| if x >= 2 { 0.5 } else { -0.5 };
    let mut sin_coef = Vec::new();
    let mut cos_coef = Vec::new();
    for &f in &frequencies {
        let w = if f == t { 1.0 / tf } else { 2.0 / tf };
        let (mut s, mut c) = (0.0, 0.0);
        for x in 0..t {
            let a = f as f64 * PI * x as f64 / tf;
            s += g(x) * a.sin();
            c += g(x) * a.cos();
        }
        sin_coef.push(if f == t { 0.0 } else { w * s });
        cos_coef.push(w * c);
    }
    let mut h = HeavisideApprox { t, terms: None, frequencies, sin_coef, cos_coef, delta: 0.0 };
    h.measure();
    h
}

/// Smallest score gap between neighbouring positions: 1 − cos(π/T).
pub fn position_gap(t: usize) -> f64 {
    1.0 - (PI / t.max(1) as f64).cos()
}

const MAX_TERMS: usize = 1 << 26;

/// Doubles the number of terms until δ_k < gap/8.
pub fn choose_fourier_terms(t: usize) -> Result<HeavisideApprox> {
    let target = position_gap(t) / 8.0;
    let mut h = heaviside_fourier(1, t);
    let mut k = 1;
    while h.delta >= target {
        if k >= MAX_TERMS {
            return Err(Error::Calibration(format!(
                "Fourier indicator for T = {t} still has error {} after {k} terms",
                h.delta
            )));
        }
        accumulate_terms(&mut h, k, 2 * k);
        k *= 2;
        h.terms = Some(k);
        h.measure();
    }
    Ok(h)
}

/// Score bilinear form G (d×d); the head scores `C·x_iᵀ G x_j`.
struct Form {
    lay: WtaLayout,
    g: Matrix,
}

impl Form {
    fn new(lay: WtaLayout) -> Self {
        Form { lay, g: Matrix::zeros(lay.d(), lay.d()) }
    }

    fn add(&mut self, qi: usize, kj: usize, w: f64) {
        self.g[(qi, kj)] += w;
    }

    /// `w·cos(f(a_j − a_i) − psi)` with `a_i = πi/T`.
    fn shifted_cos(&mut self, f: usize, psi: f64, w: f64) {
        let (c, s) = (self.lay.cos_of(f), self.lay.sin_of(f));
        let (cp, sp) = (psi.cos(), psi.sin());
        // cos(fΔ) = c_i c_j + s_i s_j;  sin(fΔ) = c_i s_j − s_i c_j
        self.add(c, c, w * cp);
        self.add(s, s, w * cp);
        self.add(c, s, w * sp);
        self.add(s, c, -w * sp);
    }

    /// `w·sin(f(a_j − a_i))`.
    fn sin(&mut self, f: usize, w: f64) {
        self.shifted_cos(f, PI / 2.0, w);
    }

    fn head(self, w_v: Matrix, scale: f64) -> AttentionHead {
        let r = scale.sqrt();
        AttentionHead::new(Matrix::identity(self.lay.d()).scale(r), self.g.transpose().scale(r), w_v)
    }
}

fn state_values(lay: WtaLayout) -> Matrix {
    let mut m = Matrix::zeros(lay.d(), lay.n);
    for i in 0..lay.n {
        m[(i, i)] = 1.0;
    }
    m
}

fn copy_head(lay: WtaLayout, scale: f64) -> AttentionHead {
    let mut f = Form::new(lay);
    f.shifted_cos(1, 0.0, 1.0);
    f.head(Matrix::identity(lay.d()), scale)
}

/// Row i attends to row i + 1 and reads its state.
pub fn build_left_head(lay: WtaLayout, scale: f64) -> AttentionHead {
    let mut f = Form::new(lay);
    f.shifted_cos(1, PI / lay.t as f64, 1.0);
    f.head(state_values(lay), scale)
}

/// Row i attends to the right child of the subtree starting at i: the
/// nearest j ≥ i + 2 with `d_j = d_i + 1`. Score
/// `−β(1 − d_j + d_i)² + cos(π(j − i − 2)/T) + 2·H(j − i)`.
pub fn build_right_head(lay: WtaLayout, beta: f64, h: &HeavisideApprox, scale: f64) -> AttentionHead {
    let (one, d, q) = (lay.one(), lay.depth(), lay.depth_sq());
    let mut f = Form::new(lay);
    // −β(1 + d_j² + d_i² − 2d_j + 2d_i − 2 d_i d_j)
    f.add(one, one, -beta);
    f.add(one, q, -beta);
    f.add(q, one, -beta);
    f.add(one, d, 2.0 * beta);
    f.add(d, one, -2.0 * beta);
    f.add(d, d, 2.0 * beta);
    f.shifted_cos(1, 2.0 * PI / lay.t as f64, 1.0);
    f.add(one, one, 1.0);
    for ((&fr, &s), &c) in h.frequencies.iter().zip(&h.sin_coef).zip(&h.cos_coef) {
        f.sin(fr, 2.0 * s);
        f.shifted_cos(fr, 0.0, 2.0 * c);
    }
    f.head(state_values(lay), scale)
}

/// Realization of the feed-forward polynomials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfRealization {
    /// Exact bilinear blocks.
    #[default]
    Bilinear,
    /// Square-activation two-layer networks.
    Mlp,
}

fn realize(poly: &PolynomialMap, one_var: usize, how: FfRealization) -> Result<FeedForwardBlock> {
    Ok(match how {
        FfRealization::Mlp => FeedForwardBlock::Mlp { mlp: quadratic_mlp_fit(poly)?, out: None },
        FfRealization::Bilinear => {
            let (vars, layer) = poly.to_bilinear(Some(one_var))?;
            let mut sel = Matrix::zeros(poly.inputs, vars.len().max(1));
            for (c, &v) in vars.iter().enumerate() {
                sel[(v, c)] = 1.0;
            }
            let sel: Weight = sel.into();
            FeedForwardBlock::Bilinear { left: sel.clone(), right: sel, layer, out: None }
        }
    })
}

fn copy_terms(p: &mut PolynomialMap, from: usize, to: usize, one: usize) {
    p.add(to, 1.0, &[from, one]);
}

/// The two layers that add the shifted marker, then d and d².
pub fn build_enrichment(lay: WtaLayout, scale: f64, how: FfRealization, hard: bool) -> Result<[LayerSpec; 2]> {
    let d = lay.d();
    let mode = if hard { AttentionMode::Hard } else { AttentionMode::Soft };

    // layer 1: read the previous row's marker
    let mut shift = Form::new(lay);
    shift.shifted_cos(1, -PI / lay.t as f64, 1.0);
    let mut mv = Matrix::zeros(d, 1);
    mv[(lay.marker(), 0)] = 1.0;
    let shift = shift.head(mv, scale);
    let heads = vec![shift, copy_head(lay, scale)];
    let (sm, base) = (0, 1);
    let one = base + lay.one();
    let mut p = PolynomialMap::new(1 + d, d);
    for k in 0..lay.n {
        copy_terms(&mut p, base + k, k, one);
    }
    copy_terms(&mut p, base + lay.marker(), lay.marker(), one);
    // s_i = m_{i−1}, zero on the first row
    p.add(lay.depth(), 1.0, &[sm, one]);
    p.add(lay.depth(), -1.0, &[sm, base + lay.first()]);
    let e1 = LayerSpec {
        mode,
        heads,
        merge: Matrix::identity(1 + d).into(),
        ff: realize(&p, one, how)?,
    };

    // layer 2: prefix mean of the shifted marker, rescaled to a sum
    let mut sv = Matrix::zeros(d, 1);
    sv[(lay.depth(), 0)] = 1.0;
    let uniform = AttentionHead::new(Matrix::zeros(d, 1), Matrix::zeros(d, 1), sv)
        .causal()
        .with_mode(AttentionMode::Soft);
    let heads = vec![uniform, copy_head(lay, scale)];
    let mean = 0;
    let mut a = PolynomialMap::new(1 + d, d);
    for k in 0..lay.n {
        copy_terms(&mut a, base + k, k, one);
    }
    copy_terms(&mut a, base + lay.marker(), lay.marker(), one);
    copy_terms(&mut a, base + lay.one(), lay.one(), one);
    a.add(lay.depth(), lay.t as f64, &[mean, base + lay.index()]);
    let mut b = PolynomialMap::new(d, d);
    for k in 0..lay.n {
        copy_terms(&mut b, k, k, lay.one());
    }
    copy_terms(&mut b, lay.marker(), lay.marker(), lay.one());
    copy_terms(&mut b, lay.depth(), lay.depth(), lay.one());
    b.add(lay.depth_sq(), 1.0, &[lay.depth(), lay.depth()]);
    let ff = FeedForwardBlock::Sequential { blocks: vec![realize(&a, one, how)?, realize(&b, lay.one(), how)?] };
    let e2 = LayerSpec { mode, heads, merge: Matrix::identity(1 + d).into(), ff };
    Ok([e1, e2])
}

/// One bottom-up step: open-bracket rows combine their children's states,
/// leaves keep their vector, everything else becomes 0.
pub fn build_parsing_layer(
    a: &Wta,
    lay: WtaLayout,
    beta: f64,
    h: &HeavisideApprox,
    scale: f64,
    how: FfRealization,
    hard: bool,
) -> Result<LayerSpec> {
    let (n, d) = (lay.n, lay.d());
    let heads = vec![build_left_head(lay, scale), build_right_head(lay, beta, h, scale), copy_head(lay, scale)];
    let (xl, xr, base) = (0, n, 2 * n);
    let m = base + lay.marker();
    let one = base + lay.one();

    // stage 1 → (a, b, c, v, m, 1, d, d²) with a = m·x_L, b = (m+1)/2·x_R, c = m·v
    let (za, zb, zc, zv) = (0, n, 2 * n, 3 * n);
    let (zm, zone, zd, zq) = (4 * n, 4 * n + 1, 4 * n + 2, 4 * n + 3);
    let mut s1 = PolynomialMap::new(2 * n + d, 4 * n + 4);
    for k in 0..n {
        s1.add(za + k, 1.0, &[m, xl + k]);
        s1.add(zb + k, 0.5, &[m, xr + k]);
        s1.add(zb + k, 0.5, &[xr + k, one]);
        s1.add(zc + k, 1.0, &[m, base + k]);
        copy_terms(&mut s1, base + k, zv + k, one);
    }
    copy_terms(&mut s1, m, zm, one);
    copy_terms(&mut s1, one, zone, one);
    copy_terms(&mut s1, base + lay.depth(), zd, one);
    copy_terms(&mut s1, base + lay.depth_sq(), zq, one);

    // stage 2 → state = T(a, b) + v − m·c, markers and depths carried along
    let mut s2 = PolynomialMap::new(4 * n + 4, d);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                s2.add(i, a.tensor.get(i, j, k), &[za + j, zb + k]);
            }
        }
        copy_terms(&mut s2, zv + i, i, zone);
        s2.add(i, -1.0, &[zm, zc + i]);
    }
    copy_terms(&mut s2, zm, lay.marker(), zone);
    copy_terms(&mut s2, zd, lay.depth(), zone);
    copy_terms(&mut s2, zq, lay.depth_sq(), zone);

    let ff = FeedForwardBlock::Sequential { blocks: vec![realize(&s1, one, how)?, realize(&s2, zone, how)?] };
    Ok(LayerSpec {
        mode: if hard { AttentionMode::Hard } else { AttentionMode::Soft },
        heads,
        merge: Matrix::identity(2 * n + d).into(),
        ff,
    })
}

fn readout_matrix(lay: WtaLayout) -> Matrix {
    state_values(lay)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorMode {
    #[default]
    Fourier,
    Exact,
}

#[derive(Clone, Debug)]
pub struct WtaOptions {
    pub attention: AttentionMode,
    /// Fixed saturation constant; calibrated when `None`.
    pub c: Option<f64>,
    /// Calibration target for the largest absolute state error on probes.
    pub eps: f64,
    pub indicator: IndicatorMode,
    pub ff: FfRealization,
    pub beta: Option<f64>,
    pub probe_seed: u64,
    pub probe_trees: usize,
}

impl Default for WtaOptions {
    fn default() -> Self {
        WtaOptions {
            attention: AttentionMode::Soft,
            c: None,
            eps: 1e-9,
            indicator: IndicatorMode::Fourier,
            ff: FfRealization::Bilinear,
            beta: None,
            probe_seed: 0x7ee5,
            probe_trees: 12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WtaCompilation {
    pub spec: TransformerSpec,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub enrichment_layers: usize,
    pub parsing_layers: usize,
    pub embedding_dim: usize,
    pub p: usize,
    pub fourier_terms: Option<usize>,
    pub delta_k: f64,
    pub beta_gap: f64,
    #[serde(rename = "C")]
    pub saturation: f64,
    pub attention: AttentionMode,
    pub ff: FfRealization,
    /// Hidden widths of the parsing feed-forward stages.
    pub parsing_mlp_widths: Vec<usize>,
    /// ½(2n+1)(2n+2), the width quoted for a degree-4 square network.
    pub reference_mlp_width: usize,
    pub probe_error: Option<f64>,
}

impl WtaCompilation {
    pub fn total_layers(&self) -> usize {
        self.enrichment_layers + self.parsing_layers
    }
}

impl fmt::Display for WtaCompilation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind               wta")?;
        writeln!(f, "T                  {}", self.t)?;
        writeln!(f, "states             {}", self.n)?;
        writeln!(f, "layers             {} (2 enrichment + {} parsing)", self.total_layers(), self.parsing_layers)?;
        writeln!(f, "embedding (d)      {} = n + 4 + p, p = {}", self.embedding_dim, self.p)?;
        match self.fourier_terms {
            Some(k) => writeln!(f, "indicator          Fourier, k = {k}, delta_k = {:.3e}", self.delta_k)?,
            None => writeln!(f, "indicator          exact, delta = {:.3e}", self.delta_k)?,
        }
        writeln!(f, "beta               {}", self.beta_gap)?;
        writeln!(f, "attention          {:?}", self.attention)?;
        writeln!(f, "saturation (C)     {}", self.saturation)?;
        writeln!(f, "feed-forward       {:?}, stage widths {:?}", self.ff, self.parsing_mlp_widths)?;
        writeln!(f, "reference width    {}", self.reference_mlp_width)?;
        if let Some(e) = self.probe_error {
            writeln!(f, "probe error        {e:.3e}")?;
        }
        Ok(())
    }
}

fn assemble(a: &Wta, lay: WtaLayout, depth: usize, beta: f64, h: &HeavisideApprox, c: f64, opts: &WtaOptions) -> Result<TransformerSpec> {
    let hard = opts.attention == AttentionMode::Hard;
    let [e1, e2] = build_enrichment(lay, c, opts.ff, hard)?;
    let parse = build_parsing_layer(a, lay, beta, h, c, opts.ff, hard)?;
    let mut layers = vec![e1, e2];
    layers.extend(std::iter::repeat_n(parse, depth));
    Ok(TransformerSpec {
        d: lay.d(),
        t_budget: lay.t,
        input: InputKind::Tree,
        embedding: build_embedding(a, lay)?,
        layers,
        readout: readout_matrix(lay).into(),
        reinject_positions: true,
    })
}

/// States per token position (1-based position `i` at index `i − 1`).
pub fn simulate_tree(spec: &TransformerSpec, enc: &TreeEncoding) -> Result<Vec<Vec<f64>>> {
    let toks: Vec<String> = enc.tokens.iter().map(ToString::to_string).collect();
    let out = transformer_forward(spec, &toks)?;
    Ok((0..enc.len()).map(|r| out.row(r).to_vec()).collect())
}

/// Largest |output − μ| over subtree positions of `trees`.
pub fn max_tree_error(a: &Wta, spec: &TransformerSpec, trees: &[BinaryTree]) -> Result<f64> {
    let mut worst = 0.0f64;
    for t in trees {
        let enc = tree_to_str(t);
        let got = simulate_tree(spec, &enc)?;
        for (pos, mu) in subtree_states(a, t)? {
            for (x, y) in got[pos].iter().zip(&mu) {
                let e = (x - y).abs();
                worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
            }
        }
    }
    Ok(worst)
}

/// Random binary tree shape with `leaves` leaves, uniform labels.
fn random_tree(rng: &mut ChaCha8Rng, alphabet: &[String], leaves: usize) -> BinaryTree {
    if leaves == 1 {
        return BinaryTree::leaf(alphabet[rng.gen_range(0..alphabet.len())].clone());
    }
    let l = rng.gen_range(1..leaves);
    BinaryTree::node(random_tree(rng, alphabet, l), random_tree(rng, alphabet, leaves - l))
}

fn comb(alphabet: &[String], leaves: usize) -> BinaryTree {
    let s = |i: usize| BinaryTree::leaf(alphabet[i % alphabet.len()].clone());
    let mut t = s(leaves - 1);
    for i in (0..leaves - 1).rev() {
        t = BinaryTree::node(s(i), t);
    }
    t
}

/// Probe trees fitting the window and depth budget.
pub fn probe_trees(alphabet: &[String], t: usize, depth: usize, count: usize, seed: u64) -> Vec<BinaryTree> {
    let max_leaves = t.div_ceil(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let widest = (depth + 1).min(max_leaves);
    if widest >= 1 {
        out.push(comb(alphabet, widest));
    }
    let mut tries = 0;
    while out.len() < count + 1 && tries < 100 * count {
        tries += 1;
        let leaves = rng.gen_range(1..=max_leaves.max(1));
        let tr = random_tree(&mut rng, alphabet, leaves);
        if tr.depth() <= depth {
            out.push(tr);
        }
    }
    out
}

const C_LIMIT: f64 = 1099511627776.0; // 2^40

/// Compiles a WTA for trees of at most `t` tokens with `depth` parsing layers.
pub fn compile_wta(a: &Wta, t: usize, depth: usize) -> Result<WtaCompilation> {
    compile_wta_with(a, t, depth, &WtaOptions::default())
}

pub fn compile_wta_with(a: &Wta, t: usize, depth: usize, opts: &WtaOptions) -> Result<WtaCompilation> {
    a.validate()?;
    if t == 0 {
        return Err(Error::InvalidArgument("window must hold at least one token".into()));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("depth budget must be at least 1".into()));
    }
    let lay = WtaLayout::new(a.n, t);
    let h = match opts.indicator {
        IndicatorMode::Exact => heaviside_exact(t),
        IndicatorMode::Fourier => choose_fourier_terms(t)?,
    };
    let spread = 4.0 + 4.0 * h.delta;
    let beta = opts.beta.unwrap_or(8.0 * spread);
    if beta <= spread {
        return Err(Error::Calibration(format!("beta = {beta} does not exceed the score spread {spread}")));
    }
    let hard = opts.attention == AttentionMode::Hard;
    let (c, spec, probe_error) = if hard {
        (1.0, assemble(a, lay, depth, beta, &h, 1.0, opts)?, None)
    } else if let Some(c) = opts.c {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("saturation constant must be positive, got {c}")));
        }
        (c, assemble(a, lay, depth, beta, &h, c, opts)?, None)
    } else {
        let probes = probe_trees(&a.alphabet, t, depth, opts.probe_trees, opts.probe_seed);
        let mut c = 1.0;
        loop {
            let spec = assemble(a, lay, depth, beta, &h, c, opts)?;
            let err = max_tree_error(a, &spec, &probes)?;
            if err < opts.eps {
                break (c, spec, Some(err));
            }
            c *= 2.0;
            if c > C_LIMIT {
                return Err(Error::Calibration(format!(
                    "probe error {err} stays above {} up to C = 2^40",
                    opts.eps
                )));
            }
        }
    };
    let parse_ff = &spec.layers[2].ff;
    Ok(WtaCompilation {
        n: a.n,
        t,
        enrichment_layers: 2,
        parsing_layers: depth,
        embedding_dim: lay.d(),
        p: lay.p(),
        fourier_terms: h.terms,
        delta_k: h.delta,
        beta_gap: beta,
        saturation: c,
        attention: opts.attention,
        ff: opts.ff,
        parsing_mlp_widths: parse_ff.widths(),
        reference_mlp_width: (2 * a.n + 1) * (2 * a.n + 2) / 2,
        probe_error,
        spec,
    })
}

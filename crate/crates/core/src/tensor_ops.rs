//! Order-3 tensors, bilinear layers, vectorization and quadratic MLPs.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Dense order-3 tensor stored as `[mode1][mode2][mode3]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        Tensor3 { dims: [d1, d2, d3], data: vec![0.0; d1 * d2 * d3] }
    }

    pub fn from_fn(
        d1: usize,
        d2: usize,
        d3: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Tensor3::zeros(d1, d2, d3);
        for i in 0..d1 {
            for j in 0..d2 {
                for k in 0..d3 {
                    t.data[(i * d2 + j) * d3 + k] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn add_at(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] += v;
    }

    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        let [d1, d2, d3] = self.dims;
        debug_assert!(i < d1 && j < d2 && k < d3);
        (i * d2 + j) * d3 + k
    }

    /// Entries `(i, j, k, value)` with nonzero value, in storage order.
    pub fn nonzeros(&self) -> Vec<(usize, usize, usize, f64)> {
        let [_, d2, d3] = self.dims;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(o, v)| (o / (d2 * d3), (o / d3) % d2, o % d3, *v))
            .collect()
    }

    /// Reorders modes: entry `[i1][i2][i3]` of the result is the entry of
    /// `self` whose mode `order[m]` index is `i_{m+1}`.
    pub fn permute(&self, order: [usize; 3]) -> Tensor3 {
        let nd = [self.dims[order[0]], self.dims[order[1]], self.dims[order[2]]];
        Tensor3::from_fn(nd[0], nd[1], nd[2], |a, b, c| {
            let mut idx = [0; 3];
            idx[order[0]] = a;
            idx[order[1]] = b;
            idx[order[2]] = c;
            self.get(idx[0], idx[1], idx[2])
        })
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for Tensor3 {
    type Error = Error;
    fn try_from(v: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let d1 = v.len();
        let d2 = v.first().map_or(0, Vec::len);
        let d3 = v.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(d1 * d2 * d3);
        for slab in v {
            if slab.len() != d2 {
                return Err(Error::Shape("ragged tensor along mode 2".into()));
            }
            for fibre in slab {
                if fibre.len() != d3 {
                    return Err(Error::Shape("ragged tensor along mode 3".into()));
                }
                data.extend(fibre);
            }
        }
        Ok(Tensor3 { dims: [d1, d2, d3], data })
    }
}

impl From<Tensor3> for Vec<Vec<Vec<f64>>> {
    fn from(t: Tensor3) -> Self {
        let [d1, d2, d3] = t.dims;
        (0..d1)
            .map(|i| (0..d2).map(|j| (0..d3).map(|k| t.get(i, j, k)).collect()).collect())
            .collect()
    }
}

/// Sums `t` against `v` along `mode` (1, 2 or 3); the two remaining modes
/// keep their order.
pub fn mode_contract(t: &Tensor3, v: &[f64], mode: usize) -> Result<Matrix> {
    let [d1, d2, d3] = t.dims;
    let need = match mode {
        1 => d1,
        2 => d2,
        3 => d3,
        _ => return Err(Error::InvalidArgument(format!("mode {mode} is not 1, 2 or 3"))),
    };
    if v.len() != need {
        return Err(Error::Shape(format!(
            "mode {mode} has size {need}, vector has length {}",
            v.len()
        )));
    }
    Ok(match mode {
        1 => Matrix::from_fn(d2, d3, |j, k| (0..d1).map(|i| t.get(i, j, k) * v[i]).sum()),
        2 => Matrix::from_fn(d1, d3, |i, k| (0..d2).map(|j| t.get(i, j, k) * v[j]).sum()),
        _ => Matrix::from_fn(d1, d2, |i, j| (0..d3).map(|k| t.get(i, j, k) * v[k]).sum()),
    })
}

/// `out[k] = Σ_ij tensor[i][j][k]·x1[i]·x2[j] + bias[k]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BilinearLayer {
    pub tensor: Tensor3,
    pub bias: Vec<f64>,
    #[serde(skip)]
    sparse: OnceLock<Vec<(usize, usize, usize, f64)>>,
}

impl BilinearLayer {
    pub fn new(tensor: Tensor3, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != tensor.dims[2] {
            return Err(Error::Shape(format!(
                "bias length {} but output mode has size {}",
                bias.len(),
                tensor.dims[2]
            )));
        }
        Ok(BilinearLayer { tensor, bias, sparse: OnceLock::new() })
    }

    pub fn without_bias(tensor: Tensor3) -> Self {
        let bias = vec![0.0; tensor.dims[2]];
        BilinearLayer { tensor, bias, sparse: OnceLock::new() }
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.tensor.dims[0], self.tensor.dims[1])
    }

    pub fn output_dim(&self) -> usize {
        self.tensor.dims[2]
    }

    fn entries(&self) -> &[(usize, usize, usize, f64)] {
        self.sparse.get_or_init(|| self.tensor.nonzeros())
    }
}

pub fn bilinear_apply(layer: &BilinearLayer, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    let (d1, d2) = layer.input_dims();
    if x1.len() != d1 || x2.len() != d2 {
        return Err(Error::Shape(format!(
            "bilinear layer expects ({d1}, {d2}) inputs, got ({}, {})",
            x1.len(),
            x2.len()
        )));
    }
    let mut out = layer.bias.clone();
    for &(i, j, k, w) in layer.entries() {
        out[k] += w * x1[i] * x2[j];
    }
    Ok(out)
}

/// Column-major vectorization.
pub fn vec(m: &Matrix) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`] for an n×n matrix.
pub fn unvec(v: &[f64], n: usize) -> Result<Matrix> {
    if v.len() != n * n {
        return Err(Error::Shape(format!("length {} is not {n}²", v.len())));
    }
    Ok(Matrix::from_fn(n, n, |i, j| v[j * n + i]))
}

/// 0/1 tensor taking `vec(A)` (mode 1) and `vec(B)` (mode 2) to `vec(AB)`
/// (mode 3).
pub fn matmul_tensor(n: usize) -> Tensor3 {
    let nn = n * n;
    let mut t = Tensor3::zeros(nn, nn, nn);
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                // A[i][k] · B[k][j] contributes to (AB)[i][j]
                t.set(k * n + i, j * n + k, j * n + i, 1.0);
            }
        }
    }
    t
}

/// One term `coef · Π x[vars]` of output `output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub output: usize,
    pub coef: f64,
    pub vars: Vec<usize>,
}

/// A polynomial map ℝ^inputs → ℝ^outputs given as a list of monomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialMap {
    pub inputs: usize,
    pub outputs: usize,
    pub terms: Vec<Monomial>,
}

impl PolynomialMap {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        PolynomialMap { inputs, outputs, terms: Vec::new() }
    }

    pub fn add(&mut self, output: usize, coef: f64, vars: &[usize]) -> &mut Self {
        if coef != 0.0 {
            self.terms.push(Monomial { output, coef, vars: vars.to_vec() });
        }
        self
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|t| t.vars.len()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs];
        for t in &self.terms {
            out[t.output] += t.coef * t.vars.iter().map(|&v| x[v]).product::<f64>();
        }
        out
    }

    fn check(&self) -> Result<()> {
        if self.degree() > 2 {
            return Err(Error::DegreeTooHigh(self.degree()));
        }
        for t in &self.terms {
            if t.output >= self.outputs || t.vars.iter().any(|&v| v >= self.inputs) {
                return Err(Error::Shape("monomial index out of range".into()));
            }
        }
        Ok(())
    }

    /// Realizes the map as a bilinear layer over the variables it uses.
    ///
    /// Returns the used input indices (in order) and a layer whose two inputs
    /// are both those variables. Linear terms are multiplied by `one_var`,
    /// an input known to hold the constant 1.
    pub fn to_bilinear(&self, one_var: Option<usize>) -> Result<(Vec<usize>, BilinearLayer)> {
        self.check()?;
        let mut used: Vec<usize> = self.terms.iter().flat_map(|t| t.vars.iter().copied()).collect();
        let has_linear = self.terms.iter().any(|t| t.vars.len() == 1);
        if has_linear {
            let one = one_var.ok_or_else(|| {
                Error::InvalidArgument("linear terms need a constant-one input".into())
            })?;
            used.push(one);
        }
        used.sort_unstable();
        used.dedup();
        let pos = |v: usize| used.binary_search(&v).expect("variable collected above");
        let m = used.len();
        let mut t = Tensor3::zeros(m, m, self.outputs);
        let mut bias = vec![0.0; self.outputs];
        for term in &self.terms {
            match term.vars.as_slice() {
                [] => bias[term.output] += term.coef,
                [a] => t.add_at(pos(*a), pos(one_var.unwrap()), term.output, term.coef),
                [a, b] => t.add_at(pos(*a), pos(*b), term.output, term.coef),
                _ => unreachable!("degree checked"),
            }
        }
        Ok((used, BilinearLayer::new(t, bias)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Square,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Square => x * x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `y = act(x·w1 + b1)·w2 + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerMlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub activation: Activation,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl TwoLayerMlp {
    pub fn hidden_width(&self) -> usize {
        self.w1.cols()
    }

    /// Hidden units with a nonzero outgoing weight.
    pub fn active_units(&self) -> usize {
        (0..self.w2.rows()).filter(|&h| self.w2.row(h).iter().any(|w| *w != 0.0)).count()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.w1.left_mul(x)?;
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = self.activation.apply(*v + b);
        }
        let mut y = self.w2.left_mul(&h)?;
        for (v, b) in y.iter_mut().zip(&self.b2) {
            *v += b;
        }
        Ok(y)
    }

    /// Appends zero units until the hidden layer has `width` units.
    pub fn pad_hidden(&self, width: usize) -> TwoLayerMlp {
        let h = self.hidden_width();
        if width <= h {
            return self.clone();
        }
        let (m1, m2) = (self.w1.rows(), self.w2.cols());
        let w1 = Matrix::from_fn(m1, width, |i, j| if j < h { self.w1[(i, j)] } else { 0.0 });
        let w2 = Matrix::from_fn(width, m2, |i, j| if i < h { self.w2[(i, j)] } else { 0.0 });
        let mut b1 = self.b1.clone();
        b1.resize(width, 0.0);
        TwoLayerMlp { w1, b1, activation: self.activation, w2, b2: self.b2.clone() }
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Exact square-activation network for a polynomial of degree ≤ 2.
///
/// Hidden units are `x_i²`, `(x_i + 1)²` for variables with a linear term and
/// `(x_i + x_j)²` for cross terms; every monomial is a fixed combination of
/// those squares.
pub fn quadratic_mlp_fit(poly: &PolynomialMap) -> Result<TwoLayerMlp> {
    poly.check()?;
    #[derive(PartialEq, Eq, PartialOrd, Ord, Clone, Copy)]
    enum Unit {
        Sq(usize),
        Shift(usize),
        Pair(usize, usize),
    }
    let mut units: Vec<Unit> = Vec::new();
    for t in &poly.terms {
        match t.vars.as_slice() {
            [] => {}
            [a] => units.extend([Unit::Sq(*a), Unit::Shift(*a)]),
            [a, b] if a == b => units.push(Unit::Sq(*a)),
            [a, b] => {
                let (a, b) = (*a.min(b), *a.max(b));
                units.extend([Unit::Sq(a), Unit::Sq(b), Unit::Pair(a, b)]);
            }
            _ => unreachable!("degree checked"),
        }
    }
    units.sort_unstable();
    units.dedup();
    if units.is_empty() {
        units.push(Unit::Sq(0));
    }
    let idx = |u: Unit| units.binary_search(&u).expect("unit collected above");
    let h = units.len();
    let mut w1 = Matrix::zeros(poly.inputs, h);
    let mut b1 = vec![0.0; h];
    for (c, u) in units.iter().enumerate() {
        match *u {
            Unit::Sq(a) => {
                if a < poly.inputs {
                    w1[(a, c)] = 1.0;
                }
            }
            Unit::Shift(a) => {
                w1[(a, c)] = 1.0;
                b1[c] = 1.0;
            }
            Unit::Pair(a, b) => {
                w1[(a, c)] = 1.0;
                w1[(b, c)] = 1.0;
            }
        }
    }
    let mut w2 = Matrix::zeros(h, poly.outputs);
    let mut b2 = vec![0.0; poly.outputs];
    for t in &poly.terms {
        let (o, c) = (t.output, t.coef);
        match t.vars.as_slice() {
            [] => b2[o] += c,
            // x = ((x+1)² − x² − 1) / 2
            [a] => {
                w2[(idx(Unit::Shift(*a)), o)] += c / 2.0;
                w2[(idx(Unit::Sq(*a)), o)] -= c / 2.0;
                b2[o] -= c / 2.0;
            }
            [a, b] if a == b => w2[(idx(Unit::Sq(*a)), o)] += c,
            // xy = ((x+y)² − x² − y²) / 2
            [a, b] => {
                let (a, b) = (*a.min(b), *a.max(b));
                w2[(idx(Unit::Pair(a, b)), o)] += c / 2.0;
                w2[(idx(Unit::Sq(a)), o)] -= c / 2.0;
                w2[(idx(Unit::Sq(b)), o)] -= c / 2.0;
            }
            _ => unreachable!("degree checked"),
        }
    }
    Ok(TwoLayerMlp { w1, b1, activation: Activation::Square, w2, b2 })
}

/// Settings for [`fit_mlp_least_squares`].
#[derive(Clone, Copy, Debug)]
pub struct LeastSquaresFit {
    pub activation: Activation,
    pub width: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Random-feature fit of an arbitrary polynomial target: the first layer is
/// drawn at random, the second is solved by least squares on samples from
/// [-1, 1]^m. Returns the network and its maximum error on the samples.
pub fn fit_mlp_least_squares(
    poly: &PolynomialMap,
    cfg: LeastSquaresFit,
) -> Result<(TwoLayerMlp, f64)> {
    if cfg.width == 0 || cfg.samples == 0 {
        return Err(Error::InvalidArgument("width and samples must be positive".into()));
    }
    let m1 = poly.inputs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w1 = Matrix::from_fn(m1, cfg.width, |_, _| rng.gen_range(-1.0..1.0));
    let b1: Vec<f64> = (0..cfg.width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xs: Vec<Vec<f64>> =
        (0..cfg.samples).map(|_| (0..m1).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();

    let cols = cfg.width + 1;
    let mut feats = nalgebra::DMatrix::<f64>::zeros(cfg.samples, cols);
    let mut targets = nalgebra::DMatrix::<f64>::zeros(cfg.samples, poly.outputs);
    for (s, x) in xs.iter().enumerate() {
        let h = w1.left_mul(x)?;
        for (j, (v, b)) in h.iter().zip(&b1).enumerate() {
            feats[(s, j)] = cfg.activation.apply(v + b);
        }
        feats[(s, cfg.width)] = 1.0;
        for (o, y) in poly.eval(x).into_iter().enumerate() {
            targets[(s, o)] = y;
        }
    }
    let sol = feats
        .clone()
        .svd(true, true)
        .solve(&targets, 1e-12)
        .map_err(|e| Error::Calibration(e.to_string()))?;
    let w2 = Matrix::from_fn(cfg.width, poly.outputs, |i, j| sol[(i, j)]);
    let b2 = (0..poly.outputs).map(|j| sol[(cfg.width, j)]).collect();
    let mlp = TwoLayerMlp { w1, b1, activation: cfg.activation, w2, b2 };
    let mut worst = 0.0f64;
    for x in &xs {
        let got = mlp.forward(x)?;
        for (g, w) in got.iter().zip(poly.eval(x)) {
            worst = worst.max((g - w).abs());
        }
    }
    Ok((mlp, worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_contraction() {
        let t = Tensor3::from_fn(1, 1, 1, |_, _, _| 1.0);
        for mode in 1..=3 {
            assert_eq!(mode_contract(&t, &[3.0], mode).unwrap()[(0, 0)], 3.0);
        }
        assert!(mode_contract(&t, &[1.0, 2.0], 2).is_err());
        assert!(mode_contract(&t, &[1.0], 4).is_err());
    }

    #[test]
    fn vec_conventions() {
        assert_eq!(vec(&Matrix::identity(2)), vec![1.0, 0.0, 0.0, 1.0]);
        let mut e12 = Matrix::zeros(2, 2);
        e12[(0, 1)] = 1.0;
        let v = vec(&e12);
        assert_eq!(v.iter().position(|x| *x == 1.0), Some(2));
        assert!(unvec(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn matmul_tensor_scalar() {
        let t = matmul_tensor(1);
        assert_eq!(t.dims(), [1, 1, 1]);
        let l = BilinearLayer::without_bias(t);
        assert_eq!(bilinear_apply(&l, &[3.0], &[5.0]).unwrap(), vec![15.0]);
    }

    #[test]
    fn bilinear_zero_tensor_gives_bias() {
        let l = BilinearLayer::new(Tensor3::zeros(2, 3, 2), vec![1.0, -2.0]).unwrap();
        assert_eq!(bilinear_apply(&l, &[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap(), vec![1.0, -2.0]);
        assert!(BilinearLayer::new(Tensor3::zeros(2, 3, 2), vec![1.0]).is_err());
    }

    #[test]
    fn square_fit_of_x_squared() {
        let mut p = PolynomialMap::new(1, 1);
        p.add(0, 1.0, &[0, 0]);
        let mlp = quadratic_mlp_fit(&p).unwrap();
        for x in -2..=2 {
            let x = x as f64;
            assert_eq!(mlp.forward(&[x]).unwrap(), vec![x * x]);
        }
    }

    #[test]
    fn zero_target_has_zero_second_layer() {
        let p = PolynomialMap::new(3, 2);
        let mlp = quadratic_mlp_fit(&p).unwrap();
        assert_eq!(mlp.w2.max_abs(), 0.0);
        assert_eq!(mlp.b2, vec![0.0, 0.0]);
    }

    #[test]
    fn cubic_rejected() {
        let mut p = PolynomialMap::new(1, 1);
        p.add(0, 1.0, &[0, 0, 0]);
        assert!(matches!(quadratic_mlp_fit(&p), Err(Error::DegreeTooHigh(3))));
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 2), 45);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn permute_moves_modes() {
        let t = Tensor3::from_fn(2, 3, 4, |i, j, k| (100 * i + 10 * j + k) as f64);
        let p = t.permute([1, 2, 0]);
        assert_eq!(p.dims(), [3, 4, 2]);
        assert_eq!(p.get(2, 3, 1), t.get(1, 2, 3));
    }
}

//! Interpreter for encoder-only transformers without residual connections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, Weight};
use crate::tensor_ops::{bilinear_apply, BilinearLayer, TwoLayerMlp};

/// T×d matrix with one row per position.
pub type TokenMatrix = Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Soft,
    Hard,
}

/// One head: `attn(X W_Q (X W_K)ᵀ) X W_V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    #[serde(rename = "WQ")]
    pub w_q: Weight,
    #[serde(rename = "WK")]
    pub w_k: Weight,
    #[serde(rename = "WV")]
    pub w_v: Weight,
    /// Row i only sees columns j ≤ i.
    #[serde(default)]
    pub causal: bool,
    /// Overrides the layer's attention mode for this head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<AttentionMode>,
}

impl AttentionHead {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Self {
        AttentionHead { w_q: w_q.into(), w_k: w_k.into(), w_v: w_v.into(), causal: false, mode: None }
    }

    pub fn causal(mut self) -> Self {
        self.causal = true;
        self
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn value_dim(&self) -> usize {
        self.w_v.output_dim()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        let d = x.cols();
        if self.w_q.input_dim() != d || self.w_k.input_dim() != d || self.w_v.input_dim() != d {
            return Err(Error::Shape(format!("head weights do not accept width {d}")));
        }
        if self.w_q.output_dim() != self.w_k.output_dim() {
            return Err(Error::Shape("W_Q and W_K have different widths".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeedForwardBlock {
    Identity,
    /// MLP followed by an optional linear map.
    Mlp {
        mlp: TwoLayerMlp,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out: Option<Weight>,
    },
    /// `out(B(x·left, x·right))` for a bilinear layer B.
    Bilinear {
        left: Weight,
        right: Weight,
        layer: BilinearLayer,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out: Option<Weight>,
    },
    Sequential {
        blocks: Vec<FeedForwardBlock>,
    },
}

impl FeedForwardBlock {
    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeedForwardBlock::Identity => Ok(x.to_vec()),
            FeedForwardBlock::Mlp { mlp, out } => {
                let y = mlp.forward(x)?;
                match out {
                    Some(w) => w.apply_vec(&y),
                    None => Ok(y),
                }
            }
            FeedForwardBlock::Bilinear { left, right, layer, out } => {
                let a = left.apply_vec(x)?;
                let b = right.apply_vec(x)?;
                let y = bilinear_apply(layer, &a, &b)?;
                match out {
                    Some(w) => w.apply_vec(&y),
                    None => Ok(y),
                }
            }
            FeedForwardBlock::Sequential { blocks } => {
                let mut y = x.to_vec();
                for b in blocks {
                    y = b.apply_row(&y)?;
                }
                Ok(y)
            }
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if let FeedForwardBlock::Identity = self {
            return Ok(x.clone());
        }
        let rows: Vec<Vec<f64>> =
            (0..x.rows()).map(|i| self.apply_row(x.row(i))).collect::<Result<_>>()?;
        Matrix::from_rows(rows)
    }

    /// Hidden widths of every MLP/bilinear stage, in order.
    pub fn widths(&self) -> Vec<usize> {
        match self {
            FeedForwardBlock::Identity => Vec::new(),
            FeedForwardBlock::Mlp { mlp, .. } => vec![mlp.hidden_width()],
            FeedForwardBlock::Bilinear { layer, .. } => {
                let (a, b) = layer.input_dims();
                vec![a + b]
            }
            FeedForwardBlock::Sequential { blocks } => blocks.iter().flat_map(|b| b.widths()).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSpec {
    pub mode: AttentionMode,
    pub heads: Vec<AttentionHead>,
    /// Maps the concatenated head outputs to the feed-forward input.
    pub merge: Weight,
    pub ff: FeedForwardBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Align {
    /// Tokens fill the first rows; padding follows.
    Start,
    /// Tokens fill the last rows; padding precedes.
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Word,
    Tree,
}

/// Token vectors plus a per-row positional table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Embedding {
    pub tokens: BTreeMap<String, Vec<f64>>,
    pub pad: Vec<f64>,
    pub positions: Matrix,
    pub align: Align,
}

impl Embedding {
    pub fn window(&self) -> usize {
        self.positions.rows()
    }

    /// Row index of the first input token.
    pub fn offset(&self, len: usize) -> usize {
        match self.align {
            Align::Start => 0,
            Align::End => self.window() - len,
        }
    }

    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TokenMatrix> {
        let w = self.window();
        if tokens.len() > w {
            return Err(Error::BudgetExceeded { len: tokens.len(), budget: w });
        }
        let off = self.offset(tokens.len());
        let mut x = self.positions.clone();
        for r in 0..w {
            let v = if r >= off && r < off + tokens.len() {
                let s = tokens[r - off].as_ref();
                self.tokens.get(s).ok_or_else(|| Error::UnknownSymbol(s.to_string()))?
            } else {
                &self.pad
            };
            for (dst, a) in x.row_mut(r).iter_mut().zip(v) {
                *dst += a;
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub d: usize,
    #[serde(rename = "T_budget")]
    pub t_budget: usize,
    pub input: InputKind,
    pub embedding: Embedding,
    pub layers: Vec<LayerSpec>,
    /// Applied to every row of the last hidden matrix.
    pub readout: Weight,
    /// Add the positional table back after every layer.
    #[serde(default)]
    pub reinject_positions: bool,
}

impl TransformerSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        let e = &self.embedding;
        if e.positions.cols() != d || e.pad.len() != d || e.tokens.values().any(|v| v.len() != d) {
            return Err(Error::Shape(format!("embedding vectors must have width {d}")));
        }
        if self.t_budget > e.window() {
            return Err(Error::Shape("length budget exceeds the embedding window".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let cat: usize = layer.heads.iter().map(AttentionHead::value_dim).sum();
            if layer.merge.input_dim() != cat {
                return Err(Error::Shape(format!("layer {l}: merge expects {} inputs, heads give {cat}", layer.merge.input_dim())));
            }
            for h in &layer.heads {
                if h.w_q.input_dim() != d || h.w_k.input_dim() != d || h.w_v.input_dim() != d {
                    return Err(Error::Shape(format!("layer {l}: head weights must accept width {d}")));
                }
            }
        }
        if self.readout.input_dim() != d {
            return Err(Error::Shape(format!("readout must accept width {d}")));
        }
        Ok(())
    }

    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TokenMatrix> {
        if tokens.len() > self.t_budget {
            return Err(Error::BudgetExceeded { len: tokens.len(), budget: self.t_budget });
        }
        self.embedding.embed(tokens)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn read_out(&self, hidden: &Matrix) -> Result<Matrix> {
        self.readout.apply(hidden)
    }
}

pub fn attention_scores(head: &AttentionHead, x: &TokenMatrix) -> Result<Matrix> {
    head.check(x)?;
    let q = head.w_q.apply(x)?;
    let k = head.w_k.apply(x)?;
    let t = x.rows();
    Ok(Matrix::from_fn(t, t, |i, j| dot(q.row(i), k.row(j))))
}

/// Row-stochastic attention matrix for `mode`.
pub fn attention_weights(head: &AttentionHead, x: &TokenMatrix, mode: AttentionMode) -> Result<Matrix> {
    let mut s = attention_scores(head, x)?;
    let t = x.rows();
    for i in 0..t {
        let visible = if head.causal { i + 1 } else { t };
        let row = s.row_mut(i);
        match mode {
            AttentionMode::Soft => softmax_prefix(row, visible),
            AttentionMode::Hard => {
                let mut best = 0;
                for j in 1..visible {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                row.fill(0.0);
                row[best] = 1.0;
            }
        }
    }
    Ok(s)
}

fn softmax_prefix(row: &mut [f64], visible: usize) {
    let m = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row[..visible].iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row[..visible].iter_mut() {
        *v /= sum;
    }
    row[visible..].fill(0.0);
}

fn mix(weights: &Matrix, values: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(weights.rows(), values.cols());
    for i in 0..weights.rows() {
        let dst = out.row_mut(i);
        for (j, &w) in weights.row(i).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in dst.iter_mut().zip(values.row(j)) {
                *o += w * v;
            }
        }
    }
    out
}

pub fn soft_attention(head: &AttentionHead, x: &TokenMatrix) -> Result<Matrix> {
    let w = attention_weights(head, x, AttentionMode::Soft)?;
    Ok(mix(&w, &head.w_v.apply(x)?))
}

/// One-hot on the row-wise argmax (lowest index on ties).
pub fn hard_attention(head: &AttentionHead, x: &TokenMatrix) -> Result<Matrix> {
    let w = attention_weights(head, x, AttentionMode::Hard)?;
    Ok(mix(&w, &head.w_v.apply(x)?))
}

/// Per-layer intermediate values.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Attention matrix of every head.
    pub attention: Vec<Matrix>,
    /// Value-projected inputs `X·W_V` of every head.
    pub values: Vec<Matrix>,
    /// Feed-forward input.
    pub merged: Matrix,
    /// Layer output (after positional re-injection).
    pub output: Matrix,
}

fn run_layer(layer: &LayerSpec, x: &TokenMatrix, keep: bool) -> Result<(Matrix, Option<LayerTrace>)> {
    let t = x.rows();
    let cat_dim: usize = layer.heads.iter().map(AttentionHead::value_dim).sum();
    let mut cat = Matrix::zeros(t, cat_dim);
    let mut attention = Vec::new();
    let mut values_kept = Vec::new();
    let mut col = 0;
    for head in &layer.heads {
        let mode = head.mode.unwrap_or(layer.mode);
        let w = attention_weights(head, x, mode)?;
        let v = head.w_v.apply(x)?;
        let h = mix(&w, &v);
        for i in 0..t {
            cat.row_mut(i)[col..col + h.cols()].copy_from_slice(h.row(i));
        }
        col += h.cols();
        if keep {
            attention.push(w);
            values_kept.push(v);
        }
    }
    let merged = layer.merge.apply(&cat)?;
    let out = layer.ff.apply(&merged)?;
    let trace = keep.then(|| LayerTrace { attention, values: values_kept, merged, output: Matrix::zeros(0, 0) });
    Ok((out, trace))
}

/// Attention heads, merge and feed-forward of one layer.
pub fn layer_forward(layer: &LayerSpec, x: &TokenMatrix) -> Result<TokenMatrix> {
    Ok(run_layer(layer, x, false)?.0)
}

fn reinject(spec: &TransformerSpec, x: &mut Matrix) -> Result<()> {
    if !spec.reinject_positions {
        return Ok(());
    }
    if x.shape() != spec.embedding.positions.shape() {
        return Err(Error::Shape("layer output does not match the positional table".into()));
    }
    *x = x.add(&spec.embedding.positions)?;
    Ok(())
}

/// Hidden matrix after the last layer (before the readout).
pub fn transformer_hidden<S: AsRef<str>>(spec: &TransformerSpec, tokens: &[S]) -> Result<TokenMatrix> {
    let mut x = spec.embed(tokens)?;
    for layer in &spec.layers {
        x = layer_forward(layer, &x)?;
        reinject(spec, &mut x)?;
    }
    Ok(x)
}

/// Embedding, every layer, then the readout on every row.
pub fn transformer_forward<S: AsRef<str>>(spec: &TransformerSpec, tokens: &[S]) -> Result<Matrix> {
    spec.read_out(&transformer_hidden(spec, tokens)?)
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub embedded: Matrix,
    pub layers: Vec<LayerTrace>,
    pub output: Matrix,
}

/// Like [`transformer_forward`] but keeps every intermediate matrix.
pub fn transformer_trace<S: AsRef<str>>(spec: &TransformerSpec, tokens: &[S]) -> Result<ForwardTrace> {
    let embedded = spec.embed(tokens)?;
    let mut x = embedded.clone();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let (mut y, trace) = run_layer(layer, &x, true)?;
        reinject(spec, &mut y)?;
        let mut trace = trace.expect("trace requested");
        trace.output = y.clone();
        layers.push(trace);
        x = y;
    }
    let output = spec.read_out(&x)?;
    Ok(ForwardTrace { embedded, layers, output })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(d: usize, k: usize) -> AttentionHead {
        AttentionHead::new(Matrix::zeros(d, k), Matrix::zeros(d, k), Matrix::identity(d))
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let x = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert_eq!(attention_scores(&head(2, 1), &x).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn single_token() {
        let x = Matrix::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let mut h = head(2, 2);
        h.w_q = Matrix::identity(2).into();
        h.w_k = Matrix::identity(2).into();
        assert_eq!(attention_scores(&h, &x).unwrap()[(0, 0)], 5.0);
        assert_eq!(soft_attention(&h, &x).unwrap().to_rows(), vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn identical_tokens_average() {
        let x = Matrix::from_rows(vec![vec![1.0, 3.0]; 4]).unwrap();
        let out = soft_attention(&head(2, 1), &x).unwrap();
        assert!(out.to_rows().iter().all(|r| r == &vec![1.0, 3.0]));
    }

    #[test]
    fn ties_pick_first_column() {
        let x = Matrix::from_fn(4, 2, |i, _| i as f64);
        let w = attention_weights(&head(2, 1), &x, AttentionMode::Hard).unwrap();
        for i in 0..4 {
            assert_eq!(w[(i, 0)], 1.0);
        }
    }

    #[test]
    fn causal_rows_ignore_future() {
        let x = Matrix::from_fn(3, 1, |i, _| i as f64 + 1.0);
        let h = head(1, 1).causal();
        let w = attention_weights(&h, &x, AttentionMode::Soft).unwrap();
        assert_eq!(w.row(0), &[1.0, 0.0, 0.0]);
        assert!((w[(2, 0)] - 1.0 / 3.0).abs() < 1e-15);
        let out = soft_attention(&h, &x).unwrap();
        assert!((out[(1, 0)] - 1.5).abs() < 1e-15);
    }
}

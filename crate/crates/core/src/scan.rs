//! Doubling-schedule prefix scan over an associative operation.

use rayon::prelude::*;

use crate::linalg::Matrix;

/// An associative operation with a two-sided identity.
///
/// `combine(a, b)` means "a, then b": the left argument is the earlier
/// element of the sequence.
pub trait Monoid: Sync {
    type Elem: Clone + Send + Sync;
    fn identity(&self) -> Self::Elem;
    fn combine(&self, earlier: &Self::Elem, later: &Self::Elem) -> Self::Elem;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AddMonoid;

impl Monoid for AddMonoid {
    type Elem = i64;
    fn identity(&self) -> i64 {
        0
    }
    fn combine(&self, a: &i64, b: &i64) -> i64 {
        a + b
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ConcatMonoid;

impl Monoid for ConcatMonoid {
    type Elem = String;
    fn identity(&self) -> String {
        String::new()
    }
    fn combine(&self, a: &String, b: &String) -> String {
        let mut s = String::with_capacity(a.len() + b.len());
        s.push_str(a);
        s.push_str(b);
        s
    }
}

/// n×n matrices under the product `earlier · later`.
#[derive(Clone, Copy, Debug)]
pub struct MatrixProduct {
    pub n: usize,
}

impl Monoid for MatrixProduct {
    type Elem = Matrix;
    fn identity(&self) -> Matrix {
        Matrix::identity(self.n)
    }
    fn combine(&self, a: &Matrix, b: &Matrix) -> Matrix {
        a.matmul(b).expect("matrix monoid elements share a shape")
    }
}

/// Intermediate states of a scan, one entry per round (padding stripped).
#[derive(Clone, Debug)]
pub struct ScanTrace<E> {
    pub rounds: usize,
    pub levels: Vec<Vec<E>>,
    pub output: Vec<E>,
}

const PAR_THRESHOLD: usize = 256;

pub fn prefix_scan<M: Monoid>(m: &M, seq: &[M::Elem]) -> Vec<M::Elem> {
    run(m, seq, false).output
}

/// Like [`prefix_scan`] but records every round.
pub fn prefix_scan_trace<M: Monoid>(m: &M, seq: &[M::Elem]) -> ScanTrace<M::Elem> {
    run(m, seq, true)
}

fn run<M: Monoid>(m: &M, seq: &[M::Elem], keep: bool) -> ScanTrace<M::Elem> {
    let n = seq.len();
    if n == 0 {
        return ScanTrace { rounds: 0, levels: Vec::new(), output: Vec::new() };
    }
    let padded = n.next_power_of_two();
    let pad = padded - n;
    let mut cur: Vec<M::Elem> = std::iter::repeat_with(|| m.identity())
        .take(pad)
        .chain(seq.iter().cloned())
        .collect();

    let mut rounds = 0;
    let mut levels = Vec::new();
    let mut step = 1;
    while step < padded {
        let prev = &cur;
        let next: Vec<M::Elem> = if padded >= PAR_THRESHOLD {
            (0..padded)
                .into_par_iter()
                .map(|j| combine_at(m, prev, j, step))
                .collect()
        } else {
            (0..padded).map(|j| combine_at(m, prev, j, step)).collect()
        };
        cur = next;
        rounds += 1;
        step <<= 1;
        if keep {
            levels.push(cur[pad..].to_vec());
        }
    }
    let output = cur.split_off(pad);
    ScanTrace { rounds, levels, output }
}

fn combine_at<M: Monoid>(m: &M, prev: &[M::Elem], j: usize, step: usize) -> M::Elem {
    if j >= step {
        m.combine(&prev[j - step], &prev[j])
    } else {
        prev[j].clone()
    }
}

/// All prefixes by a plain left fold.
pub fn sequential_fold<M: Monoid>(m: &M, seq: &[M::Elem]) -> Vec<M::Elem> {
    let mut acc = m.identity();
    seq.iter()
        .map(|x| {
            acc = m.combine(&acc, x);
            acc.clone()
        })
        .collect()
}

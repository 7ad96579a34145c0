//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value and the indices of its inputs. [`Tape::backward`] walks the
//! nodes in reverse creation order and accumulates one adjoint buffer per
//! node, so every leaf receives exactly one summed gradient.

use rayon::prelude::*;

use crate::graph::ReviewGraph;
use crate::tensor::{dot, sigmoid, Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'g, T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + 1ᵀ·bias` with `bias` a single row.
    AddRow(Var, Var),
    /// Elementwise PReLU with a 1x1 trainable slope.
    Prelu(Var, Var),
    Sigmoid(Var),
    OneMinus(Var),
    Scale(Var, T),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        graph: &'g ReviewGraph,
        scale: T,
        /// Attention weights, aligned with the graph's CSR entries.
        alpha: Vec<T>,
    },
    Bce {
        p: Var,
        subset: Vec<usize>,
        targets: Vec<T>,
    },
}

struct Node<'g, T> {
    value: Matrix<T>,
    op: Op<'g, T>,
}

pub struct Tape<'g, T> {
    nodes: Vec<Node<'g, T>>,
}

/// Lower/upper clamp applied to probabilities inside the BCE loss.
pub const PROB_CLAMP: f64 = 1e-7;

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g, T: Scalar> Tape<'g, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<'g, T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a single row");
        let mut value = self.value(x).clone();
        assert_eq!(value.cols(), b.cols(), "bias width");
        for i in 0..value.rows() {
            for (d, &bv) in value.row_mut(i).iter_mut().zip(b.row(0)) {
                *d += bv;
            }
        }
        self.push(value, Op::AddRow(x, bias))
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let a = self.value(slope).get(0, 0);
        let value = self
            .value(x)
            .map(|u| if u > T::zero() { u } else { a * u });
        self.push(value, Op::Prelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|u| T::one() - u);
        self.push(value, Op::OneMinus(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|u| u * c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(value, Op::GatherRows(table, idx))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let dst = value.row_mut(i);
            let mut off = 0;
            for p in parts {
                let src = self.nodes[p.0].value.row(i);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Neighborhood softmax attention: for each node `i`,
    /// `out_i = Σ_{j∈N(i)} softmax_j(scale · q_i·k_j) v_j`.
    /// The reduction for each node follows its sorted neighbor list.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, graph: &'g ReviewGraph, scale: T) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let n = graph.n_nodes();
        assert_eq!(qm.rows(), n, "attention query rows");
        let width = vm.cols();
        let per_node: Vec<(Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let nbrs = graph.neighbors(i);
                let logits: Vec<T> = nbrs
                    .iter()
                    .map(|&j| scale * dot(qm.row(i), km.row(j as usize)))
                    .collect();
                let alpha = softmax(&logits);
                let mut out = vec![T::zero(); width];
                for (&j, &a) in nbrs.iter().zip(&alpha) {
                    for (o, &x) in out.iter_mut().zip(vm.row(j as usize)) {
                        *o += a * x;
                    }
                }
                (alpha, out)
            })
            .collect();
        let mut alpha = Vec::with_capacity(graph.n_entries());
        let mut data = Vec::with_capacity(n * width);
        for (a, o) in per_node {
            alpha.extend(a);
            data.extend(o);
        }
        self.push(
            Matrix::new(n, width, data),
            Op::Attention {
                q,
                k,
                v,
                graph,
                scale,
                alpha,
            },
        )
    }

    /// Attention weights recorded by an attention node, CSR-aligned.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Mean binary cross-entropy of column `p` over `subset`, with
    /// probabilities clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, p: Var, subset: Vec<usize>, targets: Vec<T>) -> Var {
        assert_eq!(subset.len(), targets.len(), "bce subset/targets");
        assert!(!subset.is_empty(), "bce over an empty subset");
        let pm = self.value(p);
        let total: f64 = subset
            .iter()
            .zip(&targets)
            .map(|(&i, &y)| bce_term(pm.get(i, 0).as_f64(), y.as_f64()))
            .sum();
        let value = Matrix::scalar(T::of(total / subset.len() as f64));
        self.push(value, Op::Bce { p, subset, targets })
    }

    /// Gradients of the 1x1 node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.matmul_nt(bv));
                    accumulate(&mut grads, *b, av.matmul_tn(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.zip_map(bv, |x, y| x * y));
                    accumulate(&mut grads, *b, g.zip_map(av, |x, y| x * y));
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, &v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Prelu(x, slope) => {
                    let xv = self.value(*x);
                    let a = self.value(*slope).get(0, 0);
                    let mut ga = T::zero();
                    let mut gx = g.clone();
                    for ((d, &u), &gy) in gx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                        if u <= T::zero() {
                            *d = gy * a;
                            ga += gy * u;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *slope, Matrix::scalar(ga));
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    accumulate(&mut grads, *x, g.zip_map(y, |gy, s| gy * s * (T::one() - s)));
                }
                Op::OneMinus(x) => accumulate(&mut grads, *x, g.map(|v| -v)),
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, g.map(|v| v * c));
                }
                Op::GatherRows(table, idx) => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, &v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let gp = Matrix::from_fn(g.rows(), w, |i, j| g.get(i, off + j));
                        accumulate(&mut grads, *p, gp);
                        off += w;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    graph,
                    scale,
                    alpha,
                } => {
                    let (gq, gk, gv) = attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        graph,
                        *scale,
                        alpha,
                        &g,
                    );
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
                Op::Bce { p, subset, targets } => {
                    let pm = self.value(*p);
                    let scale = g.get(0, 0) / T::of(subset.len() as f64);
                    let mut gp = Matrix::zeros(pm.rows(), pm.cols());
                    let lo = T::of(PROB_CLAMP);
                    let hi = T::one() - lo;
                    for (&i, &y) in subset.iter().zip(targets) {
                        let pv = pm.get(i, 0);
                        if pv > lo && pv < hi {
                            let d = -y / pv + (T::one() - y) / (T::one() - pv);
                            gp.set(i, 0, gp.get(i, 0) + scale * d);
                        }
                    }
                    accumulate(&mut grads, *p, gp);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let mut total = T::zero();
    for &e in &exps {
        total += e;
    }
    exps.into_iter().map(|e| e / total).collect()
}

fn attention_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    graph: &ReviewGraph,
    scale: T,
    alpha: &[T],
    g: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let mut gq = Matrix::zeros(q.rows(), q.cols());
    let mut gk = Matrix::zeros(k.rows(), k.cols());
    let mut gv = Matrix::zeros(v.rows(), v.cols());
    let offsets = graph.offsets();
    for i in 0..graph.n_nodes() {
        let nbrs = graph.neighbors(i);
        let a = &alpha[offsets[i] as usize..offsets[i + 1] as usize];
        let gi = g.row(i);
        let galpha: Vec<T> = nbrs.iter().map(|&j| dot(gi, v.row(j as usize))).collect();
        let mut weighted = T::zero();
        for (&aw, &ga) in a.iter().zip(&galpha) {
            weighted += aw * ga;
        }
        for ((&j, &aw), &ga) in nbrs.iter().zip(a).zip(&galpha) {
            let j = j as usize;
            for (d, &x) in gv.row_mut(j).iter_mut().zip(gi) {
                *d += aw * x;
            }
            let gs = scale * aw * (ga - weighted);
            for (d, &x) in gq.row_mut(i).iter_mut().zip(k.row(j)) {
                *d += gs * x;
            }
            for (d, &x) in gk.row_mut(j).iter_mut().zip(q.row(i)) {
                *d += gs * x;
            }
        }
    }
    (gq, gk, gv)
}

pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like its value when `v` did not
    /// influence the output.
    pub fn wrt(&self, tape: &Tape<'_, T>, v: Var) -> Matrix<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every value produced during one forward pass. Each
//! recorded op knows how to push its output gradient back to its inputs, and
//! [`Tape::backward`] walks the tape in reverse, accumulating gradients of
//! parameter leaves into a caller-owned buffer. Values are `f64` throughout so
//! finite-difference checks stay meaningful.
//!
//! Attention, layer normalization and cross entropy are fused ops with
//! hand-written backward passes; everything else is composed from matmul,
//! addition and elementwise primitives.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::ParamStore;
use crate::coref::NormalizedAdjacency;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which keys a query may attend to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    pub key_valid: Vec<bool>,
    /// Query `i` only sees keys `j <= i`.
    pub causal: bool,
}

impl AttnMask {
    pub fn all(n: usize) -> Self {
        AttnMask {
            key_valid: vec![true; n],
            causal: false,
        }
    }

    #[inline]
    fn allows(&self, i: usize, j: usize) -> bool {
        self.key_valid[j] && (!self.causal || j <= i)
    }
}

pub const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    Gather {
        table: Var,
        ids: Vec<u32>,
    },
    Propagate {
        x: Var,
        adj: NormalizedAdjacency,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    param: Option<usize>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<usize, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Hash of which ReLU outputs are positive. Two forward passes with equal
    /// hashes went through the same linear region.
    pub fn relu_pattern(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for n in &self.nodes {
            if let Op::Relu(_) = n.op {
                for &v in n.value.iter() {
                    h = (h ^ u64::from(v > 0.0)).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Trainable leaf for parameter `idx`; repeated requests share one leaf.
    pub fn param(&mut self, store: &ParamStore, idx: usize) -> Var {
        if let Some(&v) = self.param_cache.get(&idx) {
            return v;
        }
        let v = self.push(store.value(idx).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(idx);
        self.param_cache.insert(idx, v);
        v
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// `x + row` with `row` of shape `(1, d)` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let out = self.value(x) + self.value(row);
        let ng = self.ng(x) || self.ng(row);
        self.push(out, Op::AddRow(x, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// Row-wise normalization to zero mean and unit variance, then
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Multi-head scaled dot-product attention. `q` is `(Lq, d)`, `k` and `v`
    /// are `(Lk, d)`; head `h` uses columns `h*d/heads .. (h+1)*d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (lq, d) = qv.dim();
        let lk = kv.nrows();
        assert_eq!(mask.key_valid.len(), lk, "mask length");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((lq, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = qv.slice(cols).dot(&kv.slice(cols).t());
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                let mut max = f64::NEG_INFINITY;
                for j in 0..lk {
                    if mask.allows(i, j) {
                        row[j] *= scale;
                        max = max.max(row[j]);
                    }
                }
                let mut sum = 0.0;
                for j in 0..lk {
                    if mask.allows(i, j) {
                        row[j] = (row[j] - max).exp();
                        sum += row[j];
                    } else {
                        row[j] = 0.0;
                    }
                }
                if sum > 0.0 {
                    row.mapv_inplace(|x| x / sum);
                }
            }
            out.slice_mut(cols).assign(&p.dot(&vv.slice(cols)));
            probs.push(p);
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        )
    }

    /// Attention probabilities of an attention node, one `(Lq, Lk)` matrix per head.
    pub fn attention_probs(&self, v: Var) -> Option<&[Array2<f64>]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let tv = self.value(table);
        let mut out = Array2::zeros((ids.len(), tv.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&tv.row(id as usize));
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// `adj · x` for a sparse normalized adjacency.
    pub fn propagate(&mut self, x: Var, adj: &NormalizedAdjacency) -> Var {
        let xv = self.value(x);
        assert_eq!(adj.n(), xv.nrows(), "adjacency size");
        let mut out = Array2::zeros(xv.dim());
        for &(i, j, w) in adj.entries() {
            out.row_mut(i).scaled_add(w, &xv.row(j));
        }
        let ng = self.ng(x);
        self.push(
            out,
            Op::Propagate {
                x,
                adj: adj.clone(),
            },
            ng,
        )
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; `None` targets are ignored. Returns a `(1, 1)` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "one target per logit row");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (mut row, t) in probs.rows_mut().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            if let Some(t) = *t {
                total += lse - row[t];
            }
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Back-propagates from scalar `loss`, adding `seed * dloss/dθ` into
    /// `grads[param]` for every parameter leaf reached.
    pub fn backward(&self, loss: Var, seed: f64, grads: &mut [Array2<f64>]) {
        let mut g: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Array2::from_elem(self.nodes[loss.0].value.dim(), seed));

        fn acc(g: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
            match &mut g[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(gout) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(p) = node.param {
                        grads[p] += &gout;
                    }
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut g, *a, gout.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        acc(&mut g, *b, self.value(*a).t().dot(&gout));
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        acc(&mut g, *b, gout.clone());
                    }
                    if self.ng(*a) {
                        acc(&mut g, *a, gout);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.ng(*row) {
                        acc(&mut g, *row, gout.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        acc(&mut g, *x, gout);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut g, *a, &gout * self.value(*b));
                    }
                    if self.ng(*b) {
                        acc(&mut g, *b, &gout * self.value(*a));
                    }
                }
                Op::Scale(x, c) => acc(&mut g, *x, gout * *c),
                Op::Relu(x) => {
                    let mut d = gout;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut g, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.ng(*beta) {
                        acc(&mut g, *beta, gout.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*gamma) {
                        acc(&mut g, *gamma, (&gout * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        let dxhat = &gout * self.value(*gamma);
                        let d = dxhat.ncols() as f64;
                        let mut dx = Array2::zeros(dxhat.dim());
                        for r in 0..dxhat.nrows() {
                            let (dr, xr) = (dxhat.row(r), xhat.row(r));
                            let m1 = dr.sum() / d;
                            let m2 = dr.dot(&xr) / d;
                            let is = inv_std[r];
                            Zip::from(dx.row_mut(r))
                                .and(&dr)
                                .and(&xr)
                                .for_each(|o, &a, &b| *o = is * (a - m1 - b * m2));
                        }
                        acc(&mut g, *x, dx);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    for (h, p) in probs.iter().enumerate() {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let go = gout.slice(cols);
                        dv.slice_mut(cols).assign(&p.t().dot(&go));
                        let dp = go.dot(&vv.slice(cols).t());
                        let mut ds = &dp * p;
                        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let dot = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|r, &pp| *r -= pp * dot);
                        }
                        ds *= scale;
                        dq.slice_mut(cols).assign(&ds.dot(&kv.slice(cols)));
                        dk.slice_mut(cols).assign(&ds.t().dot(&qv.slice(cols)));
                    }
                    if self.ng(*q) {
                        acc(&mut g, *q, dq);
                    }
                    if self.ng(*k) {
                        acc(&mut g, *k, dk);
                    }
                    if self.ng(*v) {
                        acc(&mut g, *v, dv);
                    }
                }
                Op::Gather { table, ids } => {
                    let tnode = &self.nodes[table.0];
                    match (&tnode.op, tnode.param) {
                        // sparse update straight into the parameter gradient
                        (Op::Leaf, Some(p)) => {
                            for (r, &id) in ids.iter().enumerate() {
                                let mut row = grads[p].row_mut(id as usize);
                                row += &gout.row(r);
                            }
                        }
                        _ => {
                            let mut dt = Array2::zeros(tnode.value.dim());
                            for (r, &id) in ids.iter().enumerate() {
                                let mut row = dt.row_mut(id as usize);
                                row += &gout.row(r);
                            }
                            acc(&mut g, *table, dt);
                        }
                    }
                }
                Op::Propagate { x, adj } => {
                    let mut dx = Array2::zeros(gout.dim());
                    for &(i, j, w) in adj.entries() {
                        dx.row_mut(j).scaled_add(w, &gout.row(i));
                    }
                    acc(&mut g, *x, dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let c = gout[[0, 0]];
                    let mut d = probs * c;
                    for (r, t) in targets.iter().enumerate() {
                        match *t {
                            Some(t) => d[[r, t]] -= c,
                            None => d.row_mut(r).fill(0.0),
                        }
                    }
                    acc(&mut g, *logits, d);
                }
            }
        }
    }
}

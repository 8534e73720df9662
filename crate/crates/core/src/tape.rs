//! Reverse-mode differentiation over dense matrices.
//!
//! Just enough operations to express the transformer block, the drafting
//! chain and the training losses. Every node records whether any trainable
//! leaf feeds it; the backward pass skips the rest.

use crate::error::{Error, Result};
use crate::math::{dot, gelu, gelu_grad, matmul, matmul_nt, matmul_tn, softmax, Matrix};

/// Floor applied to probabilities before taking logs in the losses.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Attention inputs: key/value blocks plus, for each query row, the
/// `(block, row)` pairs it may attend to in order.
struct Attn {
    q: Var,
    keys: Vec<Var>,
    values: Vec<Var>,
    visible: Vec<Vec<(usize, usize)>>,
    n_heads: usize,
    /// Per query row and head, the attention weights over `visible`.
    weights: Vec<Vec<f64>>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    ConcatCols(Var, Var),
    Gather { table: Var, idx: Vec<usize> },
    RmsNorm { x: Var, gain: Var, inv: Vec<f64> },
    Gelu(Var),
    Attention(Box<Attn>),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Matrix },
    SoftCrossEntropy { logits: Var, targets: Matrix, probs: Matrix },
    SmoothL1(Var, Var),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes no trainable leaf feeds.
pub struct Grads(Vec<Option<Matrix>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.0[v.0].take()
    }
}

fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        out.row_mut(i).copy_from_slice(softmax(logits.row(i), 1.0)?.probs());
    }
    Ok(out)
}

fn scalar(v: f64) -> Matrix {
    Matrix::row_vector(vec![v])
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

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        value.add_scaled(self.value(b), 1.0)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.rows() != mb.rows() {
            return Err(Error::shape(format!("concat of {} and {} rows", ma.rows(), mb.rows())));
        }
        let mut value = Matrix::zeros(ma.rows(), ma.cols() + mb.cols());
        for i in 0..ma.rows() {
            let row = value.row_mut(i);
            row[..ma.cols()].copy_from_slice(ma.row(i));
            row[ma.cols()..].copy_from_slice(mb.row(i));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols(a, b), needs))
    }

    /// Rows `idx` of `table`.
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::arg(format!("row {bad} outside table of {}", t.rows())));
        }
        let value = t.select_rows(&idx);
        let needs = self.needs(table);
        Ok(self.push(value, Op::Gather { table, idx }, needs))
    }

    /// Row-wise RMS normalisation with a `1 x H` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (mx, mg) = (self.value(x), self.value(gain));
        if mg.shape() != (1, mx.cols()) {
            return Err(Error::shape("rms gain must be 1 x H"));
        }
        let h = mx.cols() as f64;
        let mut value = Matrix::zeros(mx.rows(), mx.cols());
        let mut inv = Vec::with_capacity(mx.rows());
        for i in 0..mx.rows() {
            let row = mx.row(i);
            let r = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / h + eps).sqrt();
            for ((o, &v), &g) in value.row_mut(i).iter_mut().zip(row).zip(mg.row(0)) {
                *o = v * r * g;
            }
            inv.push(r);
        }
        let needs = self.needs(x) || self.needs(gain);
        Ok(self.push(value, Op::RmsNorm { x, gain, inv }, needs))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let needs = self.needs(x);
        self.push(value, Op::Gelu(x), needs)
    }

    /// Multi-head scaled dot-product attention. Query row `i` attends to
    /// `visible[i]`, a list of `(block, row)` pairs into `keys`/`values`.
    pub fn attention(
        &mut self,
        q: Var,
        keys: Vec<Var>,
        values: Vec<Var>,
        visible: Vec<Vec<(usize, usize)>>,
        n_heads: usize,
    ) -> Result<Var> {
        let mq = self.value(q);
        let (n, h) = mq.shape();
        if visible.len() != n || keys.len() != values.len() || n_heads == 0 || h % n_heads != 0 {
            return Err(Error::shape("attention inputs disagree"));
        }
        for (&k, &v) in keys.iter().zip(&values) {
            if self.value(k).cols() != h || self.value(v).shape() != self.value(k).shape() {
                return Err(Error::shape("attention key/value blocks disagree"));
            }
        }
        if visible.iter().flatten().any(|&(b, r)| b >= keys.len() || r >= self.value(keys[b]).rows()) {
            return Err(Error::shape("attention visibility out of range"));
        }
        let dh = h / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut value = Matrix::zeros(n, h);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let vis = &visible[i];
            let mut w = vec![0.0; n_heads * vis.len()];
            for head in 0..n_heads {
                let cols = head * dh..(head + 1) * dh;
                let qi = &mq.row(i)[cols.clone()];
                let s = &mut w[head * vis.len()..(head + 1) * vis.len()];
                for (sj, &(b, r)) in s.iter_mut().zip(vis) {
                    *sj = dot(qi, &self.nodes[keys[b].0].value.row(r)[cols.clone()]) * scale;
                }
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for sj in s.iter_mut() {
                    *sj = (*sj - max).exp();
                    denom += *sj;
                }
                s.iter_mut().for_each(|sj| *sj /= denom);
                let out = &mut value.row_mut(i)[cols.clone()];
                for (&p, &(b, r)) in s.iter().zip(vis) {
                    for (o, &vv) in out.iter_mut().zip(&self.nodes[values[b].0].value.row(r)[cols.clone()]) {
                        *o += p * vv;
                    }
                }
            }
            weights.push(w);
        }
        let needs =
            self.needs(q) || keys.iter().any(|&k| self.needs(k)) || values.iter().any(|&v| self.needs(v));
        let attn = Attn { q, keys, values, visible, n_heads, weights };
        Ok(self.push(value, Op::Attention(Box::new(attn)), needs))
    }

    /// Mean of `-ln max(p[label], floor)` over rows of `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let ml = self.value(logits);
        if labels.len() != ml.rows() || labels.iter().any(|&l| l >= ml.cols()) {
            return Err(Error::shape("one in-range label per row required"));
        }
        let probs = softmax_rows(ml)?;
        let n = labels.len().max(1) as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs.get(i, l).max(PROB_FLOOR).ln())
            .sum::<f64>()
            / n;
        let needs = self.needs(logits);
        Ok(self.push(scalar(loss), Op::CrossEntropy { logits, labels, probs }, needs))
    }

    /// Mean over rows of `-Σ target · ln max(softmax(logits), floor)`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Matrix) -> Result<Var> {
        let ml = self.value(logits);
        if targets.shape() != ml.shape() {
            return Err(Error::shape("soft targets must match logits"));
        }
        let probs = softmax_rows(ml)?;
        let n = ml.rows().max(1) as f64;
        let loss = targets
            .data()
            .iter()
            .zip(probs.data())
            .map(|(&t, &q)| if t == 0.0 { 0.0 } else { -t * q.max(PROB_FLOOR).ln() })
            .sum::<f64>()
            / n;
        let needs = self.needs(logits);
        Ok(self.push(scalar(loss), Op::SoftCrossEntropy { logits, targets, probs }, needs))
    }

    /// Mean over every coordinate of the smooth-L1 penalty on `a - b`.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.shape() != mb.shape() {
            return Err(Error::shape("smooth_l1 operands differ in shape"));
        }
        let n = ma.data().len().max(1) as f64;
        let loss = ma.data().iter().zip(mb.data()).map(|(x, y)| smooth_l1_value(x - y)).sum::<f64>() / n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(scalar(loss), Op::SmoothL1(a, b), needs))
    }

    /// `Σ w · term` over scalar terms.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(scalar(total), Op::WeightedSum(terms), needs)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut g: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dy) = g[i].take() else { continue };
            self.backprop(i, &dy, &mut g);
            g[i] = Some(dy);
        }
        Grads(g)
    }

    fn accumulate(&self, g: &mut [Option<Matrix>], v: Var, d: Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut g[v.0] {
            Some(acc) => acc.add_scaled(&d, 1.0).expect("gradient shape"),
            slot => *slot = Some(d),
        }
    }

    fn backprop(&self, i: usize, dy: &Matrix, g: &mut [Option<Matrix>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(g, *a, matmul_nt(dy, self.value(*b)));
                }
                if self.needs(*b) {
                    self.accumulate(g, *b, matmul_tn(self.value(*a), dy));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(g, *a, dy.clone());
                self.accumulate(g, *b, dy.clone());
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut da = Matrix::zeros(dy.rows(), ca);
                let mut db = Matrix::zeros(dy.rows(), cb);
                for r in 0..dy.rows() {
                    da.row_mut(r).copy_from_slice(&dy.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&dy.row(r)[ca..]);
                }
                self.accumulate(g, *a, da);
                self.accumulate(g, *b, db);
            }
            Op::Gather { table, idx } => {
                if self.needs(*table) {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &k) in idx.iter().enumerate() {
                        for (o, &d) in dt.row_mut(k).iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                    self.accumulate(g, *table, dt);
                }
            }
            Op::RmsNorm { x, gain, inv } => {
                let mx = self.value(*x);
                let gv = self.value(*gain).row(0);
                let h = mx.cols() as f64;
                let mut dx = Matrix::zeros(mx.rows(), mx.cols());
                let mut dg = Matrix::zeros(1, mx.cols());
                for r in 0..mx.rows() {
                    let (xr, dyr, s) = (mx.row(r), dy.row(r), inv[r]);
                    let mut proj = 0.0;
                    for ((&xv, &d), &gg) in xr.iter().zip(dyr).zip(gv) {
                        proj += gg * d * xv;
                    }
                    let c = s * s * s / h * proj;
                    for (k, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = s * gv[k] * dyr[k] - xr[k] * c;
                    }
                    for (o, (&xv, &d)) in dg.row_mut(0).iter_mut().zip(xr.iter().zip(dyr)) {
                        *o += d * xv * s;
                    }
                }
                self.accumulate(g, *x, dx);
                self.accumulate(g, *gain, dg);
            }
            Op::Gelu(x) => {
                let mut dx = dy.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *d *= gelu_grad(xv);
                }
                self.accumulate(g, *x, dx);
            }
            Op::Attention(a) => self.attention_backward(a, dy, g),
            Op::CrossEntropy { logits, labels, probs } => {
                let scale = dy.get(0, 0) / labels.len().max(1) as f64;
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    if probs.get(r, l) < PROB_FLOOR {
                        d.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        d.set(r, l, d.get(r, l) - 1.0);
                    }
                }
                d.scale(scale);
                self.accumulate(g, *logits, d);
            }
            Op::SoftCrossEntropy { logits, targets, probs } => {
                let scale = dy.get(0, 0) / probs.rows().max(1) as f64;
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                for r in 0..probs.rows() {
                    let (t, q) = (targets.row(r), probs.row(r));
                    let live: f64 = t.iter().zip(q).filter(|(_, &qv)| qv >= PROB_FLOOR).map(|(&tv, _)| tv).sum();
                    for (k, o) in d.row_mut(r).iter_mut().enumerate() {
                        let own = if q[k] >= PROB_FLOOR { t[k] } else { 0.0 };
                        *o = scale * (q[k] * live - own);
                    }
                }
                self.accumulate(g, *logits, d);
            }
            Op::SmoothL1(a, b) => {
                let (ma, mb) = (self.value(*a), self.value(*b));
                let scale = dy.get(0, 0) / ma.data().len().max(1) as f64;
                let data: Vec<f64> = ma
                    .data()
                    .iter()
                    .zip(mb.data())
                    .map(|(x, y)| {
                        let d = x - y;
                        scale * if d.abs() < 1.0 { d } else { d.signum() }
                    })
                    .collect();
                let da = Matrix::new(ma.rows(), ma.cols(), data).expect("shape");
                if self.needs(*b) {
                    let mut db = da.clone();
                    db.scale(-1.0);
                    self.accumulate(g, *b, db);
                }
                self.accumulate(g, *a, da);
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.accumulate(g, v, scalar(w * dy.get(0, 0)));
                }
            }
        }
    }

    fn attention_backward(&self, a: &Attn, dy: &Matrix, g: &mut [Option<Matrix>]) {
        let mq = self.value(a.q);
        let (n, h) = mq.shape();
        let dh = h / a.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Matrix::zeros(n, h);
        let mut dk: Vec<Matrix> = a.keys.iter().map(|&k| Matrix::zeros(self.value(k).rows(), h)).collect();
        let mut dv: Vec<Matrix> = a.values.iter().map(|&v| Matrix::zeros(self.value(v).rows(), h)).collect();
        let mut dp = Vec::new();
        for i in 0..n {
            let vis = &a.visible[i];
            for head in 0..a.n_heads {
                let cols = head * dh..(head + 1) * dh;
                let w = &a.weights[i][head * vis.len()..(head + 1) * vis.len()];
                let dyi = &dy.row(i)[cols.clone()];
                dp.clear();
                dp.extend(vis.iter().map(|&(b, r)| dot(dyi, &self.value(a.values[b]).row(r)[cols.clone()])));
                let mix: f64 = w.iter().zip(&dp).map(|(p, d)| p * d).sum();
                let qi = &mq.row(i)[cols.clone()];
                for ((&p, &d), &(b, r)) in w.iter().zip(&dp).zip(vis) {
                    for (o, &x) in dv[b].row_mut(r)[cols.clone()].iter_mut().zip(dyi) {
                        *o += p * x;
                    }
                    let ds = p * (d - mix) * scale;
                    let kr = &self.value(a.keys[b]).row(r)[cols.clone()];
                    for (o, &x) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kr) {
                        *o += ds * x;
                    }
                    for (o, &x) in dk[b].row_mut(r)[cols.clone()].iter_mut().zip(qi) {
                        *o += ds * x;
                    }
                }
            }
        }
        self.accumulate(g, a.q, dq);
        for (&k, d) in a.keys.iter().zip(dk) {
            self.accumulate(g, k, d);
        }
        for (&v, d) in a.values.iter().zip(dv) {
            self.accumulate(g, v, d);
        }
    }
}

pub(crate) fn smooth_l1_value(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

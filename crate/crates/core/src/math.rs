//! Dense double-precision kernels shared by every other module.
//!
//! Every kernel here computes each output row from the matching input row
//! only, with a fixed accumulation order. Feeding rows one at a time or in a
//! batch therefore produces bitwise-identical results, which is what lets the
//! tree-masked verification pass reproduce sequential decoding exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// A single-row matrix.
    pub fn row_vector(v: Vec<f64>) -> Self {
        Self { rows: 1, cols: v.len(), data: v }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    /// Appends the rows of `other` below `self`.
    pub fn append_rows(&mut self, other: &Matrix) -> Result<()> {
        if self.rows == 0 && self.data.is_empty() {
            self.cols = other.cols;
        }
        if other.cols != self.cols {
            return Err(Error::shape(format!(
                "cannot stack {} columns under {}",
                other.cols, self.cols
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    pub fn truncate_rows(&mut self, rows: usize) {
        if rows < self.rows {
            self.rows = rows;
            self.data.truncate(rows * self.cols);
        }
    }

    /// Elementwise `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "add of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// Standard matrix product with a fixed `i, k, j` loop order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        vec_matmul_into(a.row(i), b, out.row_mut(i));
    }
    Ok(out)
}

/// `out = x · b` for a single row `x`.
pub(crate) fn vec_matmul_into(x: &[f64], b: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(x.len(), b.rows);
    debug_assert_eq!(out.len(), b.cols);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, &xk) in x.iter().enumerate() {
        let brow = b.row(k);
        for (o, &bv) in out.iter_mut().zip(brow) {
            *o += xk * bv;
        }
    }
}

pub(crate) fn vec_matmul(x: &[f64], b: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; b.cols];
    vec_matmul_into(x, b, &mut out);
    out
}

/// `aᵀ · b` without materialising the transpose.
pub(crate) fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows, b.rows);
    let mut out = Matrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let arow = a.row(r);
        let brow = b.row(r);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` without materialising the transpose.
pub(crate) fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols, b.cols);
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(arow, b.row(j));
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Probability distribution over token ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbDist(Vec<f64>);

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

impl ProbDist {
    /// Validates entries in `[0, 1]` summing to one within [`MASS_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::shape("empty distribution"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::arg("probability outside [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::arg(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalises non-negative weights. Fails when the total mass is zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::shape("empty distribution"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numeric("zero total mass".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn one_hot(len: usize, idx: usize) -> Self {
        let mut v = vec![0.0; len];
        v[idx] = 1.0;
        Self(v)
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, token: u32) -> f64 {
        self.0[token as usize]
    }

    /// Most probable token, lowest id on ties.
    pub fn argmax(&self) -> u32 {
        argmax(&self.0) as u32
    }

    /// Inverse-CDF sample for `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return i as u32;
            }
        }
        last as u32
    }

    /// Removes `token` and renormalises. `None` when no mass remains.
    pub fn without(&self, token: u32) -> Option<ProbDist> {
        let mut w = self.0.clone();
        w[token as usize] = 0.0;
        ProbDist::from_weights(w).ok()
    }
}

/// Index of the largest value; lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest values, descending, ties by ascending index.
pub fn rank_desc(xs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Tempered softmax. `temperature == 0` yields the greedy one-hot.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ProbDist> {
    if logits.is_empty() {
        return Err(Error::shape("softmax of empty logits"));
    }
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::arg(format!("temperature {temperature} must be >= 0")));
    }
    if temperature == 0.0 {
        return Ok(ProbDist::one_hot(logits.len(), argmax(logits)));
    }
    let max = logits[argmax(logits)];
    let mut out: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(ProbDist(out))
}

/// The `k` most probable tokens with their probabilities.
pub fn top_k(dist: &ProbDist, k: usize) -> Result<Vec<(u32, f64)>> {
    if k == 0 || k > dist.len() {
        return Err(Error::arg(format!("top_k with k={k} over {} tokens", dist.len())));
    }
    Ok(rank_desc(dist.probs(), k)
        .into_iter()
        .map(|i| (i as u32, dist.0[i]))
        .collect())
}

/// `x · gain / sqrt(mean(x²) + eps)`.
pub fn rms_normalize(x: &[f64], gain: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if x.len() != gain.len() {
        return Err(Error::shape(format!("rms_normalize {} vs gain {}", x.len(), gain.len())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::arg("epsilon must be positive"));
    }
    let mut out = vec![0.0; x.len()];
    rms_normalize_into(x, gain, epsilon, &mut out);
    Ok(out)
}

pub(crate) fn rms_normalize_into(x: &[f64], gain: &[f64], epsilon: f64, out: &mut [f64]) {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + epsilon).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * inv * g;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, d: &[f64]) -> Matrix {
        Matrix::new(rows, cols, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = m(3, 2, &[1.0, -2.0, 0.5, 3.0, 7.0, 1e-3]);
        assert_eq!(Matrix::identity(3).matmul(&a).unwrap(), a);
        let z = Matrix::zeros(4, 3).matmul(&a).unwrap();
        assert_eq!(z, Matrix::zeros(4, 2));
    }

    #[test]
    fn matmul_small_product() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap(), m(2, 1, &[2.0, 4.0]));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_products_match_explicit() {
        let a = m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = m(3, 4, &(0..12).map(|v| v as f64 * 0.5).collect::<Vec<_>>());
        assert_eq!(matmul_tn(&a, &b), a.transpose().matmul(&b).unwrap());
        let c = m(4, 2, &(0..8).map(|v| v as f64 - 3.0).collect::<Vec<_>>());
        assert_eq!(matmul_nt(&a, &c), a.matmul(&c.transpose()).unwrap());
    }

    #[test]
    fn softmax_examples() {
        let d = softmax(&[0.3, 0.3, 0.3], 1.0).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let d = softmax(&[2.0, 0.0], 1.0).unwrap();
        assert!((d.probs()[0] - 0.8807970779).abs() < 1e-10);
        assert!((d.probs()[1] - 0.1192029221).abs() < 1e-10);
        let d = softmax(&[1.0, 5.0, 5.0], 0.0).unwrap();
        assert_eq!(d.probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_rejects_empty_and_negative_temperature() {
        assert!(matches!(softmax(&[], 1.0), Err(Error::Shape(_))));
        assert!(matches!(softmax(&[1.0], -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn top_k_examples() {
        let d = ProbDist::new(vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(top_k(&d, 1).unwrap(), vec![(1, 0.7)]);
        let d = ProbDist::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(top_k(&d, 2).unwrap(), vec![(0, 0.4), (1, 0.4)]);
        let d = ProbDist::uniform(4);
        assert_eq!(top_k(&d, 3).unwrap(), vec![(0, 0.25), (1, 0.25), (2, 0.25)]);
        assert!(matches!(top_k(&d, 0), Err(Error::Argument(_))));
        assert!(matches!(top_k(&d, 5), Err(Error::Argument(_))));
    }

    #[test]
    fn rms_examples() {
        let out = rms_normalize(&[1.0; 4], &[1.0; 4], 1e-300).unwrap();
        assert_eq!(out, vec![1.0; 4]);
        let out = rms_normalize(&[2.0, 2.0], &[1.0, 1.0], 1e-300).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
        let out = rms_normalize(&[0.0; 3], &[1.0; 3], 1e-6).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        assert!(matches!(rms_normalize(&[1.0], &[1.0, 1.0], 1e-6), Err(Error::Shape(_))));
    }

    #[test]
    fn sample_inverts_cdf() {
        let d = ProbDist::new(vec![0.25, 0.0, 0.75]).unwrap();
        assert_eq!(d.sample(0.0), 0);
        assert_eq!(d.sample(0.2499), 0);
        assert_eq!(d.sample(0.25), 2);
        assert_eq!(d.sample(0.999_999), 2);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-30.0f64..30.0, 1..40)
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in logits_strategy(), t in prop_oneof![Just(0.0), 0.05f64..5.0]) {
            let d = softmax(&logits, t).unwrap();
            prop_assert!(ProbDist::new(d.probs().to_vec()).is_ok());
        }

        #[test]
        fn softmax_shift_invariant(logits in logits_strategy(), c in -50.0f64..50.0, t in 0.1f64..3.0) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            let a = softmax(&logits, t).unwrap();
            let b = softmax(&shifted, t).unwrap();
            prop_assert_eq!(argmax(&logits), argmax(&shifted));
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn full_top_k_is_sorted_permutation(logits in logits_strategy()) {
            let d = softmax(&logits, 1.0).unwrap();
            let all = top_k(&d, d.len()).unwrap();
            let mut ids: Vec<u32> = all.iter().map(|p| p.0).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..d.len() as u32).collect::<Vec<_>>());
            prop_assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
        }

        #[test]
        fn matmul_is_associative(
            (a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(p, q, r, s)| (
                prop::collection::vec(-2.0f64..2.0, p * q).prop_map(move |d| Matrix::new(p, q, d).unwrap()),
                prop::collection::vec(-2.0f64..2.0, q * r).prop_map(move |d| Matrix::new(q, r, d).unwrap()),
                prop::collection::vec(-2.0f64..2.0, r * s).prop_map(move |d| Matrix::new(r, s, d).unwrap()),
            ))
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }
}

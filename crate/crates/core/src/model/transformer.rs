use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use std::path::Path;

use super::{check_tree_input, io, Backend, ForwardResult, ModelSpec, TargetModel, TreeInput};
use crate::error::{Error, Result};
use crate::math::{self, gelu, rms_normalize_into, vec_matmul, vec_matmul_into, Matrix};
use crate::rng::Rng;
use crate::tree::TreeMask;

pub const RMS_EPS: f64 = 1e-6;

/// One pre-norm decoder block: attention then a GELU MLP, both residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub attn_gain: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_gain: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

impl BlockWeights {
    pub fn init(hidden: usize, mlp: usize, std: f64, rng: &mut Rng) -> Self {
        let mut m = |r, c| random_matrix(r, c, std, rng);
        Self {
            attn_gain: Matrix::row_vector(vec![1.0; hidden]),
            wq: m(hidden, hidden),
            wk: m(hidden, hidden),
            wv: m(hidden, hidden),
            wo: m(hidden, hidden),
            mlp_gain: Matrix::row_vector(vec![1.0; hidden]),
            w1: m(hidden, mlp),
            w2: m(mlp, hidden),
        }
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        for (name, t) in [
            ("attn_gain", &self.attn_gain),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("mlp_gain", &self.mlp_gain),
            ("w1", &self.w1),
            ("w2", &self.w2),
        ] {
            out.push((format!("{prefix}.{name}"), t));
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.attn_gain,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.mlp_gain,
            &mut self.w1,
            &mut self.w2,
        ]
    }

    pub fn hidden(&self) -> usize {
        self.wq.rows()
    }
}

pub(crate) fn random_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| round_f32(rng.normal() * std)).collect();
    Matrix::new(rows, cols, data).expect("sized")
}

/// Rounds to the nearest `f32` so the value survives the on-disk format.
pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerWeights {
    pub embed: Matrix,
    pub pos: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub final_gain: Matrix,
    pub lm_head: Matrix,
}

impl TransformerWeights {
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Self {
        let h = spec.hidden_dim;
        let std = 0.02f64.max(0.5 / (h as f64).sqrt());
        let blocks = (0..spec.n_layers)
            .map(|_| BlockWeights::init(h, spec.mlp_dim(), std / (2.0 * spec.n_layers as f64).sqrt(), rng))
            .collect();
        Self {
            embed: random_matrix(spec.vocab_size, h, 1.0, rng),
            pos: random_matrix(spec.context_limit, h, 0.1, rng),
            blocks,
            final_gain: Matrix::row_vector(vec![1.0; h]),
            lm_head: random_matrix(h, spec.vocab_size, 1.0 / (h as f64).sqrt(), rng),
        }
    }

    /// Tensors in manifest order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embed".to_string(), &self.embed), ("pos".to_string(), &self.pos)];
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(&format!("blocks.{i}"), &mut out);
        }
        out.push(("final_gain".into(), &self.final_gain));
        out.push(("lm_head".into(), &self.lm_head));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embed, &mut self.pos];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.lm_head);
        out
    }

    /// Rebuilds weights from manifest-ordered tensors, checking every shape.
    pub fn from_named(spec: &ModelSpec, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        let mut template = Self::zeros(spec);
        check_manifest(&template.named(), tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        for (slot, (_, t)) in template.tensors_mut().into_iter().zip(tensors) {
            *slot = t;
        }
        Ok(template)
    }

    fn zeros(spec: &ModelSpec) -> Self {
        let h = spec.hidden_dim;
        let block = || BlockWeights {
            attn_gain: Matrix::zeros(1, h),
            wq: Matrix::zeros(h, h),
            wk: Matrix::zeros(h, h),
            wv: Matrix::zeros(h, h),
            wo: Matrix::zeros(h, h),
            mlp_gain: Matrix::zeros(1, h),
            w1: Matrix::zeros(h, spec.mlp_dim()),
            w2: Matrix::zeros(spec.mlp_dim(), h),
        };
        Self {
            embed: Matrix::zeros(spec.vocab_size, h),
            pos: Matrix::zeros(spec.context_limit, h),
            blocks: (0..spec.n_layers).map(|_| block()).collect(),
            final_gain: Matrix::zeros(1, h),
            lm_head: Matrix::zeros(h, spec.vocab_size),
        }
    }
}

/// Checks that `got` lists the same names and shapes as `expected`, in order.
pub(crate) fn check_manifest<'a>(
    expected: &[(String, &Matrix)],
    got: impl ExactSizeIterator<Item = (&'a str, &'a Matrix)>,
) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Format(format!("expected {} tensors, found {}", expected.len(), got.len())));
    }
    for ((name, want), (got_name, t)) in expected.iter().zip(got) {
        if name != got_name || want.shape() != t.shape() {
            return Err(Error::Format(format!(
                "tensor {got_name} {:?} does not match {name} {:?}",
                t.shape(),
                want.shape()
            )));
        }
    }
    Ok(())
}

/// Cached keys and values of one attention layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerKV {
    pub keys: Matrix,
    pub values: Matrix,
}

impl LayerKV {
    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    fn compact(&mut self, base: usize, keep: &[usize]) {
        let idx: Vec<usize> = (0..base).chain(keep.iter().map(|k| base + k)).collect();
        self.keys = self.keys.select_rows(&idx);
        self.values = self.values.select_rows(&idx);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KVCache {
    layers: Vec<LayerKV>,
}

impl KVCache {
    pub fn new(n_layers: usize, hidden: usize) -> Self {
        let empty = LayerKV { keys: Matrix::zeros(0, hidden), values: Matrix::zeros(0, hidden) };
        Self { layers: vec![empty; n_layers] }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer(&self, i: usize) -> &LayerKV {
        &self.layers[i]
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> &mut LayerKV {
        &mut self.layers[i]
    }

    /// Drops every position at index `len` and beyond.
    pub fn truncate(&mut self, len: usize) {
        for l in &mut self.layers {
            l.keys.truncate_rows(len);
            l.values.truncate_rows(len);
        }
    }

    /// Keeps positions `[0, base)` followed by `base + keep[i]`.
    pub fn compact(&mut self, base: usize, keep: &[usize]) {
        for l in &mut self.layers {
            l.compact(base, keep);
        }
    }

    pub fn approx_bytes(&self) -> usize {
        self.layers.iter().map(|l| (l.keys.data().len() + l.values.data().len()) * 8).sum()
    }
}

/// Which new rows a new row may attend to, in addition to every cached row.
#[derive(Clone, Copy)]
pub(crate) enum NewRows<'a> {
    Causal,
    Mask(&'a TreeMask),
}

impl NewRows<'_> {
    fn visible(&self, i: usize, j: usize) -> bool {
        match self {
            NewRows::Causal => j <= i,
            NewRows::Mask(m) => m.get(i, j),
        }
    }
}

/// Runs one block over `x` in place, appending the new keys and values to
/// `kv`. Each output row depends only on its own input row and the rows it
/// can see, accumulated in cache order.
pub(crate) fn block_forward(
    w: &BlockWeights,
    n_heads: usize,
    x: &mut Matrix,
    kv: &mut LayerKV,
    new_rows: NewRows<'_>,
) -> Result<()> {
    let (n, h) = x.shape();
    let dh = h / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut normed = Matrix::zeros(n, h);
    for i in 0..n {
        rms_normalize_into(x.row(i), w.attn_gain.row(0), RMS_EPS, normed.row_mut(i));
    }
    let q = math::matmul(&normed, &w.wq)?;
    let k = math::matmul(&normed, &w.wk)?;
    let v = math::matmul(&normed, &w.wv)?;
    let base = kv.len();
    kv.keys.append_rows(&k)?;
    kv.values.append_rows(&v)?;

    let mut attn = Matrix::zeros(n, h);
    let mut visible = Vec::with_capacity(base + n);
    let mut scores = Vec::with_capacity(base + n);
    for i in 0..n {
        visible.clear();
        visible.extend(0..base);
        visible.extend((0..n).filter(|&j| new_rows.visible(i, j)).map(|j| base + j));
        let qi = q.row(i);
        let out = attn.row_mut(i);
        for head in 0..n_heads {
            let cols = head * dh..(head + 1) * dh;
            scores.clear();
            scores.extend(
                visible.iter().map(|&j| math::dot(&qi[cols.clone()], &kv.keys.row(j)[cols.clone()]) * scale),
            );
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                denom += *s;
            }
            for (&j, &s) in visible.iter().zip(&scores) {
                let p = s / denom;
                for (o, &vv) in out[cols.clone()].iter_mut().zip(&kv.values.row(j)[cols.clone()]) {
                    *o += p * vv;
                }
            }
        }
    }
    let proj = math::matmul(&attn, &w.wo)?;
    x.add_scaled(&proj, 1.0)?;

    let mut hidden = vec![0.0; w.w1.cols()];
    let mut out = vec![0.0; h];
    let mut m = vec![0.0; h];
    for i in 0..n {
        rms_normalize_into(x.row(i), w.mlp_gain.row(0), RMS_EPS, &mut m);
        vec_matmul_into(&m, &w.w1, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = gelu(*v));
        vec_matmul_into(&hidden, &w.w2, &mut out);
        for (a, b) in x.row_mut(i).iter_mut().zip(&out) {
            *a += b;
        }
    }
    Ok(())
}

/// Tiny decoder-only transformer exposing its final-normalised features.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformer {
    spec: ModelSpec,
    weights: TransformerWeights,
}

impl Transformer {
    pub fn new(spec: ModelSpec, weights: TransformerWeights) -> Result<Self> {
        spec.validate()?;
        if spec.backend != Backend::Transformer {
            return Err(Error::arg("transformer needs a transformer spec"));
        }
        let named = weights.named();
        check_manifest(&TransformerWeights::zeros(&spec).named(), named.iter().map(|(n, t)| (n.as_str(), *t)))?;
        if named.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        Ok(Self { spec, weights })
    }

    pub fn random(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let weights = TransformerWeights::init(&spec, &mut rng);
        Self::new(spec, weights)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &TransformerWeights {
        &self.weights
    }

    pub fn into_weights(self) -> TransformerWeights {
        self.weights
    }

    pub fn new_cache(&self) -> KVCache {
        KVCache::new(self.spec.n_layers, self.spec.hidden_dim)
    }

    /// SHA-256 over every weight's bit pattern.
    pub fn checksum(&self) -> [u8; 32] {
        checksum(self.weights.named().into_iter().map(|(_, t)| t))
    }

    pub fn embed(&self, token: u32) -> Result<&[f64]> {
        if token as usize >= self.spec.vocab_size {
            return Err(Error::arg(format!("token {token} outside vocab {}", self.spec.vocab_size)));
        }
        Ok(self.weights.embed.row(token as usize))
    }

    /// Linear map from feature rows to vocabulary logits.
    pub fn lm_head(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.spec.hidden_dim {
            return Err(Error::shape(format!(
                "feature width {} vs hidden {}",
                features.cols(),
                self.spec.hidden_dim
            )));
        }
        features.matmul(&self.weights.lm_head)
    }

    pub(crate) fn lm_head_row(&self, feature: &[f64]) -> Vec<f64> {
        vec_matmul(feature, &self.weights.lm_head)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        io::encode("target", &self.spec, None, &self.weights.named())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = io::decode(bytes)?;
        if meta.component != "target" {
            return Err(Error::Format(format!("expected target weights, found {}", meta.component)));
        }
        let weights = TransformerWeights::from_named(&meta.spec, tensors)?;
        Self::new(meta.spec, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }

    pub fn forward(
        &self,
        tokens: &[u32],
        cache: &mut KVCache,
        tree: Option<TreeInput<'_>>,
    ) -> Result<ForwardResult> {
        let n = tokens.len();
        let h = self.spec.hidden_dim;
        check_tree_input(n, &tree)?;
        if n == 0 {
            return Ok(ForwardResult::empty(h, self.spec.vocab_size));
        }
        let base = cache.len();
        // Tree entries are transient and only their positions are bounded.
        if tree.is_none() && base + n > self.spec.context_limit {
            return Err(Error::Capacity { needed: base + n, limit: self.spec.context_limit });
        }
        let mut x = Matrix::zeros(n, h);
        for (i, &t) in tokens.iter().enumerate() {
            let pos = tree.map_or(base + i, |t| t.positions[i]);
            if pos >= self.spec.context_limit {
                return Err(Error::Capacity { needed: pos + 1, limit: self.spec.context_limit });
            }
            let e = self.embed(t)?;
            for ((o, a), b) in x.row_mut(i).iter_mut().zip(e).zip(self.weights.pos.row(pos)) {
                *o = a + b;
            }
        }
        let new_rows = tree.map_or(NewRows::Causal, |t| NewRows::Mask(t.mask));
        for (l, w) in self.weights.blocks.iter().enumerate() {
            block_forward(w, self.spec.n_heads, &mut x, cache.layer_mut(l), new_rows)?;
        }
        let mut features = Matrix::zeros(n, h);
        for i in 0..n {
            rms_normalize_into(x.row(i), self.weights.final_gain.row(0), RMS_EPS, features.row_mut(i));
        }
        let logits = self.lm_head(&features)?;
        if !logits.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(ForwardResult { features, logits })
    }
}

pub(crate) fn checksum<'a>(tensors: impl Iterator<Item = &'a Matrix>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for t in tensors {
        hasher.update((t.rows() as u64).to_le_bytes());
        hasher.update((t.cols() as u64).to_le_bytes());
        for v in t.data() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher.finalize().into()
}

impl TargetModel for Transformer {
    type Cache = KVCache;

    fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    fn context_limit(&self) -> usize {
        self.spec.context_limit
    }

    fn feature_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    fn new_cache(&self) -> KVCache {
        Transformer::new_cache(self)
    }

    fn cache_len(&self, cache: &KVCache) -> usize {
        cache.len()
    }

    fn forward(
        &self,
        tokens: &[u32],
        cache: &mut KVCache,
        tree: Option<TreeInput<'_>>,
    ) -> Result<ForwardResult> {
        Transformer::forward(self, tokens, cache, tree)
    }

    fn commit(&self, cache: &mut KVCache, base: usize, keep: &[usize]) {
        cache.compact(base, keep);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_mask, flatten, DraftTree};

    fn tiny() -> Transformer {
        let spec = ModelSpec {
            vocab_size: 32,
            hidden_dim: 16,
            n_layers: 2,
            n_heads: 4,
            context_limit: 64,
            backend: Backend::Transformer,
        };
        Transformer::random(spec, 9).unwrap()
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn empty_input_leaves_cache_alone() {
        let m = tiny();
        let mut cache = m.new_cache();
        m.forward(&[1, 2], &mut cache, None).unwrap();
        let before = cache.clone();
        let out = m.forward(&[], &mut cache, None).unwrap();
        assert!(out.is_empty());
        assert_eq!(cache, before);
    }

    #[test]
    fn incremental_matches_monolithic() {
        let m = tiny();
        let tokens: Vec<u32> = (0..10).map(|i| (i * 7 % 32) as u32).collect();
        let mut full_cache = m.new_cache();
        let full = m.forward(&tokens, &mut full_cache, None).unwrap();
        let mut cache = m.new_cache();
        for (i, &t) in tokens.iter().enumerate() {
            let step = m.forward(&[t], &mut cache, None).unwrap();
            assert!(max_abs_diff(&step.logits, &full.logits.select_rows(&[i])) <= 1e-10);
            assert_eq!(step.features.row(0), full.features.row(i));
        }
        assert_eq!(cache.len(), 10);
    }

    #[test]
    fn diagonal_mask_equals_isolated_single_token_feeds() {
        let m = tiny();
        let mut cache = m.new_cache();
        m.forward(&[3, 4, 5], &mut cache, None).unwrap();
        let new = [7u32, 8, 9];
        let mask = TreeMask::diagonal(3);
        let positions = [3, 3, 3];
        let mut tree_cache = cache.clone();
        let out = m
            .forward(&new, &mut tree_cache, Some(TreeInput { mask: &mask, positions: &positions }))
            .unwrap();
        for (i, &t) in new.iter().enumerate() {
            let mut c = cache.clone();
            let single = m.forward(&[t], &mut c, None).unwrap();
            assert!(max_abs_diff(&single.logits, &out.logits.select_rows(&[i])) <= 1e-10);
        }
    }

    #[test]
    fn tree_pass_then_commit_equals_sequential_cache() {
        let m = tiny();
        let mut cache = m.new_cache();
        m.forward(&[1, 2, 3], &mut cache, None).unwrap();
        let tree = DraftTree::from_parents(4, &[(5, 0), (6, 0), (7, 1), (8, 2), (9, 3)]).unwrap();
        let base = cache.len();
        let flat = flatten(&tree, base).unwrap();
        m.forward(
            &flat.tokens,
            &mut cache,
            Some(TreeInput { mask: &flat.mask, positions: &flat.positions }),
        )
        .unwrap();
        m.commit(&mut cache, base, &[0, 2, 4]);

        let mut seq = m.new_cache();
        m.forward(&[1, 2, 3, 4, 6, 8], &mut seq, None).unwrap();
        assert_eq!(cache, seq);
    }

    #[test]
    fn capacity_and_shape_errors() {
        let m = tiny();
        let mut cache = m.new_cache();
        let long = vec![1u32; 65];
        assert!(matches!(m.forward(&long, &mut cache, None), Err(Error::Capacity { .. })));
        let mask = build_mask(&DraftTree::new(0)).unwrap();
        let err = m.forward(&[1, 2], &mut cache, Some(TreeInput { mask: &mask, positions: &[0] }));
        assert!(matches!(err, Err(Error::Shape(_))));
        assert!(matches!(m.forward(&[99], &mut cache, None), Err(Error::Argument(_))));
    }

    #[test]
    fn wide_tree_at_the_context_edge_is_bounded_by_positions() {
        let m = tiny();
        let limit = m.spec().context_limit;
        let mut cache = m.new_cache();
        m.forward(&vec![1u32; limit - 3], &mut cache, None).unwrap();
        let tree = DraftTree::from_parents(1, &[(2, 0), (3, 0), (4, 0), (5, 1)]).unwrap();
        let flat = flatten(&tree, limit - 3).unwrap();
        let ok = m.forward(&flat.tokens, &mut cache.clone(), Some(TreeInput { mask: &flat.mask, positions: &flat.positions }));
        assert_eq!(ok.unwrap().len(), 5);
        let deep = DraftTree::from_parents(1, &[(2, 0), (3, 1), (4, 2)]).unwrap();
        let flat = flatten(&deep, limit - 3).unwrap();
        let err = m.forward(&flat.tokens, &mut cache, Some(TreeInput { mask: &flat.mask, positions: &flat.positions }));
        assert!(matches!(err, Err(Error::Capacity { .. })));
    }

    #[test]
    fn lm_head_is_linear() {
        let m = tiny();
        let zero = m.lm_head(&Matrix::zeros(1, 16)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let mut basis = Matrix::zeros(1, 16);
        basis.set(0, 5, 1.0);
        assert_eq!(m.lm_head(&basis).unwrap().row(0), m.weights().lm_head.row(5));
        let mut rng = Rng::new(1);
        let f = Matrix::new(3, 16, (0..48).map(|_| rng.normal()).collect()).unwrap();
        let direct = m.lm_head(&f).unwrap();
        for i in 0..3 {
            for v in 0..32 {
                let oracle: f64 = (0..16).map(|k| f.get(i, k) * m.weights().lm_head.get(k, v)).sum();
                assert!((direct.get(i, v) - oracle).abs() < 1e-12);
            }
        }
        assert!(matches!(m.lm_head(&Matrix::zeros(1, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn embed_lookup() {
        let m = tiny();
        assert_eq!(m.embed(0).unwrap(), m.weights().embed.row(0));
        assert_eq!(m.embed(4).unwrap(), m.embed(4).unwrap());
        let rows: Vec<&[f64]> = (0..32).map(|t| m.embed(t).unwrap()).collect();
        assert!(rows.iter().all(|r| r.len() == 16));
        assert!(matches!(m.embed(32), Err(Error::Argument(_))));
    }

    #[test]
    fn logits_are_features_times_head() {
        let m = tiny();
        let mut cache = m.new_cache();
        let out = m.forward(&[1, 2, 3, 4], &mut cache, None).unwrap();
        assert_eq!(out.features.rows(), 4);
        assert_eq!(out.logits.shape(), (4, 32));
        assert_eq!(m.lm_head(&out.features).unwrap(), out.logits);
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.s4cw");
        m.save(&path).unwrap();
        let back = Transformer::load(&path).unwrap();
        assert_eq!(back.checksum(), m.checksum());
        assert_eq!(back, m);
        let mut bytes = m.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(Transformer::from_bytes(&bytes), Err(Error::Format(_))));
    }
}

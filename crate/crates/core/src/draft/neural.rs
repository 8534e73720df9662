//! The learned drafter: per-head fusion, a small decoder stack and an output
//! norm, reading the target's frozen embedding table and LM head.

use std::path::Path;

use serde_json::json;

use super::{build_tree, DraftConfig, Drafter, RoundContext, Stepper};
use crate::error::{Error, Result};
use crate::math::{rms_normalize_into, softmax, top_k, vec_matmul, Matrix};
use crate::model::io;
use crate::model::{BlockWeights, KVCache, ModelSpec, Transformer, RMS_EPS};
use crate::model::transformer::{block_forward, check_manifest, checksum, random_matrix, NewRows};
use crate::rng::Rng;
use crate::tree::{DraftTree, TreeMask};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    /// Maps `[embedding, feature]` (2H) to H.
    pub fusion: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub out_gain: Matrix,
}

impl HeadWeights {
    fn init(spec: &ModelSpec, layers: usize, rng: &mut Rng) -> Self {
        let h = spec.hidden_dim;
        let block_std = 0.02f64.max(0.5 / (h as f64).sqrt()) / (2.0 * layers as f64).sqrt();
        Self {
            fusion: random_matrix(2 * h, h, 1.0 / (2.0 * h as f64).sqrt(), rng),
            blocks: (0..layers).map(|_| BlockWeights::init(h, spec.mlp_dim(), block_std, rng)).collect(),
            out_gain: Matrix::row_vector(vec![1.0; h]),
        }
    }

    /// Correctly shaped placeholder for loading.
    fn zeros(spec: &ModelSpec, layers: usize) -> Self {
        let mut w = Self::init(spec, layers, &mut Rng::new(0));
        for t in w.tensors_mut() {
            t.scale(0.0);
        }
        w
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.fusion"), &self.fusion));
        for (l, b) in self.blocks.iter().enumerate() {
            b.named(&format!("{prefix}.blocks.{l}"), out);
        }
        out.push((format!("{prefix}.out_gain"), &self.out_gain));
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.fusion];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.out_gain);
        out
    }
}

/// Trainable draft parameters. The embedding table and LM head are not part
/// of this struct; they are borrowed from the target at use.
#[derive(Clone, Debug, PartialEq)]
pub struct DraftWeights {
    spec: ModelSpec,
    config: DraftConfig,
    pub heads: Vec<HeadWeights>,
}

impl DraftWeights {
    pub fn init(spec: &ModelSpec, config: &DraftConfig, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let heads = (0..config.n_heads)
            .map(|_| HeadWeights::init(spec, config.draft_layers_per_head, rng))
            .collect();
        Ok(Self { spec: spec.clone(), config: config.clone(), heads })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &DraftConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.spec.hidden_dim
    }

    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, h) in self.heads.iter().enumerate() {
            h.named(&format!("heads.{i}"), &mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.heads.iter_mut().flat_map(|h| h.tensors_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Size of the serialized tensor payload.
    pub fn byte_size(&self) -> usize {
        self.param_count() * 4
    }

    pub fn checksum(&self) -> [u8; 32] {
        checksum(self.named().into_iter().map(|(_, t)| t))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let extra = json!({ "draft": self.config });
        io::encode("draft", &self.spec, Some(extra), &self.named())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = io::decode(bytes)?;
        if meta.component != "draft" {
            return Err(Error::Format(format!("expected draft weights, found {}", meta.component)));
        }
        let config: DraftConfig = meta
            .extra
            .as_ref()
            .and_then(|e| e.get("draft"))
            .cloned()
            .ok_or_else(|| Error::Format("draft metadata lacks its configuration".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Format(e.to_string())))?;
        config.validate()?;
        meta.spec.validate()?;
        let mut w = Self {
            spec: meta.spec.clone(),
            config: config.clone(),
            heads: (0..config.n_heads)
                .map(|_| HeadWeights::zeros(&meta.spec, config.draft_layers_per_head))
                .collect(),
        };
        check_manifest(&w.named(), tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        for (slot, (_, t)) in w.tensors_mut().into_iter().zip(tensors) {
            *slot = t;
        }
        if w.named().iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Numeric("non-finite draft weight".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }

    pub fn new_cache(&self) -> KVCache {
        KVCache::new(self.config.draft_layers_per_head, self.spec.hidden_dim)
    }

    fn head(&self, head: usize) -> Result<&HeadWeights> {
        self.heads
            .get(head)
            .ok_or_else(|| Error::arg(format!("head {head} out of range for {} heads", self.heads.len())))
    }
}

/// `[e, f] · fusion` for the given head.
pub fn fuse(weights: &DraftWeights, head: usize, e: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let h = weights.hidden();
    if e.len() != h || f.len() != h {
        return Err(Error::shape(format!("fuse inputs {} and {} for hidden {h}", e.len(), f.len())));
    }
    let w = weights.head(head)?;
    let mut cat = Vec::with_capacity(2 * h);
    cat.extend_from_slice(e);
    cat.extend_from_slice(f);
    Ok(vec_matmul(&cat, &w.fusion))
}

/// Runs one head's decoder stack over `h_rows`. Rows see the cache and
/// themselves but not each other.
pub fn draft_head_forward(
    weights: &DraftWeights,
    head: usize,
    h_rows: &Matrix,
    cache: &mut KVCache,
) -> Result<Matrix> {
    let w = weights.head(head)?;
    let h = weights.hidden();
    if h_rows.cols() != h {
        return Err(Error::shape(format!("draft rows of width {} for hidden {h}", h_rows.cols())));
    }
    let n = h_rows.rows();
    let mask = TreeMask::diagonal(n);
    let mut x = h_rows.clone();
    for (l, b) in w.blocks.iter().enumerate() {
        block_forward(b, weights.spec.n_heads, &mut x, cache.layer_mut(l), NewRows::Mask(&mask))?;
    }
    let mut out = Matrix::zeros(n, h);
    for i in 0..n {
        rms_normalize_into(x.row(i), w.out_gain.row(0), RMS_EPS, out.row_mut(i));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DraftCandidate {
    pub token: u32,
    pub embedding: Vec<f64>,
    pub prob: f64,
}

/// Draft model bound to the target whose embedding and LM head it reads.
#[derive(Clone, Copy, Debug)]
pub struct NeuralDrafter<'a> {
    target: &'a Transformer,
    weights: &'a DraftWeights,
}

impl<'a> NeuralDrafter<'a> {
    pub fn new(target: &'a Transformer, weights: &'a DraftWeights) -> Result<Self> {
        let (t, d) = (target.spec(), weights.spec());
        if t.hidden_dim != d.hidden_dim || t.vocab_size != d.vocab_size || t.n_heads != d.n_heads {
            return Err(Error::Model(format!(
                "draft built for hidden {} / vocab {} does not fit target hidden {} / vocab {}",
                d.hidden_dim, d.vocab_size, t.hidden_dim, t.vocab_size
            )));
        }
        Ok(Self { target, weights })
    }

    pub fn weights(&self) -> &DraftWeights {
        self.weights
    }

    /// Scores `f_next` with the shared LM head and returns the `k` best
    /// tokens with their embeddings. At `T = 0` probabilities are reported
    /// at unit temperature.
    pub fn draft_next(&self, f_next: &[f64], k: usize, temperature: f64) -> Result<Vec<DraftCandidate>> {
        if f_next.len() != self.weights.hidden() {
            return Err(Error::shape(format!("feature width {}", f_next.len())));
        }
        let logits = self.target.lm_head_row(f_next);
        let t = if temperature == 0.0 { 1.0 } else { temperature };
        let dist = softmax(&logits, t)?;
        top_k(&dist, k)?
            .into_iter()
            .map(|(token, prob)| Ok(DraftCandidate { token, embedding: self.target.embed(token)?.to_vec(), prob }))
            .collect()
    }

    fn check_config(&self, cfg: &DraftConfig) -> Result<()> {
        cfg.validate()?;
        let own = self.weights.config();
        if cfg.n_heads > own.n_heads || cfg.draft_layers_per_head != own.draft_layers_per_head {
            return Err(Error::arg(format!(
                "draft weights have {} heads of {} layers; asked for {} heads of {} layers",
                own.n_heads, own.draft_layers_per_head, cfg.n_heads, cfg.draft_layers_per_head
            )));
        }
        Ok(())
    }
}

struct NeuralState {
    cache: KVCache,
    head: usize,
    feature: Vec<f64>,
    logits: Vec<f64>,
}

struct NeuralStepper<'a, 'c> {
    drafter: &'c NeuralDrafter<'a>,
    cfg: &'c DraftConfig,
    pending: u32,
    f0: Vec<f64>,
    calls: usize,
}

impl NeuralStepper<'_, '_> {
    fn run(&mut self, head: usize, rows: &Matrix, cache: &mut KVCache) -> Result<Matrix> {
        self.calls += 1;
        draft_head_forward(self.drafter.weights, head, rows, cache)
    }
}

impl Stepper for NeuralStepper<'_, '_> {
    type State = NeuralState;

    fn root(&mut self) -> Result<NeuralState> {
        let w = self.drafter.weights;
        let h = fuse(w, 0, self.drafter.target.embed(self.pending)?, &self.f0)?;
        let mut cache = w.new_cache();
        let out = self.run(0, &Matrix::row_vector(h), &mut cache)?;
        let feature = out.row(0).to_vec();
        let logits = self.drafter.target.lm_head_row(&feature);
        Ok(NeuralState { cache, head: 0, feature, logits })
    }

    fn step(&mut self, parent: &NeuralState, tokens: &[u32], depth: usize) -> Result<Vec<NeuralState>> {
        let w = self.drafter.weights;
        let head = self.cfg.head_for_step(depth + 1);
        let mut cache = if head == parent.head { parent.cache.clone() } else { w.new_cache() };
        let base = cache.len();
        let mut rows = Matrix::zeros(tokens.len(), w.hidden());
        for (i, &t) in tokens.iter().enumerate() {
            let h = fuse(w, head, self.drafter.target.embed(t)?, &parent.feature)?;
            rows.row_mut(i).copy_from_slice(&h);
        }
        let out = self.run(head, &rows, &mut cache)?;
        let n = tokens.len();
        Ok((0..n)
            .map(|i| {
                let mut c = if i + 1 == n { std::mem::replace(&mut cache, KVCache::new(0, 0)) } else { cache.clone() };
                c.compact(base, &[i]);
                let feature = out.row(i).to_vec();
                let logits = self.drafter.target.lm_head_row(&feature);
                NeuralState { cache: c, head, feature, logits }
            })
            .collect())
    }

    fn logits<'s>(&self, state: &'s NeuralState) -> &'s [f64] {
        &state.logits
    }

    fn feature(&self, state: &NeuralState) -> Option<Vec<f64>> {
        Some(state.feature.clone())
    }

    fn calls(&self) -> usize {
        self.calls
    }
}

impl Drafter for NeuralDrafter<'_> {
    fn draft_round(
        &self,
        ctx: &RoundContext<'_>,
        cfg: &DraftConfig,
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<DraftTree> {
        self.check_config(cfg)?;
        let h = self.weights.hidden();
        let f0 = match ctx.feature.len() {
            0 => vec![0.0; h],
            n if n == h => ctx.feature.to_vec(),
            n => return Err(Error::shape(format!("round feature of width {n} for hidden {h}"))),
        };
        let mut stepper = NeuralStepper { drafter: self, cfg, pending: ctx.pending(), f0, calls: 0 };
        build_tree(&mut stepper, ctx.pending(), cfg, temperature, ctx.max_depth, rng)
    }

    fn weight_bytes(&self) -> usize {
        self.weights.byte_size()
    }
}

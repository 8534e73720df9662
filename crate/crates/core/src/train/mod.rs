//! Fitting draft heads (and the toy target) on a byte corpus.

mod graph;
mod losses;

use serde::{Deserialize, Serialize};

use crate::draft::{DraftConfig, DraftWeights};
use crate::error::{Error, Result};
use crate::math::{argmax, Matrix};
use crate::model::{Transformer, TransformerWeights};
use crate::rng::Rng;
use crate::tape::{Grads, Tape, Var};

use graph::{draft_chain, draft_loss, target_logits, DraftVars, TargetVars, Teacher};
pub use losses::{loss_lm, loss_smooth, loss_teacher, total_loss, LossBreakdown, DEFAULT_LOSS_WEIGHTS};

/// Smallest corpus accepted for draft training.
pub const MIN_CORPUS_TOKENS: usize = 10_000;

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weights: [f64; 3],
    pub window: usize,
    pub seed: u64,
    /// Gap between chain start positions inside a window.
    #[serde(default = "one")]
    pub chain_stride: usize,
    /// Caps the number of windows used per epoch.
    #[serde(default)]
    pub max_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 1e-2,
            momentum: 0.9,
            weights: DEFAULT_LOSS_WEIGHTS,
            window: 128,
            seed: 0,
            chain_stride: 1,
            max_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::arg(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg("loss weights must be finite and non-negative"));
        }
        if self.window < 2 || self.chain_stride == 0 {
            return Err(Error::arg("window must be at least 2 and chain_stride at least 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::arg(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One line of the training log. Epoch 0 is the untrained evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lm: f64,
    pub teacher: f64,
    pub smooth: f64,
    pub total: f64,
}

pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter().map(|l| serde_json::to_string(l).expect("plain struct") + "\n").collect()
}

#[derive(Clone, Debug)]
pub struct Trained<W> {
    pub weights: W,
    pub log: Vec<EpochLog>,
}

pub fn bytes_to_tokens(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| b as u32).collect()
}

/// Windows of `len` tokens starting every `step` tokens.
pub fn windows(tokens: &[u32], len: usize, step: usize) -> Vec<&[u32]> {
    if tokens.len() < len || step == 0 {
        return Vec::new();
    }
    (0..=tokens.len() - len).step_by(step).map(|s| &tokens[s..s + len]).collect()
}

fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.below(i + 1));
    }
    order
}

/// Running sums of the per-window loss parts.
#[derive(Default)]
struct Meter {
    n: usize,
    sums: [f64; 4],
}

impl Meter {
    fn add(&mut self, parts: [f64; 4]) {
        self.n += 1;
        for (s, p) in self.sums.iter_mut().zip(parts) {
            *s += p;
        }
    }

    fn log(&self, epoch: usize) -> EpochLog {
        let m = |i: usize| self.sums[i] / self.n.max(1) as f64;
        EpochLog { epoch, lm: m(0), teacher: m(1), smooth: m(2), total: m(3) }
    }
}

fn diverged(epoch: usize, what: &str) -> Error {
    Error::Training { epoch, reason: format!("non-finite {what} loss") }
}

fn check_draft_pair(target: &Transformer, draft: &DraftWeights) -> Result<()> {
    if draft.spec() != target.spec() {
        return Err(Error::Model("draft weights were built for a different target".into()));
    }
    Ok(())
}

/// Loss parts and graph handles of the draft objective on one window.
struct DraftPass {
    tape: Tape,
    vars: Vec<Var>,
    total: Var,
    parts: [f64; 4],
}

fn draft_pass(
    target: &Transformer,
    draft: &DraftWeights,
    window: &[u32],
    cfg: &TrainConfig,
) -> Result<Option<DraftPass>> {
    let dc = draft.config();
    let teacher = Teacher::new(target, window)?;
    let starts = teacher.starts(dc.max_depth(), cfg.chain_stride);
    if starts.is_empty() {
        return Ok(None);
    }
    let mut tape = Tape::new();
    let dv = DraftVars::new(&mut tape, draft, true);
    let steps = draft_chain(&mut tape, &dv, dc, target.spec().n_heads, target, &teacher, &starts)?;
    let loss = draft_loss(&mut tape, &steps, &teacher, &starts, cfg.weights)?;
    let parts = [tape.scalar(loss.lm), tape.scalar(loss.teacher), tape.scalar(loss.smooth), tape.scalar(loss.total)];
    Ok(Some(DraftPass { vars: dv.vars(), total: loss.total, tape, parts }))
}

fn flat_grads(grads: &Grads, vars: &[Var], shapes: &[(usize, usize)]) -> Vec<f64> {
    let mut out = Vec::new();
    for (v, &(r, c)) in vars.iter().zip(shapes) {
        match grads.get(*v) {
            Some(g) => out.extend_from_slice(g.data()),
            None => out.extend(std::iter::repeat_n(0.0, r * c)),
        }
    }
    out
}

fn round_all<'a>(tensors: impl IntoIterator<Item = &'a mut Matrix>) {
    for t in tensors {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
}

fn sgd_step(tensors: Vec<&mut Matrix>, velocity: &mut [Matrix], grads: &Grads, vars: &[Var], cfg: &TrainConfig) {
    for ((t, vel), var) in tensors.into_iter().zip(velocity.iter_mut()).zip(vars) {
        let Some(g) = grads.get(*var) else { continue };
        for ((w, v), gi) in t.data_mut().iter_mut().zip(vel.data_mut()).zip(g.data()) {
            *v = cfg.momentum * *v + gi;
            *w -= cfg.lr * *v;
        }
    }
}

fn draft_windows<'a>(tokens: &'a [u32], target: &Transformer, draft: &DraftWeights, cfg: &TrainConfig) -> Result<Vec<&'a [u32]>> {
    let depth = draft.config().max_depth();
    if cfg.window > target.spec().context_limit {
        return Err(Error::arg(format!("window {} exceeds context {}", cfg.window, target.spec().context_limit)));
    }
    if cfg.window < depth + 2 {
        return Err(Error::arg(format!("window {} too short for chains of depth {depth}", cfg.window)));
    }
    let mut w = windows(tokens, cfg.window, cfg.window - depth - 1);
    if let Some(m) = cfg.max_windows {
        w.truncate(m);
    }
    if w.is_empty() {
        return Err(Error::arg("corpus shorter than one training window"));
    }
    Ok(w)
}

/// Mean loss parts of `draft` over every window of `tokens`.
pub fn evaluate_draft(target: &Transformer, draft: &DraftWeights, tokens: &[u32], cfg: &TrainConfig) -> Result<EpochLog> {
    check_draft_pair(target, draft)?;
    let mut meter = Meter::default();
    for w in draft_windows(tokens, target, draft, cfg)? {
        if let Some(p) = draft_pass(target, draft, w, cfg)? {
            meter.add(p.parts);
        }
    }
    Ok(meter.log(0))
}

/// The untrained draft that [`train_draft`] starts from for `seed`.
pub fn init_draft(target: &Transformer, draft_cfg: &DraftConfig, seed: u64) -> Result<DraftWeights> {
    DraftWeights::init(target.spec(), draft_cfg, &mut Rng::new(seed).fork(u64::MAX))
}

/// Fresh draft heads for `target`, trained with [`train_draft_from`].
pub fn train_draft(target: &Transformer, corpus: &[u32], draft_cfg: &DraftConfig, cfg: &TrainConfig) -> Result<Trained<DraftWeights>> {
    train_draft_from(target, init_draft(target, draft_cfg, cfg.seed)?, corpus, cfg)
}

/// Teacher-forced SGD on the draft heads against a frozen target.
pub fn train_draft_from(
    target: &Transformer,
    mut draft: DraftWeights,
    corpus: &[u32],
    cfg: &TrainConfig,
) -> Result<Trained<DraftWeights>> {
    cfg.validate()?;
    check_draft_pair(target, &draft)?;
    if corpus.len() < MIN_CORPUS_TOKENS {
        return Err(Error::arg(format!("corpus of {} tokens, need at least {MIN_CORPUS_TOKENS}", corpus.len())));
    }
    let wins = draft_windows(corpus, target, &draft, cfg)?;
    let mut log = vec![evaluate_draft(target, &draft, corpus, cfg)?];
    if !log[0].total.is_finite() {
        return Err(diverged(0, "total"));
    }
    let mut velocity: Vec<Matrix> = draft.tensors_mut().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
    let base = Rng::new(cfg.seed);
    for epoch in 1..=cfg.epochs {
        let mut meter = Meter::default();
        for i in shuffled(wins.len(), &mut base.fork(epoch as u64)) {
            let Some(pass) = draft_pass(target, &draft, wins[i], cfg)? else { continue };
            if pass.parts.iter().any(|p| !p.is_finite()) {
                return Err(diverged(epoch, "draft"));
            }
            meter.add(pass.parts);
            let grads = pass.tape.backward(pass.total);
            sgd_step(draft.tensors_mut(), &mut velocity, &grads, &pass.vars, cfg);
        }
        log.push(meter.log(epoch));
    }
    round_all(draft.tensors_mut());
    Ok(Trained { weights: draft, log })
}

/// Fraction of teacher-forced chain steps on which the draft's top token
/// equals the target's top token at the same position.
pub fn top1_agreement(target: &Transformer, draft: &DraftWeights, tokens: &[u32], cfg: &TrainConfig) -> Result<f64> {
    check_draft_pair(target, draft)?;
    let dc = draft.config();
    let (mut hits, mut total) = (0usize, 0usize);
    for w in draft_windows(tokens, target, draft, cfg)? {
        let teacher = Teacher::new(target, w)?;
        let starts = teacher.starts(dc.max_depth(), cfg.chain_stride);
        let mut tape = Tape::new();
        let dv = DraftVars::new(&mut tape, draft, false);
        let steps = draft_chain(&mut tape, &dv, dc, target.spec().n_heads, target, &teacher, &starts)?;
        for (i, st) in steps.iter().enumerate() {
            let logits = tape.value(st.logits);
            for (r, &j) in starts.iter().enumerate() {
                hits += usize::from(argmax(logits.row(r)) == argmax(teacher.logits.row(j + i + 1)));
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::arg("no chain positions to score"));
    }
    Ok(hits as f64 / total as f64)
}

/// Central-difference check of `analytic` against `loss` at `params`, on
/// `coords` random coordinates (all of them if fewer exist). Returns the
/// largest relative error.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::arg(format!("epsilon {eps} outside [1e-6, 1e-3]")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(format!("{} params, {} gradient entries", params.len(), analytic.len())));
    }
    let picks: Vec<usize> = if coords >= params.len() {
        (0..params.len()).collect()
    } else {
        shuffled(params.len(), rng).into_iter().take(coords).collect()
    };
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in picks {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p)?;
        p[i] = orig - eps;
        let down = loss(&p)?;
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss probing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1e-8));
    }
    Ok(worst)
}

fn flatten_params(tensors: Vec<&mut Matrix>) -> (Vec<f64>, Vec<(usize, usize)>) {
    let shapes = tensors.iter().map(|t| t.shape()).collect();
    (tensors.iter().flat_map(|t| t.data().iter().copied()).collect(), shapes)
}

fn load_params(tensors: Vec<&mut Matrix>, flat: &[f64]) {
    let mut off = 0;
    for t in tensors {
        let n = t.data().len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// Analytic gradient of the draft objective on one window, flattened in
/// `DraftWeights::tensors_mut` order, plus the loss.
pub fn draft_gradient(target: &Transformer, draft: &DraftWeights, window: &[u32], cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    check_draft_pair(target, draft)?;
    let pass = draft_pass(target, draft, window, cfg)?.ok_or_else(|| Error::arg("window too short for one chain"))?;
    let grads = pass.tape.backward(pass.total);
    let mut copy = draft.clone();
    let (_, shapes) = flatten_params(copy.tensors_mut());
    Ok((pass.parts[3], flat_grads(&grads, &pass.vars, &shapes)))
}

/// [`grad_check`] of the full draft objective on one window.
pub fn draft_grad_check(
    target: &Transformer,
    draft: &DraftWeights,
    window: &[u32],
    cfg: &TrainConfig,
    eps: f64,
    coords: usize,
) -> Result<f64> {
    let (_, analytic) = draft_gradient(target, draft, window, cfg)?;
    let mut probe = draft.clone();
    let (params, _) = flatten_params(probe.tensors_mut());
    let loss = |flat: &[f64]| -> Result<f64> {
        load_params(probe.tensors_mut(), flat);
        let pass = draft_pass(target, &probe, window, cfg)?.expect("checked above");
        Ok(pass.parts[3])
    };
    grad_check(loss, &params, &analytic, eps, coords, &mut Rng::new(cfg.seed).fork(1))
}

fn target_pass(weights: &TransformerWeights, n_heads: usize, window: &[u32]) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let tv = TargetVars::new(&mut tape, weights);
    let n = window.len();
    let logits = target_logits(&mut tape, &tv, n_heads, &window[..n - 1])?;
    let labels = window[1..].iter().map(|&t| t as usize).collect();
    let loss = tape.cross_entropy(logits, labels)?;
    Ok((tape, tv.vars(), loss))
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, tensors: Vec<&mut Matrix>, grads: &Grads, vars: &[Var], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((w, m), v), var) in tensors.into_iter().zip(&mut self.m).zip(&mut self.v).zip(vars) {
            let Some(g) = grads.get(*var) else { continue };
            for (((wi, mi), vi), gi) in w.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mi = Self::B1 * *mi + (1.0 - Self::B1) * gi;
                *vi = Self::B2 * *vi + (1.0 - Self::B2) * gi * gi;
                *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Next-token cross-entropy training of the toy target with Adam. The log
/// reports the loss in the `lm` and `total` fields.
pub fn train_target(mut model: Transformer, corpus: &[u32], cfg: &TrainConfig) -> Result<Trained<Transformer>> {
    cfg.validate()?;
    let spec = model.spec().clone();
    if cfg.window > spec.context_limit + 1 {
        return Err(Error::arg(format!("window {} exceeds context {}", cfg.window, spec.context_limit)));
    }
    if let Some(&t) = corpus.iter().find(|&&t| t as usize >= spec.vocab_size) {
        return Err(Error::arg(format!("token {t} outside vocabulary {}", spec.vocab_size)));
    }
    let mut wins = windows(corpus, cfg.window, cfg.window - 1);
    if let Some(m) = cfg.max_windows {
        wins.truncate(m);
    }
    if wins.is_empty() {
        return Err(Error::arg("corpus shorter than one training window"));
    }
    let entry = |loss: f64, epoch| EpochLog { epoch, lm: loss, teacher: 0.0, smooth: 0.0, total: loss };
    let mut eval = 0.0;
    for w in &wins {
        let (tape, _, loss) = target_pass(model.weights(), spec.n_heads, w)?;
        eval += tape.scalar(loss);
    }
    let mut log = vec![entry(eval / wins.len() as f64, 0)];
    let mut weights = model.into_weights();
    let zeros: Vec<Matrix> = weights.tensors_mut().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
    let mut adam = Adam { m: zeros.clone(), v: zeros, t: 0 };
    let base = Rng::new(cfg.seed);
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        for i in shuffled(wins.len(), &mut base.fork(epoch as u64)) {
            let (tape, vars, loss) = target_pass(&weights, spec.n_heads, wins[i])?;
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(diverged(epoch, "target"));
            }
            sum += l;
            let grads = tape.backward(loss);
            adam.step(weights.tensors_mut(), &grads, &vars, cfg.lr);
        }
        log.push(entry(sum / wins.len() as f64, epoch));
    }
    round_all(weights.tensors_mut());
    model = Transformer::new(spec, weights)?;
    Ok(Trained { weights: model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Backend, ModelSpec};

    fn spec() -> ModelSpec {
        ModelSpec { vocab_size: 32, hidden_dim: 8, n_layers: 1, n_heads: 2, context_limit: 64, backend: Backend::Transformer }
    }

    fn corpus(n: usize) -> Vec<u32> {
        let phrase = b"the cat sat on the mat. ";
        (0..n).map(|i| (phrase[i % phrase.len()] % 32) as u32).collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { window: 32, chain_stride: 4, max_windows: Some(6), epochs: 2, ..TrainConfig::default() }
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = TrainConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), cfg);
        let minimal = r#"{"epochs":1,"lr":0.1,"momentum":0.0,"weights":[0.1,1.0,0.1],"window":64,"seed":3}"#;
        let parsed = TrainConfig::from_json(minimal).unwrap();
        assert_eq!(parsed.chain_stride, 1);
        assert!(TrainConfig::from_json(r#"{"epochs":1,"lr":-1,"momentum":0,"weights":[0,0,0],"window":64,"seed":0}"#).is_err());
    }

    #[test]
    fn quadratic_grad_check_is_exact() {
        let curv: Vec<f64> = (0..300).map(|i| 1.0 + (i % 7) as f64 / 7.0).collect();
        let params: Vec<f64> = (0..300).map(|i| 0.5 + (i % 11) as f64 / 11.0).collect();
        let analytic: Vec<f64> = params.iter().zip(&curv).map(|(p, c)| c * p + 1.0).collect();
        let loss = |x: &[f64]| Ok(x.iter().zip(&curv).map(|(p, c)| 0.5 * c * p * p + p).sum());
        let err = grad_check(loss, &params, &analytic, 1e-3, 250, &mut Rng::new(0)).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_inputs() {
        let loss = |_: &[f64]| Ok(f64::NAN);
        assert!(matches!(grad_check(loss, &[1.0], &[0.0], 1e-5, 1, &mut Rng::new(0)), Err(Error::Numeric(_))));
        let ok = |_: &[f64]| Ok(0.0);
        assert!(grad_check(ok, &[1.0], &[0.0], 1e-2, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn draft_objective_gradient_matches_finite_differences() {
        let t = Transformer::random(spec(), 5).unwrap();
        let dc = DraftConfig { n_heads: 1, ..DraftConfig::default() };
        let d = DraftWeights::init(t.spec(), &dc, &mut Rng::new(6)).unwrap();
        let cfg = TrainConfig { chain_stride: 3, ..small_cfg() };
        let tokens = corpus(32);
        let err = draft_grad_check(&t, &d, &tokens, &cfg, 1e-5, 200).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_weights_give_zero_gradient_and_parts_add_linearly() {
        let t = Transformer::random(spec(), 5).unwrap();
        let d = DraftWeights::init(t.spec(), &DraftConfig::default(), &mut Rng::new(6)).unwrap();
        let tokens = corpus(32);
        let grad = |w: [f64; 3]| draft_gradient(&t, &d, &tokens, &TrainConfig { weights: w, ..small_cfg() }).unwrap();
        assert!(grad([0.0; 3]).1.iter().all(|g| *g == 0.0));
        let (l, full) = grad(DEFAULT_LOSS_WEIGHTS);
        let parts = [grad([0.1, 0.0, 0.0]).1, grad([0.0, 1.0, 0.0]).1, grad([0.0, 0.0, 0.1]).1];
        for (i, g) in full.iter().enumerate() {
            let sum = parts[0][i] + parts[1][i] + parts[2][i];
            assert!((g - sum).abs() <= 1e-12 * (1.0 + g.abs()));
        }
        assert!(l.is_finite());
    }

    #[test]
    fn zero_learning_rate_keeps_weights_and_target_frozen() {
        let t = Transformer::random(spec(), 7).unwrap();
        let before = t.checksum();
        let init = DraftWeights::init(t.spec(), &DraftConfig::default(), &mut Rng::new(8)).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..small_cfg() };
        let out = train_draft_from(&t, init.clone(), &corpus(MIN_CORPUS_TOKENS), &cfg).unwrap();
        assert_eq!(out.weights.checksum(), init.checksum());
        assert_eq!(t.checksum(), before);
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let t = Transformer::random(spec(), 7).unwrap();
        let cfg = TrainConfig { max_windows: Some(30), epochs: 3, ..small_cfg() };
        let data = corpus(MIN_CORPUS_TOKENS);
        let a = train_draft(&t, &data, &DraftConfig::default(), &cfg).unwrap();
        let b = train_draft(&t, &data, &DraftConfig::default(), &cfg).unwrap();
        assert_eq!(a.weights.checksum(), b.weights.checksum());
        assert_eq!(a.log, b.log);
        assert!(a.log.last().unwrap().total < a.log[0].total, "{:?}", a.log);
        let jsonl = log_to_jsonl(&a.log);
        assert_eq!(jsonl.lines().count(), 4);
        assert!(jsonl.starts_with("{\"epoch\":0,"));
    }

    #[test]
    fn short_corpus_is_rejected() {
        let t = Transformer::random(spec(), 7).unwrap();
        let err = train_draft(&t, &corpus(500), &DraftConfig::default(), &small_cfg());
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn target_training_reduces_cross_entropy() {
        let t = Transformer::random(spec(), 9).unwrap();
        let cfg = TrainConfig { lr: 1e-2, max_windows: Some(20), epochs: 3, ..small_cfg() };
        let out = train_target(t, &corpus(2000), &cfg).unwrap();
        assert!(out.log.last().unwrap().total < 0.5 * out.log[0].total, "{:?}", out.log);
    }

    #[test]
    fn agreement_is_a_fraction() {
        let t = Transformer::random(spec(), 7).unwrap();
        let d = DraftWeights::init(t.spec(), &DraftConfig::default(), &mut Rng::new(1)).unwrap();
        let a = top1_agreement(&t, &d, &corpus(200), &small_cfg()).unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
}

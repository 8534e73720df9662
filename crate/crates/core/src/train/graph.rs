//! Differentiable re-statements of the target and draft forward passes.

use crate::draft::{DraftConfig, DraftWeights};
use crate::error::Result;
use crate::math::{softmax, Matrix};
use crate::model::{BlockWeights, Transformer, TransformerWeights, RMS_EPS};
use crate::tape::{Tape, Var};

pub(crate) struct BlockVars {
    attn_gain: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    mlp_gain: Var,
    w1: Var,
    w2: Var,
}

fn leaf(tape: &mut Tape, m: &Matrix, trainable: bool) -> Var {
    if trainable {
        tape.param(m.clone())
    } else {
        tape.constant(m.clone())
    }
}

impl BlockVars {
    fn new(tape: &mut Tape, b: &BlockWeights, trainable: bool) -> Self {
        Self {
            attn_gain: leaf(tape, &b.attn_gain, trainable),
            wq: leaf(tape, &b.wq, trainable),
            wk: leaf(tape, &b.wk, trainable),
            wv: leaf(tape, &b.wv, trainable),
            wo: leaf(tape, &b.wo, trainable),
            mlp_gain: leaf(tape, &b.mlp_gain, trainable),
            w1: leaf(tape, &b.w1, trainable),
            w2: leaf(tape, &b.w2, trainable),
        }
    }

    /// Same order as `BlockWeights::tensors_mut`.
    fn vars(&self) -> [Var; 8] {
        [self.attn_gain, self.wq, self.wk, self.wv, self.wo, self.mlp_gain, self.w1, self.w2]
    }
}

/// One decoder block. `prior` holds key/value blocks from earlier calls that
/// the new rows may see; the new block is appended after them. Returns the
/// block output and the new key/value vars.
fn block(
    tape: &mut Tape,
    b: &BlockVars,
    n_heads: usize,
    x: Var,
    prior: &[(Var, Var)],
    visible: Vec<Vec<(usize, usize)>>,
) -> Result<(Var, Var, Var)> {
    let xn = tape.rms_norm(x, b.attn_gain, RMS_EPS)?;
    let q = tape.matmul(xn, b.wq)?;
    let k = tape.matmul(xn, b.wk)?;
    let v = tape.matmul(xn, b.wv)?;
    let mut keys: Vec<Var> = prior.iter().map(|p| p.0).collect();
    let mut values: Vec<Var> = prior.iter().map(|p| p.1).collect();
    keys.push(k);
    values.push(v);
    let a = tape.attention(q, keys, values, visible, n_heads)?;
    let proj = tape.matmul(a, b.wo)?;
    let x1 = tape.add(x, proj)?;
    let m = tape.rms_norm(x1, b.mlp_gain, RMS_EPS)?;
    let h = tape.matmul(m, b.w1)?;
    let h = tape.gelu(h);
    let out = tape.matmul(h, b.w2)?;
    Ok((tape.add(x1, out)?, k, v))
}

/// Trainable vars of a full transformer, in `TransformerWeights::tensors_mut` order.
pub(crate) struct TargetVars {
    embed: Var,
    pos: Var,
    blocks: Vec<BlockVars>,
    final_gain: Var,
    lm_head: Var,
}

impl TargetVars {
    pub(crate) fn new(tape: &mut Tape, w: &TransformerWeights) -> Self {
        Self {
            embed: tape.param(w.embed.clone()),
            pos: tape.param(w.pos.clone()),
            blocks: w.blocks.iter().map(|b| BlockVars::new(tape, b, true)).collect(),
            final_gain: tape.param(w.final_gain.clone()),
            lm_head: tape.param(w.lm_head.clone()),
        }
    }

    pub(crate) fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embed, self.pos];
        for b in &self.blocks {
            out.extend(b.vars());
        }
        out.push(self.final_gain);
        out.push(self.lm_head);
        out
    }
}

/// Causal pass over `inputs` from position 0; returns the logits var.
pub(crate) fn target_logits(tape: &mut Tape, v: &TargetVars, n_heads: usize, inputs: &[u32]) -> Result<Var> {
    let n = inputs.len();
    let e = tape.gather(v.embed, inputs.iter().map(|&t| t as usize).collect())?;
    let p = tape.gather(v.pos, (0..n).collect())?;
    let mut x = tape.add(e, p)?;
    for b in &v.blocks {
        let visible = (0..n).map(|i| (0..=i).map(|j| (0, j)).collect()).collect();
        x = block(tape, b, n_heads, x, &[], visible)?.0;
    }
    let f = tape.rms_norm(x, v.final_gain, RMS_EPS)?;
    tape.matmul(f, v.lm_head)
}

pub(crate) struct HeadVars {
    fusion: Var,
    blocks: Vec<BlockVars>,
    out_gain: Var,
}

/// Vars for the draft heads (trainable or frozen) in `DraftWeights::tensors_mut` order.
pub(crate) struct DraftVars {
    heads: Vec<HeadVars>,
}

impl DraftVars {
    pub(crate) fn new(tape: &mut Tape, w: &DraftWeights, trainable: bool) -> Self {
        let heads = w
            .heads
            .iter()
            .map(|h| HeadVars {
                fusion: leaf(tape, &h.fusion, trainable),
                blocks: h.blocks.iter().map(|b| BlockVars::new(tape, b, trainable)).collect(),
                out_gain: leaf(tape, &h.out_gain, trainable),
            })
            .collect();
        Self { heads }
    }

    pub(crate) fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for h in &self.heads {
            out.push(h.fusion);
            for b in &h.blocks {
                out.extend(b.vars());
            }
            out.push(h.out_gain);
        }
        out
    }
}

/// Frozen target outputs over one window of tokens.
pub(crate) struct Teacher {
    pub tokens: Vec<u32>,
    pub features: Matrix,
    pub logits: Matrix,
}

impl Teacher {
    pub(crate) fn new(target: &Transformer, tokens: &[u32]) -> Result<Self> {
        let mut cache = target.new_cache();
        let out = target.forward(tokens, &mut cache, None)?;
        Ok(Self { tokens: tokens.to_vec(), features: out.features, logits: out.logits })
    }

    /// Chain start positions usable with a chain of `depth` steps.
    pub(crate) fn starts(&self, depth: usize, stride: usize) -> Vec<usize> {
        let n = self.tokens.len();
        if n < depth + 2 {
            return Vec::new();
        }
        (0..=n - depth - 2).step_by(stride.max(1)).collect()
    }
}

/// Per-step outputs of the teacher-forced drafting chain.
pub(crate) struct ChainStep {
    pub features: Var,
    pub logits: Var,
}

/// Unrolls the drafting chain from every start in `starts`. Step `s`
/// consumes `x[j + s]` with the previous step's feature (the target feature
/// `f[j]` for step 1) and should reproduce `f[j + s]`.
pub(crate) fn draft_chain(
    tape: &mut Tape,
    dv: &DraftVars,
    cfg: &DraftConfig,
    n_heads: usize,
    target: &Transformer,
    teacher: &Teacher,
    starts: &[usize],
) -> Result<Vec<ChainStep>> {
    let lm_head = tape.constant(target.weights().lm_head.clone());
    let mut prev = tape.constant(teacher.features.select_rows(starts));
    let embed = &target.weights().embed;
    let layers = cfg.draft_layers_per_head;
    let mut history: Vec<Vec<(Var, Var)>> = vec![Vec::new(); layers];
    let mut head = usize::MAX;
    let mut steps = Vec::with_capacity(cfg.max_depth());
    for s in 1..=cfg.max_depth() {
        let hs = cfg.head_for_step(s);
        if hs != head {
            head = hs;
            history.iter_mut().for_each(|h| h.clear());
        }
        let hv = &dv.heads[hs];
        let rows: Vec<usize> = starts.iter().map(|&j| teacher.tokens[j + s] as usize).collect();
        let e = tape.constant(embed.select_rows(&rows));
        let cat = tape.concat_cols(e, prev)?;
        let mut x = tape.matmul(cat, hv.fusion)?;
        for (l, b) in hv.blocks.iter().enumerate() {
            let depth = history[l].len();
            let visible = (0..starts.len()).map(|c| (0..=depth).map(|blk| (blk, c)).collect()).collect();
            let (nx, k, v) = block(tape, b, n_heads, x, &history[l], visible)?;
            history[l].push((k, v));
            x = nx;
        }
        let features = tape.rms_norm(x, hv.out_gain, RMS_EPS)?;
        let logits = tape.matmul(features, lm_head)?;
        steps.push(ChainStep { features, logits });
        prev = features;
    }
    Ok(steps)
}

/// Scalar loss vars for one window.
pub(crate) struct DraftLoss {
    pub lm: Var,
    pub teacher: Var,
    pub smooth: Var,
    pub total: Var,
}

pub(crate) fn draft_loss(
    tape: &mut Tape,
    steps: &[ChainStep],
    teacher: &Teacher,
    starts: &[usize],
    weights: [f64; 3],
) -> Result<DraftLoss> {
    let d = steps.len() as f64;
    let (mut lm, mut te, mut sm) = (Vec::new(), Vec::new(), Vec::new());
    for (i, st) in steps.iter().enumerate() {
        let s = i + 1;
        let labels: Vec<usize> = starts.iter().map(|&j| teacher.tokens[j + s + 1] as usize).collect();
        lm.push((tape.cross_entropy(st.logits, labels)?, 1.0 / d));
        let mut soft = Matrix::zeros(starts.len(), teacher.logits.cols());
        for (r, &j) in starts.iter().enumerate() {
            soft.row_mut(r).copy_from_slice(softmax(teacher.logits.row(j + s), 1.0)?.probs());
        }
        te.push((tape.soft_cross_entropy(st.logits, soft)?, 1.0 / d));
        let rows: Vec<usize> = starts.iter().map(|&j| j + s).collect();
        let target_feat = tape.constant(teacher.features.select_rows(&rows));
        sm.push((tape.smooth_l1(st.features, target_feat)?, 1.0 / d));
    }
    let lm = tape.weighted_sum(lm);
    let teacher = tape.weighted_sum(te);
    let smooth = tape.weighted_sum(sm);
    let total = tape.weighted_sum(vec![(lm, weights[0]), (teacher, weights[1]), (smooth, weights[2])]);
    Ok(DraftLoss { lm, teacher, smooth, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draft::{draft_head_forward, fuse};
    use crate::model::{Backend, ModelSpec};
    use crate::rng::Rng;

    fn spec() -> ModelSpec {
        ModelSpec { vocab_size: 16, hidden_dim: 8, n_layers: 2, n_heads: 2, context_limit: 32, backend: Backend::Transformer }
    }

    #[test]
    fn target_graph_matches_forward() {
        let t = Transformer::random(spec(), 1).unwrap();
        let tokens: Vec<u32> = (0..12).map(|i| (i * 7 % 16) as u32).collect();
        let mut tape = Tape::new();
        let vars = TargetVars::new(&mut tape, t.weights());
        let logits = target_logits(&mut tape, &vars, 2, &tokens).unwrap();
        let mut cache = t.new_cache();
        let direct = t.forward(&tokens, &mut cache, None).unwrap();
        for (a, b) in tape.value(logits).data().iter().zip(direct.logits.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn draft_graph_matches_inference_path() {
        let t = Transformer::random(spec(), 2).unwrap();
        let cfg = DraftConfig { draft_layers_per_head: 2, ..DraftConfig::default() };
        let d = DraftWeights::init(t.spec(), &cfg, &mut Rng::new(3)).unwrap();
        let tokens: Vec<u32> = (0..20).map(|i| (i * 5 % 16) as u32).collect();
        let teacher = Teacher::new(&t, &tokens).unwrap();
        let starts = teacher.starts(cfg.max_depth(), 3);
        let mut tape = Tape::new();
        let dv = DraftVars::new(&mut tape, &d, true);
        let steps = draft_chain(&mut tape, &dv, &cfg, 2, &t, &teacher, &starts).unwrap();
        for (c, &j) in starts.iter().enumerate() {
            let mut feature = teacher.features.row(j).to_vec();
            let mut cache = d.new_cache();
            let mut head = 0;
            for s in 1..=cfg.max_depth() {
                let hs = cfg.head_for_step(s);
                if hs != head {
                    head = hs;
                    cache = d.new_cache();
                }
                let h = fuse(&d, hs, t.embed(tokens[j + s]).unwrap(), &feature).unwrap();
                feature = draft_head_forward(&d, hs, &Matrix::row_vector(h), &mut cache).unwrap().row(0).to_vec();
                for (a, b) in feature.iter().zip(tape.value(steps[s - 1].features).row(c)) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}

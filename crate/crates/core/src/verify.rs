//! Speculative acceptance, per-round verification and the generation loop.
//!
//! Symbol convention: `p` is the target distribution and `q` the draft's.
//! A drafted token `x` is accepted when `u < min(1, p(x) / q(x))`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bench::GenStats;
use crate::draft::{DraftConfig, Drafter, RoundContext};
use crate::error::{Error, Result};
use crate::math::{argmax, softmax, ProbDist};
use crate::model::{ForwardResult, TabularModel, TargetModel, TreeInput};
use crate::rng::Rng;
use crate::tree::{flatten, longest_accepted_path, DraftTree};

/// How the token after a rejected position is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionRule {
    /// `norm(max(0, p - q))`; preserves the target distribution.
    #[default]
    Residual,
    /// `norm(max(q, p))`, kept for ablation. Not lossless.
    ElementwiseMax,
}

pub fn accept_token(p_target: f64, p_draft: f64, u: f64) -> Result<bool> {
    if p_draft <= 0.0 {
        return Err(Error::arg("cannot test a token the draft gives zero probability"));
    }
    Ok(u < (p_target / p_draft).min(1.0))
}

/// `norm(max(0, target - draft))`, or `target` itself when nothing remains.
pub fn residual_distribution(target: &ProbDist, draft: &ProbDist) -> Result<ProbDist> {
    if target.len() != draft.len() {
        return Err(Error::shape(format!("residual of {} vs {} entries", target.len(), draft.len())));
    }
    let w: Vec<f64> = target.probs().iter().zip(draft.probs()).map(|(p, q)| (p - q).max(0.0)).collect();
    if w.iter().all(|&v| v <= 0.0) {
        return Ok(target.clone());
    }
    ProbDist::from_weights(w)
}

fn elementwise_max(target: &ProbDist, draft: &ProbDist) -> Result<ProbDist> {
    ProbDist::from_weights(target.probs().iter().zip(draft.probs()).map(|(p, q)| p.max(*q)).collect())
}

fn correction_dist(rule: CorrectionRule, target: &ProbDist, draft: &ProbDist) -> Result<ProbDist> {
    match rule {
        CorrectionRule::Residual => residual_distribution(target, draft),
        CorrectionRule::ElementwiseMax => elementwise_max(target, draft),
    }
}

/// Closed-form law of the token emitted at a node whose `k` children were
/// drawn from `draft` without replacement and are verified in draw order.
pub fn exact_sibling_distribution(target: &ProbDist, draft: &ProbDist, k: usize, rule: CorrectionRule) -> Result<ProbDist> {
    if target.len() != draft.len() {
        return Err(Error::shape("distribution lengths differ"));
    }
    let fallback = match rule {
        CorrectionRule::Residual => None,
        CorrectionRule::ElementwiseMax => Some(elementwise_max(target, draft)?),
    };
    let mut out = vec![0.0; target.len()];
    sibling_paths(target, Some(draft.clone()), k, 1.0, rule, fallback.as_ref(), &mut out)?;
    ProbDist::new(out)
}

fn sibling_paths(
    p: &ProbDist,
    q: Option<ProbDist>,
    k: usize,
    weight: f64,
    rule: CorrectionRule,
    fallback: Option<&ProbDist>,
    out: &mut [f64],
) -> Result<()> {
    let Some(q) = q.filter(|_| k > 0) else {
        let last = fallback.unwrap_or(p);
        for (o, &pi) in out.iter_mut().zip(last.probs()) {
            *o += weight * pi;
        }
        return Ok(());
    };
    for x in 0..q.len() as u32 {
        let qx = q.prob(x);
        if qx == 0.0 {
            continue;
        }
        let acc = (p.prob(x) / qx).min(1.0);
        out[x as usize] += weight * qx * acc;
        if acc < 1.0 {
            let next_p = match rule {
                CorrectionRule::Residual => residual_distribution(p, &q)?,
                CorrectionRule::ElementwiseMax => p.clone(),
            };
            sibling_paths(&next_p, q.without(x), k - 1, weight * qx * (1.0 - acc), rule, fallback, out)?;
        }
    }
    Ok(())
}

/// Closed-form distribution of the token emitted by one speculative step
/// that drafts a single token from `draft`.
pub fn exact_step_distribution(target: &ProbDist, draft: &ProbDist, rule: CorrectionRule) -> Result<ProbDist> {
    if target.len() != draft.len() {
        return Err(Error::shape("distribution lengths differ"));
    }
    let accept: Vec<f64> =
        target.probs().iter().zip(draft.probs()).map(|(&p, &q)| if q > 0.0 { q * (p / q).min(1.0) } else { 0.0 }).collect();
    let reject = 1.0 - accept.iter().sum::<f64>();
    let corr = correction_dist(rule, target, draft)?;
    let out: Vec<f64> = accept.iter().zip(corr.probs()).map(|(a, c)| a + reject.max(0.0) * c).collect();
    ProbDist::from_weights(out)
}

/// [`exact_step_distribution`] for two tables at `context`.
pub fn exact_output_distribution(
    target: &TabularModel,
    draft: &TabularModel,
    context: &[u32],
    rule: CorrectionRule,
) -> Result<ProbDist> {
    exact_step_distribution(target.next_dist(context)?, draft.next_dist(context)?, rule)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    /// Tree indices of the accepted path, root excluded.
    pub accepted_nodes: Vec<usize>,
    pub accepted_tokens: Vec<u32>,
    /// Resampled token after a rejection, or the bonus token after a full path.
    pub correction_token: u32,
    /// Target feature that produced `correction_token`.
    pub next_feature: Vec<f64>,
    pub nodes_verified: usize,
}

impl VerifyOutcome {
    pub fn accepted_len(&self) -> usize {
        self.accepted_tokens.len()
    }
}

/// Walks the tree from the root using the target's rows for every node.
///
/// Children are tested in the order they were drafted. After a rejection at
/// `T > 0` the target distribution is replaced by its residual against the
/// current proposal, and the proposal loses the rejected token, so the
/// emitted token keeps the target's law.
pub fn verify_round(
    tree: &DraftTree,
    target_out: &ForwardResult,
    rng: &mut Rng,
    temperature: f64,
    rule: CorrectionRule,
) -> Result<VerifyOutcome> {
    if target_out.len() != tree.len() {
        return Err(Error::shape(format!("{} target rows for {} tree nodes", target_out.len(), tree.len())));
    }
    let mut cur = 0usize;
    let mut walk = Vec::new();
    let correction = loop {
        let logits = target_out.logits.row(cur);
        if temperature == 0.0 {
            let best = argmax(logits) as u32;
            match tree.children(cur).find(|&c| tree.node(c).token == best) {
                Some(c) => {
                    walk.push(c);
                    cur = c;
                    continue;
                }
                None => break best,
            }
        }
        let p = softmax(logits, temperature)?;
        let kids: Vec<usize> = tree.children(cur).collect();
        if kids.is_empty() {
            break p.sample(rng.uniform());
        }
        let q = tree
            .proposal(cur)
            .ok_or_else(|| Error::Structure(format!("node {cur} has children but no proposal")))?;
        if q.len() != p.len() {
            return Err(Error::shape("draft and target vocabularies differ"));
        }
        let mut p_cur = p.clone();
        let mut q_cur = Some(q.clone());
        let mut accepted = None;
        for &c in &kids {
            let x = tree.node(c).token;
            let Some(qc) = q_cur.take() else { break };
            if accept_token(p_cur.prob(x), qc.prob(x), rng.uniform())? {
                accepted = Some(c);
                break;
            }
            if rule == CorrectionRule::Residual {
                p_cur = residual_distribution(&p_cur, &qc)?;
            }
            q_cur = qc.without(x);
        }
        match accepted {
            Some(c) => {
                walk.push(c);
                cur = c;
            }
            None => {
                let dist = match rule {
                    CorrectionRule::Residual => p_cur,
                    CorrectionRule::ElementwiseMax => elementwise_max(&p, q)?,
                };
                break dist.sample(rng.uniform());
            }
        }
    };
    let mut flags = vec![false; tree.len()];
    for &w in &walk {
        flags[w] = true;
    }
    let accepted_nodes = longest_accepted_path(tree, &flags);
    debug_assert_eq!(accepted_nodes, walk);
    let last = accepted_nodes.last().copied().unwrap_or(0);
    Ok(VerifyOutcome {
        accepted_tokens: accepted_nodes.iter().map(|&i| tree.node(i).token).collect(),
        accepted_nodes,
        correction_token: correction,
        next_feature: target_out.features.row(last).to_vec(),
        nodes_verified: tree.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    pub max_new: usize,
    pub temperature: f64,
    pub seed: u64,
    pub draft: DraftConfig,
    pub correction: CorrectionRule,
    /// Generation stops after emitting this token.
    pub eot: Option<u32>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_new: 64,
            temperature: 0.0,
            seed: 0,
            draft: DraftConfig::default(),
            correction: CorrectionRule::Residual,
            eot: None,
        }
    }
}

impl GenerateOptions {
    fn validate(&self, prompt: &[u32]) -> Result<()> {
        if prompt.is_empty() {
            return Err(Error::arg("prompt must not be empty"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::arg(format!("temperature {} must be finite and non-negative", self.temperature)));
        }
        self.draft.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub stats: GenStats,
}

/// Appends `new` to `out`, stopping at the budget or end-of-text. Returns
/// true when generation should stop.
fn emit(out: &mut Vec<u32>, new: &[u32], opts: &GenerateOptions) -> bool {
    for &t in new {
        if out.len() == opts.max_new {
            return true;
        }
        out.push(t);
        if Some(t) == opts.eot {
            return true;
        }
    }
    out.len() == opts.max_new
}

/// Runs the prefix pass: every prompt token but the last enters the cache.
fn prefix<M: TargetModel>(target: &M, prompt: &[u32], cache: &mut M::Cache) -> Result<ForwardResult> {
    if prompt.len() > target.context_limit() {
        return Err(Error::Capacity { needed: prompt.len(), limit: target.context_limit() });
    }
    target.forward(&prompt[..prompt.len() - 1], cache, None)
}

/// Draft-then-verify decoding.
pub fn generate<M: TargetModel, D: Drafter>(
    target: &M,
    drafter: &D,
    prompt: &[u32],
    opts: &GenerateOptions,
) -> Result<Generation> {
    opts.validate(prompt)?;
    let start = Instant::now();
    let base_rng = Rng::new(opts.seed);
    let mut stats = GenStats { target_forward_calls: 1, ..GenStats::default() };
    let mut cache = target.new_cache();
    let pre = prefix(target, prompt, &mut cache)?;
    let mut feature = if pre.is_empty() { Vec::new() } else { pre.features.row(pre.len() - 1).to_vec() };
    let mut history = prompt.to_vec();
    let mut out = Vec::with_capacity(opts.max_new);
    let mut round = 0u64;
    while out.len() < opts.max_new {
        let base = target.cache_len(&cache);
        let room = target.context_limit().saturating_sub(base);
        if room == 0 {
            return Err(Error::Capacity { needed: base + 1, limit: target.context_limit() });
        }
        let ctx = RoundContext {
            history: &history,
            feature: &feature,
            max_depth: (opts.max_new - out.len() - 1).min(room - 1),
        };
        let tree = drafter.draft_round(&ctx, &opts.draft, opts.temperature, &mut base_rng.fork(2 * round))?;
        stats.draft_forward_calls += tree.draft_calls;
        stats.peak_extra_bytes = stats.peak_extra_bytes.max(drafter.weight_bytes() + tree.approx_bytes());

        let flat = flatten(&tree, base)?;
        let result = target.forward(
            &flat.tokens,
            &mut cache,
            Some(TreeInput { mask: &flat.mask, positions: &flat.positions }),
        )?;
        stats.target_forward_calls += 1;
        let outcome = verify_round(&tree, &result, &mut base_rng.fork(2 * round + 1), opts.temperature, opts.correction)?;
        let keep: Vec<usize> = std::iter::once(0).chain(outcome.accepted_nodes.iter().copied()).collect();
        target.commit(&mut cache, base, &keep);
        stats.record_round(outcome.accepted_len());

        let mut new = outcome.accepted_tokens.clone();
        new.push(outcome.correction_token);
        let before = out.len();
        let done = emit(&mut out, &new, opts);
        stats.tokens_emitted += out.len() - before;
        history.extend_from_slice(&new);
        feature = outcome.next_feature;
        round += 1;
        if done {
            break;
        }
    }
    stats.wall_time_ns = start.elapsed().as_nanos() as u64;
    Ok(Generation { tokens: out, stats })
}

/// Token-by-token decoding with the target alone.
pub fn plain_generate<M: TargetModel>(target: &M, prompt: &[u32], opts: &GenerateOptions) -> Result<Generation> {
    opts.validate(prompt)?;
    let start = Instant::now();
    let base_rng = Rng::new(opts.seed);
    let mut stats = GenStats::default();
    let mut cache = target.new_cache();
    let mut out = Vec::with_capacity(opts.max_new);
    let mut feed = prompt.to_vec();
    let mut step = 0u64;
    while out.len() < opts.max_new {
        let res = target.forward(&feed, &mut cache, None)?;
        stats.target_forward_calls += 1;
        let logits = res.logits.row(res.len() - 1);
        let t = if opts.temperature == 0.0 {
            argmax(logits) as u32
        } else {
            softmax(logits, opts.temperature)?.sample(base_rng.fork(step).uniform())
        };
        stats.record_round(0);
        stats.tokens_emitted += 1;
        step += 1;
        if emit(&mut out, &[t], opts) {
            break;
        }
        feed = vec![t];
    }
    stats.wall_time_ns = start.elapsed().as_nanos() as u64;
    Ok(Generation { tokens: out, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Backend, ModelSpec, Transformer};
    use crate::tree::NodeKind;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn accept_token_examples() {
        for u in [0.0, 0.5, 0.999] {
            assert!(accept_token(0.3, 0.3, u).unwrap());
            assert!(accept_token(0.9, 0.3, u).unwrap());
        }
        assert!(accept_token(0.2, 0.5, 0.39).unwrap());
        assert!(!accept_token(0.2, 0.5, 0.41).unwrap());
        assert!(matches!(accept_token(0.2, 0.0, 0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual_distribution(&pd(&[0.5, 0.5]), &pd(&[1.0, 0.0])).unwrap(), pd(&[0.0, 1.0]));
        assert_eq!(residual_distribution(&pd(&[0.3, 0.7]), &pd(&[0.3, 0.7])).unwrap(), pd(&[0.3, 0.7]));
        let r = residual_distribution(&pd(&[0.7, 0.3]), &pd(&[0.5, 0.5])).unwrap();
        assert!((r.prob(0) - 1.0).abs() < 1e-12 && r.prob(1) == 0.0);
    }

    #[test]
    fn exact_step_examples() {
        let out = exact_step_distribution(&pd(&[0.7, 0.3]), &pd(&[0.5, 0.5]), CorrectionRule::Residual).unwrap();
        assert!((out.prob(0) - 0.7).abs() < 1e-12 && (out.prob(1) - 0.3).abs() < 1e-12);
        let same = pd(&[0.2, 0.3, 0.5]);
        assert_eq!(exact_step_distribution(&same, &same, CorrectionRule::Residual).unwrap(), same);
        let abl = exact_step_distribution(&pd(&[0.7, 0.3]), &pd(&[0.5, 0.5]), CorrectionRule::ElementwiseMax).unwrap();
        assert!((abl.prob(0) - 0.7).abs() > 1e-3);
    }

    #[test]
    fn exact_step_is_lossless_on_random_pairs() {
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            let v = 2 + rng.below(7);
            let t = TabularModel::random(v, &mut rng, 0.3).unwrap();
            let d = TabularModel::random(v, &mut rng, 0.3).unwrap();
            let ctx = [rng.below(v) as u32];
            let out = exact_output_distribution(&t, &d, &ctx, CorrectionRule::Residual).unwrap();
            let p = t.next_dist(&ctx).unwrap();
            for (a, b) in out.probs().iter().zip(p.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequential_multi_candidate_verification_is_lossless() {
        let mut rng = Rng::new(12);
        for _ in 0..300 {
            let v = 2 + rng.below(5);
            let p = crate::model::random_dist(v, &mut rng, 0.3);
            let q = crate::model::random_dist(v, &mut rng, 0.3);
            for k in 1..=3 {
                let law = exact_sibling_distribution(&p, &q, k, CorrectionRule::Residual).unwrap();
                let law = law.probs();
                for (a, b) in law.iter().zip(p.probs()) {
                    assert!((a - b).abs() < 1e-12, "k={k}: {law:?} vs {p:?}");
                }
            }
        }
    }

    #[test]
    fn elementwise_max_sibling_law_is_a_distribution_but_biased() {
        let (p, q) = (pd(&[0.7, 0.2, 0.1]), pd(&[0.2, 0.3, 0.5]));
        for k in 1..=3 {
            let law = exact_sibling_distribution(&p, &q, k, CorrectionRule::ElementwiseMax).unwrap();
            assert!((law.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let l1: f64 = law.probs().iter().zip(p.probs()).map(|(a, b)| (a - b).abs()).sum();
            assert!(l1 > 1e-3, "k={k}");
        }
    }

    fn tiny_spec() -> ModelSpec {
        ModelSpec { vocab_size: 20, hidden_dim: 8, n_layers: 2, n_heads: 2, context_limit: 96, backend: Backend::Transformer }
    }

    #[test]
    fn identical_draft_accepts_full_depth() {
        let mut rng = Rng::new(3);
        let m = TabularModel::random(6, &mut rng, 0.2).unwrap();
        let opts = GenerateOptions { max_new: 70, temperature: 1.0, seed: 5, ..Default::default() };
        let g = generate(&m, &m, &[1], &opts).unwrap();
        assert_eq!(g.tokens.len(), 70);
        assert_eq!(g.stats.accepted_lengths[&6], 10);
        assert_eq!(g.stats.tokens_emitted, 70);
        assert_eq!(g.stats.rounds, 10);
        assert_eq!(g.stats.target_forward_calls, 11);
    }

    #[test]
    fn chain_draft_matches_target() {
        let m = TabularModel::chain(9, |t| (t + 2) % 9).unwrap();
        let opts = GenerateOptions { max_new: 35, ..Default::default() };
        let g = generate(&m, &m, &[0], &opts).unwrap();
        assert_eq!(g.stats.tokens_emitted as f64 / g.stats.rounds as f64, 7.0);
        let expect: Vec<u32> = (1..=35).map(|i| (2 * i % 9) as u32).collect();
        assert_eq!(g.tokens, expect);
    }

    #[test]
    fn zero_probability_drafts_are_rejected_immediately() {
        let target = TabularModel::chain(4, |_| 0).unwrap();
        let draft = TabularModel::chain(4, |_| 3).unwrap();
        let mut tree = DraftTree::new(1);
        tree.push(3, 0, 1.0, NodeKind::VerticalTop1, None).unwrap();
        tree.set_proposal(0, ProbDist::one_hot(4, 3));
        let mut cache = target.new_cache();
        let flat = flatten(&tree, 0).unwrap();
        let out = target
            .forward(&flat.tokens, &mut cache, Some(TreeInput { mask: &flat.mask, positions: &flat.positions }))
            .unwrap();
        let v = verify_round(&tree, &out, &mut Rng::new(0), 1.0, CorrectionRule::Residual).unwrap();
        assert_eq!(v.accepted_len(), 0);
        assert_eq!(v.correction_token, 0);
        let g = generate(&target, &draft, &[1], &GenerateOptions { max_new: 10, temperature: 1.0, ..Default::default() })
            .unwrap();
        assert_eq!(g.stats.accepted_lengths.get(&0), Some(&10));
        assert!(g.tokens.iter().all(|&t| t == 0));
    }

    #[test]
    fn greedy_matches_plain_decoding_on_random_transformers() {
        for seed in 0..4 {
            let target = Transformer::random(tiny_spec(), seed).unwrap();
            let dw = crate::draft::DraftWeights::init(target.spec(), &DraftConfig::default(), &mut Rng::new(seed + 10))
                .unwrap();
            let drafter = crate::draft::NeuralDrafter::new(&target, &dw).unwrap();
            let before = target.checksum();
            for p in 0..3u32 {
                let prompt: Vec<u32> = (0..(p + 1)).map(|i| (i * 5 + seed as u32) % 20).collect();
                let opts = GenerateOptions { max_new: 40, ..Default::default() };
                let s = generate(&target, &drafter, &prompt, &opts).unwrap();
                let b = plain_generate(&target, &prompt, &opts).unwrap();
                assert_eq!(s.tokens, b.tokens);
                assert_eq!(s.stats.target_forward_calls, s.stats.rounds + 1);
                assert_eq!(s.stats.accepted_lengths.values().sum::<usize>(), s.stats.rounds);
            }
            assert_eq!(target.checksum(), before);
        }
    }

    #[test]
    fn single_token_generation_matches_a_single_step() {
        let target = Transformer::random(tiny_spec(), 1).unwrap();
        let dw = crate::draft::DraftWeights::init(target.spec(), &DraftConfig::default(), &mut Rng::new(2)).unwrap();
        let drafter = crate::draft::NeuralDrafter::new(&target, &dw).unwrap();
        let opts = GenerateOptions { max_new: 1, ..Default::default() };
        let s = generate(&target, &drafter, &[3, 4, 5], &opts).unwrap();
        let b = plain_generate(&target, &[3, 4, 5], &opts).unwrap();
        assert_eq!(s.tokens.len(), 1);
        assert_eq!(s.tokens, b.tokens);
        assert_eq!(s.stats.draft_forward_calls, 0);
    }

    #[test]
    fn end_of_text_stops_generation() {
        let m = TabularModel::chain(5, |t| if t == 3 { 0 } else { (t + 1) % 5 }).unwrap();
        let opts = GenerateOptions { max_new: 50, eot: Some(0), ..Default::default() };
        let g = generate(&m, &m, &[1], &opts).unwrap();
        assert_eq!(g.tokens, vec![2, 3, 0]);
        assert_eq!(plain_generate(&m, &[1], &opts).unwrap().tokens, vec![2, 3, 0]);
    }

    #[test]
    fn capacity_errors_propagate() {
        let target = Transformer::random(tiny_spec(), 1).unwrap();
        let dw = crate::draft::DraftWeights::init(target.spec(), &DraftConfig::default(), &mut Rng::new(2)).unwrap();
        let drafter = crate::draft::NeuralDrafter::new(&target, &dw).unwrap();
        let prompt = vec![1u32; 90];
        let opts = GenerateOptions { max_new: 20, ..Default::default() };
        assert!(matches!(generate(&target, &drafter, &prompt, &opts), Err(Error::Capacity { .. })));
        assert!(matches!(plain_generate(&target, &prompt, &opts), Err(Error::Capacity { .. })));
        let long = vec![1u32; 97];
        assert!(matches!(generate(&target, &drafter, &long, &opts), Err(Error::Capacity { .. })));
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let mut rng = Rng::new(8);
        let t = TabularModel::random(7, &mut rng, 0.2).unwrap();
        let d = TabularModel::random(7, &mut rng, 0.2).unwrap();
        let opts = GenerateOptions { max_new: 40, temperature: 0.8, seed: 99, ..Default::default() };
        let a = generate(&t, &d, &[2], &opts).unwrap();
        let b = generate(&t, &d, &[2], &opts).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert!(a.stats.eq_ignoring_time(&b.stats));
    }

    proptest! {
        #[test]
        fn every_round_makes_progress(seed in 0u64..1000, t in 0.0f64..1.5) {
            let mut rng = Rng::new(seed);
            let target = TabularModel::random(5, &mut rng, 0.4).unwrap();
            let draft = TabularModel::random(5, &mut rng, 0.4).unwrap();
            let opts = GenerateOptions { max_new: 25, temperature: t, seed, ..Default::default() };
            let g = generate(&target, &draft, &[0], &opts).unwrap();
            prop_assert_eq!(g.tokens.len(), 25);
            prop_assert!(g.stats.rounds <= 25);
            prop_assert!(g.stats.accepted_lengths.keys().all(|&k| k <= 6));
            prop_assert!(g.stats.mean_accepted().unwrap() >= 1.0);
        }
    }

    #[test]
    fn multi_step_output_matches_target_law() {
        // Target and draft tables over 3 tokens; enumerate all 2-token
        // continuations and compare the empirical law.
        let mut rng = Rng::new(21);
        let target = TabularModel::random(3, &mut rng, 0.2).unwrap();
        let draft = TabularModel::random(3, &mut rng, 0.2).unwrap();
        let n = 40_000;
        let mut counts = vec![0usize; 9];
        for s in 0..n {
            let opts = GenerateOptions { max_new: 2, temperature: 1.0, seed: s, ..Default::default() };
            let g = generate(&target, &draft, &[1], &opts).unwrap();
            counts[(g.tokens[0] * 3 + g.tokens[1]) as usize] += 1;
        }
        let mut tv = 0.0;
        for a in 0..3u32 {
            for b in 0..3u32 {
                let p = target.next_dist(&[1]).unwrap().prob(a) * target.next_dist(&[a]).unwrap().prob(b);
                tv += (counts[(a * 3 + b) as usize] as f64 / n as f64 - p).abs();
            }
        }
        assert!(tv / 2.0 < 0.015, "tv {tv}");
    }
}

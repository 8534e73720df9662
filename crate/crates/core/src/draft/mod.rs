//! Multi-head drafting.
//!
//! A round grows a candidate tree from the pending token `t0` and the target
//! feature `f0` that predicted it. Drafting steps are numbered from 1; step
//! `s` runs head `(s - 1) / tokens_per_head` and yields the distribution for
//! depth `s`. The first `head1_branches` candidates at depth 1 each grow a
//! vertical chain down to the maximum depth. Every vertical node also gets
//! horizontal leaf siblings so that each position offers up to
//! `horizontal_top_k` candidates.

mod neural;
mod tabular;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{rank_desc, softmax, ProbDist};
use crate::rng::Rng;
use crate::tree::{DraftTree, NodeKind};

pub use neural::{draft_head_forward, fuse, DraftCandidate, DraftWeights, HeadWeights, NeuralDrafter};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftConfig {
    pub n_heads: usize,
    pub tokens_per_head: usize,
    pub head1_branches: usize,
    pub horizontal_top_k: usize,
    pub draft_layers_per_head: usize,
}

impl Default for DraftConfig {
    fn default() -> Self {
        Self {
            n_heads: 3,
            tokens_per_head: 2,
            head1_branches: 2,
            horizontal_top_k: 3,
            draft_layers_per_head: 1,
        }
    }
}

impl DraftConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_heads", self.n_heads),
            ("tokens_per_head", self.tokens_per_head),
            ("head1_branches", self.head1_branches),
            ("horizontal_top_k", self.horizontal_top_k),
            ("draft_layers_per_head", self.draft_layers_per_head),
        ] {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Longest root path a round can draft.
    pub fn max_depth(&self) -> usize {
        self.n_heads * self.tokens_per_head
    }

    /// Head that runs drafting step `step` (1-based).
    pub fn head_for_step(&self, step: usize) -> usize {
        (step - 1) / self.tokens_per_head
    }

    /// Node count of a full tree over a vocabulary large enough to never run
    /// out of candidates.
    pub fn full_tree_size(&self) -> usize {
        let d = self.max_depth();
        let first = self.head1_branches.max(self.horizontal_top_k);
        1 + first + self.head1_branches * (d - 1) * self.horizontal_top_k
    }
}

/// What a drafter sees at the start of a round.
#[derive(Clone, Copy, Debug)]
pub struct RoundContext<'a> {
    /// Every token so far, ending with the pending token `t0`.
    pub history: &'a [u32],
    /// Target feature that produced `t0`; empty for featureless targets.
    pub feature: &'a [f64],
    /// Depth cap for this round, at most [`DraftConfig::max_depth`].
    pub max_depth: usize,
}

impl RoundContext<'_> {
    pub fn pending(&self) -> u32 {
        *self.history.last().expect("history holds the pending token")
    }
}

/// Anything that can propose a candidate tree for one round.
pub trait Drafter {
    fn draft_round(
        &self,
        ctx: &RoundContext<'_>,
        cfg: &DraftConfig,
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<DraftTree>;

    /// Bytes of draft-side parameters kept resident.
    fn weight_bytes(&self) -> usize;
}

/// One drafting step producing child states from a parent state.
pub(crate) trait Stepper {
    type State;

    /// Step 1: consumes the pending token and returns the state whose logits
    /// score depth 1.
    fn root(&mut self) -> Result<Self::State>;

    /// Feeds `tokens` (children at `depth` of the node owning `parent`) in
    /// parallel and returns one state per token, each scoring `depth + 1`.
    fn step(&mut self, parent: &Self::State, tokens: &[u32], depth: usize) -> Result<Vec<Self::State>>;

    fn logits<'s>(&self, state: &'s Self::State) -> &'s [f64];

    fn feature(&self, state: &Self::State) -> Option<Vec<f64>>;

    fn calls(&self) -> usize;
}

/// Candidate tokens at one node plus the distribution they came from.
struct Choice {
    tokens: Vec<u32>,
    probs: Vec<f64>,
    proposal: ProbDist,
}

/// At `T = 0` the candidates are the top-ranked logits and carry their
/// unit-temperature probabilities. Above zero they are drawn from the
/// tempered distribution without replacement.
fn choose(logits: &[f64], temperature: f64, k: usize, rng: &mut Rng) -> Result<Choice> {
    if temperature == 0.0 {
        let proposal = softmax(logits, 1.0)?;
        let tokens: Vec<u32> = rank_desc(logits, k)
            .into_iter()
            .filter(|&i| proposal.probs()[i] > 0.0)
            .map(|i| i as u32)
            .collect();
        let probs = tokens.iter().map(|&t| proposal.prob(t)).collect();
        return Ok(Choice { tokens, probs, proposal });
    }
    let proposal = softmax(logits, temperature)?;
    let mut tokens = Vec::with_capacity(k);
    let mut remaining = Some(proposal.clone());
    while tokens.len() < k {
        let Some(q) = remaining else { break };
        let t = q.sample(rng.uniform());
        tokens.push(t);
        remaining = q.without(t);
    }
    let probs = tokens.iter().map(|&t| proposal.prob(t)).collect();
    Ok(Choice { tokens, probs, proposal })
}

fn attach(
    tree: &mut DraftTree,
    parent: usize,
    choice: &Choice,
    vertical: usize,
    source: Option<usize>,
) -> Result<Vec<usize>> {
    let mut verticals = Vec::new();
    for (i, (&t, &p)) in choice.tokens.iter().zip(&choice.probs).enumerate() {
        let kind = if i < vertical { NodeKind::VerticalTop1 } else { NodeKind::HorizontalAlt };
        let idx = tree.push(t, parent, p, kind, source)?;
        if i < vertical {
            verticals.push(idx);
        }
    }
    tree.set_proposal(parent, choice.proposal.clone());
    Ok(verticals)
}

/// Grows the round's tree using `stepper` for every drafting step.
pub(crate) fn build_tree<S: Stepper>(
    stepper: &mut S,
    root_token: u32,
    cfg: &DraftConfig,
    temperature: f64,
    max_depth: usize,
    rng: &mut Rng,
) -> Result<DraftTree> {
    cfg.validate()?;
    if temperature < 0.0 || !temperature.is_finite() {
        return Err(Error::arg(format!("temperature {temperature} must be finite and non-negative")));
    }
    let max_depth = max_depth.min(cfg.max_depth());
    let mut tree = DraftTree::new(root_token);
    if max_depth == 0 {
        return Ok(tree);
    }
    let root = stepper.root()?;
    let source = stepper.feature(&root).map(|f| tree.add_feature(f));
    let width = cfg.head1_branches.max(cfg.horizontal_top_k);
    let choice = choose(stepper.logits(&root), temperature, width, rng)?;
    let branches = attach(&mut tree, 0, &choice, cfg.head1_branches, source)?;
    if max_depth > 1 && !branches.is_empty() {
        let tokens: Vec<u32> = branches.iter().map(|&b| tree.node(b).token).collect();
        let states = stepper.step(&root, &tokens, 1)?;
        for (mut node, mut state) in branches.into_iter().zip(states) {
            for depth in 1..max_depth {
                let source = stepper.feature(&state).map(|f| tree.add_feature(f));
                let choice = choose(stepper.logits(&state), temperature, cfg.horizontal_top_k, rng)?;
                let next = attach(&mut tree, node, &choice, 1, source)?;
                let Some(&v) = next.first() else { break };
                node = v;
                if depth + 1 < max_depth {
                    state = stepper.step(&state, &[tree.node(v).token], depth + 1)?.pop().expect("one state");
                }
            }
        }
    }
    tree.draft_calls = stepper.calls();
    Ok(tree)
}

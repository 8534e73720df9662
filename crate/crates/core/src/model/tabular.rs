use std::collections::BTreeMap;

use super::{check_tree_input, ForwardResult, TargetModel, TreeInput};
use crate::error::{Error, Result};
use crate::math::{Matrix, ProbDist};
use crate::rng::Rng;

/// Logit used for zero-probability entries. Finite, but far enough below any
/// real log-probability that softmax maps it to exactly zero.
pub const LOG_ZERO: f64 = -1e30;

/// Exact n-gram conditional table.
///
/// The distribution after a context is looked up under its last `order`
/// tokens; shorter contexts (near the start of a sequence) use however many
/// tokens exist, and `fallback` covers any key the table lacks.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    vocab: usize,
    order: usize,
    table: BTreeMap<Vec<u32>, ProbDist>,
    fallback: Option<ProbDist>,
}

/// Conditional distribution after `context`, read straight from the table.
pub fn tabular_next_dist(context: &[u32], table: &TabularModel) -> Result<ProbDist> {
    table.next_dist(context).cloned()
}

impl TabularModel {
    pub fn new(vocab: usize, order: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::arg("vocab must be at least 2"));
        }
        Ok(Self { vocab, order, table: BTreeMap::new(), fallback: None })
    }

    pub fn with_row(mut self, context: &[u32], dist: ProbDist) -> Result<Self> {
        self.insert(context, dist)?;
        Ok(self)
    }

    pub fn with_fallback(mut self, dist: ProbDist) -> Result<Self> {
        if dist.len() != self.vocab {
            return Err(Error::shape("fallback row width"));
        }
        self.fallback = Some(dist);
        Ok(self)
    }

    pub fn insert(&mut self, context: &[u32], dist: ProbDist) -> Result<()> {
        if dist.len() != self.vocab {
            return Err(Error::shape(format!("row of {} entries for vocab {}", dist.len(), self.vocab)));
        }
        if context.len() > self.order {
            return Err(Error::arg("context longer than the table order"));
        }
        self.table.insert(context.to_vec(), dist);
        Ok(())
    }

    /// Every context maps to the uniform distribution.
    pub fn uniform(vocab: usize) -> Result<Self> {
        Self::new(vocab, 0)?.with_fallback(ProbDist::uniform(vocab))
    }

    /// First-order table sending each token to `successor(token)` with
    /// probability one.
    pub fn chain(vocab: usize, successor: impl Fn(u32) -> u32) -> Result<Self> {
        let mut m = Self::new(vocab, 1)?;
        for t in 0..vocab as u32 {
            m.insert(&[t], ProbDist::one_hot(vocab, successor(t) as usize))?;
        }
        m.fallback = Some(ProbDist::one_hot(vocab, successor(0) as usize));
        Ok(m)
    }

    /// First-order table with random rows. Each entry is zeroed with
    /// probability `zero_frac` (one entry per row always survives).
    pub fn random(vocab: usize, rng: &mut Rng, zero_frac: f64) -> Result<Self> {
        let mut m = Self::new(vocab, 1)?;
        for t in 0..vocab as u32 {
            m.insert(&[t], random_dist(vocab, rng, zero_frac))?;
        }
        m.fallback = Some(random_dist(vocab, rng, zero_frac));
        Ok(m)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn next_dist(&self, context: &[u32]) -> Result<&ProbDist> {
        let key = &context[context.len().saturating_sub(self.order)..];
        self.table
            .get(key)
            .or(self.fallback.as_ref())
            .ok_or_else(|| Error::Model(format!("no table entry for context {key:?}")))
    }

    /// Log-probabilities with [`LOG_ZERO`] standing in for `ln 0`.
    pub fn next_logits(&self, context: &[u32]) -> Result<Vec<f64>> {
        Ok(self
            .next_dist(context)?
            .probs()
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { LOG_ZERO })
            .collect())
    }
}

/// Random distribution; entries zeroed with probability `zero_frac`.
pub fn random_dist(vocab: usize, rng: &mut Rng, zero_frac: f64) -> ProbDist {
    let keep = rng.below(vocab);
    let w: Vec<f64> = (0..vocab)
        .map(|i| {
            let x = -(1.0 - rng.uniform()).ln();
            if i != keep && rng.uniform() < zero_frac {
                0.0
            } else {
                x
            }
        })
        .collect();
    ProbDist::from_weights(w).expect("one entry kept")
}

/// Token history standing in for a KV cache.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenCache {
    tokens: Vec<u32>,
}

impl TokenCache {
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

impl TargetModel for TabularModel {
    type Cache = TokenCache;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn context_limit(&self) -> usize {
        usize::MAX
    }

    fn feature_dim(&self) -> usize {
        0
    }

    fn new_cache(&self) -> TokenCache {
        TokenCache::default()
    }

    fn cache_len(&self, cache: &TokenCache) -> usize {
        cache.tokens.len()
    }

    fn forward(
        &self,
        tokens: &[u32],
        cache: &mut TokenCache,
        tree: Option<TreeInput<'_>>,
    ) -> Result<ForwardResult> {
        let n = tokens.len();
        check_tree_input(n, &tree)?;
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(Error::arg(format!("token {bad} outside vocab {}", self.vocab)));
        }
        let mut logits = Matrix::zeros(n, self.vocab);
        let mut ctx = Vec::new();
        for i in 0..n {
            ctx.clear();
            ctx.extend_from_slice(&cache.tokens);
            match tree {
                Some(t) => ctx.extend(t.mask.visible(i).map(|j| tokens[j])),
                None => ctx.extend_from_slice(&tokens[..=i]),
            }
            logits.row_mut(i).copy_from_slice(&self.next_logits(&ctx)?);
        }
        cache.tokens.extend_from_slice(tokens);
        Ok(ForwardResult { features: Matrix::zeros(n, 0), logits })
    }

    fn commit(&self, cache: &mut TokenCache, base: usize, keep: &[usize]) {
        let kept: Vec<u32> = keep.iter().map(|&k| cache.tokens[base + k]).collect();
        cache.tokens.truncate(base);
        cache.tokens.extend(kept);
    }
}

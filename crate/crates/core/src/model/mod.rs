//! Target-model backends.
//!
//! Two backends share the [`TargetModel`] interface: a small decoder-only
//! transformer with a KV cache, and an exact conditional table used wherever
//! a closed-form distribution is needed.

pub mod io;
mod tabular;
pub(crate) mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::tree::TreeMask;

pub use tabular::{random_dist, tabular_next_dist, TabularModel, TokenCache, LOG_ZERO};
pub use transformer::{BlockWeights, KVCache, LayerKV, Transformer, TransformerWeights, RMS_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Transformer,
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_limit: usize,
    pub backend: Backend,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            hidden_dim: 64,
            n_layers: 2,
            n_heads: 4,
            context_limit: 512,
            backend: Backend::Transformer,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::arg("vocab_size must be at least 2"));
        }
        if self.context_limit < 1 {
            return Err(Error::arg("context_limit must be at least 1"));
        }
        if self.backend == Backend::Transformer
            && (self.n_heads == 0 || self.hidden_dim == 0 || self.hidden_dim % self.n_heads != 0)
        {
            return Err(Error::arg(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        Ok(())
    }

    /// Hidden width of the feed-forward block.
    pub fn mlp_dim(&self) -> usize {
        4 * self.hidden_dim
    }
}

/// Output of a target pass: one row per newly fed token.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    /// Final-normalised hidden states; the LM head maps them linearly to logits.
    pub features: Matrix,
    pub logits: Matrix,
}

impl ForwardResult {
    pub fn empty(hidden: usize, vocab: usize) -> Self {
        Self { features: Matrix::zeros(0, hidden), logits: Matrix::zeros(0, vocab) }
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }
}

/// Tree layout for a masked pass: visibility among the new tokens and their
/// position ids. Cached positions are always visible.
#[derive(Clone, Copy, Debug)]
pub struct TreeInput<'a> {
    pub mask: &'a TreeMask,
    pub positions: &'a [usize],
}

/// A frozen model that can score new tokens on top of a cache.
pub trait TargetModel {
    type Cache: Clone;

    fn vocab_size(&self) -> usize;
    fn context_limit(&self) -> usize;
    /// Width of [`ForwardResult::features`]; zero for backends without features.
    fn feature_dim(&self) -> usize;
    fn new_cache(&self) -> Self::Cache;
    fn cache_len(&self, cache: &Self::Cache) -> usize;

    /// Feeds `tokens` after the cached positions. Without a tree the new
    /// tokens are causal and take consecutive positions.
    fn forward(
        &self,
        tokens: &[u32],
        cache: &mut Self::Cache,
        tree: Option<TreeInput<'_>>,
    ) -> Result<ForwardResult>;

    /// Keeps the first `base` cached entries plus the entries fed at
    /// `base + keep[i]`, in that order, and drops everything else.
    fn commit(&self, cache: &mut Self::Cache, base: usize, keep: &[usize]);
}

pub(crate) fn check_tree_input(n: usize, tree: &Option<TreeInput<'_>>) -> Result<()> {
    if let Some(t) = tree {
        if t.mask.size() != n || t.positions.len() != n {
            return Err(Error::shape(format!(
                "tree mask {} / positions {} for {} tokens",
                t.mask.size(),
                t.positions.len(),
                n
            )));
        }
    }
    Ok(())
}

//! Fixtures shared by the criterion benchmarks.

use s4c_core::bench::mixed_corpus;
use s4c_core::model::{Backend, Transformer};
use s4c_core::{DraftConfig, DraftWeights, ModelSpec, Rng};

/// Untrained target and draft at the default benchmark shape.
pub fn random_pair(seed: u64) -> (Transformer, DraftWeights) {
    let spec = ModelSpec { vocab_size: 256, hidden_dim: 32, n_layers: 2, n_heads: 4, context_limit: 256, backend: Backend::Transformer };
    let target = Transformer::random(spec, seed).expect("valid spec");
    let draft = DraftWeights::init(target.spec(), &DraftConfig::default(), &mut Rng::new(seed + 1)).expect("valid config");
    (target, draft)
}

/// Byte prompt of `len` tokens from the synthetic corpus.
pub fn prompt(len: usize) -> Vec<u32> {
    mixed_corpus(len, 0).into_iter().map(u32::from).collect()
}

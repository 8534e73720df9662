//! Speculative decoding with multi-head autoregressive drafting and a
//! continuous verification tree.

pub mod bench;
pub mod draft;
pub mod error;
pub mod math;
pub mod model;
pub mod rng;
pub mod tape;
pub mod train;
pub mod tree;
pub mod verify;

pub use draft::{DraftConfig, DraftWeights, Drafter, NeuralDrafter, RoundContext};
pub use bench::GenStats;
pub use error::{Error, Result};
pub use math::{Matrix, ProbDist};
pub use model::{ForwardResult, ModelSpec, TargetModel, TreeInput};
pub use rng::Rng;
pub use tree::{DraftTree, NodeKind, TreeMask};
pub use verify::{exact_output_distribution, exact_sibling_distribution, generate, plain_generate, CorrectionRule, GenerateOptions, Generation, VerifyOutcome};

//! Measurement: generation counters, derived metrics, synthetic task
//! corpora and the benchmark driver.

mod corpus;
mod metrics;
mod report;
mod stats;
mod suite;

pub use corpus::{mixed_corpus, sample_prompts, task_corpus, TaskKind};
pub use metrics::{efficiency_ratio, measure_speedup, median, median_u64};
pub use report::{canonical_json, render_table, run_benchmark, sig6, BenchReport, Environment, OverallRow, TaskRow};
pub use stats::{mean_accepted, GenStats};
pub use suite::{LoadedTask, Prompts, SuiteConfig, TaskConfig, MIN_REPETITIONS};

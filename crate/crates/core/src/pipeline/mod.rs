//! Source pretraining, the adaptation loop with its baselines, evaluation
//! and convergence diagnostics.

mod bench;
mod config;
mod diagnostics;
mod trace;
mod train;

pub use bench::{build_domains, median, median_accuracy, run_bench, ArmOutcome, ArmResult};
pub use config::{
    AdaptConfig, DataKind, DataSection, HccdSection, HcidSection, HistorySection, Method,
    ModelConfig, OptimSection, RunSection,
};
pub use diagnostics::{em_diagnostics, EmReport};
pub use trace::{EpochRecord, MetricsTrace, TRACE_COLUMNS};
pub use train::{
    adapt, adapt_with, derive_seed, evaluate, initial_objective, pretrain_source, AdaptOutcome,
    BatchTerms, Evaluation, RunResult,
};

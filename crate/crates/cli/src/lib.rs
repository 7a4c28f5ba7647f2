//! Library side of the `hcl` command: config parsing and the subcommands,
//! kept here so they can be driven from tests.

mod bench;
mod commands;
mod config;
mod error;
mod gradcheck;
mod report;

pub use bench::{cmd_bench, median_table, BenchReport, RESULTS_FILE, SUMMARY_FILE, TRACES_FILE};
pub use commands::{
    cmd_adapt, cmd_eval, cmd_pretrain, run_seed, AdaptSummary, PretrainSummary, ADAPTED_CKPT,
    SOURCE_CKPT,
};
pub use config::{parse_config, parse_config_str};
pub use error::{CliError, CliResult};
pub use gradcheck::{gradcheck_suite, gradcheck_table, GradCheckRow, GRADCHECK_EPS, GRADCHECK_TOL};
pub use report::{cmd_report, ReportFiles, ACCURACY_SVG, LOSS_SVG};

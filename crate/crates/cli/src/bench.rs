//! The `bench` subcommand: every method over every seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hcl_core::pipeline::{
    median, run_bench, AdaptConfig, ArmOutcome, Method, MetricsTrace, TRACE_COLUMNS,
};
use hcl_core::Execution;

use crate::error::{CliError, CliResult};

pub const RESULTS_FILE: &str = "results.csv";
pub const TRACES_FILE: &str = "traces.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug)]
pub struct BenchReport {
    pub arms: Vec<ArmOutcome>,
    pub failed: usize,
    pub summary: String,
    pub results_path: PathBuf,
    pub traces_path: PathBuf,
}

impl BenchReport {
    pub fn median_accuracy(&self, method: Method) -> Option<f64> {
        hcl_core::pipeline::median_accuracy(&self.arms, method)
    }
}

/// Runs the requested methods (all of them when `methods` is empty) over
/// `cfg.run.seeds` and writes results, traces and a median table to `out`.
///
/// Failed arms are kept in the results file with a `failed` status; the
/// returned report counts them and the caller decides the exit code.
pub fn cmd_bench(
    cfg: &AdaptConfig,
    methods: &[Method],
    out: &Path,
    exec: Execution,
) -> CliResult<BenchReport> {
    let methods = if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods.to_vec()
    };
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let arms = run_bench(cfg, &methods, &cfg.run.seeds, exec)?;

    let results_path = out.join(RESULTS_FILE);
    let mut w = csv::Writer::from_path(&results_path)?;
    w.write_record(["method", "seed", "accuracy", "status"])?;
    for arm in &arms {
        let (acc, status) = match &arm.result {
            Ok(r) => (r.accuracy.to_string(), "ok".to_string()),
            Err(e) => (String::new(), format!("failed: {e}")),
        };
        w.write_record([arm.method.name(), &arm.seed.to_string(), &acc, &status])?;
    }
    w.flush().map_err(|e| CliError::io(&results_path, e))?;

    let traces_path = out.join(TRACES_FILE);
    let mut w = csv::Writer::from_path(&traces_path)?;
    write_trace_header(&mut w)?;
    for arm in &arms {
        if let Ok(r) = &arm.result {
            write_trace_rows(&mut w, arm.method, arm.seed, &r.outcome.result.trace)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&traces_path, e))?;

    let rows: Vec<(Method, Vec<f64>, usize)> = methods_in_order(&methods)
        .into_iter()
        .map(|m| {
            let of_m: Vec<&ArmOutcome> = arms.iter().filter(|a| a.method == m).collect();
            let accs = of_m
                .iter()
                .filter_map(|a| a.result.as_ref().ok().map(|r| r.accuracy))
                .collect();
            (m, accs, of_m.len())
        })
        .collect();
    let summary = median_table(&rows);
    let summary_path = out.join(SUMMARY_FILE);
    fs::write(&summary_path, &summary).map_err(|e| CliError::io(&summary_path, e))?;

    let failed = arms.iter().filter(|a| a.result.is_err()).count();
    Ok(BenchReport {
        arms,
        failed,
        summary,
        results_path,
        traces_path,
    })
}

fn methods_in_order(methods: &[Method]) -> Vec<Method> {
    let mut m = methods.to_vec();
    m.sort();
    m.dedup();
    m
}

pub(crate) fn write_trace_header<W: Write>(w: &mut csv::Writer<W>) -> CliResult<()> {
    let mut header = vec!["method", "seed"];
    header.extend(TRACE_COLUMNS);
    w.write_record(header)?;
    Ok(())
}

pub(crate) fn write_trace_rows<W: Write>(
    w: &mut csv::Writer<W>,
    method: Method,
    seed: u64,
    trace: &MetricsTrace,
) -> CliResult<()> {
    for rec in &trace.records {
        let mut row = vec![method.name().to_string(), seed.to_string()];
        row.extend(rec.csv_cells());
        w.write_record(row)?;
    }
    Ok(())
}

/// Plain-text table of median accuracy per method. `total` counts every
/// arm, successful or not.
pub fn median_table(rows: &[(Method, Vec<f64>, usize)]) -> String {
    let mut s = format!("{:<12} {:>10} {:>7}\n", "method", "median_acc", "seeds");
    for (m, accs, total) in rows {
        let med = median(accs).map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!(
            "{:<12} {:>10} {:>7}\n",
            m.name(),
            med,
            format!("{}/{}", accs.len(), total)
        ));
    }
    s
}

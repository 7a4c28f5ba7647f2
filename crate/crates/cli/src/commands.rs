//! Single-seed subcommands: `pretrain`, `adapt`, `eval`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hcl_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelParams, SnapshotTag};
use hcl_core::pipeline::{
    adapt_with, build_domains, em_diagnostics, evaluate, pretrain_source, AdaptConfig, EmReport,
    Evaluation,
};
use hcl_core::{Execution, HclError};

use crate::bench::{write_trace_header, write_trace_rows};
use crate::error::{CliError, CliResult};

pub const SOURCE_CKPT: &str = "source.json";
pub const ADAPTED_CKPT: &str = "adapted.json";

/// `--seed` if given, else the first configured seed.
pub fn run_seed(cfg: &AdaptConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.run.seeds[0])
}

fn ensure_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize") + "\n";
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub source_accuracy: f64,
}

pub fn cmd_pretrain(cfg: &AdaptConfig, seed: u64, out: &Path) -> CliResult<PretrainSummary> {
    ensure_dir(out)?;
    let (source, _) = build_domains(cfg, seed)?;
    let run = pretrain_source(cfg, &source, seed)?;
    let checkpoint = out.join(SOURCE_CKPT);
    save_checkpoint(
        &run.params,
        CheckpointMeta {
            seed,
            epoch: 0,
            tag: SnapshotTag::SourceInit,
        },
        &checkpoint,
    )?;
    let trace_path = out.join("pretrain_trace.csv");
    let file = File::create(&trace_path).map_err(|e| CliError::io(&trace_path, e))?;
    run.trace.write_csv(&mut BufWriter::new(file))?;
    Ok(PretrainSummary {
        checkpoint,
        source_accuracy: evaluate(&run.params, &source)?.accuracy,
    })
}

fn source_model(cfg: &AdaptConfig, seed: u64, input_dim: usize) -> CliResult<ModelParams> {
    match &cfg.run.source_ckpt {
        Some(path) => {
            let (params, _) = load_checkpoint(path)?;
            if params.input_dim() != input_dim || params.num_classes() != cfg.model.num_classes {
                return Err(HclError::config(
                    "run.source_ckpt",
                    format!(
                        "checkpoint maps {} inputs to {} classes, data needs {input_dim} -> {}",
                        params.input_dim(),
                        params.num_classes(),
                        cfg.model.num_classes
                    ),
                )
                .into());
            }
            Ok(params)
        }
        None => {
            let (source, _) = build_domains(cfg, seed)?;
            Ok(pretrain_source(cfg, &source, seed)?.params)
        }
    }
}

#[derive(Debug)]
pub struct AdaptSummary {
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub accuracy: f64,
    pub diagnostics: EmReport,
    pub snapshots_intact: bool,
}

/// Adapts with `run.method`. The source model comes from `run.source_ckpt`
/// or is pretrained on the spot.
pub fn cmd_adapt(
    cfg: &AdaptConfig,
    seed: u64,
    out: &Path,
    exec: Execution,
) -> CliResult<AdaptSummary> {
    ensure_dir(out)?;
    let (_, target) = build_domains(cfg, seed)?;
    let source = source_model(cfg, seed, target.dim())?;
    let outcome = adapt_with(
        cfg,
        cfg.run.method,
        &source,
        &target.unlabeled(),
        Some(&target),
        seed,
        exec,
    )?;
    let params = &outcome.result.params;
    let checkpoint = out.join(ADAPTED_CKPT);
    save_checkpoint(
        params,
        CheckpointMeta {
            seed,
            epoch: cfg.run.epochs,
            tag: SnapshotTag::Lagged,
        },
        &checkpoint,
    )?;

    let trace = out.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace)?;
    write_trace_header(&mut w)?;
    write_trace_rows(&mut w, cfg.run.method, seed, &outcome.result.trace)?;
    w.flush().map_err(|e| CliError::io(&trace, e))?;

    let accuracy = evaluate(params, &target)?.accuracy;
    let diagnostics = em_diagnostics(&outcome.result.trace, cfg.run.diagnostic_window);
    let mut summary = outcome
        .result
        .trace
        .summary_json(&outcome.result.config_hash);
    summary["method"] = cfg.run.method.name().into();
    summary["seed"] = seed.into();
    summary["weight_hash"] = params.weight_hash().into();
    summary["snapshots_intact"] = outcome.snapshots_intact.into();
    summary["loss_monotone"] = diagnostics.monotone.into();
    write_json(&out.join("summary.json"), &summary)?;

    Ok(AdaptSummary {
        checkpoint,
        trace,
        accuracy,
        diagnostics,
        snapshots_intact: outcome.snapshots_intact,
    })
}

/// Evaluates the checkpoint at `run.checkpoint` on the labeled target
/// domain for `seed`.
pub fn cmd_eval(cfg: &AdaptConfig, seed: u64, out: &Path) -> CliResult<Evaluation> {
    let path = cfg
        .run
        .checkpoint
        .as_ref()
        .ok_or_else(|| HclError::config("run.checkpoint", "set the checkpoint to evaluate"))?;
    let (params, _) = load_checkpoint(path)?;
    let (_, target) = build_domains(cfg, seed)?;
    let eval = evaluate(&params, &target)?;
    ensure_dir(out)?;
    write_json(
        &out.join("eval.json"),
        &serde_json::json!({
            "checkpoint": path.display().to_string(),
            "seed": seed,
            "accuracy": eval.accuracy,
            "per_class": eval.per_class,
        }),
    )?;
    Ok(eval)
}

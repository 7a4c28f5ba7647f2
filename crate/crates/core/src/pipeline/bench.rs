//! Multi-method, multi-seed experiment runner.

use super::config::{AdaptConfig, DataKind, Method};
use super::train::{
    adapt_with, derive_seed, evaluate, pretrain_source, AdaptOutcome, STREAM_SOURCE_DATA,
    STREAM_TARGET_DATA,
};
use crate::data::{gen_blobs, gen_two_moons, load_csv, BlobCenter, CsvSchema, Dataset, Domain};
use crate::error::{HclError, Result};
use crate::exec::Execution;
use crate::model::ModelParams;

/// Builds the (labeled source, labeled target) pair for one seed.
pub fn build_domains(cfg: &AdaptConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let s_seed = derive_seed(seed, STREAM_SOURCE_DATA, 0, 0);
    let t_seed = derive_seed(seed, STREAM_TARGET_DATA, 0, 0);
    match d.kind {
        DataKind::TwoMoons => Ok((
            gen_two_moons(d.n, d.noise, d.source_rotation, Domain::Source, s_seed)?,
            gen_two_moons(d.n, d.noise, d.target_rotation, Domain::Target, t_seed)?,
        )),
        DataKind::Blobs => {
            let half = d.blob_separation / 2.0;
            let centers = [
                BlobCenter {
                    mean: vec![-half, 0.0],
                    cov_scale: d.blob_scale,
                },
                BlobCenter {
                    mean: vec![half, 0.0],
                    cov_scale: d.blob_scale,
                },
            ];
            Ok((
                gen_blobs(d.n, &centers, &[0.0, 0.0], Domain::Source, s_seed)?,
                gen_blobs(d.n, &centers, &d.target_shift, Domain::Target, t_seed)?,
            ))
        }
        DataKind::Csv => {
            let schema = CsvSchema::default();
            let load = |p: &Option<std::path::PathBuf>, key: &str, dom| {
                let path = p
                    .as_ref()
                    .ok_or_else(|| HclError::config(key, "path required for csv data"))?;
                load_csv(path, schema, dom)
            };
            Ok((
                load(&d.source_csv, "data.source_csv", Domain::Source)?,
                load(&d.target_csv, "data.target_csv", Domain::Target)?,
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub outcome: AdaptOutcome,
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub method: Method,
    pub seed: u64,
    pub result: std::result::Result<ArmResult, String>,
}

struct SeedSetup {
    seed: u64,
    target: Dataset,
    source_model: ModelParams,
}

fn setup_seed(cfg: &AdaptConfig, seed: u64) -> Result<SeedSetup> {
    let (source, target) = build_domains(cfg, seed)?;
    let source_model = pretrain_source(cfg, &source, seed)?.params;
    Ok(SeedSetup {
        seed,
        target,
        source_model,
    })
}

fn run_arm(
    cfg: &AdaptConfig,
    method: Method,
    setup: &SeedSetup,
    exec: Execution,
) -> Result<ArmResult> {
    let outcome = adapt_with(
        cfg,
        method,
        &setup.source_model,
        &setup.target.unlabeled(),
        Some(&setup.target),
        setup.seed,
        exec,
    )?;
    let eval = evaluate(&outcome.result.params, &setup.target)?;
    Ok(ArmResult {
        accuracy: eval.accuracy,
        per_class: eval.per_class,
        outcome,
    })
}

/// Runs every `(method, seed)` arm. One source model is pretrained per
/// seed and shared by all methods. Results are ordered by method, then
/// seed, independent of execution mode.
pub fn run_bench(
    cfg: &AdaptConfig,
    methods: &[Method],
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<ArmOutcome>> {
    cfg.validate()?;
    let setups = exec.map(seeds, |&s| setup_seed(cfg, s));
    let mut arms = Vec::with_capacity(methods.len() * seeds.len());
    let mut sorted_methods = methods.to_vec();
    sorted_methods.sort();
    sorted_methods.dedup();
    for &m in &sorted_methods {
        for (i, _) in seeds.iter().enumerate() {
            arms.push((m, i));
        }
    }
    let mut out = exec.map(&arms, |&(method, i)| {
        let result = match &setups[i] {
            Ok(setup) => run_arm(cfg, method, setup, exec).map_err(|e| e.to_string()),
            Err(e) => Err(format!("source pretraining failed: {e}")),
        };
        ArmOutcome {
            method,
            seed: seeds[i],
            result,
        }
    });
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median accuracy of one method across its successful arms.
pub fn median_accuracy(arms: &[ArmOutcome], method: Method) -> Option<f64> {
    let accs: Vec<f64> = arms
        .iter()
        .filter(|a| a.method == method)
        .filter_map(|a| a.result.as_ref().ok().map(|r| r.accuracy))
        .collect();
    median(&accs)
}

use hcl_core::data::{load_csv, save_csv, CsvSchema, Domain};
use hcl_core::model::{
    checkpoint_from_str, checkpoint_to_string, init_model, CheckpointMeta, SnapshotTag,
};
use hcl_core::numcore::ParamTensors;
use hcl_core::pipeline::{
    adapt_with, build_domains, derive_seed, evaluate, initial_objective, pretrain_source,
    run_bench, AdaptConfig, DataKind, Method,
};
use hcl_core::Execution;

fn small() -> AdaptConfig {
    let mut cfg = AdaptConfig::default();
    cfg.data.n = 200;
    cfg.run.epochs = 4;
    cfg.run.pretrain_epochs = 15;
    cfg.run.batch_size = 32;
    cfg
}

#[test]
fn zero_pretrain_epochs_returns_the_initialization() {
    let mut cfg = small();
    cfg.run.pretrain_epochs = 0;
    let (src, _) = build_domains(&cfg, 2).unwrap();
    let run = pretrain_source(&cfg, &src, 2).unwrap();
    assert!(run.trace.records.is_empty());
    // stream 1 seeds the weight initialization
    let init = init_model(&cfg.model_spec(src.dim()), derive_seed(2, 1, 0, 0)).unwrap();
    assert_eq!(run.params.weight_hash(), init.weight_hash());
}

#[test]
fn default_pretraining_fits_the_source_domain() {
    let cfg = AdaptConfig::default();
    let (src, _) = build_domains(&cfg, 0).unwrap();
    let run = pretrain_source(&cfg, &src, 0).unwrap();
    let acc = evaluate(&run.params, &src).unwrap().accuracy;
    assert!(acc >= 0.95, "source accuracy {acc}");
}

#[test]
fn same_seed_same_run() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 5).unwrap();
    let source = pretrain_source(&cfg, &src, 5).unwrap().params;
    let run = || {
        adapt_with(
            &cfg,
            Method::Hcl,
            &source,
            &tgt.unlabeled(),
            None,
            5,
            Execution::Sequential,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.result.params.weight_hash(), b.result.params.weight_hash());
    assert_eq!(a.result.trace, b.result.trace);
}

#[test]
fn parallel_matches_sequential_bitwise() {
    let cfg = small();
    let methods = [Method::Hcl, Method::InfonceSt, Method::HccdOnly];
    let seq = run_bench(&cfg, &methods, &[1, 2], Execution::Sequential).unwrap();
    let par = run_bench(&cfg, &methods, &[1, 2], Execution::Parallel).unwrap();
    assert_eq!(seq.len(), par.len());
    for (s, p) in seq.iter().zip(&par) {
        assert_eq!((s.method, s.seed), (p.method, p.seed));
        let (s, p) = (s.result.as_ref().unwrap(), p.result.as_ref().unwrap());
        assert_eq!(s.accuracy.to_bits(), p.accuracy.to_bits());
        assert_eq!(
            s.outcome.result.params.weight_hash(),
            p.outcome.result.params.weight_hash()
        );
    }
}

#[test]
fn target_labels_cannot_reach_training() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 3).unwrap();
    let source = pretrain_source(&cfg, &src, 3).unwrap().params;
    let flipped: Vec<usize> = tgt.labels().unwrap().iter().map(|y| 1 - y).collect();
    let variants = [
        tgt.clone(),
        tgt.without_labels(),
        tgt.with_labels(flipped).unwrap(),
    ];
    let hashes: Vec<String> = variants
        .iter()
        .map(|d| {
            adapt_with(
                &cfg,
                Method::Hcl,
                &source,
                &d.unlabeled(),
                None,
                3,
                Execution::Sequential,
            )
            .unwrap()
            .result
            .params
            .weight_hash()
        })
        .collect();
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0], hashes[2]);
}

#[test]
fn monitor_set_only_affects_reported_accuracy() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 4).unwrap();
    let source = pretrain_source(&cfg, &src, 4).unwrap().params;
    let view = tgt.unlabeled();
    let with = adapt_with(
        &cfg,
        Method::Hcl,
        &source,
        &view,
        Some(&tgt),
        4,
        Execution::Sequential,
    )
    .unwrap();
    let without = adapt_with(
        &cfg,
        Method::Hcl,
        &source,
        &view,
        None,
        4,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(
        with.result.params.weight_hash(),
        without.result.params.weight_hash()
    );
    assert!(with
        .result
        .trace
        .records
        .iter()
        .all(|r| r.target_accuracy.is_some()));
    assert!(without
        .result
        .trace
        .records
        .iter()
        .all(|r| r.target_accuracy.is_none()));
}

#[test]
fn pinned_source_snapshot_survives_adaptation() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 6).unwrap();
    let source = pretrain_source(&cfg, &src, 6).unwrap().params;
    let before = source.weight_hash();
    let out = adapt_with(
        &cfg,
        Method::Hcl,
        &source,
        &tgt.unlabeled(),
        None,
        6,
        Execution::Sequential,
    )
    .unwrap();
    assert!(out.snapshots_intact);
    let queue = out.history.unwrap();
    let pinned = queue
        .snapshots()
        .iter()
        .find(|s| s.tag() == SnapshotTag::SourceInit)
        .expect("source snapshot is pinned");
    assert!(pinned.is_intact());
    assert_eq!(pinned.params().weight_hash(), before);
    assert_eq!(source.weight_hash(), before);
    assert_ne!(out.result.params.weight_hash(), before);
}

#[test]
fn source_only_returns_the_source_model() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 1).unwrap();
    let source = pretrain_source(&cfg, &src, 1).unwrap().params;
    let out = adapt_with(
        &cfg,
        Method::SourceOnly,
        &source,
        &tgt.unlabeled(),
        Some(&tgt),
        1,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(out.result.params, source);
    assert_eq!(out.result.trace.records.len(), 1);
    assert!(out.history.is_none());
}

#[test]
fn ablation_terms_sum_to_the_full_objective() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 7).unwrap();
    let source = pretrain_source(&cfg, &src, 7).unwrap().params;
    let view = tgt.unlabeled();
    let total = |m| initial_objective(&cfg, m, &source, &view, 7, Execution::Sequential).unwrap();
    let (full, hcid, hccd) = (
        total(Method::Hcl),
        total(Method::HcidOnly),
        total(Method::HccdOnly),
    );
    assert!((full.total - (hcid.total + hccd.total)).abs() < 1e-12);
    assert_eq!(hcid.hisst, 0.0);
    assert_eq!(hccd.hisnce, 0.0);
}

#[test]
fn unit_reliability_reduces_to_plain_infonce_at_step_zero() {
    let mut cfg = small();
    cfg.hcid.reliability_floor = 1.0;
    let (src, tgt) = build_domains(&cfg, 8).unwrap();
    let source = pretrain_source(&cfg, &src, 8).unwrap().params;
    let view = tgt.unlabeled();
    let hcl =
        initial_objective(&cfg, Method::Hcl, &source, &view, 8, Execution::Sequential).unwrap();
    let plain = initial_objective(
        &cfg,
        Method::InfonceSt,
        &source,
        &view,
        8,
        Execution::Sequential,
    )
    .unwrap();
    assert!(
        (hcl.hisnce - plain.hisnce).abs() < 1e-12,
        "{} vs {}",
        hcl.hisnce,
        plain.hisnce
    );
}

#[test]
fn constant_predictor_recall_per_class() {
    let cfg = small();
    let (_, tgt) = build_domains(&cfg, 0).unwrap();
    let mut params = init_model(&cfg.model_spec(tgt.dim()), 0).unwrap();
    {
        let mut ts = params.tensors_mut();
        let n = ts.len();
        ts[n - 2].data_mut().fill(0.0);
        ts[n - 1].data_mut().copy_from_slice(&[1.0, 0.0]);
    }
    let ev = evaluate(&params, &tgt).unwrap();
    assert_eq!(ev.per_class, vec![Some(1.0), Some(0.0)]);
    let zeros = tgt.labels().unwrap().iter().filter(|&&y| y == 0).count();
    assert_eq!(ev.accuracy, zeros as f64 / tgt.len() as f64);
}

#[test]
fn checkpoint_round_trip_reproduces_logits() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 9).unwrap();
    let params = pretrain_source(&cfg, &src, 9).unwrap().params;
    let meta = CheckpointMeta {
        seed: 9,
        epoch: cfg.run.pretrain_epochs,
        tag: SnapshotTag::SourceInit,
    };
    let (back, meta_back) =
        checkpoint_from_str(&checkpoint_to_string(&params, meta).unwrap()).unwrap();
    assert_eq!(meta_back, meta);
    let (a, b) = (
        params.logits(tgt.features()).unwrap(),
        back.logits(tgt.features()).unwrap(),
    );
    let bits =
        |t: &hcl_core::numcore::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn csv_domains_match_generated_ones() {
    let cfg = small();
    let (src, tgt) = build_domains(&cfg, 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (sp, tp) = (dir.path().join("s.csv"), dir.path().join("t.csv"));
    save_csv(&src, &sp).unwrap();
    save_csv(&tgt, &tp).unwrap();
    let mut csv_cfg = cfg.clone();
    csv_cfg.data.kind = DataKind::Csv;
    csv_cfg.data.source_csv = Some(sp.clone());
    csv_cfg.data.target_csv = Some(tp);
    let (s2, t2) = build_domains(&csv_cfg, 10).unwrap();
    assert_eq!(s2.features(), src.features());
    assert_eq!(s2.labels(), src.labels());
    assert_eq!(t2.features(), tgt.features());
    let direct = load_csv(&sp, CsvSchema::default(), Domain::Source).unwrap();
    assert_eq!(direct.features(), src.features());
}

#[test]
fn derived_seeds_differ_across_streams() {
    let a = derive_seed(0, 1, 0, 0);
    assert_eq!(a, derive_seed(0, 1, 0, 0));
    assert_ne!(a, derive_seed(0, 2, 0, 0));
    assert_ne!(a, derive_seed(1, 1, 0, 0));
    assert_ne!(a, derive_seed(0, 1, 1, 0));
}

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hcl_core::data::{augment, gen_two_moons, AugmentSpec, Domain};
use hcl_core::hcid::{hcid_terms, HcidConfig};
use hcl_core::model::{init_model, ModelSpec};
use hcl_core::pipeline::{run_bench, AdaptConfig, Method};
use hcl_core::Execution;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn small_config() -> AdaptConfig {
    let mut cfg = AdaptConfig::default();
    cfg.data.n = 200;
    cfg.run.epochs = 3;
    cfg.run.pretrain_epochs = 5;
    cfg.run.batch_size = 64;
    cfg
}

fn bench_arms(c: &mut Criterion) {
    let cfg = small_config();
    let methods = [Method::Hcl, Method::PlainSt, Method::HcidOnly];
    let seeds = [0, 1];
    let mut g = c.benchmark_group("bench_arms");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_bench(black_box(&cfg), &methods, &seeds, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_snapshot_fanout(c: &mut Criterion) {
    let spec = ModelSpec {
        input_dim: 2,
        hidden_dims: vec![64, 64],
        embed_dim: 32,
        num_classes: 2,
    };
    let current = init_model(&spec, 0).unwrap();
    let history: Vec<_> = (1..=8).map(|s| init_model(&spec, s).unwrap()).collect();
    let keys: Vec<_> = history.iter().collect();
    let x = gen_two_moons(256, 0.1, 0.0, Domain::Target, 3)
        .unwrap()
        .features()
        .clone();
    let spec = AugmentSpec {
        noise_sigma: 0.05,
        scale_jitter: 0.1,
    };
    let aug = augment(&x, &spec, 4).unwrap();
    let pass = current.forward(&x).unwrap();
    let cfg = HcidConfig::default();
    let mut g = c.benchmark_group("hcid_8_snapshots");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| hcid_terms(black_box(&pass), &keys, &aug, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_arms, bench_snapshot_fanout);
criterion_main!(benches);

//! Sequential vs parallel execution of the row-parallel kernels.
//!
//! Built without the `parallel` feature both variants run the same code.

use camreid::data::{cross_distances_with, pairwise_distances_with};
use camreid::eval::evaluate_with;
use camreid::optics::optics_order_with;
use camreid::rerank::k_reciprocal_rerank_with;
use camreid::synth::generate_with_holdout;
use camreid::{EmbeddingSet, Exec, OpticsConfig, Preset, QueryGallerySplit, RerankConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn target(identities: usize) -> EmbeddingSet {
    let mut cfg = Preset::CameraBiased.config(0);
    cfg.num_identities = identities;
    camreid::generate(&cfg).unwrap()
}

fn pairwise(c: &mut Criterion) {
    let mut g = c.benchmark_group("pairwise_distances");
    for ids in [100, 300] {
        let set = target(ids);
        for (name, exec) in EXECS {
            g.bench_with_input(BenchmarkId::new(name, set.len()), &set, |b, s| {
                b.iter(|| pairwise_distances_with(black_box(s), exec))
            });
        }
    }
    g.finish();
}

fn optics(c: &mut Criterion) {
    let mut g = c.benchmark_group("optics_order");
    for ids in [100, 300] {
        let set = target(ids);
        let d = pairwise_distances_with(&set, Exec::default());
        for (name, exec) in EXECS {
            g.bench_with_input(BenchmarkId::new(name, set.len()), &d, |b, d| {
                b.iter(|| optics_order_with(black_box(d), &OpticsConfig::default(), exec))
            });
        }
    }
    g.finish();
}

fn retrieval(c: &mut Criterion) {
    let (_, held) = generate_with_holdout(&Preset::CameraBiased.config(1), 200).unwrap();
    let split = QueryGallerySplit::from_labeled(&held).unwrap();
    let qg = cross_distances_with(&split.queries, &split.gallery, Exec::default());
    let gg = pairwise_distances_with(&split.gallery, Exec::default());
    let qq = pairwise_distances_with(&split.queries, Exec::default());
    let cfg = RerankConfig::default();

    let mut g = c.benchmark_group("retrieval");
    g.sample_size(20);
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::new("evaluate", name), |b| {
            b.iter(|| evaluate_with(black_box(&qg), &split, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("rerank", name), |b| {
            b.iter(|| k_reciprocal_rerank_with(black_box(&qg), &gg, &qq, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, pairwise, optics, retrieval);
criterion_main!(benches);

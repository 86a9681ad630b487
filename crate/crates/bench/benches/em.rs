use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use mdmfed_core::federation::{ClientPopulation, Execution};
use mdmfed_core::inference::{em_round, full_batch_update, init_params, InferenceConfig};
use mdmfed_core::model::{log_dm_pmf, log_mdm_pmf};
use mdmfed_core::presets;
use mdmfed_core::sampling::{gen_synthetic_federation, RngHandle};

fn population(name: &str, m: usize) -> ClientPopulation {
    let truth = presets::preset(name).unwrap();
    ClientPopulation::new(gen_synthetic_federation(&truth, m, RngHandle::new(1)).unwrap()).unwrap()
}

fn pmf(c: &mut Criterion) {
    let truth = presets::preset("table1:high-3").unwrap();
    let pop = population("table1:high-3", 64);
    let rec = pop.get(0);
    c.bench_function("log_dm_pmf C=10 n=100", |b| {
        b.iter(|| {
            log_dm_pmf(
                black_box(rec.counts()),
                rec.n(),
                black_box(&truth.alpha()[0]),
            )
        })
    });
    c.bench_function("log_mdm_pmf K=3 C=10", |b| {
        b.iter(|| log_mdm_pmf(black_box(rec), black_box(&truth)))
    });
}

fn rounds(c: &mut Criterion) {
    let mut group = c.benchmark_group("em_round");
    group.sample_size(20);
    for m in [1000usize, 10_000] {
        let pop = population("table1:medium-3", m);
        for (label, execution) in [
            ("deterministic", Execution::Deterministic),
            ("parallel", Execution::Parallel),
        ] {
            let mut cfg = InferenceConfig::new(3, 1);
            cfg.execution = execution;
            let params = init_params(&pop, &cfg, RngHandle::new(2)).unwrap();
            group.bench_with_input(BenchmarkId::new(label, m), &m, |b, _| {
                b.iter(|| em_round(&pop, &params, &cfg, RngHandle::new(3)).unwrap())
            });
        }
        let cfg = InferenceConfig::new(3, 1);
        let params = init_params(&pop, &cfg, RngHandle::new(2)).unwrap();
        group.bench_with_input(BenchmarkId::new("full_batch", m), &m, |b, _| {
            b.iter(|| full_batch_update(pop.records(), &params, &cfg).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let truth = presets::three_component_truth();
    c.bench_function("gen_synthetic_federation M=1000", |b| {
        b.iter(|| gen_synthetic_federation(&truth, 1000, RngHandle::new(4)).unwrap())
    });
}

criterion_group!(benches, pmf, rounds, sampling);
criterion_main!(benches);

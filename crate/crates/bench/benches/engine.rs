use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use fairdyn::metrics::jsd_parts;
use fairdyn::records::ingest;
use fairdyn::stats::{exact_u_counts, mann_whitney_u, MwuMode, SampleSet};
use fairdyn::{AnswerOption, OptionDistribution};
use fairdyn_bench::{record_file, spread};

fn bench_jsd(c: &mut Criterion) {
    let dists: Vec<OptionDistribution> = (0..1000)
        .map(|i| {
            let x = i as f64 / 1000.0;
            OptionDistribution::from_scores([x * 3.0, 1.0 - x, (x * 7.0).sin()]).unwrap()
        })
        .collect();
    let mut g = c.benchmark_group("jsd_parts");
    g.throughput(Throughput::Elements(dists.len() as u64));
    g.bench_function("1000 distributions", |b| {
        b.iter(|| {
            dists.iter().map(|d| jsd_parts(black_box(d), AnswerOption::Male).sum()).sum::<f64>()
        })
    });
    g.finish();
}

fn bench_mwu(c: &mut Criterion) {
    let mut g = c.benchmark_group("mann_whitney");
    let a = SampleSet::new("a", spread(10, 0.0)).unwrap();
    let b = SampleSet::new("b", spread(10, 0.5)).unwrap();
    g.bench_function("exact 10+10", |bn| bn.iter(|| mann_whitney_u(black_box(&a), black_box(&b), MwuMode::Exact)));
    g.bench_function("exact counts 60+60", |bn| bn.iter(|| exact_u_counts(black_box(60), black_box(60))));
    let a = SampleSet::new("a", spread(250, 0.0)).unwrap();
    let b = SampleSet::new("b", spread(250, 0.5)).unwrap();
    g.bench_function("normal 250+250", |bn| bn.iter(|| mann_whitney_u(black_box(&a), black_box(&b), MwuMode::Normal)));
    g.finish();
}

fn bench_ingest(c: &mut Criterion) {
    let file = record_file(50);
    let mut g = c.benchmark_group("ingest");
    g.throughput(Throughput::Bytes(file.len() as u64));
    g.sample_size(20);
    g.bench_function("default scenario", |b| b.iter(|| ingest(black_box(file.as_slice())).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_jsd, bench_mwu, bench_ingest);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mecwpt::charging::solve_p3;
use mecwpt::offload::solve_p2;
use mecwpt::solve_cell;
use mecwpt_bench::{CellFixture, SIZES};
use std::hint::black_box;

fn offloading(c: &mut Criterion) {
    let mut group = c.benchmark_group("p2_offloading");
    for (k, n) in SIZES {
        let f = CellFixture::new(k, n, 7);
        group.bench_with_input(BenchmarkId::from_parameter(f.label()), &f, |b, f| {
            b.iter(|| solve_p2(black_box(&f.offload), &f.chan, &f.params, &f.tasks).unwrap())
        });
    }
    group.finish();
}

fn charging(c: &mut Criterion) {
    let mut group = c.benchmark_group("p3_charging");
    for (k, n) in SIZES {
        let f = CellFixture::new(k, n, 7);
        let t_c = 0.5 * f.params.latency;
        group.bench_with_input(BenchmarkId::from_parameter(f.label()), &f, |b, f| {
            b.iter(|| solve_p3(black_box(&f.chan.h), &f.requests, t_c, &f.params).unwrap())
        });
    }
    group.finish();
}

fn full_cell(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_cell");
    group.sample_size(10);
    for (k, n) in SIZES {
        let f = CellFixture::new(k, n, 7);
        group.bench_with_input(BenchmarkId::from_parameter(f.label()), &f, |b, f| {
            b.iter(|| solve_cell(black_box(&f.chan), &f.tasks, &f.requests, &f.params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, offloading, charging, full_cell);
criterion_main!(benches);

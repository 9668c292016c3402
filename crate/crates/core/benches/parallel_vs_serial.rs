use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vir_core::par::Execution;
use vir_core::risk::{mc_experiment, random_world, vir_moments, WorldSpec};

fn monte_carlo(c: &mut Criterion) {
    let world = random_world(&WorldSpec::medium(), 7).expect("valid spec");
    let mut group = c.benchmark_group("mc_experiment");
    group.sample_size(10);
    for draws in [20_000, 100_000] {
        for (name, mode) in [
            ("serial", Execution::Serial),
            ("parallel", Execution::Parallel),
        ] {
            group.bench_with_input(BenchmarkId::new(name, draws), &draws, |b, &d| {
                b.iter(|| mc_experiment(black_box(&world), d, 3, 0.05, mode).unwrap())
            });
        }
    }
    group.finish();
}

fn world_battery(c: &mut Criterion) {
    let spec = WorldSpec::medium();
    let seeds: Vec<u64> = (0..200).collect();
    let mut group = c.benchmark_group("world_battery");
    for (name, mode) in [
        ("serial", Execution::Serial),
        ("parallel", Execution::Parallel),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| {
                vir_core::par::map(mode, &seeds, |&s| {
                    let w = random_world(&spec, s).unwrap();
                    vir_moments(&w).variance
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, world_battery);
criterion_main!(benches);

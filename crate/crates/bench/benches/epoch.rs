use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use ridepool_bench::{batch, grid_config, recorded_problems, scenario, warm_simulator};
use ridepool_core::sim;
use ridepool_core::trip::generate_feasible_trips;
use ridepool_core::{solve, RunMode, SimOptions};

fn assignment(c: &mut Criterion) {
    let problems = recorded_problems(&grid_config(50, 8.0, 60));
    let largest = &problems[0];
    c.bench_function("solve/largest_epoch_50_vehicles", |b| b.iter(|| solve(black_box(largest)).unwrap()));
    c.bench_function("solve/all_epochs_50_vehicles", |b| {
        b.iter(|| {
            for p in &problems {
                black_box(solve(p).unwrap());
            }
        })
    });
}

fn trips(c: &mut Criterion) {
    let config = grid_config(50, 8.0, 60);
    let sc = scenario(&config);
    let (vehicles, requests) = batch(&config, &sc, 12);
    c.bench_function("trips/50_vehicles_12_requests", |b| {
        b.iter(|| generate_feasible_trips(black_box(&vehicles), black_box(&requests), &sc.net, config.limits, config.trip_size_cap))
    });
}

fn epochs(c: &mut Criterion) {
    let config = grid_config(50, 5.0, 60);
    let sc = scenario(&config);
    c.bench_function("sim/step_50_vehicles", |b| {
        b.iter_batched(|| warm_simulator(&config, &sc, 30), |mut sim| sim.step().unwrap(), BatchSize::LargeInput)
    });
    let mut group = c.benchmark_group("sim");
    group.sample_size(10);
    group.bench_function("hour_50_vehicles", |b| {
        b.iter(|| sim::run(&config, &sc, None, RunMode::Train, SimOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, assignment, trips, epochs);
criterion_main!(benches);

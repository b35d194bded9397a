use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use decoy_core::keyrate::sweep_delta_m;
use decoy_core::sim::two_block_attack_channel;
use decoy_core::{
    coherent_bounds, delta1_bounds, simulate, CoherentWindow, ErrorPattern, ObservedRates,
    SimConfig, SourceMix, SweepSettings, T1Convention,
};

fn fiber_rates() -> ObservedRates {
    let mix = SourceMix::new(0.09006, 0.40726, 0.50268).unwrap();
    ObservedRates::new(1.548e-4, 3.817e-4, 2.609e-5, mix, 4e6 * 1481.2)
        .unwrap()
        .with_qber(0.04247, 0.08379)
        .unwrap()
}

fn bounds(c: &mut Criterion) {
    let rates = fiber_rates();
    let d = CoherentWindow::relative(0.2, 0.02).unwrap();
    let s = CoherentWindow::relative(0.6, 0.02).unwrap();
    c.bench_function("coherent_bounds", |b| {
        b.iter(|| coherent_bounds(black_box(&d), black_box(&s), 25).unwrap())
    });
    let (db, sb) = coherent_bounds(&d, &s, 25).unwrap();
    c.bench_function("delta1_bounds", |b| {
        b.iter(|| delta1_bounds(black_box(&rates), &db, &sb).unwrap())
    });
    let settings = SweepSettings::new(0.2, 0.6, 4e6, T1Convention::DarkCountCorrected);
    let deltas = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05];
    c.bench_function("fiber_sweep", |b| {
        b.iter(|| sweep_delta_m(black_box(&rates), &deltas, &settings).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_two_block");
    group.sample_size(10);
    for pulses in [1u64 << 18, 1 << 21] {
        let pattern = ErrorPattern::two_block(0.2, 0.6, 0.1, 1000, pulses).unwrap();
        let channel = two_block_attack_channel(0.2, 0.6, 0.1, 0.05, 1000).unwrap();
        let config = SimConfig {
            pulses,
            mix: SourceMix::new(0.1, 0.45, 0.45).unwrap(),
            seed: 1,
            record_events: false,
        };
        group.throughput(Throughput::Elements(pulses));
        group.bench_with_input(BenchmarkId::from_parameter(pulses), &config, |b, config| {
            b.iter(|| simulate(config, &pattern, &channel).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bounds, simulation);
criterion_main!(benches);

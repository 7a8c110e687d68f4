use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use hbtsim_core::detection::{run_hbt, DetectorConfig, HbtConfig};
use hbtsim_core::photophysics::simulate_collected_emission;
use hbtsim_core::LevelScheme;

fn nanocrystal() -> LevelScheme {
    LevelScheme {
        pump_rate: 4e7,
        radiative_rate: 4e7,
        shelve_rate: 4e5,
        deshelve_rate: 2e6,
        pump_shelving_coefficient: 0.05,
    }
}

fn simulation(c: &mut Criterion) {
    let scheme = nanocrystal();
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);

    let duration_ns = 1e9;
    let n = simulate_collected_emission(&scheme, duration_ns, 6e-3, 1).unwrap().len();
    group.throughput(Throughput::Elements(n as u64));
    group.bench_function("emission_1s", |b| {
        b.iter(|| simulate_collected_emission(black_box(&scheme), duration_ns, 6e-3, 1).unwrap())
    });

    let emission = simulate_collected_emission(&scheme, duration_ns, 6e-3, 1).unwrap();
    let hbt = HbtConfig { background_rate_per_s: 2730.0, ..HbtConfig::default() };
    let det = DetectorConfig { efficiency: 0.6, ..DetectorConfig::default() };
    group.bench_function("hbt_chain_1s", |b| {
        b.iter(|| run_hbt(black_box(&emission), &hbt, &det, &det, 7).unwrap())
    });
    group.finish();
}

criterion_group!(benches, simulation);
criterion_main!(benches);

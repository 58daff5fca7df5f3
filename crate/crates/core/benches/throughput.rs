use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skg_core::alignment::{aligned_pairs, pair_probes};
use skg_core::channel_sim::simulate_scenario;
use skg_core::keyderive::{toeplitz_extract, ToeplitzSeed};
use skg_core::pipeline::{run_stages, select_subband_width, Levels};
use skg_core::presets;
use skg_core::quality::nist_suite;
use skg_core::run_single_threaded;
use skg_core::trace_model::FftOrdering;

fn schedules<F: Fn() + Sync>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10).measurement_time(Duration::from_secs(3));
    g.bench_function(BenchmarkId::new("schedule", "parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("schedule", "single_threaded"), |b| b.iter(|| run_single_threaded(&f)));
    g.finish();
}

fn bench(c: &mut Criterion) {
    let cfg = presets::find("los3").unwrap().config(1);
    schedules(c, "simulate_los3", || {
        black_box(simulate_scenario(&cfg).unwrap());
    });

    let sim = simulate_scenario(&cfg).unwrap();
    let pairs = aligned_pairs(&pair_probes(&sim.gnb, &sim.ue, 5).unwrap(), FftOrdering::ReversedNegative);
    let sub = select_subband_width(1.5e6, 30e3, 636).unwrap();
    schedules(c, "stages_1_to_3", || {
        black_box(run_stages(&pairs, &sub, Levels::Two, true).unwrap());
    });

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let input: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let seed = ToeplitzSeed::new((0..n + 255).map(|_| rng.random_range(0..2)).collect(), 256, n).unwrap();
    schedules(c, "toeplitz_256x100k", || {
        black_box(toeplitz_extract(&input, &seed).unwrap());
    });

    let bits: Vec<u8> = (0..2816).map(|_| rng.random_range(0..2)).collect();
    schedules(c, "nist_2816", || {
        black_box(nist_suite(&bits).unwrap());
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);

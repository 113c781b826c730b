//! One worker thread against the full rayon pool on the data-parallel paths.
//!
//! Build with `--no-default-features` to time the plain sequential loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use excir::cir::{self, CirMode};
use excir::lightweight::{self, MmdOptions};
use excir::stability::{self, BootstrapOptions, Scorer};
use excir::synth::{self, Family, SynthConfig};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let full = rayon::current_num_threads();
    let mut sizes = vec![1];
    if full > 1 {
        sizes.push(full);
    }
    sizes
        .into_iter()
        .map(|t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            (format!("{}-threads-{t}", if excir::par::is_parallel() { "rayon" } else { "seq" }), pool)
        })
        .collect()
}

fn bench(c: &mut Criterion) {
    let big = synth::generate(&SynthConfig::new(200_000, 1, Family::vehicular())).unwrap();
    let small = synth::generate(&SynthConfig::new(2_000, 2, Family::vehicular())).unwrap();
    let y = big.output.column(0).to_vec();
    let out = small.output.column(0);
    let a: Vec<Vec<f64>> = out[..500].iter().map(|v| vec![*v]).collect();
    let b: Vec<Vec<f64>> = out[500..1000].iter().map(|v| vec![*v]).collect();

    let mut g = c.benchmark_group("parallel");
    g.sample_size(10);
    for (label, pool) in pools() {
        g.bench_function(BenchmarkId::new("score_all_features_200k", &label), |bch| {
            bch.iter(|| pool.install(|| black_box(cir::score_all_features(&big.data, &y, CirMode::MidMean).unwrap())))
        });
        g.bench_function(BenchmarkId::new("bootstrap_b100", &label), |bch| {
            bch.iter(|| {
                pool.install(|| {
                    black_box(
                        stability::bootstrap_scores(
                            &small.data,
                            &small.output,
                            100,
                            42,
                            CirMode::Correlation,
                            &Scorer::PerFeature,
                            BootstrapOptions::default(),
                        )
                        .unwrap(),
                    )
                })
            })
        });
        g.bench_function(BenchmarkId::new("mmd_500x500", &label), |bch| {
            bch.iter(|| pool.install(|| black_box(lightweight::mmd_gate(&a, &b, &MmdOptions::default()).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

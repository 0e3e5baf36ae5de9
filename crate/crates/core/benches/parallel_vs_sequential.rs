//! Rayon fan-out against the single-threaded path on the hot kernels.
//!
//! Both arms run in one binary; `parallel::set_enabled` flips the switch. A
//! build with `--no-default-features` has no rayon at all and both arms
//! measure the sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mambattention::attention::multi_head_attention_blocked;
use mambattention::datagen::{synth_clips, Split};
use mambattention::net::{Model, ModelConfig};
use mambattention::ssm::selective_scan;
use mambattention::{parallel, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ARMS: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (s, l, k, n) = (8, 1024, 64, 16);
    let x = Tensor::uniform(&[s, l, k], -1.0, 1.0, &mut rng);
    let dt = Tensor::uniform(&[s, l, k], 0.001, 0.1, &mut rng);
    let b = Tensor::uniform(&[s, l, n], -1.0, 1.0, &mut rng);
    let cc = Tensor::uniform(&[s, l, n], -1.0, 1.0, &mut rng);
    let a = Tensor::uniform(&[n, k], -2.0, -0.5, &mut rng);
    let mut g = c.benchmark_group("selective_scan");
    for (name, on) in ARMS {
        parallel::set_enabled(on);
        g.bench_function(BenchmarkId::new(name, format!("{s}x{l}")), |bn| {
            bn.iter(|| selective_scan(&x, &dt, &b, &cc, &a).unwrap())
        });
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 64;
    let bound = 1.0 / (d as f64).sqrt();
    let w: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[d, d], -bound, bound, &mut rng)).collect();
    let w = [&w[0], &w[1], &w[2], &w[3]];
    let mut g = c.benchmark_group("multi_head_attention");
    g.sample_size(10);
    for l in [1024, 4096] {
        let x = Tensor::uniform(&[l, d], -1.0, 1.0, &mut rng);
        for (name, on) in ARMS {
            parallel::set_enabled(on);
            g.bench_with_input(BenchmarkId::new(name, l), &x, |bn, x| {
                bn.iter(|| multi_head_attention_blocked(x, &w, 8, 256).unwrap())
            });
        }
    }
    g.finish();
}

fn datagen(c: &mut Criterion) {
    let mut g = c.benchmark_group("synth_clips");
    g.sample_size(10);
    for (name, on) in ARMS {
        parallel::set_enabled(on);
        g.bench_function(name, |bn| bn.iter(|| synth_clips(Split::Train, 8, 16_000, 3).unwrap()));
    }
    g.finish();
}

fn enhance(c: &mut Criterion) {
    let cfg = ModelConfig {
        channels: 16,
        layers: 2,
        heads: 4,
        ssm_state: 8,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, 0).unwrap();
    let clip = synth_clips(Split::Test, 1, 16_000, 5).unwrap().remove(0).noisy;
    let mut g = c.benchmark_group("enhance_1s");
    g.sample_size(10);
    for (name, on) in ARMS {
        parallel::set_enabled(on);
        g.bench_function(name, |bn| bn.iter(|| model.enhance(&clip).unwrap()));
    }
    g.finish();
    parallel::set_enabled(true);
}

criterion_group!(benches, scan, attention, datagen, enhance);
criterion_main!(benches);

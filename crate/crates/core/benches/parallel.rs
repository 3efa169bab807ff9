//! Compares the data-parallel code paths against single-threaded execution.
//!
//! With the default `parallel` feature the same workloads run once on a
//! one-thread rayon pool and once on the default pool; results are identical
//! by construction (per-example seeds, order-stable reductions), so the
//! bench isolates the scheduling cost. Building with
//! `--no-default-features` benches the plain sequential fallback.

use advrisk::attack::{batch_attack, AttackConfig, AttackFlavor};
use advrisk::data::synth_gaussians;
use advrisk::dro::solve_dro_weights;
use advrisk::nn::{grad_params, LossSpec, Model};
use advrisk::rng::rng_from;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;
use std::hint::black_box;

struct Workload {
    model: Model,
    batch: advrisk::nn::Batch,
    attack: AttackConfig,
}

fn workload() -> Workload {
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|c| (0..16).map(|i| 0.2 + 0.15 * ((c + i) % 4) as f64).collect())
        .collect();
    let data = synth_gaussians(16, &centers, 0.05, 3).unwrap();
    Workload {
        model: Model::new(&[16, 48, 32, 4], 7).unwrap(),
        batch: data.full_batch(),
        attack: AttackConfig::new(0.1, 0.02, 10, AttackFlavor::Ce, 5).unwrap(),
    }
}

#[cfg(feature = "parallel")]
fn with_pool<T>(threads: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("pool builds")
        .install(f)
}

fn bench_batch_attack(c: &mut Criterion) {
    let w = workload();
    let mut group = c.benchmark_group("batch_attack");
    #[cfg(feature = "parallel")]
    {
        group.bench_function("one_thread", |b| {
            b.iter(|| {
                with_pool(1, || {
                    black_box(batch_attack(&w.model, &w.batch, &w.attack).unwrap())
                })
            })
        });
        group.bench_function("default_pool", |b| {
            b.iter(|| black_box(batch_attack(&w.model, &w.batch, &w.attack).unwrap()))
        });
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(batch_attack(&w.model, &w.batch, &w.attack).unwrap()))
    });
    group.finish();
}

fn bench_grad_params(c: &mut Criterion) {
    let w = workload();
    let weights = vec![1.0; w.batch.len()];
    let mut group = c.benchmark_group("grad_params");
    #[cfg(feature = "parallel")]
    {
        group.bench_function("one_thread", |b| {
            b.iter(|| {
                with_pool(1, || {
                    black_box(
                        grad_params(&w.model, &w.batch, &LossSpec::CrossEntropy, &weights).unwrap(),
                    )
                })
            })
        });
        group.bench_function("default_pool", |b| {
            b.iter(|| {
                black_box(
                    grad_params(&w.model, &w.batch, &LossSpec::CrossEntropy, &weights).unwrap(),
                )
            })
        });
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| {
        b.iter(|| {
            black_box(grad_params(&w.model, &w.batch, &LossSpec::CrossEntropy, &weights).unwrap())
        })
    });
    group.finish();
}

fn bench_dro_solver(c: &mut Criterion) {
    let mut rng = rng_from(11);
    let losses: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.0..4.0)).collect();
    c.bench_function("solve_dro_weights/n2000", |b| {
        b.iter_batched(
            || losses.clone(),
            |l| black_box(solve_dro_weights(&l, 0.16).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_batch_attack,
    bench_grad_params,
    bench_dro_solver
);
criterion_main!(benches);

//! Hot-path timings on a single-thread pool versus the default rayon pool.
//!
//! The library's data-parallel lanes pick up whatever pool is ambient, so
//! each benchmark runs the identical call inside both pools. With the
//! `parallel` feature disabled (or on a one-core machine) the two columns
//! coincide; with it enabled on a multicore box the gap is the speedup of
//! the parallel lanes. Outputs are bitwise-identical either way, which is
//! asserted once per benchmark group before timing starts.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use park::estimator::{park_train, ParkConfig};
use park::kernel::KernelSpec;
use park::local_solver::{build_preconditioner, pcg_train, sample_nystrom};
use park::partition::{assign, greedy_centroids, CentroidMode};

fn scatter(n: usize, d: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| unit.sample(&mut rng));
    let y = Array1::from_shape_fn(n, |_| unit.sample(&mut rng));
    (x, y)
}

fn pools() -> (rayon::ThreadPool, rayon::ThreadPool) {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool");
    let full = rayon::ThreadPoolBuilder::new().build().expect("default pool");
    (single, full)
}

fn bench_gram(c: &mut Criterion) {
    let kernel = KernelSpec::gaussian(1.5).expect("kernel");
    let (x, _) = scatter(600, 8, 1);
    let (single, full) = pools();
    let a = single.install(|| kernel.gram(&x, &x).expect("gram"));
    let b = full.install(|| kernel.gram(&x, &x).expect("gram"));
    assert_eq!(a, b, "gram must not depend on the pool");
    let mut g = c.benchmark_group("gram_600x600");
    g.sample_size(10).measurement_time(Duration::from_secs(2));
    g.bench_function("single_thread", |bench| {
        bench.iter(|| single.install(|| kernel.gram(black_box(&x), black_box(&x)).unwrap()))
    });
    g.bench_function("rayon_pool", |bench| {
        bench.iter(|| full.install(|| kernel.gram(black_box(&x), black_box(&x)).unwrap()))
    });
    g.finish();
}

fn bench_assign(c: &mut Criterion) {
    let kernel = KernelSpec::gaussian(1.5).expect("kernel");
    let (x, _) = scatter(4000, 6, 2);
    let centroids: Vec<usize> = (0..8).map(|i| i * 37).collect();
    let (single, full) = pools();
    let a = single.install(|| assign(&x, &centroids, &kernel).expect("assign"));
    let b = full.install(|| assign(&x, &centroids, &kernel).expect("assign"));
    assert_eq!(a, b, "assignment must not depend on the pool");
    let mut g = c.benchmark_group("assign_4000x8");
    g.sample_size(10).measurement_time(Duration::from_secs(2));
    g.bench_function("single_thread", |bench| {
        bench.iter(|| single.install(|| assign(black_box(&x), &centroids, &kernel).unwrap()))
    });
    g.bench_function("rayon_pool", |bench| {
        bench.iter(|| full.install(|| assign(black_box(&x), &centroids, &kernel).unwrap()))
    });
    g.finish();
}

fn bench_greedy(c: &mut Criterion) {
    let kernel = KernelSpec::gaussian(1.2).expect("kernel");
    let (x, _) = scatter(1500, 6, 3);
    let (single, full) = pools();
    let a = single.install(|| greedy_centroids(&x, &kernel, 8).expect("greedy"));
    let b = full.install(|| greedy_centroids(&x, &kernel, 8).expect("greedy"));
    assert_eq!(a, b, "selection must not depend on the pool");
    let mut g = c.benchmark_group("greedy_1500x8");
    g.sample_size(10).measurement_time(Duration::from_secs(2));
    g.bench_function("single_thread", |bench| {
        bench.iter(|| single.install(|| greedy_centroids(black_box(&x), &kernel, 8).unwrap()))
    });
    g.bench_function("rayon_pool", |bench| {
        bench.iter(|| full.install(|| greedy_centroids(black_box(&x), &kernel, 8).unwrap()))
    });
    g.finish();
}

fn bench_local_solver(c: &mut Criterion) {
    let kernel = KernelSpec::gaussian(1.5).expect("kernel");
    let (x, y) = scatter(800, 6, 4);
    let cell: Vec<usize> = (0..800).collect();
    let centers = sample_nystrom(&x, &cell, 80, 5).expect("centers");
    let km = kernel
        .gram(&centers.points, &centers.points)
        .expect("center block");
    let pre = build_preconditioner(&km, 800, 80, 1e-2).expect("preconditioner");
    let (single, full) = pools();
    let run = |pool: &rayon::ThreadPool, centers: park::local_solver::NystromSet| {
        pool.install(|| {
            pcg_train(&x, &y, centers, &pre, &kernel, 1e-2, 20, 256).expect("solve")
        })
    };
    let a = run(&single, centers.clone());
    let b = run(&full, centers.clone());
    assert_eq!(
        a.coefficients, b.coefficients,
        "solver output must not depend on the pool"
    );
    let mut g = c.benchmark_group("pcg_train_800x80");
    g.sample_size(10).measurement_time(Duration::from_secs(2));
    g.bench_function("single_thread", |bench| {
        bench.iter_batched(
            || centers.clone(),
            |cs| run(&single, black_box(cs)),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("rayon_pool", |bench| {
        bench.iter_batched(
            || centers.clone(),
            |cs| run(&full, black_box(cs)),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn bench_end_to_end(c: &mut Criterion) {
    let kernel = KernelSpec::gaussian(1.5).expect("kernel");
    let (x, y) = scatter(2000, 6, 6);
    let config = ParkConfig {
        cells: 4,
        lambda: 1e-2,
        centers: 180,
        iterations: 20,
        mode: CentroidMode::Greedy,
        seed: 7,
        parallel_cells: true,
        ..ParkConfig::default()
    };
    let (single, full) = pools();
    let a = single.install(|| park_train(&x, &y, &kernel, &config).expect("train").0);
    let b = full.install(|| park_train(&x, &y, &kernel, &config).expect("train").0);
    assert_eq!(a, b, "training must not depend on the pool");
    let mut g = c.benchmark_group("park_train_2000x4");
    g.sample_size(10).measurement_time(Duration::from_secs(3));
    g.bench_function("single_thread", |bench| {
        bench.iter(|| single.install(|| park_train(black_box(&x), &y, &kernel, &config).unwrap()))
    });
    g.bench_function("rayon_pool", |bench| {
        bench.iter(|| full.install(|| park_train(black_box(&x), &y, &kernel, &config).unwrap()))
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_gram,
    bench_assign,
    bench_greedy,
    bench_local_solver,
    bench_end_to_end
);
criterion_main!(benches);

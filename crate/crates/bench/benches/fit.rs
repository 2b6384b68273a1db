use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kpod_bench::masked_preset;
use kpod_core::{decomposition_check, km_fit, kpod_fit, kpod_fit_imputed_form, FitOptions};

fn fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for &(name, n) in &[("s1", 3000), ("s2", 5000), ("s3", 10_000)] {
        let (x, mask) = masked_preset(name, n, 0.1);
        let k = kpod_core::preset(name).unwrap().gmm.k();
        let opts = FitOptions::new(k).with_restarts(5).with_seed(1);
        group.bench_with_input(BenchmarkId::new("kmeans", name), &x, |b, x| {
            b.iter(|| km_fit(black_box(x), &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("kpod", name), &x, |b, x| {
            b.iter(|| kpod_fit(black_box(x), &mask, &opts).unwrap())
        });
    }
    let (x, mask) = masked_preset("s1", 3000, 0.3);
    let opts = FitOptions::new(3).with_restarts(5).with_seed(1);
    group.bench_function("kpod_imputed_form/s1", |b| {
        b.iter(|| kpod_fit_imputed_form(black_box(&x), &mask, &opts).unwrap())
    });
    group.finish();
}

fn decomposition(c: &mut Criterion) {
    let (x, mask) = masked_preset("s3", 10_000, 0.1);
    let centers = kpod_fit(&x, &mask, &FitOptions::new(3).with_restarts(1).with_seed(2))
        .unwrap()
        .fit
        .centers;
    c.bench_function("decomposition_check/s3", |b| {
        b.iter(|| decomposition_check(black_box(&x), &mask, &centers).unwrap())
    });
}

criterion_group!(benches, fits, decomposition);
criterion_main!(benches);

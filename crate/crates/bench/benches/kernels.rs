use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use airisk_bench::reference_model;
use airisk_core::estimators::{calibrate_is, simulate_naive, simulate_sis, StratificationScheme, DEFAULT_MIN_PER_STRATUM, DEFAULT_STRATA};
use airisk_core::ghdist::{GhDistribution, GhMarginal};
use airisk_core::preset::reference_portfolio;
use airisk_core::statkit::{bessel_k, t_quantile, StreamRng};

fn gh(c: &mut Criterion) {
    let p = reference_portfolio().cities[0].gh;
    let g = GhDistribution::new(p).unwrap();
    let m = GhMarginal::new(p).unwrap();
    c.bench_function("gh_pdf", |b| b.iter(|| g.pdf(black_box(0.3))));
    c.bench_function("gh_cdf", |b| b.iter(|| g.cdf(black_box(0.3)).unwrap()));
    c.bench_function("gh_quantile_exact", |b| b.iter(|| g.quantile(black_box(0.97)).unwrap()));
    c.bench_function("gh_quantile_cached", |b| b.iter(|| m.quantile_from_score(black_box(1.9)).unwrap()));
    c.bench_function("gh_marginal_build", |b| b.iter(|| GhMarginal::new(black_box(p)).unwrap()));
    c.bench_function("bessel_k", |b| b.iter(|| bessel_k(black_box(1.8041), black_box(2.7)).unwrap()));
    c.bench_function("t_quantile", |b| b.iter(|| t_quantile(black_box(0.993), black_box(11.78)).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let model = reference_model();
    let rng = StreamRng::new(1, 0);
    c.bench_function("naive_10k", |b| b.iter(|| simulate_naive(&model, 10_000, &rng).unwrap()));
    c.bench_function("calibrate_is", |b| b.iter(|| calibrate_is(&model, black_box(352.03)).unwrap()));
    let cal = calibrate_is(&model, 352.03).unwrap();
    let scheme = StratificationScheme::equiprobable(cal.boundary_normal.clone(), DEFAULT_STRATA).unwrap();
    let mut group = c.benchmark_group("sis");
    group.sample_size(20);
    group.bench_function("sis_20k", |b| {
        b.iter_batched(
            || rng.clone(),
            |r| simulate_sis(&model, 352.03, &cal.params, &scheme, 20_000, DEFAULT_MIN_PER_STRATUM, &r).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, gh, sampling);
criterion_main!(benches);

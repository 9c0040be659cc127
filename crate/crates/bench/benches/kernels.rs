use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use langevin_bench::{gaussian_grid, smoothed_norm_1d};
use langevin_core::density_lab::{propagate_diffusion_density, propagate_lmc_density, target_density_grid, DiffusionConfig};
use langevin_core::divergence::{renyi_gaussian, renyi_grid};
use langevin_core::gaussian_oracle::{lmc_law, renyi_bias};
use langevin_core::planner::plan_log_concave;
use langevin_core::sampler::Ensemble;
use langevin_core::{FiConstants, GaussianLaw, PlanRequest, PropagationConfig, QuadraticTarget, SmoothnessRecord};

fn divergences(c: &mut Criterion) {
    let mut group = c.benchmark_group("renyi");
    for n in [1024, 4096, 16384] {
        let (mu, pi) = (gaussian_grid(n, 30.0, 1.0, 2.0), gaussian_grid(n, 30.0, 0.0, 1.0));
        group.bench_with_input(BenchmarkId::new("grid", n), &n, |b, _| b.iter(|| renyi_grid(2.0, black_box(&mu), &pi).unwrap()));
    }
    for d in [5, 50] {
        let (g1, g2) = (GaussianLaw::isotropic(d, 0.5, 1.2).unwrap(), GaussianLaw::isotropic(d, 0.0, 1.0).unwrap());
        group.bench_with_input(BenchmarkId::new("gaussian", d), &d, |b, _| b.iter(|| renyi_gaussian(2.0, black_box(&g1), &g2).unwrap()));
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let target = QuadraticTarget::isotropic(10, 1.0).unwrap();
    let init = GaussianLaw::isotropic(10, 1.0, 1.0).unwrap();
    c.bench_function("lmc_law d=10 k=1e6", |b| b.iter(|| lmc_law(&target, black_box(&init), 1e-3, 1_000_000).unwrap()));
    c.bench_function("renyi_bias d=10", |b| b.iter(|| renyi_bias(&target, black_box(1e-3), 2.0).unwrap()));
}

fn ensemble(c: &mut Criterion) {
    let target = QuadraticTarget::isotropic(10, 1.0).unwrap();
    let spec = target.potential_spec().unwrap();
    let init = GaussianLaw::isotropic(10, 1.0, 1.0).unwrap();
    let start = Ensemble::from_law(&init, 10_000, 0, 0.01).unwrap();
    c.bench_function("ensemble 10k x d=10, 10 steps", |b| {
        b.iter(|| {
            let mut ens = start.clone();
            ens.advance(&spec, 10, None).unwrap();
            ens
        })
    });
}

fn grids(c: &mut Criterion) {
    let spec = smoothed_norm_1d();
    let mu0 = gaussian_grid(4096, 60.0, 15.0, 1.0);
    let cfg = DiffusionConfig::new(1e-4, 100).record_every(100);
    c.bench_function("lattice diffusion 4096 cells, 100 steps", |b| {
        b.iter(|| propagate_diffusion_density(black_box(&mu0), &spec, &cfg).unwrap())
    });

    let quad = QuadraticTarget::isotropic(1, 1.0).unwrap().potential_spec().unwrap();
    let mu0 = gaussian_grid(1200, 12.0, 2.0, 0.5);
    let cfg = PropagationConfig::new(0.05, 5).record_every(5);
    c.bench_function("lmc kernel 1200 cells, 5 steps", |b| b.iter(|| propagate_lmc_density(black_box(&mu0), &quad, &cfg).unwrap()));

    let axes = mu0.axes().to_vec();
    c.bench_function("target grid 1200 cells", |b| b.iter(|| target_density_grid(black_box(&quad), axes.clone()).unwrap()));
}

fn planner(c: &mut Criterion) {
    let req = PlanRequest::new(
        1e-3,
        2.0,
        100,
        FiConstants::Pi { c: 1.0, log_concave: true },
        SmoothnessRecord::new(1.0, 1.0).unwrap(),
        10.0,
    );
    c.bench_function("plan_log_concave", |b| b.iter(|| plan_log_concave(black_box(&req)).unwrap()));
}

criterion_group!(benches, divergences, oracle, ensemble, grids, planner);
criterion_main!(benches);

//! Seeded particle ensembles for LMC and Monte Carlo checks of tail and MGF bounds.
//!
//! Every Gaussian draw comes from a ChaCha8 stream keyed by `(seed, particle)` with the
//! step index as stream id, so results do not depend on how rayon schedules the work.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{GaussianLaw, GridDensity};
use crate::error::{ensure, LabError, Result};
use crate::potentials::PotentialSpec;

const INIT_STREAM: u64 = u64::MAX;
const FRESH_STREAM: u64 = u64::MAX - 1;

/// Counter-based generator for one particle at one step.
pub fn noise_rng(seed: u64, particle: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&particle.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-step summary of particle norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub k: u64,
    pub max_norm: f64,
    pub mean_norm: f64,
}

/// `n_particles × d` positions after `step_index` LMC steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: Vec<f64>,
    d: usize,
    pub step_index: u64,
    pub seed: u64,
    pub h: f64,
}

impl Ensemble {
    /// Draws `n_particles` from a Gaussian law.
    pub fn from_law(init: &GaussianLaw, n_particles: usize, seed: u64, h: f64) -> Result<Self> {
        ensure(h > 0.0 && h.is_finite(), || format!("step size h = {h} must be positive"))?;
        let d = init.dim();
        let chol = init.cholesky_factor()?;
        let mut particles = vec![0.0; n_particles * d];
        particles.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
            let mut rng = noise_rng(seed, i as u64, INIT_STREAM);
            let mut z = vec![0.0; d];
            fill_normal(&mut rng, &mut z);
            let y = &init.mean + &chol * DVector::from_vec(z);
            x.copy_from_slice(y.as_slice());
        });
        Ok(Self { particles, d, step_index: 0, seed, h })
    }

    /// Draws `n_particles` from a 1D/2D grid law, uniformly within the chosen cell.
    pub fn from_grid(grid: &GridDensity, n_particles: usize, seed: u64, h: f64) -> Result<Self> {
        ensure(h > 0.0 && h.is_finite(), || format!("step size h = {h} must be positive"))?;
        let d = grid.dims();
        let cdf: Vec<f64> = grid
            .values()
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let total = *cdf.last().expect("grid is nonempty");
        let mut particles = vec![0.0; n_particles * d];
        particles.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
            let mut rng = noise_rng(seed, i as u64, INIT_STREAM);
            let u: f64 = rng.random::<f64>() * total;
            let idx = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
            let c = grid.coords(idx);
            for (a, (xa, ca)) in x.iter_mut().zip(&c).enumerate() {
                *xa = ca + (rng.random::<f64>() - 0.5) * grid.axes()[a].dx();
            }
        });
        Ok(Self { particles, d, step_index: 0, seed, h })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.particles.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.d..(i + 1) * self.d]
    }

    pub fn positions(&self) -> &[f64] {
        &self.particles
    }

    pub fn norm_stats(&self) -> NormStats {
        let norms: Vec<f64> = self.particles.par_chunks(self.d).map(norm).collect();
        NormStats {
            k: self.step_index,
            max_norm: norms.iter().fold(0.0, |a, &b| a.max(b)),
            mean_norm: norms.iter().sum::<f64>() / norms.len() as f64,
        }
    }

    /// Sample mean and covariance (row-major) of the positions.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (self.len() as f64, self.d);
        let mut mean = vec![0.0; d];
        for x in self.particles.chunks(d) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![0.0; d * d];
        for x in self.particles.chunks(d) {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= n - 1.0);
        (mean, cov)
    }

    /// Runs `n_steps` LMC steps, optionally recording norm statistics after each.
    pub fn advance(&mut self, spec: &PotentialSpec, n_steps: u64, mut norms: Option<&mut Vec<NormStats>>) -> Result<()> {
        ensure(spec.dim() == self.d, || format!("potential has d = {}, ensemble has d = {}", spec.dim(), self.d))?;
        let (d, h, seed) = (self.d, self.h, self.seed);
        let scale = (2.0 * h).sqrt();
        for _ in 0..n_steps {
            let k = self.step_index;
            let bad = self
                .particles
                .par_chunks_mut(d)
                .enumerate()
                .map(|(i, x)| {
                    let mut rng = noise_rng(seed, i as u64, k);
                    let mut g = vec![0.0; d];
                    spec.grad(x, &mut g);
                    let mut finite = true;
                    for (xa, ga) in x.iter_mut().zip(&g) {
                        let xi: f64 = rng.sample(StandardNormal);
                        *xa += -h * ga + scale * xi;
                        finite &= xa.is_finite();
                    }
                    if finite {
                        usize::MAX
                    } else {
                        i
                    }
                })
                .min()
                .unwrap_or(usize::MAX);
            self.step_index += 1;
            if bad != usize::MAX {
                return Err(LabError::ChainDiverged { step: self.step_index as usize, particle: bad });
            }
            if let Some(out) = norms.as_deref_mut() {
                out.push(self.norm_stats());
            }
        }
        Ok(())
    }

    /// Writes `particle,x0,...` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["particle".to_string()];
        header.extend((0..self.d).map(|a| format!("x{a}")));
        wtr.write_record(&header)?;
        for (i, x) in self.particles.chunks(self.d).enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(x.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Writes `k,max_norm,mean_norm` rows.
pub fn write_norms_csv<W: Write>(norms: &[NormStats], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["k", "max_norm", "mean_norm"])?;
    for s in norms {
        wtr.write_record([s.k.to_string(), format!("{:.17e}", s.max_norm), format!("{:.17e}", s.mean_norm)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Result of [`lmc_run`].
#[derive(Debug, Clone)]
pub struct LmcRun {
    pub ensemble: Ensemble,
    pub norms: Vec<NormStats>,
}

/// Draws `n_particles` from `init` and runs `n_steps` LMC steps.
pub fn lmc_run(spec: &PotentialSpec, init: &GaussianLaw, h: f64, n_steps: u64, n_particles: usize, seed: u64) -> Result<LmcRun> {
    ensure(init.dim() == spec.dim(), || "initial law and potential dimensions differ".into())?;
    let mut ensemble = Ensemble::from_law(init, n_particles, seed, h)?;
    let mut norms = vec![ensemble.norm_stats()];
    ensemble.advance(spec, n_steps, Some(&mut norms))?;
    Ok(LmcRun { ensemble, norms })
}

/// Brownian increment used by [`interpolated_position`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// `B_t − B_kh = sqrt(t) ξ_k` with the draw the next LMC step will use.
    Matched,
    /// An independent draw keyed by the given seed.
    Fresh(u64),
}

/// Positions of the interpolated process at time `kh + t_offset`.
pub fn interpolated_position(ensemble: &Ensemble, spec: &PotentialSpec, t_offset: f64, noise: NoiseMode) -> Result<Vec<f64>> {
    ensure((0.0..=ensemble.h).contains(&t_offset), || format!("offset {t_offset} outside [0, h = {}]", ensemble.h))?;
    ensure(spec.dim() == ensemble.d, || "potential and ensemble dimensions differ".into())?;
    let d = ensemble.d;
    let scale = (2.0 * t_offset).sqrt();
    let mut out = ensemble.particles.clone();
    out.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
        let mut rng = match noise {
            NoiseMode::Matched => noise_rng(ensemble.seed, i as u64, ensemble.step_index),
            NoiseMode::Fresh(s) => noise_rng(s, i as u64, FRESH_STREAM),
        };
        let mut g = vec![0.0; d];
        spec.grad(x, &mut g);
        for (xa, ga) in x.iter_mut().zip(&g) {
            let xi: f64 = rng.sample(StandardNormal);
            *xa += -t_offset * ga + scale * xi;
        }
    });
    Ok(out)
}

/// Euler–Maruyama paths of the Langevin diffusion with `substeps` fine steps per `h`.
///
/// Returns, per run, `max_{k < n} ‖z_kh‖`.
pub fn diffusion_max_norms(
    spec: &PotentialSpec,
    init: &GaussianLaw,
    h: f64,
    n: usize,
    substeps: usize,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    ensure(h > 0.0 && substeps >= 1 && n >= 1, || "need h > 0, n >= 1 and substeps >= 1".into())?;
    let start = Ensemble::from_law(init, n_runs, seed, h)?;
    let d = start.d;
    let dt = h / substeps as f64;
    let scale = (2.0 * dt).sqrt();
    (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let mut x = start.particle(run).to_vec();
            let mut g = vec![0.0; d];
            let mut max = norm(&x);
            let mut rng = noise_rng(seed, run as u64, 0);
            for k in 1..n {
                for _ in 0..substeps {
                    spec.grad(&x, &mut g);
                    for (xa, ga) in x.iter_mut().zip(&g) {
                        let xi: f64 = rng.sample(StandardNormal);
                        *xa += -dt * ga + scale * xi;
                    }
                }
                let r = norm(&x);
                if !r.is_finite() {
                    return Err(LabError::ChainDiverged { step: k, particle: run });
                }
                max = max.max(r);
            }
            Ok(max)
        })
        .collect()
}

/// Inputs of the iterate tail threshold `R_δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailInputs {
    pub m: f64,
    pub h: f64,
    pub n: usize,
    pub l: f64,
    pub d: usize,
    /// `R_2(μ0 ‖ π̂)`; values below 1 are raised to 1 as the bound assumes.
    pub r2_hat: f64,
    /// Leading coefficient, 490 in the stated bound.
    pub coefficient: f64,
}

impl TailInputs {
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.h
    }

    /// `2m + c sqrt(T R ln 8N) + 230 sqrt(h) m (L + 1/T) sqrt(T/d) + 160 sqrt(T ln(1/δ))`.
    pub fn threshold(&self, delta: f64) -> f64 {
        let t = self.horizon();
        let r2 = self.r2_hat.max(1.0);
        2.0 * self.m
            + self.coefficient * (t * r2 * (8.0 * self.n as f64).ln()).sqrt()
            + 230.0 * self.h.sqrt() * self.m * (self.l + 1.0 / t) * (t / self.d as f64).sqrt()
            + 160.0 * (t * (1.0 / delta).ln()).sqrt()
    }

    /// Step-size condition `h ≤ min{1/(L + 1/T), T/d}/3` of the bound.
    pub fn step_condition(&self) -> (f64, f64) {
        let t = self.horizon();
        (self.h, (1.0 / (self.l + 1.0 / t)).min(t / self.d as f64) / 3.0)
    }
}

/// Empirical exceedance of a tail threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub delta: f64,
    pub threshold: f64,
    pub empirical_exceed_rate: f64,
    /// `δ + 3 sqrt(δ(1 − δ)/n_runs)`.
    pub allowed_rate: f64,
    pub n_runs: usize,
    pub passes: bool,
}

/// Compares per-run maxima against `threshold`.
pub fn check_iterate_tails(max_norms: &[f64], delta: f64, threshold: f64) -> Result<TailReport> {
    ensure(delta > 0.0 && delta < 0.5, || format!("delta = {delta} not in (0, 1/2)"))?;
    ensure(!max_norms.is_empty(), || "no trajectories".into())?;
    let n = max_norms.len();
    let exceed = max_norms.iter().filter(|r| **r > threshold).count();
    let rate = exceed as f64 / n as f64;
    let allowed = delta + 3.0 * (delta * (1.0 - delta) / n as f64).sqrt();
    Ok(TailReport { delta, threshold, empirical_exceed_rate: rate, allowed_rate: allowed, n_runs: n, passes: rate <= allowed })
}

/// Monte Carlo estimate of an exponential moment against its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfReport {
    pub lambda: f64,
    pub mean: f64,
    pub std_error: f64,
    pub bound: f64,
    /// `mean ≤ bound (1 + 3 SE/mean)`.
    pub passes: bool,
}

impl MgfReport {
    fn from_samples(lambda: f64, samples: &[f64], bound: f64) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std_error = (var / n).sqrt();
        Self { lambda, mean, std_error, bound, passes: mean <= bound * (1.0 + 3.0 * std_error / mean) }
    }
}

/// Squared and fractional-power Brownian checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianMgfReport {
    pub squared: MgfReport,
    /// `(s, report)` for `s ∈ {0.5, 0.75}`.
    pub fractional: Vec<(f64, MgfReport)>,
}

impl BrownianMgfReport {
    pub fn passes(&self) -> bool {
        self.squared.passes && self.fractional.iter().all(|(_, r)| r.passes)
    }
}

/// Discretized `sup_{t ≤ h} ‖B_t‖²` for each path; a lower bound on the true supremum.
fn brownian_sup_sq(d: usize, h: f64, n_paths: usize, inner_steps: usize, seed: u64) -> Vec<f64> {
    let scale = (h / inner_steps as f64).sqrt();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = noise_rng(seed, p as u64, 0);
            let mut b = vec![0.0; d];
            let mut sup = 0.0f64;
            for _ in 0..inner_steps {
                for v in b.iter_mut() {
                    let xi: f64 = rng.sample(StandardNormal);
                    *v += scale * xi;
                }
                sup = sup.max(b.iter().map(|v| v * v).sum());
            }
            sup
        })
        .collect()
}

/// Checks `E exp(λ sup_{t≤h} ‖B_t‖²) ≤ exp(6 d h λ)` and the fractional variants.
pub fn check_brownian_mgf(d: usize, h: f64, lambda: f64, n_paths: usize, inner_steps: usize, seed: u64) -> Result<BrownianMgfReport> {
    check_brownian_mgf_with_constant(d, h, lambda, n_paths, inner_steps, seed, 6.0)
}

/// As [`check_brownian_mgf`] with `constant` in place of 6 in the squared bound.
///
/// The fractional checks use `min{λ, (12dh)^(−s)/2}` so they stay admissible.
pub fn check_brownian_mgf_with_constant(
    d: usize,
    h: f64,
    lambda: f64,
    n_paths: usize,
    inner_steps: usize,
    seed: u64,
    constant: f64,
) -> Result<BrownianMgfReport> {
    ensure(d >= 1 && h > 0.0, || format!("need d >= 1 and h > 0, got d = {d}, h = {h}"))?;
    ensure(lambda >= 0.0 && lambda <= 1.0 / (4.0 * h), || format!("lambda = {lambda} outside [0, 1/(4h)]"))?;
    ensure(inner_steps >= 64, || format!("inner_steps = {inner_steps} below 64"))?;
    ensure(n_paths >= 2, || "need at least two paths".into())?;
    let sups = brownian_sup_sq(d, h, n_paths, inner_steps, seed);
    let samples: Vec<f64> = sups.iter().map(|s| (lambda * s).exp()).collect();
    let squared = MgfReport::from_samples(lambda, &samples, (constant * d as f64 * h * lambda).exp());
    let (df, fractional) = (d as f64, [0.5, 0.75]);
    let fractional = fractional
        .iter()
        .map(|&s| {
            let lam = lambda.min(0.5 / (12.0 * df * h).powf(s));
            let samples: Vec<f64> = sups.iter().map(|v| (lam * v.powf(s)).exp()).collect();
            (s, MgfReport::from_samples(lam, &samples, (144.0 * df.powf(s) * h.powf(s) * lam).exp()))
        })
        .collect();
    Ok(BrownianMgfReport { squared, fractional })
}

/// Checks `E exp(λ sup_{t≤h} ‖z_t − z0‖^{2s}) ≤ exp{8 h^{2s} L^{2s} (1 + ‖z0‖^{2s²}) λ + 1152 d^s h^s λ}`
/// on fine-step diffusion paths from `z0`.
#[allow(clippy::too_many_arguments)]
pub fn check_displacement_mgf(
    spec: &PotentialSpec,
    z0: &[f64],
    h: f64,
    lambda: f64,
    s: f64,
    n_paths: usize,
    inner_steps: usize,
    seed: u64,
) -> Result<MgfReport> {
    let d = spec.dim();
    let l = spec.smoothness.l;
    ensure(z0.len() == d, || "z0 has the wrong dimension".into())?;
    ensure(s == spec.smoothness.s, || format!("s = {s} differs from the declared Hölder exponent {}", spec.smoothness.s))?;
    ensure(h > 0.0 && h <= 1.0 / (6.0 * l), || format!("h = {h} outside (0, 1/(6L)]"))?;
    let cap = 1.0 / (96.0 * (d as f64).powf(s) * h.powf(s));
    ensure(lambda >= 0.0 && lambda <= cap, || format!("lambda = {lambda} outside [0, {cap}]"))?;
    ensure(inner_steps >= 64 && n_paths >= 2, || "need inner_steps >= 64 and at least two paths".into())?;
    let dt = h / inner_steps as f64;
    let scale = (2.0 * dt).sqrt();
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = noise_rng(seed, p as u64, 0);
            let mut x = z0.to_vec();
            let mut g = vec![0.0; d];
            let mut sup = 0.0f64;
            for _ in 0..inner_steps {
                spec.grad(&x, &mut g);
                for (xa, ga) in x.iter_mut().zip(&g) {
                    let xi: f64 = rng.sample(StandardNormal);
                    *xa += -dt * ga + scale * xi;
                }
                let disp: f64 = x.iter().zip(z0).map(|(a, b)| (a - b).powi(2)).sum();
                sup = sup.max(disp);
            }
            (lambda * sup.powf(s)).exp()
        })
        .collect();
    let z0_norm = norm(z0);
    let bound = (8.0 * (h * l).powf(2.0 * s) * (1.0 + z0_norm.powf(2.0 * s * s)) * lambda
        + 1152.0 * (d as f64).powf(s) * h.powf(s) * lambda)
        .exp();
    Ok(MgfReport::from_samples(lambda, &samples, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_oracle::{lmc_law, QuadraticTarget};
    use crate::potentials::{make_builtin, Family};
    use nalgebra::DMatrix;

    fn quad(d: usize) -> PotentialSpec {
        make_builtin(Family::Quadratic { a: DMatrix::identity(d, d) }, d).unwrap()
    }

    fn within_se(sample: f64, exact: f64, se: f64, k: f64) -> bool {
        (sample - exact).abs() <= k * se
    }

    #[test]
    fn zero_steps_reproduce_the_initial_law() {
        let init = GaussianLaw::isotropic(2, 0.5, 2.0).unwrap();
        let run = lmc_run(&quad(2), &init, 0.1, 0, 100_000, 7).unwrap();
        let (mean, cov) = run.ensemble.moments();
        let n = 100_000f64;
        for a in 0..2 {
            assert!(within_se(mean[a], 0.5, (2.0 / n).sqrt(), 4.0));
            assert!(within_se(cov[a * 3], 2.0, 2.0 * (2.0 / n).sqrt(), 4.0));
        }
        assert_eq!(run.norms.len(), 1);
    }

    #[test]
    fn same_seed_is_bitwise_identical_across_thread_counts() {
        let init = GaussianLaw::isotropic(3, 1.0, 1.0).unwrap();
        let a = lmc_run(&quad(3), &init, 0.05, 20, 5000, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| lmc_run(&quad(3), &init, 0.05, 20, 5000, 11).unwrap());
        assert_eq!(a.ensemble, b.ensemble);
        assert_eq!(a.norms, b.norms);
        let c = lmc_run(&quad(3), &init, 0.05, 20, 5000, 12).unwrap();
        assert_ne!(a.ensemble, c.ensemble);
    }

    #[test]
    fn split_runs_equal_one_run() {
        let init = GaussianLaw::isotropic(2, 0.0, 1.0).unwrap();
        let whole = lmc_run(&quad(2), &init, 0.1, 10, 1000, 3).unwrap().ensemble;
        let mut split = Ensemble::from_law(&init, 1000, 3, 0.1).unwrap();
        split.advance(&quad(2), 4, None).unwrap();
        split.advance(&quad(2), 6, None).unwrap();
        assert_eq!(whole, split);
    }

    #[test]
    fn quadratic_ensemble_matches_exact_law() {
        let target = QuadraticTarget::diagonal(&[1.0, 2.0]).unwrap();
        let spec = target.potential_spec().unwrap();
        let init = GaussianLaw::isotropic(2, 2.0, 0.5).unwrap();
        let h = 0.1;
        let n = 200_000;
        let mut ens = Ensemble::from_law(&init, n, 5, h).unwrap();
        for k in [0u64, 1, 5, 20] {
            ens.advance(&spec, k - ens.step_index, None).unwrap();
            let law = lmc_law(&target, &init, h, k).unwrap();
            let (mean, cov) = ens.moments();
            for a in 0..2 {
                let v = law.cov[(a, a)];
                assert!(within_se(mean[a], law.mean[a], (v / n as f64).sqrt(), 4.0), "k={k} mean");
                assert!(within_se(cov[a * 3], v, v * (2.0 / n as f64).sqrt(), 4.0), "k={k} var");
            }
        }
    }

    #[test]
    fn grid_sampling_matches_grid_moments() {
        let spec = make_builtin(Family::SmoothedNorm, 1).unwrap();
        let axes = vec![crate::divergence::Axis::new(-40.0, 40.0, 4000).unwrap()];
        let pi = crate::density_lab::target_density_grid(&spec, axes).unwrap();
        let ens = Ensemble::from_grid(&pi, 200_000, 1, 0.01).unwrap();
        let (mean, cov) = ens.moments();
        let var = pi.covariance()[0];
        assert!(within_se(mean[0], 0.0, (var / 2e5).sqrt(), 4.0));
        assert!((cov[0] - var).abs() / var < 0.03);
    }

    #[test]
    fn divergent_chain_is_reported() {
        let init = GaussianLaw::isotropic(1, 1.0, 0.1).unwrap();
        let err = lmc_run(&quad(1), &init, 5.0, 2000, 10, 0).unwrap_err();
        assert!(matches!(err, LabError::ChainDiverged { .. }), "{err:?}");
    }

    #[test]
    fn interpolation_endpoints() {
        let spec = quad(2);
        let init = GaussianLaw::isotropic(2, 1.0, 1.0).unwrap();
        let mut ens = Ensemble::from_law(&init, 1000, 9, 0.1).unwrap();
        ens.advance(&spec, 3, None).unwrap();
        let at0 = interpolated_position(&ens, &spec, 0.0, NoiseMode::Matched).unwrap();
        assert_eq!(at0, ens.positions());
        let at_h = interpolated_position(&ens, &spec, 0.1, NoiseMode::Matched).unwrap();
        let mut next = ens.clone();
        next.advance(&spec, 1, None).unwrap();
        for (a, b) in at_h.iter().zip(next.positions()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
        assert!(interpolated_position(&ens, &spec, 0.2, NoiseMode::Matched).is_err());
    }

    #[test]
    fn interpolated_variance_formula() {
        let spec = quad(1);
        let init = GaussianLaw::isotropic(1, 0.0, 3.0).unwrap();
        let ens = Ensemble::from_law(&init, 400_000, 2, 0.5).unwrap();
        let v_k = ens.moments().1[0];
        for t in [0.1, 0.25, 0.5] {
            let x = interpolated_position(&ens, &spec, t, NoiseMode::Fresh(99)).unwrap();
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let exact = (1.0 - t) * (1.0 - t) * v_k + 2.0 * t;
            assert!(within_se(var, exact, exact * (2.0 / n).sqrt(), 4.0), "t={t}: {var} vs {exact}");
        }
    }

    #[test]
    fn tail_report_edges() {
        let r = check_iterate_tails(&[1.0, 2.0, 3.0], 0.1, f64::INFINITY).unwrap();
        assert_eq!(r.empirical_exceed_rate, 0.0);
        assert!(r.passes);
        let r = check_iterate_tails(&[1.0, 2.0, 3.0, 4.0], 0.1, 2.5).unwrap();
        assert_eq!(r.empirical_exceed_rate, 0.5);
        assert!(check_iterate_tails(&[1.0], 0.6, 1.0).is_err());
    }

    #[test]
    fn tail_threshold_is_monotone_in_coefficient() {
        let inputs = TailInputs { m: 2.0, h: 0.01, n: 1000, l: 1.0, d: 1, r2_hat: 0.5, coefficient: 490.0 };
        let doubled = TailInputs { coefficient: 980.0, ..inputs };
        assert!(doubled.threshold(0.1) > inputs.threshold(0.1));
        let (h, cap) = inputs.step_condition();
        assert!(h <= cap);
    }

    #[test]
    fn brownian_mgf_trivial_and_typical() {
        let zero = check_brownian_mgf(2, 0.01, 0.0, 1000, 64, 1).unwrap();
        assert_eq!(zero.squared.mean, 1.0);
        assert_eq!(zero.squared.bound, 1.0);
        assert!(zero.passes());
        let r = check_brownian_mgf(2, 0.01, 10.0, 100_000, 64, 2).unwrap();
        assert!(r.passes(), "{r:?}");
        assert!(r.squared.mean < 0.5 * r.squared.bound);
        assert!(check_brownian_mgf(2, 0.01, 30.0, 10, 64, 2).is_err());
        assert!(check_brownian_mgf(2, 0.01, 1.0, 10, 32, 2).is_err());
    }

    #[test]
    fn refining_the_supremum_keeps_a_pass() {
        let coarse = check_brownian_mgf(1, 0.01, 12.5, 50_000, 64, 3).unwrap();
        let fine = check_brownian_mgf(1, 0.01, 12.5, 50_000, 128, 3).unwrap();
        assert!(coarse.passes() && fine.passes());
    }

    #[test]
    fn brownian_negative_control_fails() {
        let r = check_brownian_mgf_with_constant(1, 0.01, 12.5, 100_000, 64, 4, 1.0).unwrap();
        assert!(!r.squared.passes, "{r:?}");
    }

    #[test]
    fn displacement_mgf_quadratic_and_power() {
        let spec = quad(1);
        let zero = check_displacement_mgf(&spec, &[0.0], 0.01, 0.0, 1.0, 100, 64, 0).unwrap();
        assert!(zero.passes && zero.mean == 1.0);
        for z0 in [0.0, 5.0] {
            let r = check_displacement_mgf(&spec, &[z0], 0.01, 0.5, 1.0, 20_000, 64, 1).unwrap();
            assert!(r.passes, "{r:?}");
        }
        // s = 1/2 caps λ at 1/(96 sqrt(h)).
        let power = make_builtin(Family::Power { alpha: 1.5 }, 1).unwrap();
        let r = check_displacement_mgf(&power, &[5.0], 0.01, 0.05, 0.5, 20_000, 64, 1).unwrap();
        assert!(r.passes, "{r:?}");
        assert!(check_displacement_mgf(&spec, &[0.0], 0.5, 0.1, 1.0, 100, 64, 0).is_err());
        assert!(check_displacement_mgf(&spec, &[0.0], 0.01, 5.0, 1.0, 100, 64, 0).is_err());
    }

    #[test]
    fn csv_outputs_have_headers() {
        let init = GaussianLaw::isotropic(2, 0.0, 1.0).unwrap();
        let run = lmc_run(&quad(2), &init, 0.1, 2, 3, 0).unwrap();
        let mut buf = Vec::new();
        run.ensemble.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("particle,x0,x1\n0,"));
        let mut buf = Vec::new();
        write_norms_csv(&run.norms, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("k,max_norm,mean_norm\n0,"));
        assert_eq!(s.lines().count(), 4);
    }
}

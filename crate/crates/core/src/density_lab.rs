//! Deterministic evolution of laws on 1D/2D grids.
//!
//! * [`propagate_lmc_density`] applies the exact one-step LMC kernel
//!   `μ_{k+1}(y) = ∫ N(y; x − h∇V(x), 2h I) μ_k(dx)` by midpoint quadrature.
//! * [`propagate_diffusion_density`] steps a nearest-neighbour lattice jump process
//!   (Scharfetter–Gummel rates) whose generator discretizes the Fokker–Planck
//!   equation of the Langevin diffusion. Its invariant law is exactly the grid
//!   target, so Rényi divergences to the target are nonincreasing along it.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{renyi_grid, Axis, GridDensity, BOUNDARY_MASS_THRESHOLD};
use crate::error::{ensure, LabError, Result};
use crate::potentials::PotentialSpec;

/// Largest tolerated pre-renormalization mass drift per step.
pub const MASS_DRIFT_LIMIT: f64 = 1e-6;

/// Largest grid size per axis in 2D.
pub const MAX_CELLS_2D: usize = 512;

/// LMC grid-propagation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub h: f64,
    pub n_steps: usize,
    /// Kernel truncation radius in standard deviations.
    pub kernel_truncation: f64,
    /// Keep every `record_every`-th law (the initial and final laws are always kept).
    pub record_every: usize,
}

impl PropagationConfig {
    pub fn new(h: f64, n_steps: usize) -> Self {
        Self { h, n_steps, kernel_truncation: 8.0, record_every: 1 }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure(self.h > 0.0 && self.h.is_finite(), || format!("step size h = {} must be positive", self.h))?;
        ensure(self.kernel_truncation >= 6.0, || format!("kernel truncation {} below 6 standard deviations", self.kernel_truncation))?;
        ensure(self.record_every >= 1, || "record_every must be at least 1".into())
    }
}

/// Lattice-diffusion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub h_fine: f64,
    pub n_steps: usize,
    pub record_every: usize,
    /// Coarse LMC step the proxy is compared against; enforces `h_fine ≤ h/50`.
    pub reference_h: Option<f64>,
}

impl DiffusionConfig {
    pub fn new(h_fine: f64, n_steps: usize) -> Self {
        Self { h_fine, n_steps, record_every: 1, reference_h: None }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure(self.h_fine > 0.0 && self.h_fine.is_finite(), || format!("h_fine = {} must be positive", self.h_fine))?;
        ensure(self.record_every >= 1, || "record_every must be at least 1".into())?;
        if let Some(h) = self.reference_h {
            ensure(self.h_fine <= h / 50.0, || format!("h_fine = {} exceeds h/50 = {}", self.h_fine, h / 50.0))?;
        }
        Ok(())
    }
}

/// A recorded law along a propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub density: GridDensity,
}

/// Recorded laws plus the per-step quadrature diagnostics.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub snapshots: Vec<Snapshot>,
    /// Pre-renormalization mass minus one, per step.
    pub mass_drift: Vec<f64>,
    pub max_boundary_mass: f64,
}

impl Propagation {
    pub fn last(&self) -> &GridDensity {
        &self.snapshots.last().expect("at least the initial law").density
    }

    pub fn max_abs_drift(&self) -> f64 {
        self.mass_drift.iter().fold(0.0, |a, d| a.max(d.abs()))
    }
}

/// Measured `R_q(law_t ‖ π)` along a propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub q: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl DecayCurve {
    /// Writes `t,R_q` rows after `# key=value` header lines.
    pub fn write_csv<W: Write>(&self, mut w: W, metadata: &[(&str, String)]) -> Result<()> {
        writeln!(w, "# q={}", self.q)?;
        for (k, v) in metadata {
            writeln!(w, "# {k}={v}")?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "R_q"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            wtr.write_record([format!("{t:.10e}"), format!("{v:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// First time at which the curve is at or below `level`.
    pub fn crossing_time(&self, level: f64) -> Option<f64> {
        self.times.iter().zip(&self.values).find(|(_, v)| **v <= level).map(|(t, _)| *t)
    }

    /// Largest increase between consecutive values.
    pub fn max_increase(&self) -> f64 {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Least-squares line through `(t, ln R)` over points with `lo < R ≤ hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn fit_log_linear(curve: &DecayCurve, lo: f64, hi: f64) -> Option<LogLinearFit> {
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.values)
        .filter(|(_, v)| **v > lo && **v <= hi)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    let syy: f64 = pts.iter().map(|(_, y)| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let ss_res: f64 = pts.iter().map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
    Some(LogLinearFit { slope, intercept, r_squared: 1.0 - ss_res / syy, n_points: pts.len() })
}

/// Normalized grid density of `e^{−V}`; fails when the boundary cells hold 1e-8 or more.
pub fn target_density_grid(spec: &PotentialSpec, axes: Vec<Axis>) -> Result<GridDensity> {
    ensure(spec.dim() <= 2, || format!("grids support d <= 2, got d = {}", spec.dim()))?;
    ensure(spec.dim() == axes.len(), || format!("potential has d = {}, grid has {} axes", spec.dim(), axes.len()))?;
    if axes.len() == 2 {
        ensure(axes.iter().all(|a| a.n <= MAX_CELLS_2D), || format!("2D grids are limited to {MAX_CELLS_2D} cells per axis"))?;
    }
    let g = GridDensity::from_log_density(axes, |x| -spec.value(x))?;
    g.check_window(BOUNDARY_MASS_THRESHOLD)?;
    Ok(g)
}

fn gauss_weights(axis: &Axis, c: f64, sigma: f64, trunc: f64, out: &mut Vec<f64>) -> usize {
    let dx = axis.dx();
    let lo_idx = ((c - trunc * sigma - axis.lo) / dx - 0.5).floor().max(0.0) as usize;
    let hi_f = ((c + trunc * sigma - axis.lo) / dx - 0.5).ceil();
    out.clear();
    if hi_f < 0.0 || lo_idx >= axis.n {
        return 0;
    }
    let hi_idx = (hi_f as usize).min(axis.n - 1);
    let norm = dx / (sigma * (2.0 * PI).sqrt());
    for j in lo_idx..=hi_idx {
        let z = (axis.center(j) - c) / sigma;
        out.push(if z.abs() <= trunc { norm * (-0.5 * z * z).exp() } else { 0.0 });
    }
    lo_idx
}

const CHUNK: usize = 256;

/// One exact LMC step on the grid; returns the unnormalized output masses.
fn lmc_step(mu: &GridDensity, spec: &PotentialSpec, h: f64, trunc: f64) -> Vec<f64> {
    let axes = mu.axes();
    let sigma = (2.0 * h).sqrt();
    let n_total = mu.len();
    let d = axes.len();
    let values = mu.values();
    let partials: Vec<Vec<f64>> = (0..n_total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut out = vec![0.0; n_total];
            let (mut w0, mut w1) = (Vec::new(), Vec::new());
            let mut g = vec![0.0; d];
            for idx in chunk * CHUNK..((chunk + 1) * CHUNK).min(n_total) {
                let w = values[idx];
                if w == 0.0 {
                    continue;
                }
                let x = mu.coords(idx);
                spec.grad(&x, &mut g);
                let c0 = x[0] - h * g[0];
                let s0 = gauss_weights(&axes[0], c0, sigma, trunc, &mut w0);
                if d == 1 {
                    for (k, wk) in w0.iter().enumerate() {
                        out[s0 + k] += w * wk;
                    }
                } else {
                    let c1 = x[1] - h * g[1];
                    let s1 = gauss_weights(&axes[1], c1, sigma, trunc, &mut w1);
                    let n1 = axes[1].n;
                    for (a, wa) in w0.iter().enumerate() {
                        let row = (s0 + a) * n1;
                        let wa = w * wa;
                        for (b, wb) in w1.iter().enumerate() {
                            out[row + s1 + b] += wa * wb;
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut total = vec![0.0; n_total];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn renormalize(axes: &[Axis], mut raw: Vec<f64>, step: usize) -> Result<(GridDensity, f64)> {
    let mass: f64 = raw.iter().sum();
    let drift = mass - 1.0;
    if drift.abs() > MASS_DRIFT_LIMIT || !drift.is_finite() {
        return Err(LabError::MassDrift { step, drift, threshold: MASS_DRIFT_LIMIT });
    }
    raw.iter_mut().for_each(|v| *v /= mass);
    Ok((GridDensity::from_parts_unchecked(axes.to_vec(), raw), drift))
}

fn check_leak(g: &GridDensity, step: usize, max_boundary: &mut f64) -> Result<()> {
    let mass = g.boundary_mass();
    *max_boundary = max_boundary.max(mass);
    if mass >= BOUNDARY_MASS_THRESHOLD {
        return Err(LabError::BoundaryLeakage { step, mass, threshold: BOUNDARY_MASS_THRESHOLD });
    }
    Ok(())
}

/// Propagates `mu0` under the exact LMC kernel for `cfg.n_steps` steps.
///
/// Requires at least 4 grid cells per kernel standard deviation `sqrt(2h)` on every axis.
pub fn propagate_lmc_density(mu0: &GridDensity, spec: &PotentialSpec, cfg: &PropagationConfig) -> Result<Propagation> {
    cfg.validate()?;
    ensure(spec.dim() == mu0.dims(), || "potential and grid dimensions differ".into())?;
    let sigma = (2.0 * cfg.h).sqrt();
    let cells_per_sigma = mu0.axes().iter().map(|a| sigma / a.dx()).fold(f64::INFINITY, f64::min);
    if cells_per_sigma < 4.0 {
        return Err(LabError::KernelUnderResolved { cells_per_sigma });
    }
    let mut out = Propagation {
        snapshots: vec![Snapshot { step: 0, time: 0.0, density: mu0.clone() }],
        mass_drift: Vec::with_capacity(cfg.n_steps),
        max_boundary_mass: mu0.boundary_mass(),
    };
    let mut cur = mu0.clone();
    for step in 1..=cfg.n_steps {
        let raw = lmc_step(&cur, spec, cfg.h, cfg.kernel_truncation);
        let (next, drift) = renormalize(mu0.axes(), raw, step)?;
        out.mass_drift.push(drift);
        check_leak(&next, step, &mut out.max_boundary_mass)?;
        cur = next;
        if step % cfg.record_every == 0 || step == cfg.n_steps {
            out.snapshots.push(Snapshot { step, time: step as f64 * cfg.h, density: cur.clone() });
        }
    }
    Ok(out)
}

/// `B(z) = z / (e^z − 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Nearest-neighbour jump rates of the lattice diffusion.
#[derive(Debug, Clone)]
pub struct LatticeGenerator {
    axes: Vec<Axis>,
    /// `up[a][idx]`: rate from `idx` to its successor along axis `a`.
    up: Vec<Vec<f64>>,
    /// `down[a][idx]`: rate from `idx` to its predecessor along axis `a`.
    down: Vec<Vec<f64>>,
    exit: Vec<f64>,
}

impl LatticeGenerator {
    pub fn new(spec: &PotentialSpec, axes: &[Axis]) -> Result<Self> {
        ensure(spec.dim() == axes.len() && axes.len() <= 2, || "potential and grid dimensions differ".into())?;
        let probe = GridDensity::from_parts_unchecked(axes.to_vec(), vec![0.0; axes.iter().map(|a| a.n).product()]);
        let v: Vec<f64> = (0..probe.len()).map(|i| spec.value(&probe.coords(i))).collect();
        let n_total = v.len();
        let stride = |a: usize| if a == 0 && axes.len() == 2 { axes[1].n } else { 1 };
        let pos = |idx: usize, a: usize| if axes.len() == 1 { idx } else if a == 0 { idx / axes[1].n } else { idx % axes[1].n };
        let mut up = vec![vec![0.0; n_total]; axes.len()];
        let mut down = vec![vec![0.0; n_total]; axes.len()];
        for (a, axis) in axes.iter().enumerate() {
            let inv_dx2 = 1.0 / (axis.dx() * axis.dx());
            let st = stride(a);
            for idx in 0..n_total {
                let p = pos(idx, a);
                if p + 1 < axis.n {
                    up[a][idx] = inv_dx2 * bernoulli(v[idx + st] - v[idx]);
                }
                if p > 0 {
                    down[a][idx] = inv_dx2 * bernoulli(v[idx - st] - v[idx]);
                }
            }
        }
        let exit = (0..n_total).map(|i| (0..axes.len()).map(|a| up[a][i] + down[a][i]).sum()).collect();
        Ok(Self { axes: axes.to_vec(), up, down, exit })
    }

    /// Largest `dt · exit rate`; explicit steps need this at most 1.
    pub fn courant(&self, dt: f64) -> f64 {
        dt * self.exit.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    fn step(&self, m: &[f64], dt: f64) -> Vec<f64> {
        let mut out: Vec<f64> = m.iter().zip(&self.exit).map(|(mi, e)| mi * (1.0 - dt * e)).collect();
        for a in 0..self.axes.len() {
            let st = if a == 0 && self.axes.len() == 2 { self.axes[1].n } else { 1 };
            let (up, down) = (&self.up[a], &self.down[a]);
            for idx in 0..m.len() {
                if up[idx] > 0.0 {
                    out[idx + st] += dt * m[idx] * up[idx];
                }
                if down[idx] > 0.0 {
                    out[idx - st] += dt * m[idx] * down[idx];
                }
            }
        }
        out
    }
}

/// Propagates `mu0` under the lattice diffusion with time step `cfg.h_fine`.
pub fn propagate_diffusion_density(mu0: &GridDensity, spec: &PotentialSpec, cfg: &DiffusionConfig) -> Result<Propagation> {
    propagate_diffusion_until(mu0, spec, cfg, |_| false)
}

/// As [`propagate_diffusion_density`], stopping early after the first recorded law for which `stop` holds.
pub fn propagate_diffusion_until(
    mu0: &GridDensity,
    spec: &PotentialSpec,
    cfg: &DiffusionConfig,
    mut stop: impl FnMut(&GridDensity) -> bool,
) -> Result<Propagation> {
    cfg.validate()?;
    let gen = LatticeGenerator::new(spec, mu0.axes())?;
    let courant = gen.courant(cfg.h_fine);
    if courant > 1.0 {
        return Err(LabError::UnstableStep { courant });
    }
    let mut out = Propagation {
        snapshots: vec![Snapshot { step: 0, time: 0.0, density: mu0.clone() }],
        mass_drift: Vec::with_capacity(cfg.n_steps),
        max_boundary_mass: mu0.boundary_mass(),
    };
    let mut cur = mu0.clone();
    for step in 1..=cfg.n_steps {
        let raw = gen.step(cur.values(), cfg.h_fine);
        let (next, drift) = renormalize(mu0.axes(), raw, step)?;
        out.mass_drift.push(drift);
        check_leak(&next, step, &mut out.max_boundary_mass)?;
        cur = next;
        if step % cfg.record_every == 0 || step == cfg.n_steps {
            out.snapshots.push(Snapshot { step, time: step as f64 * cfg.h_fine, density: cur.clone() });
            if stop(&cur) {
                break;
            }
        }
    }
    Ok(out)
}

/// `R_q(law_t ‖ target)` at each recorded law.
pub fn decay_curve(q: f64, snapshots: &[Snapshot], target: &GridDensity) -> Result<DecayCurve> {
    let mut times = Vec::with_capacity(snapshots.len());
    let mut values = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        times.push(s.time);
        values.push(renyi_grid(q, &s.density, target)?.value);
    }
    Ok(DecayCurve { q, times, values })
}

/// Refinement check of the lattice diffusion at a fixed horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsonReport {
    pub horizon: f64,
    pub value: f64,
    pub value_half_step: f64,
    pub relative_change: f64,
    pub holds: bool,
}

impl RichardsonReport {
    pub fn into_result(self) -> Result<Self> {
        if self.holds {
            Ok(self)
        } else {
            Err(LabError::RefinementFailure { relative_change: self.relative_change, tolerance: 0.05 })
        }
    }
}

/// Compares `R_2(π_T ‖ π)` at time step `h_fine` and `h_fine/2`; passes within 5%.
pub fn richardson_check(mu0: &GridDensity, spec: &PotentialSpec, target: &GridDensity, h_fine: f64, n_steps: usize) -> Result<RichardsonReport> {
    let coarse = propagate_diffusion_density(mu0, spec, &DiffusionConfig::new(h_fine, n_steps).record_every(n_steps))?;
    let fine = propagate_diffusion_density(mu0, spec, &DiffusionConfig::new(h_fine / 2.0, 2 * n_steps).record_every(2 * n_steps))?;
    let value = renyi_grid(2.0, coarse.last(), target)?.value;
    let value_half_step = renyi_grid(2.0, fine.last(), target)?.value;
    let relative_change = (value - value_half_step).abs() / value_half_step.abs().max(f64::MIN_POSITIVE);
    Ok(RichardsonReport { horizon: n_steps as f64 * h_fine, value, value_half_step, relative_change, holds: relative_change <= 0.05 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::GaussianLaw;
    use crate::gaussian_oracle::{lmc_law, ou_law, stationary_law, QuadraticTarget};
    use crate::potentials::{make_builtin, make_modified, Family, Potential, SmoothnessRecord};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn quad1() -> PotentialSpec {
        make_builtin(Family::Quadratic { a: DMatrix::identity(1, 1) }, 1).unwrap()
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<Axis> {
        vec![Axis::new(lo, hi, n).unwrap()]
    }

    #[test]
    fn target_grid_matches_standard_normal() {
        let g = target_density_grid(&quad1(), axis(-10.0, 10.0, 2048)).unwrap();
        let dx = 20.0 / 2048.0;
        let sup = (0..g.len())
            .map(|i| {
                let x = g.coords(i)[0];
                (g.values()[i] / dx - (-0.5 * x * x).exp() / (2.0 * PI).sqrt()).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup <= 1e-6, "{sup:e}");
    }

    #[test]
    fn target_grid_symmetry_and_window() {
        let spec = make_builtin(Family::Power { alpha: 1.5 }, 1).unwrap();
        let g = target_density_grid(&spec, axis(-30.0, 30.0, 1000)).unwrap();
        assert!(g.mean()[0].abs() < 1e-14);
        assert!(matches!(target_density_grid(&spec, axis(-3.0, 3.0, 100)), Err(LabError::WindowTooSmall { .. })));
        let modified = make_modified(&spec, 1.0, 40.0).unwrap().to_spec().unwrap();
        let gm = target_density_grid(&modified, axis(-30.0, 30.0, 1000)).unwrap();
        assert_eq!(gm.values(), g.values());
    }

    #[test]
    fn one_lmc_step_on_quadratic() {
        let h = 0.05;
        let mu0 = GridDensity::from_gaussian(axis(-12.0, 12.0, 2400), &GaussianLaw::isotropic(1, 0.0, 1.0).unwrap()).unwrap();
        let p = propagate_lmc_density(&mu0, &quad1(), &PropagationConfig::new(h, 1)).unwrap();
        let var = p.last().covariance()[0];
        assert_relative_eq!(var, (1.0 - h).powi(2) + 2.0 * h, max_relative = 1e-9);
    }

    #[test]
    fn constant_potential_is_pure_smoothing() {
        #[derive(Debug)]
        struct Flat;
        impl Potential for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn grad(&self, _: &[f64], out: &mut [f64]) {
                out[0] = 0.0;
            }
        }
        let flat = PotentialSpec::custom("flat", Arc::new(Flat), SmoothnessRecord::new(1.0, 1.0).unwrap()).unwrap();
        let mu0 = GridDensity::from_gaussian(axis(-12.0, 12.0, 2400), &GaussianLaw::isotropic(1, 0.5, 0.7).unwrap()).unwrap();
        let h = 0.1;
        let p = propagate_lmc_density(&mu0, &flat, &PropagationConfig::new(h, 1)).unwrap();
        assert_relative_eq!(p.last().covariance()[0], 0.7 + 2.0 * h, max_relative = 1e-9);
        assert_relative_eq!(p.last().mean()[0], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn lmc_grid_matches_oracle_moments() {
        let target = QuadraticTarget::isotropic(1, 1.0).unwrap();
        let init = GaussianLaw::isotropic(1, 1.5, 0.6).unwrap();
        let h = 0.02;
        let mu0 = GridDensity::from_gaussian(axis(-12.0, 12.0, 1800), &init).unwrap();
        let p = propagate_lmc_density(&mu0, &quad1(), &PropagationConfig::new(h, 40)).unwrap();
        for s in &p.snapshots {
            let law = lmc_law(&target, &init, h, s.step as u64).unwrap();
            assert!((s.density.mean()[0] - law.mean[0]).abs() <= 1e-6);
            assert!((s.density.covariance()[0] - law.cov[(0, 0)]).abs() <= 1e-6);
        }
        assert!(p.max_abs_drift() <= 1e-8);
        assert!(p.max_boundary_mass < BOUNDARY_MASS_THRESHOLD);
    }

    #[test]
    fn lmc_grid_in_two_dimensions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let target = QuadraticTarget::new(a.clone()).unwrap();
        let spec = make_builtin(Family::Quadratic { a }, 2).unwrap();
        let init = GaussianLaw::isotropic(2, 0.5, 0.8).unwrap();
        let h = 0.05;
        let axes = vec![Axis::new(-8.0, 8.0, 256).unwrap(), Axis::new(-8.0, 8.0, 256).unwrap()];
        let mu0 = GridDensity::from_gaussian(axes, &init).unwrap();
        let p = propagate_lmc_density(&mu0, &spec, &PropagationConfig::new(h, 5)).unwrap();
        let law = lmc_law(&target, &init, h, 5).unwrap();
        let cov = p.last().covariance();
        for (i, c) in cov.iter().enumerate() {
            assert!((c - law.cov[(i / 2, i % 2)]).abs() < 1e-6, "{i}: {c} vs {}", law.cov[(i / 2, i % 2)]);
        }
    }

    #[test]
    fn lmc_from_target_plateaus_at_bias() {
        let spec = quad1();
        let axes = axis(-12.0, 12.0, 1200);
        let pi = target_density_grid(&spec, axes.clone()).unwrap();
        let h = 0.1;
        let p = propagate_lmc_density(&pi, &spec, &PropagationConfig::new(h, 300).record_every(10)).unwrap();
        let curve = decay_curve(2.0, &p.snapshots, &pi).unwrap();
        let t = QuadraticTarget::isotropic(1, 1.0).unwrap();
        let bias = renyi_grid(
            2.0,
            &GridDensity::from_gaussian(axes.clone(), &stationary_law(&t, h).unwrap()).unwrap(),
            &pi,
        )
        .unwrap()
        .value;
        let last = *curve.values.last().unwrap();
        assert!(last > 0.0);
        assert_relative_eq!(last, bias, max_relative = 1e-6);
    }

    #[test]
    fn under_resolved_kernel_is_rejected() {
        let mu0 = GridDensity::from_gaussian(axis(-10.0, 10.0, 100), &GaussianLaw::isotropic(1, 0.0, 1.0).unwrap()).unwrap();
        let r = propagate_lmc_density(&mu0, &quad1(), &PropagationConfig::new(1e-3, 1));
        assert!(matches!(r, Err(LabError::KernelUnderResolved { .. })));
    }

    #[test]
    fn leakage_is_detected() {
        let mu0 = GridDensity::from_gaussian(axis(-5.0, 8.0, 1300), &GaussianLaw::isotropic(1, 5.0, 0.01).unwrap()).unwrap();
        #[derive(Debug)]
        struct Push;
        impl Potential for Push {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &[f64]) -> f64 {
                -x[0]
            }
            fn grad(&self, _: &[f64], out: &mut [f64]) {
                out[0] = -1.0;
            }
        }
        let spec = PotentialSpec::custom("push", Arc::new(Push), SmoothnessRecord::new(1.0, 1.0).unwrap()).unwrap();
        let r = propagate_lmc_density(&mu0, &spec, &PropagationConfig::new(0.05, 200));
        assert!(matches!(r, Err(LabError::BoundaryLeakage { .. }) | Err(LabError::MassDrift { .. })), "{r:?}");
    }

    #[test]
    fn lattice_matches_ornstein_uhlenbeck() {
        let spec = quad1();
        let axes = axis(-12.0, 12.0, 1200);
        let v0 = 0.4;
        let init = GaussianLaw::isotropic(1, 0.0, v0).unwrap();
        let mu0 = GridDensity::from_gaussian(axes, &init).unwrap();
        let dt = 1e-4;
        let p = propagate_diffusion_density(&mu0, &spec, &DiffusionConfig::new(dt, 10_000).record_every(2_000)).unwrap();
        let t = QuadraticTarget::isotropic(1, 1.0).unwrap();
        for s in &p.snapshots {
            let exact = ou_law(&t, &init, s.time).unwrap().cov[(0, 0)];
            assert_relative_eq!(exact, 1.0 - (1.0 - v0) * (-2.0 * s.time).exp(), max_relative = 1e-12);
            assert!((s.density.covariance()[0] - exact).abs() <= 1e-3);
        }
    }

    #[test]
    fn lattice_keeps_the_target_invariant() {
        let spec = make_builtin(Family::SmoothedNorm, 1).unwrap();
        let pi = target_density_grid(&spec, axis(-40.0, 40.0, 800)).unwrap();
        let p = propagate_diffusion_density(&pi, &spec, &DiffusionConfig::new(1e-3, 2000).record_every(500)).unwrap();
        let curve = decay_curve(2.0, &p.snapshots, &pi).unwrap();
        assert!(curve.values.iter().all(|v| *v <= 1e-12), "{:?}", curve.values);
    }

    #[test]
    fn lattice_decay_is_monotone_in_2d() {
        let spec = make_builtin(Family::SmoothedNorm, 2).unwrap();
        let axes = vec![Axis::new(-30.0, 30.0, 120).unwrap(), Axis::new(-30.0, 30.0, 120).unwrap()];
        let pi = target_density_grid(&spec, axes.clone()).unwrap();
        let mu0 = GridDensity::from_gaussian(axes, &GaussianLaw::isotropic(2, 3.0, 1.0).unwrap()).unwrap();
        let p = propagate_diffusion_density(&mu0, &spec, &DiffusionConfig::new(0.01, 500).record_every(10)).unwrap();
        let curve = decay_curve(2.0, &p.snapshots, &pi).unwrap();
        assert!(curve.max_increase() <= 1e-9);
        assert!(curve.values.last().unwrap() < &curve.values[0]);
    }

    #[test]
    fn lattice_rejects_unstable_steps_and_coarse_reference() {
        let spec = quad1();
        let mu0 = target_density_grid(&spec, axis(-10.0, 10.0, 2000)).unwrap();
        let r = propagate_diffusion_density(&mu0, &spec, &DiffusionConfig::new(1e-2, 1));
        assert!(matches!(r, Err(LabError::UnstableStep { .. })));
        let cfg = DiffusionConfig { reference_h: Some(1e-3), ..DiffusionConfig::new(1e-4, 1) };
        assert!(propagate_diffusion_density(&mu0, &spec, &cfg).is_err());
    }

    #[test]
    fn richardson_refinement_passes() {
        let spec = make_builtin(Family::SmoothedNorm, 1).unwrap();
        let axes = axis(-40.0, 40.0, 800);
        let pi = target_density_grid(&spec, axes.clone()).unwrap();
        let mu0 = GridDensity::from_gaussian(axes, &GaussianLaw::isotropic(1, 5.0, 1.0).unwrap()).unwrap();
        let rep = richardson_check(&mu0, &spec, &pi, 2e-3, 2000).unwrap().into_result().unwrap();
        assert!(rep.relative_change < 0.05);
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let values = times.iter().map(|t| 0.4 * (-1.3 * t).exp()).collect();
        let fit = fit_log_linear(&DecayCurve { q: 2.0, times, values }, 0.0, 0.5).unwrap();
        assert_relative_eq!(fit.slope, -1.3, max_relative = 1e-12);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn curve_csv_has_metadata_header() {
        let c = DecayCurve { q: 2.0, times: vec![0.0, 1.0], values: vec![1.0, 0.5] };
        let mut buf = Vec::new();
        c.write_csv(&mut buf, &[("h", "0.01".into())]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# q=2\n# h=0.01\nt,R_q\n"));
    }
}

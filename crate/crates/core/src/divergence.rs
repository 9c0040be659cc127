//! Divergences between laws on grids and between Gaussian laws.
//!
//! All values are in nats. Grid divergences work on cell masses of two densities
//! sharing one grid and are evaluated in log-space, so large orders do not
//! overflow on the tails.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, LabError, Result};

/// One axis of a regular grid: `n` cells covering `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        ensure(lo < hi && lo.is_finite() && hi.is_finite(), || format!("axis window [{lo}, {hi}] is empty"))?;
        ensure(n >= 2, || format!("axis needs at least 2 cells, got {n}"))?;
        Ok(Self { lo, hi, n })
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }
}

/// Largest boundary mass tolerated before a window is considered too small.
pub const BOUNDARY_MASS_THRESHOLD: f64 = 1e-8;

/// Normalized cell masses on a regular 1D or 2D grid.
///
/// In 2D the first axis is the slow index: cell `(i, j)` sits at `i * n1 + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    axes: Vec<Axis>,
    values: Vec<f64>,
}

impl GridDensity {
    /// Validates that `values` are nonnegative masses summing to one within 1e-10.
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        Self::check_axes(&axes)?;
        let n: usize = axes.iter().map(|a| a.n).product();
        ensure(values.len() == n, || format!("expected {n} cell masses, got {}", values.len()))?;
        ensure(values.iter().all(|v| *v >= 0.0 && v.is_finite()), || "cell masses must be finite and nonnegative".into())?;
        let total: f64 = values.iter().sum();
        ensure((total - 1.0).abs() <= 1e-10, || format!("cell masses sum to {total}, not 1"))?;
        Ok(Self { axes, values })
    }

    /// Normalizes nonnegative weights into cell masses.
    pub fn from_weights(axes: Vec<Axis>, mut weights: Vec<f64>) -> Result<Self> {
        Self::check_axes(&axes)?;
        let total: f64 = weights.iter().sum();
        ensure(total > 0.0 && total.is_finite(), || format!("weights sum to {total}"))?;
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(axes, weights)
    }

    /// Cell masses proportional to `exp(log_density(center))`.
    pub fn from_log_density(axes: Vec<Axis>, log_density: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::check_axes(&axes)?;
        let logs: Vec<f64> = match axes.len() {
            1 => axes[0].centers().iter().map(|&x| log_density(&[x])).collect(),
            _ => {
                let (c0, c1) = (axes[0].centers(), axes[1].centers());
                c0.iter().flat_map(|&x| c1.iter().map(move |&y| [x, y])).map(|p| log_density(&p)).collect()
            }
        };
        ensure(logs.iter().all(|l| !l.is_nan() && *l < f64::INFINITY), || "log-density must not be NaN or +inf".into())?;
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure(shift.is_finite(), || "log-density is -inf on every cell".into())?;
        Self::from_weights(axes, logs.into_iter().map(|l| (l - shift).exp()).collect())
    }

    /// Discretization of a Gaussian law (dimension must match the grid).
    pub fn from_gaussian(axes: Vec<Axis>, law: &GaussianLaw) -> Result<Self> {
        ensure(law.dim() == axes.len(), || "law and grid dimensions differ".into())?;
        let prec = law.precision()?;
        let m = law.mean.clone();
        Self::from_log_density(axes, |x| {
            let dlt = DVector::from_column_slice(x) - &m;
            -0.5 * dlt.dot(&(&prec * &dlt))
        })
    }

    fn check_axes(axes: &[Axis]) -> Result<()> {
        ensure(axes.len() == 1 || axes.len() == 2, || format!("grids must be 1D or 2D, got {} axes", axes.len()))?;
        for a in axes {
            Axis::new(a.lo, a.hi, a.n)?;
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::dx).product()
    }

    /// Cell-centre coordinates of cell `idx`.
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0].center(idx)],
            _ => {
                let n1 = self.axes[1].n;
                vec![self.axes[0].center(idx / n1), self.axes[1].center(idx % n1)]
            }
        }
    }

    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.axes == other.axes
    }

    /// Mass held by the outermost layer of cells.
    pub fn boundary_mass(&self) -> f64 {
        match self.axes.len() {
            1 => self.values[0] + self.values[self.values.len() - 1],
            _ => {
                let (n0, n1) = (self.axes[0].n, self.axes[1].n);
                let mut m = 0.0;
                for i in 0..n0 {
                    for j in 0..n1 {
                        if i == 0 || j == 0 || i == n0 - 1 || j == n1 - 1 {
                            m += self.values[i * n1 + j];
                        }
                    }
                }
                m
            }
        }
    }

    /// Fails with [`LabError::WindowTooSmall`] when the boundary holds at least `threshold`.
    pub fn check_window(&self, threshold: f64) -> Result<()> {
        let mass = self.boundary_mass();
        if mass < threshold {
            Ok(())
        } else {
            Err(LabError::WindowTooSmall { mass, threshold })
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dims()];
        for (idx, &w) in self.values.iter().enumerate() {
            for (mk, xk) in m.iter_mut().zip(self.coords(idx)) {
                *mk += w * xk;
            }
        }
        m
    }

    /// Covariance matrix of the cell masses, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dims();
        let mean = self.mean();
        let mut c = vec![0.0; d * d];
        for (idx, &w) in self.values.iter().enumerate() {
            let x = self.coords(idx);
            for a in 0..d {
                for b in 0..d {
                    c[a * d + b] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
                }
            }
        }
        c
    }

    /// Writes `index, x[, y], mass` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        if self.dims() == 1 {
            wtr.write_record(["index", "x", "mass"])?;
        } else {
            wtr.write_record(["index", "x", "y", "mass"])?;
        }
        for (idx, &m) in self.values.iter().enumerate() {
            let mut rec = vec![idx.to_string()];
            rec.extend(self.coords(idx).iter().map(|c| format!("{c:.17e}")));
            rec.push(format!("{m:.17e}"));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub(crate) fn from_parts_unchecked(axes: Vec<Axis>, values: Vec<f64>) -> Self {
        Self { axes, values }
    }
}

/// How a divergence value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMethod {
    Grid,
    GaussianClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub q: f64,
    /// Nats; `+inf` when absolute continuity fails.
    pub value: f64,
    pub method: DivergenceMethod,
}

fn check_pair(mu: &GridDensity, pi: &GridDensity) -> Result<()> {
    if mu.same_grid(pi) {
        Ok(())
    } else {
        Err(LabError::GridMismatch(format!("{:?} vs {:?}", mu.axes, pi.axes)))
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `R_q(μ‖π) = (1/(q−1)) ln Σ μᵢ^q πᵢ^(1−q)`, `+inf` if μ charges a cell π does not.
pub fn renyi_grid(q: f64, mu: &GridDensity, pi: &GridDensity) -> Result<DivergenceReport> {
    ensure(q > 1.0 && q.is_finite(), || format!("Rényi order q = {q} must exceed 1"))?;
    check_pair(mu, pi)?;
    let pairs = mu.values.iter().zip(&pi.values).filter(|(m, _)| **m > 0.0);
    if pairs.clone().any(|(_, p)| *p == 0.0) {
        return Ok(DivergenceReport { q, value: f64::INFINITY, method: DivergenceMethod::Grid });
    }
    let lse = log_sum_exp(pairs.map(|(m, p)| q * m.ln() - (q - 1.0) * p.ln()));
    Ok(DivergenceReport { q, value: (lse / (q - 1.0)).max(0.0), method: DivergenceMethod::Grid })
}

/// `R_∞(μ‖π) = ln max μᵢ/πᵢ`.
pub fn renyi_inf_grid(mu: &GridDensity, pi: &GridDensity) -> Result<f64> {
    check_pair(mu, pi)?;
    let mut best = f64::NEG_INFINITY;
    for (m, p) in mu.values.iter().zip(&pi.values) {
        if *m > 0.0 {
            if *p == 0.0 {
                return Ok(f64::INFINITY);
            }
            best = best.max(m.ln() - p.ln());
        }
    }
    Ok(best.max(0.0))
}

pub fn kl_grid(mu: &GridDensity, pi: &GridDensity) -> Result<f64> {
    check_pair(mu, pi)?;
    let mut acc = 0.0;
    for (m, p) in mu.values.iter().zip(&pi.values) {
        if *m > 0.0 {
            if *p == 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += m * (m.ln() - p.ln());
        }
    }
    Ok(acc.max(0.0))
}

pub fn chi2_grid(mu: &GridDensity, pi: &GridDensity) -> Result<f64> {
    check_pair(mu, pi)?;
    let mut acc = 0.0;
    for (m, p) in mu.values.iter().zip(&pi.values) {
        if *p == 0.0 {
            if *m > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        acc += (m - p) * (m - p) / p;
    }
    Ok(acc)
}

pub fn tv_grid(mu: &GridDensity, pi: &GridDensity) -> Result<f64> {
    check_pair(mu, pi)?;
    Ok(0.5 * mu.values.iter().zip(&pi.values).map(|(m, p)| (m - p).abs()).sum::<f64>())
}

/// A Gaussian law `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    /// Validates symmetry and positive-definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        ensure(d >= 1, || "Gaussian law needs dimension at least 1".into())?;
        ensure(cov.nrows() == d && cov.ncols() == d, || format!("covariance must be {d}x{d}"))?;
        crate::potentials::spd_extremes(&cov)?;
        Ok(Self { mean, cov })
    }

    /// `N(m·1, v·I)` in dimension `d`.
    pub fn isotropic(d: usize, m: f64, v: f64) -> Result<Self> {
        Self::new(DVector::from_element(d, m), DMatrix::from_diagonal_element(d, d, v))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> Result<DMatrix<f64>> {
        self.cov
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| LabError::ParameterOutOfRange("covariance is not positive-definite".into()))
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        self.cov
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| LabError::ParameterOutOfRange("covariance is not positive-definite".into()))
    }
}

/// Relative geometry of `g1` seen from `g2`: eigenvalues `ρᵢ` of `L⁻¹ cov1 L⁻ᵀ` (with
/// `cov2 = L Lᵀ`) and the whitened mean offset in the same eigenbasis.
fn whitened(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure(g1.dim() == g2.dim(), || "Gaussian laws have different dimensions".into())?;
    let l = g2.cholesky_factor()?;
    let x = l.solve_lower_triangular(&g1.cov).expect("triangular solve");
    let b = l.solve_lower_triangular(&x.transpose()).expect("triangular solve").transpose();
    let b = 0.5 * (&b + b.transpose());
    let eig = b.symmetric_eigen();
    let delta = l.solve_lower_triangular(&(&g1.mean - &g2.mean)).expect("triangular solve");
    let proj = eig.eigenvectors.transpose() * delta;
    Ok((eig.eigenvalues.iter().copied().collect(), proj.iter().copied().collect()))
}

/// Closed-form `R_q(N(m1, Σ1) ‖ N(m2, Σ2))`.
///
/// With `Σ_q = qΣ2 + (1−q)Σ1`:
///
/// ```text
/// R_q = (q/2) Δᵀ Σ_q⁻¹ Δ − 1/(2(q−1)) · ln[ det Σ_q / (det Σ1^(1−q) det Σ2^q) ]
/// ```
///
/// Evaluated in the eigenbasis of `Σ2^(−1/2) Σ1 Σ2^(−1/2)` with `ln_1p`, so that tiny
/// divergences keep full relative accuracy.
pub fn renyi_gaussian(q: f64, g1: &GaussianLaw, g2: &GaussianLaw) -> Result<DivergenceReport> {
    ensure(q > 1.0 && q.is_finite(), || format!("Rényi order q = {q} must exceed 1"))?;
    let (rho, proj) = whitened(g1, g2)?;
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for (r, p) in rho.iter().zip(&proj) {
        let delta = r - 1.0;
        let sq = 1.0 - (q - 1.0) * delta;
        if sq <= 0.0 {
            return Err(LabError::UndefinedDivergence(format!(
                "q·Σ2 + (1−q)·Σ1 is not positive-definite (eigenvalue {sq:e} in whitened coordinates)"
            )));
        }
        quad += p * p / sq;
        logdet += (-(q - 1.0) * delta).ln_1p() + (q - 1.0) * delta.ln_1p();
    }
    let value = 0.5 * q * quad - logdet / (2.0 * (q - 1.0));
    Ok(DivergenceReport { q, value: value.max(0.0), method: DivergenceMethod::GaussianClosedForm })
}

/// Closed-form `KL(N(m1, Σ1) ‖ N(m2, Σ2))`.
pub fn kl_gaussian(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<f64> {
    let (rho, proj) = whitened(g1, g2)?;
    let mut acc = 0.0;
    for (r, p) in rho.iter().zip(&proj) {
        let delta = r - 1.0;
        acc += delta - delta.ln_1p() + p * p;
    }
    Ok((0.5 * acc).max(0.0))
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * s * eig.eigenvectors.transpose()
}

/// 2-Wasserstein distance between Gaussian laws (Bures–Wasserstein formula).
pub fn w2_gaussian(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<f64> {
    ensure(g1.dim() == g2.dim(), || "Gaussian laws have different dimensions".into())?;
    let r1 = sym_sqrt(&g1.cov);
    let cross = sym_sqrt(&(&r1 * &g2.cov * &r1));
    let bures = g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
    let shift = (&g1.mean - &g2.mean).norm_squared();
    Ok((shift + bures).max(0.0).sqrt())
}

/// Both sides of an inequality `lhs ≤ rhs`, with the verdict after slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64, slack: f64) -> Self {
        let holds = rhs == f64::INFINITY || lhs <= rhs + slack;
        Self { lhs, rhs, holds }
    }
}

/// Change of measure: `μ(E) ≤ ν(E) + sqrt(χ²(μ‖ν)·ν(E))`, checked with 1e-12 slack.
pub fn check_change_of_measure(mu: &GridDensity, nu: &GridDensity, event: &[bool]) -> Result<InequalityCheck> {
    check_pair(mu, nu)?;
    ensure(event.len() == mu.len(), || format!("event mask has {} cells, grid has {}", event.len(), mu.len()))?;
    let mu_e: f64 = mu.values.iter().zip(event).filter(|(_, e)| **e).map(|(v, _)| v).sum();
    let nu_e: f64 = nu.values.iter().zip(event).filter(|(_, e)| **e).map(|(v, _)| v).sum();
    let chi2 = chi2_grid(mu, nu)?;
    Ok(InequalityCheck::new(mu_e, nu_e + (chi2 * nu_e).sqrt(), 1e-12))
}

/// Weak triangle inequality in the unit-coefficient form
/// `R_q(μ‖π) ≤ R_2q(μ‖ν) + R_(2q−1)(ν‖π)`, checked with 1e-9 slack.
///
/// This form does not hold for every triple; see [`check_weak_triangle_weighted`]
/// for the form that follows from Cauchy–Schwarz.
pub fn check_weak_triangle(q: f64, mu: &GridDensity, nu: &GridDensity, pi: &GridDensity) -> Result<InequalityCheck> {
    weak_triangle(q, mu, nu, pi, 1.0)
}

/// Weak triangle inequality
/// `R_q(μ‖π) ≤ (2q−1)/(2q−2)·R_2q(μ‖ν) + R_(2q−1)(ν‖π)`, checked with 1e-9 slack.
pub fn check_weak_triangle_weighted(q: f64, mu: &GridDensity, nu: &GridDensity, pi: &GridDensity) -> Result<InequalityCheck> {
    weak_triangle(q, mu, nu, pi, (2.0 * q - 1.0) / (2.0 * q - 2.0))
}

fn weak_triangle(q: f64, mu: &GridDensity, nu: &GridDensity, pi: &GridDensity, coef: f64) -> Result<InequalityCheck> {
    ensure(q >= 2.0, || format!("weak triangle needs q >= 2, got {q}"))?;
    check_pair(mu, nu)?;
    check_pair(mu, pi)?;
    let lhs = renyi_grid(q, mu, pi)?.value;
    let rhs = coef * renyi_grid(2.0 * q, mu, nu)?.value + renyi_grid(2.0 * q - 1.0, nu, pi)?.value;
    Ok(InequalityCheck::new(lhs, rhs, 1e-9))
}

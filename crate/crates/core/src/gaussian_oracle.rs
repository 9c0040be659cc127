//! Exact laws of LMC for quadratic potentials `V(x) = ½ xᵀAx`.
//!
//! With `M = I − hA` the iterates stay Gaussian:
//!
//! ```text
//! m_{k+1} = M m_k
//! S_{k+1} = M S_k Mᵀ + 2h I
//! ```
//!
//! and the chain has a biased stationary covariance `S∞ = M S∞ Mᵀ + 2h I`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::divergence::{renyi_gaussian, GaussianLaw};
use crate::error::{ensure, LabError, Result};
use crate::potentials::{make_builtin, spd_extremes, Family, PotentialSpec};

/// A centred Gaussian target `N(0, A⁻¹)` given by its precision `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTarget {
    a: DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

impl QuadraticTarget {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let (lambda_min, lambda_max) = spd_extremes(&a)?;
        Ok(Self { a, lambda_min, lambda_max })
    }

    /// `A = c·I` in dimension `d`.
    pub fn isotropic(d: usize, c: f64) -> Result<Self> {
        ensure(d >= 1, || "dimension must be at least 1".into())?;
        Self::new(DMatrix::from_diagonal_element(d, d, c))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        ensure(!diag.is_empty(), || "dimension must be at least 1".into())?;
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Bakry–Émery log-Sobolev constant `1/λ_min(A)`.
    pub fn lsi_constant(&self) -> f64 {
        1.0 / self.lambda_min
    }

    /// Gradient Lipschitz constant `λ_max(A)`.
    pub fn lipschitz(&self) -> f64 {
        self.lambda_max
    }

    /// The target law `N(0, A⁻¹)`.
    pub fn law(&self) -> Result<GaussianLaw> {
        let cov = self.a.clone().cholesky().expect("validated positive-definite").inverse();
        GaussianLaw::new(DVector::zeros(self.dim()), 0.5 * (&cov + cov.transpose()))
    }

    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        make_builtin(Family::Quadratic { a: self.a.clone() }, self.dim())
    }

    fn check_step(&self, h: f64) -> Result<()> {
        let limit = 2.0 / self.lambda_max;
        if h > 0.0 && h < limit {
            Ok(())
        } else {
            Err(LabError::NonContractive { h, limit })
        }
    }

    fn step_matrix(&self, h: f64) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - h * &self.a
    }
}

fn mat_pow(m: &DMatrix<f64>, mut k: u64) -> DMatrix<f64> {
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

fn symmetrize(s: DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (&s + s.transpose())
}

/// Exact law of the `k`-th LMC iterate from `init`, via `S_k = M^k (S0 − S∞) M^kᵀ + S∞`.
pub fn lmc_law(target: &QuadraticTarget, init: &GaussianLaw, h: f64, k: u64) -> Result<GaussianLaw> {
    target.check_step(h)?;
    ensure(init.dim() == target.dim(), || "initial law and target dimensions differ".into())?;
    if k == 0 {
        return Ok(init.clone());
    }
    let s_inf = stationary_covariance(target, h)?;
    let mk = mat_pow(&target.step_matrix(h), k);
    let mean = &mk * &init.mean;
    let cov = &mk * (&init.cov - &s_inf) * mk.transpose() + s_inf;
    GaussianLaw::new(mean, symmetrize(cov))
}

/// Law of the `k`-th iterate by direct recursion; `O(k)` matrix products.
pub fn lmc_law_recursive(target: &QuadraticTarget, init: &GaussianLaw, h: f64, k: u64) -> Result<GaussianLaw> {
    target.check_step(h)?;
    let m = target.step_matrix(h);
    let noise = DMatrix::from_diagonal_element(target.dim(), target.dim(), 2.0 * h);
    let (mut mean, mut cov) = (init.mean.clone(), init.cov.clone());
    for _ in 0..k {
        mean = &m * mean;
        cov = &m * cov * m.transpose() + &noise;
    }
    GaussianLaw::new(mean, symmetrize(cov))
}

/// Max-norm residual of `S = M S Mᵀ + 2hI`.
pub fn stationary_residual(target: &QuadraticTarget, h: f64, s: &DMatrix<f64>) -> f64 {
    let m = target.step_matrix(h);
    let noise = DMatrix::from_diagonal_element(target.dim(), target.dim(), 2.0 * h);
    (s - (&m * s * m.transpose() + noise)).abs().max()
}

fn stationary_covariance(target: &QuadraticTarget, h: f64) -> Result<DMatrix<f64>> {
    target.check_step(h)?;
    // Doubling: S_{j+1} = S_j + M_j S_j M_jᵀ, M_{j+1} = M_j², so S_j sums 2^j terms of the series.
    let d = target.dim();
    let mut m = target.step_matrix(h);
    let mut s = DMatrix::from_diagonal_element(d, d, 2.0 * h);
    for _ in 0..200 {
        let inc = &m * &s * m.transpose();
        s += &inc;
        m = &m * &m;
        if inc.abs().max() <= 1e-18 * s.abs().max() && stationary_residual(target, h, &s) <= 1e-12 {
            return Ok(symmetrize(s));
        }
    }
    let residual = stationary_residual(target, h, &s);
    if residual <= 1e-12 {
        Ok(symmetrize(s))
    } else {
        Err(LabError::NonConvergent { rounds: 200 })
    }
}

/// Stationary law `N(0, S∞)` of LMC at step `h`.
pub fn stationary_law(target: &QuadraticTarget, h: f64) -> Result<GaussianLaw> {
    let s = stationary_covariance(target, h)?;
    GaussianLaw::new(DVector::zeros(target.dim()), s)
}

/// Exact Rényi bias `R_q(μ∞^(h) ‖ π)` of the stationary law.
pub fn renyi_bias(target: &QuadraticTarget, h: f64, q: f64) -> Result<f64> {
    let stationary = stationary_law(target, h)?;
    Ok(renyi_gaussian(q, &stationary, &target.law()?)?.value)
}

/// Proof-constant bias bound `86·d·h·q²·C_LSI·L²`.
pub fn bias_bound(target: &QuadraticTarget, h: f64, q: f64) -> f64 {
    86.0 * target.dim() as f64 * h * q * q * target.lsi_constant() * target.lipschitz().powi(2)
}

/// Law at time `t` of the Langevin diffusion (Ornstein–Uhlenbeck for quadratic `V`).
pub fn ou_law(target: &QuadraticTarget, init: &GaussianLaw, t: f64) -> Result<GaussianLaw> {
    ensure(t >= 0.0, || format!("time t = {t} must be nonnegative"))?;
    let eig = target.a.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let decay = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (-t * l).exp())) * q.transpose();
    let target_cov = target.law()?.cov;
    let mean = &decay * &init.mean;
    let cov = &decay * (&init.cov - &target_cov) * decay.transpose() + target_cov;
    GaussianLaw::new(mean, symmetrize(cov))
}

/// Shares the quadratic potential across threads.
pub fn shared_spec(target: &QuadraticTarget) -> Result<Arc<PotentialSpec>> {
    Ok(Arc::new(target.potential_spec()?))
}

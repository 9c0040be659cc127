//! Shared fixtures for the benchmarks.

use langevin_core::divergence::{Axis, GaussianLaw, GridDensity};
use langevin_core::potentials::{make_builtin, Family, PotentialSpec};

/// 1D smoothed-norm target with a window wide enough for the LMC grid kernel.
pub fn smoothed_norm_1d() -> PotentialSpec {
    make_builtin(Family::SmoothedNorm, 1).expect("built-in target")
}

/// `N(mean, var)` on `n` cells of `[-half_width, half_width]`.
pub fn gaussian_grid(n: usize, half_width: f64, mean: f64, var: f64) -> GridDensity {
    let law = GaussianLaw::isotropic(1, mean, var).expect("valid law");
    GridDensity::from_gaussian(vec![Axis::new(-half_width, half_width, n).expect("valid axis")], &law).expect("valid grid")
}

//! Langevin Monte Carlo laboratory.
//!
//! The crate implements the unadjusted Langevin algorithm
//!
//! ```text
//! x_{k+1} = x_k - h ∇V(x_k) + sqrt(2h) ξ_k
//! ```
//!
//! together with the machinery needed to check its behaviour quantitatively:
//!
//! * [`potentials`]: target families, gradients, smoothness and functional-inequality metadata.
//! * [`divergence`]: Rényi, KL, χ² and TV on grids, Gaussian closed forms, and the
//!   deterministic inequalities between them.
//! * [`density_lab`]: exact propagation of the LMC law and of a lattice diffusion on 1D/2D grids.
//! * [`gaussian_oracle`]: exact LMC laws for quadratic potentials and the Rényi bias.
//! * [`planner`]: step sizes, iteration counts and initializations from explicit constants.
//! * [`sampler`]: seeded particle ensembles and Monte Carlo bound checks.
//!
//! ```
//! use langevin_core::gaussian_oracle::{renyi_bias, QuadraticTarget};
//!
//! let target = QuadraticTarget::isotropic(3, 1.0).unwrap();
//! let bias = renyi_bias(&target, 1e-3, 2.0).unwrap();
//! assert!(bias > 0.0 && bias < 86.0 * 3.0 * 1e-3 * 4.0);
//! ```

#![forbid(unsafe_code)]

pub mod density_lab;
pub mod divergence;
pub mod error;
pub mod gaussian_oracle;
pub mod planner;
pub mod potentials;
pub mod sampler;

pub use density_lab::{DecayCurve, PropagationConfig};
pub use divergence::{Axis, DivergenceMethod, DivergenceReport, GaussianLaw, GridDensity, InequalityCheck};
pub use error::{LabError, Result};
pub use gaussian_oracle::QuadraticTarget;
pub use planner::{Plan, PlanRequest, Precondition};
pub use potentials::{Family, FiConstants, ModifiedPotential, Potential, PotentialSpec, SmoothnessRecord};
pub use sampler::{Ensemble, TailReport};

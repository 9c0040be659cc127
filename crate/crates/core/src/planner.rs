//! Step sizes, iteration counts and initializations from explicit constants.
//!
//! Where a guarantee states its constants (192, 172, 176, 86, 68, 384, 4, 2) they are
//! used verbatim. Where it only gives a rate, the hidden constant is 1 and the hidden
//! polylogarithmic factor is `ln(e + 8 N_core)`, `N_core` being the plan without it.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::density_lab::DecayCurve;
use crate::divergence::GaussianLaw;
use crate::error::{ensure, LabError, Result};
use crate::potentials::{FiConstants, PotentialSpec, SmoothnessRecord};

/// Rounds of the log-concave fixed point before giving up.
pub const MAX_FIXED_POINT_ROUNDS: usize = 100;

/// Inputs shared by all planners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub eps: f64,
    pub q: f64,
    pub d: usize,
    pub fi: FiConstants,
    pub smooth: SmoothnessRecord,
    /// Rényi divergence of the initialization to the target, in nats.
    #[serde(rename = "R0", alias = "r0")]
    pub r0: f64,
    /// Mean norm `∫‖x‖ dπ`; required by the LO and MLSI plans.
    #[serde(default)]
    pub m: Option<f64>,
    /// `R_2(μ0 ‖ π̂)` against the modified target; defaults to `R0`.
    #[serde(default)]
    pub r2_hat: Option<f64>,
}

impl PlanRequest {
    pub fn new(eps: f64, q: f64, d: usize, fi: FiConstants, smooth: SmoothnessRecord, r0: f64) -> Self {
        Self { eps, q, d, fi, smooth, r0, m: None, r2_hat: None }
    }

    pub fn with_mean_norm(mut self, m: f64) -> Self {
        self.m = Some(m);
        self
    }

    pub fn with_r2_hat(mut self, r: f64) -> Self {
        self.r2_hat = Some(r);
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.eps > 0.0 && self.eps.is_finite(), || format!("eps = {} must be positive", self.eps))?;
        ensure(self.q >= 2.0 && self.q.is_finite(), || format!("order q = {} must be at least 2", self.q))?;
        ensure(self.d >= 1, || "dimension must be at least 1".into())?;
        ensure(self.r0 >= 0.0 && self.r0.is_finite(), || format!("R0 = {} must be nonnegative", self.r0))?;
        if let Some(m) = self.m {
            ensure(m > 0.0 && m.is_finite(), || format!("mean norm m = {m} must be positive"))?;
        }
        if let Some(r) = self.r2_hat {
            ensure(r >= 0.0 && r.is_finite(), || format!("R2_hat = {r} must be nonnegative"))?;
        }
        self.fi.validate()?;
        self.smooth.validate()
    }

    fn mean_norm(&self) -> Result<f64> {
        self.m.ok_or_else(|| LabError::MissingMetadata("mean norm m is required by this plan".into()))
    }
}

/// A checked inequality `lhs ≤ rhs` (or `<` when `strict`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precondition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub strict: bool,
    pub holds: bool,
}

impl Precondition {
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, strict: false, holds: lhs <= rhs }
    }

    pub fn lt(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, strict: true, holds: lhs < rhs }
    }
}

/// A concrete run configuration. `t == n * h` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub theorem: String,
    pub h: f64,
    /// Iteration count; integer-valued, stored as `f64` since high-dimensional plans exceed `u64`.
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "N0")]
    pub n0: f64,
    /// Step size before the polylogarithmic factor.
    pub h_core: f64,
    /// Required horizon over `h_core`, unrounded.
    pub n_core: f64,
    pub log_factor: f64,
    pub regime_notes: Vec<String>,
    pub preconditions: Vec<Precondition>,
}

impl Plan {
    pub fn all_preconditions_hold(&self) -> bool {
        self.preconditions.iter().all(|p| p.holds)
    }

    fn finish(mut self) -> Result<Self> {
        ensure(self.h > 0.0 && self.h.is_finite(), || format!("planned step size {} is not positive and finite", self.h))?;
        self.n = self.n.max(1.0);
        self.t = self.n * self.h;
        Ok(self)
    }
}

fn smallest(branches: &[(&str, f64)]) -> (String, f64) {
    let (name, v) = branches.iter().fold(("", f64::INFINITY), |acc, &(n, v)| if v < acc.1 { (n, v) } else { acc });
    (name.to_string(), v)
}

fn assumption_notes(notes: &mut Vec<String>, items: &[(&str, f64, f64)]) {
    for &(name, value, floor) in items {
        if value < floor {
            notes.push(format!("simplifying assumption {name} >= {floor} does not hold ({value})"));
        }
    }
}

/// Plan for targets satisfying a log-Sobolev inequality with a Lipschitz gradient.
pub fn plan_lsi(req: &PlanRequest) -> Result<Plan> {
    req.validate()?;
    let FiConstants::Lsi { c } = req.fi else {
        return Err(LabError::ParameterOutOfRange(format!("plan_lsi needs LSI constants, got {}", req.fi.kind_name())));
    };
    ensure(req.smooth.s == 1.0, || format!("plan_lsi needs s = 1, got s = {}", req.smooth.s))?;
    let (q, l, d, eps) = (req.q, req.smooth.l, req.d as f64, req.eps);
    let stability = 1.0 / (192.0 * q * q * c * l * l);
    let accuracy = eps / (172.0 * d * q * q * c * l * l);
    // The stability constraint is strict, so that branch sits one ulp below it.
    let (branch, mut h) = smallest(&[("stability", stability.next_down()), ("accuracy", accuracy)]);
    let bias_of = |h: f64| 86.0 * d * h * q * q * c * l * l;
    // On the accuracy branch the bias bound is tight; step down past rounding.
    while bias_of(h) > eps / 2.0 {
        h = h.next_down();
    }
    let n0 = ((2.0 * c / h) * ((q - 1.0) / 2.0).ln()).ceil().max(0.0);
    let decay = ((2.0 * q * c / h) * (2.0 * req.r0 / eps).ln()).ceil().max(0.0);
    let mut notes = vec![format!("step size set by the {branch} branch")];
    if n0 == 0.0 {
        notes.push("no waiting phase (q <= 3)".into());
    }
    assumption_notes(&mut notes, &[("C_LSI", c, 1.0), ("L", l, 1.0), ("q", q, 3.0)]);
    let bias = bias_of(h);
    let n = n0 + decay;
    Plan {
        theorem: "lsi".into(),
        h,
        n,
        t: 0.0,
        n0,
        h_core: h,
        n_core: n,
        log_factor: 1.0,
        regime_notes: notes,
        preconditions: vec![
            Precondition::lt("h < 1/(192 q^2 C L^2)", h, 1.0 / (192.0 * q * q * c * l * l)),
            Precondition::le("86 d h q^2 C L^2 <= eps/2", bias, eps / 2.0),
        ],
    }
    .finish()
}

/// Plan for log-concave targets under a Poincaré inequality, initialized at `N(0, I/L)`.
pub fn plan_log_concave(req: &PlanRequest) -> Result<Plan> {
    req.validate()?;
    let FiConstants::Pi { c, log_concave } = req.fi else {
        return Err(LabError::ParameterOutOfRange(format!("plan_log_concave needs PI constants, got {}", req.fi.kind_name())));
    };
    ensure(log_concave, || "plan_log_concave needs a log-concave target".into())?;
    ensure(req.smooth.s == 1.0, || format!("plan_log_concave needs s = 1, got s = {}", req.smooth.s))?;
    let (q, l, d, eps) = (req.q, req.smooth.l, req.d as f64, req.eps);
    let fixed = [
        ("1/(3L)", 1.0 / (3.0 * l)),
        ("first phase", 1.0 / (172.0 * d * q * q * c * l * l)),
        ("accuracy", eps / (176.0 * d * q * q * c * l * l)),
    ];
    let interpolation = |n: f64| 1.0 / (384.0 * q * l * n.sqrt()) * 1f64.min(n.sqrt() / (q * l * l));
    let n0_of = |h: f64| (4.0 * q * c * req.r0 / h).ceil();
    let n_of = |h: f64| n0_of(h) + 1.0 + ((2.0 * q * c / h) * (2.0 / eps).ln()).max(0.0).ceil();
    let step = |n: f64| {
        let mut b = fixed.to_vec();
        b.push(("interpolation", interpolation(n)));
        smallest(&b)
    };

    // N(h(N)) is nondecreasing in N, so iterating from N = 1 climbs to the least fixed point.
    let mut n = 1.0;
    for _ in 0..MAX_FIXED_POINT_ROUNDS {
        let (branch, h) = step(n);
        let needed = n_of(h);
        if needed <= n {
            let mut notes = vec![format!("step size set by the {branch} branch")];
            assumption_notes(&mut notes, &[("C_PI", c, 1.0), ("L", l, 1.0)]);
            return Plan {
                theorem: "log_concave".into(),
                h,
                n,
                t: 0.0,
                n0: n0_of(h),
                h_core: h,
                n_core: n,
                log_factor: 1.0,
                regime_notes: notes,
                preconditions: vec![
                    Precondition::le("h <= 1/(3L)", h, 1.0 / (3.0 * l)),
                    Precondition::le("h <= 1/(172 d q^2 C L^2)", h, fixed[1].1),
                    Precondition::le("h <= eps/(176 d q^2 C L^2)", h, fixed[2].1),
                    Precondition::le("h <= min{1, sqrt(N)/(q L^2)}/(384 q L sqrt(N))", h, interpolation(n)),
                    Precondition::le("N >= N0 + 1 + (2qC/h) ln(2/eps)", n_of(h), n),
                ],
            }
            .finish();
        }
        n = needed;
    }
    Err(LabError::NonConvergent { rounds: MAX_FIXED_POINT_ROUNDS })
}

/// Continuous-time horizon after which `R_q(π_T ‖ π) ≤ eps` under an LO inequality of order `alpha`.
///
/// The first term is `(R0^δ − 1)/δ` with `δ = 2/α − 1`, read as `ln R0` at `α = 2`.
pub fn lo_horizon(q: f64, alpha: f64, c: f64, r0: f64, eps: f64) -> f64 {
    let delta = 2.0 / alpha - 1.0;
    let slow = if r0 <= 1.0 {
        0.0
    } else if delta.abs() < 1e-12 {
        r0.ln()
    } else {
        (r0.powf(delta) - 1.0) / delta
    };
    68.0 * q * c * (slow + (1.0 / eps).ln().max(0.0))
}

/// Plan under an LO inequality and Hölder-continuous gradient.
///
/// `R0` is read as `R_{2q−1}(μ0 ‖ π)`.
pub fn plan_lo(req: &PlanRequest) -> Result<Plan> {
    req.validate()?;
    let FiConstants::Lo { alpha, c } = req.fi else {
        return Err(LabError::ParameterOutOfRange(format!("plan_lo needs LO constants, got {}", req.fi.kind_name())));
    };
    let (s, l) = (req.smooth.s, req.smooth.l);
    if s + 1.0 < alpha {
        return Err(LabError::OrderIncompatible { s, alpha });
    }
    let (q, d, eps) = (req.q, req.d as f64, req.eps);
    let m = req.mean_norm()?;
    let r2_hat = req.r2_hat.unwrap_or(req.r0);
    let eps_half = eps / 2.0;
    let t_req = lo_horizon(2.0 * q - 1.0, alpha, c, req.r0, eps_half);
    let r_init = req.r0.max(1.0);
    let scale = eps.powf(1.0 / s)
        / (d * q.powf(2.0 / s) * c.powf(1.0 / s) * l.powf(2.0 / s) * r_init.powf((2.0 / alpha - 1.0) / s));
    let (branch, factor) = smallest(&[
        ("unit", 1.0),
        ("q eps", 1.0 / (q * eps).powf(1.0 / s)),
        ("mean norm", d / m.powf(s)),
        ("modified init", d / r2_hat.max(1.0).powf(s / 2.0)),
    ]);
    let h_core = scale * factor;
    let n_core = t_req / h_core;
    let log_factor = (E + 8.0 * n_core).ln();
    let h = h_core / log_factor;
    let mut notes = vec![format!("step size set by the {branch} branch")];
    assumption_notes(&mut notes, &[("1/eps", 1.0 / eps, 1.0), ("m", m, 1.0), ("C_LO", c, 1.0), ("L", l, 1.0), ("R2_hat", r2_hat, 1.0)]);
    Plan {
        theorem: "lo".into(),
        h,
        n: (t_req / h).ceil(),
        t: 0.0,
        n0: 0.0,
        h_core,
        n_core,
        log_factor,
        regime_notes: notes,
        preconditions: vec![
            Precondition::le("alpha <= s + 1", alpha, s + 1.0),
            Precondition::le("T_required <= N h", t_req, (t_req / h).ceil() * h),
        ],
    }
    .finish()
}

/// Plan under a modified log-Sobolev inequality with a tail bound.
///
/// `R0` is read as `R_{2q}(μ0 ‖ π)`.
pub fn plan_mlsi(req: &PlanRequest) -> Result<Plan> {
    req.validate()?;
    let FiConstants::Mlsi { alpha0, alpha1, c, c_tail } = req.fi else {
        return Err(LabError::ParameterOutOfRange(format!("plan_mlsi needs MLSI constants, got {}", req.fi.kind_name())));
    };
    let (s, l) = (req.smooth.s, req.smooth.l);
    let (q, d, eps) = (req.q, req.d as f64, req.eps);
    let m = req.mean_norm()?;
    let r2_hat = req.r2_hat.unwrap_or(req.r0);
    let r_init = req.r0.max(1.0);
    let growth = 2.0 - alpha0;
    let t_core = q * c * c * (m + q * c_tail * r_init.powf(1.0 / alpha1)).powf(growth);
    let t_req = t_core * (E + req.r0 / (eps / 2.0)).ln();
    let scale = eps.powf(1.0 / s)
        / (d * q.powf((4.0 - alpha0) / s)
            * c.powf(2.0 / s)
            * c_tail.powf(growth / s)
            * l.powf(2.0 / s)
            * r_init.powf(growth / (alpha1 * s)));
    let (branch, factor) = smallest(&[
        ("unit", 1.0),
        ("q eps", 1.0 / (q * eps).powf(1.0 / s)),
        ("mean norm", d / m.powf(s)),
        ("modified init", d / r2_hat.max(1.0).powf(s / 2.0)),
        ("tail", (r_init.powf(1.0 / alpha1) / m).powf(growth / s)),
    ]);
    let h_core = scale * factor;
    let n_core = t_core / h_core;
    let log_factor = (E + 8.0 * n_core).ln();
    let h = h_core / log_factor;
    let mut notes = vec![format!("step size set by the {branch} branch")];
    assumption_notes(
        &mut notes,
        &[("1/eps", 1.0 / eps, 1.0), ("m", m, 1.0), ("C_MLSI", c, 1.0), ("C_tail", c_tail, 1.0), ("L", l, 1.0), ("R2_hat", r2_hat, 1.0)],
    );
    let n = (t_req / h).ceil();
    Plan {
        theorem: "mlsi".into(),
        h,
        n,
        t: 0.0,
        n0: 0.0,
        h_core,
        n_core,
        log_factor,
        regime_notes: notes,
        preconditions: vec![Precondition::le("T_required <= N h", t_req, n * h)],
    }
    .finish()
}

/// Upper-bound prediction of `R_q(π_t ‖ π)` along the Langevin diffusion.
///
/// Integrates the decay inequality with RK4 (step at most `qC/1000`), switching
/// branches exactly where `R` crosses 1.
pub fn predict_continuous_decay(fi: &FiConstants, q: f64, r0: f64, t_grid: &[f64]) -> Result<DecayCurve> {
    fi.validate()?;
    ensure(q >= 2.0, || format!("order q = {q} must be at least 2"))?;
    ensure(r0 >= 0.0 && r0.is_finite(), || format!("R0 = {r0} must be nonnegative"))?;
    ensure(t_grid.iter().all(|t| *t >= 0.0 && t.is_finite()), || "times must be nonnegative".into())?;
    ensure(t_grid.windows(2).all(|w| w[0] <= w[1]), || "times must be sorted".into())?;
    let c = fi.c();
    // dR/dt = −k R^p above 1 and −k R below 1.
    let (k, p) = match *fi {
        FiConstants::Lsi { .. } => (2.0 / (q * c), 1.0),
        FiConstants::Pi { .. } => (2.0 / (q * c), 0.0),
        FiConstants::Lo { alpha, .. } => (1.0 / (68.0 * q * c), 2.0 - 2.0 / alpha),
        FiConstants::Mlsi { .. } => return Err(LabError::ParameterOutOfRange("no continuous-time prediction for MLSI".into())),
    };
    let above = move |r: f64| -k * r.max(0.0).powf(p);
    let below = move |r: f64| -k * r;
    let rk4 = |f: &dyn Fn(f64) -> f64, r: f64, dt: f64| {
        let k1 = f(r);
        let k2 = f(r + 0.5 * dt * k1);
        let k3 = f(r + 0.5 * dt * k2);
        let k4 = f(r + dt * k3);
        r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let max_dt = q * c / 1000.0;
    let mut r = r0;
    let mut t = 0.0;
    let mut values = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        while t < target {
            let dt = (target - t).min(max_dt);
            if r > 1.0 {
                let next = rk4(&above, r, dt);
                if next >= 1.0 {
                    r = next;
                    t += dt;
                    continue;
                }
                // Bisect for the sub-step that lands on R = 1, then continue below.
                let (mut lo, mut hi) = (0.0, dt);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if rk4(&above, r, mid) >= 1.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                r = 1.0;
                t += lo;
                if t >= target {
                    break;
                }
                let rest = (dt - lo).min(target - t);
                r = rk4(&below, r, rest);
                t += rest;
            } else {
                r = rk4(&below, r, dt);
                t += dt;
            }
        }
        values.push(r);
    }
    Ok(DecayCurve { q, times: t_grid.to_vec(), values })
}

/// Closed-form solution of the same decay inequality, for comparison.
pub fn analytic_decay(fi: &FiConstants, q: f64, r0: f64, t: f64) -> Result<f64> {
    let c = fi.c();
    let (k, delta) = match *fi {
        FiConstants::Lsi { .. } => return Ok(r0 * (-2.0 * t / (q * c)).exp()),
        FiConstants::Pi { .. } => (2.0 / (q * c), 1.0),
        FiConstants::Lo { alpha, .. } => (1.0 / (68.0 * q * c), 2.0 / alpha - 1.0),
        FiConstants::Mlsi { .. } => return Err(LabError::ParameterOutOfRange("no closed form for MLSI".into())),
    };
    if r0 <= 1.0 {
        return Ok(r0 * (-k * t).exp());
    }
    let t1 = if delta.abs() < 1e-12 { r0.ln() / k } else { (r0.powf(delta) - 1.0) / (k * delta) };
    if t >= t1 {
        return Ok((-k * (t - t1)).exp());
    }
    Ok(if delta.abs() < 1e-12 { r0 * (-k * t).exp() } else { (r0.powf(delta) - k * delta * t).powf(1.0 / delta) })
}

/// Time at which the predicted curve reaches `R = 1`.
pub fn first_phase_end(fi: &FiConstants, q: f64, r0: f64) -> f64 {
    if r0 <= 1.0 {
        return 0.0;
    }
    match *fi {
        FiConstants::Pi { c, .. } => (r0 - 1.0) * q * c / 2.0,
        FiConstants::Lo { alpha, c } => lo_horizon(q, alpha, c, r0, 1.0),
        FiConstants::Lsi { c } => q * c * r0.ln() / 2.0,
        FiConstants::Mlsi { .. } => f64::NAN,
    }
}

/// Initialization recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum InitVariant {
    /// `N(0, I/L)` for convex potentials.
    Convex,
    /// `N(0, I/(2L))` for general potentials.
    General,
    /// `N(0, I/(2L + γ))` against the modified target with parameters `(γ, R)`.
    Modified { gamma: f64, radius: f64 },
}

/// Gaussian initialization together with its `R∞(μ0 ‖ π)` bound.
pub fn init_design(spec: &PotentialSpec, variant: InitVariant) -> Result<(GaussianLaw, f64)> {
    let d = spec.dim();
    let l = spec.smoothness.l;
    let m = spec
        .mean_norm
        .ok_or_else(|| LabError::MissingMetadata(format!("mean norm of {} is required for initialization", spec.id)))?;
    let gap = || {
        spec.min_v
            .map(|min_v| spec.v_at_0 - min_v)
            .ok_or_else(|| LabError::MissingMetadata(format!("min V of {} is required for initialization", spec.id)))
    };
    let half_d = d as f64 / 2.0;
    match variant {
        InitVariant::Convex => Ok((GaussianLaw::isotropic(d, 0.0, 1.0 / l)?, 2.0 + half_d * (2.0 * m * m * l).ln())),
        InitVariant::General => {
            Ok((GaussianLaw::isotropic(d, 0.0, 1.0 / (2.0 * l))?, 2.0 + l + gap()? + half_d * (4.0 * m * m * l).ln()))
        }
        InitVariant::Modified { gamma, radius } => {
            ensure(gamma > 0.0 && radius > 0.0, || format!("gamma = {gamma} and R = {radius} must be positive"))?;
            let m_hat = radius + 1.0 / gamma.sqrt();
            let bound = 2.0 + l + gamma / 2.0 + gap()? + half_d * (4.0 * m_hat * m_hat * l).ln();
            Ok((GaussianLaw::isotropic(d, 0.0, 1.0 / (2.0 * l + gamma))?, bound))
        }
    }
}

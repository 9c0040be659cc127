//! Target potentials `V` with `π ∝ exp(-V)`.
//!
//! Built-in families cover power growth `‖x‖^α`, smoothed and product variants,
//! quadratics and bounded perturbations. Each [`PotentialSpec`] carries the
//! Hölder record `(s, L)` and whatever functional-inequality constants are known
//! in closed form.

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, LabError, Result};

/// Hölder record: `‖∇V(x) − ∇V(y)‖ ≤ L‖x − y‖^s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessRecord {
    pub s: f64,
    #[serde(rename = "L", alias = "l")]
    pub l: f64,
}

impl SmoothnessRecord {
    pub fn new(s: f64, l: f64) -> Result<Self> {
        let rec = Self { s, l };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.s > 0.0 && self.s <= 1.0, || format!("Hölder exponent s = {} not in (0, 1]", self.s))?;
        ensure(self.l > 0.0 && self.l.is_finite(), || format!("Hölder constant L = {} must be positive", self.l))
    }
}

/// A declared functional inequality with its constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FiConstants {
    /// Poincaré inequality. `log_concave` marks targets covered by the log-concave plan.
    Pi {
        c: f64,
        #[serde(default)]
        log_concave: bool,
    },
    /// Log-Sobolev inequality.
    Lsi { c: f64 },
    /// Latała–Oleszkiewicz inequality of order `alpha` in `[1, 2]`.
    Lo { alpha: f64, c: f64 },
    /// Modified log-Sobolev inequality of order `alpha0` with a tail bound of order `alpha1`.
    Mlsi { alpha0: f64, alpha1: f64, c: f64, c_tail: f64 },
}

impl FiConstants {
    pub fn c(&self) -> f64 {
        match *self {
            FiConstants::Pi { c, .. } | FiConstants::Lsi { c } | FiConstants::Lo { c, .. } | FiConstants::Mlsi { c, .. } => c,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FiConstants::Pi { .. } => "PI",
            FiConstants::Lsi { .. } => "LSI",
            FiConstants::Lo { .. } => "LO",
            FiConstants::Mlsi { .. } => "MLSI",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.c();
        ensure(c > 0.0 && c.is_finite(), || format!("{} constant C = {c} must be positive", self.kind_name()))?;
        match *self {
            FiConstants::Lo { alpha, .. } => {
                ensure((1.0..=2.0).contains(&alpha), || format!("LO order alpha = {alpha} not in [1, 2]"))
            }
            FiConstants::Mlsi { alpha0, alpha1, c_tail, .. } => {
                ensure((-1.0..=2.0).contains(&alpha0), || format!("MLSI order alpha0 = {alpha0} not in [-1, 2]"))?;
                ensure(alpha1 > 0.0 && alpha1 <= 2.0, || format!("tail order alpha1 = {alpha1} not in (0, 2]"))?;
                ensure(c_tail > 0.0, || format!("tail constant C_tail = {c_tail} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Super-Poincaré rate function `β_α(s) = 96 C / ln(e + s)^(2 − 2/α)` attached to an LO constant.
pub fn beta_alpha(alpha: f64, c_lo: f64, s: f64) -> f64 {
    96.0 * c_lo / (E + s).ln().powf(2.0 - 2.0 / alpha)
}

/// A differentiable potential on `R^d`.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes `∇V(x)` into `out`.
    fn grad(&self, x: &[f64], out: &mut [f64]);

    /// `V` at radius `r` when the potential is radially symmetric.
    fn radial(&self, _r: f64) -> Option<f64> {
        None
    }
}

/// Built-in target families.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `‖x‖^α`, α in (1, 2].
    Power { alpha: f64 },
    /// `(1 + ‖x‖²)^(α/2)`, α in [1, 2].
    SmoothedPower { alpha: f64 },
    /// `sqrt(1 + ‖x‖²)`.
    SmoothedNorm,
    /// `Σ (1 + x_i²)^(α/2)`, α in [1, 2].
    Product { alpha: f64 },
    /// `½ xᵀAx` with `A` symmetric positive-definite.
    Quadratic { a: DMatrix<f64> },
    /// `‖x‖^α + cos‖x‖`, α in (1, 2].
    PerturbedPower { alpha: f64 },
    /// `½‖x‖² + cos(‖x‖^(1+s))`, s in (0, 1].
    PerturbedQuadratic { s: f64 },
}

impl Family {
    pub fn id(&self) -> &'static str {
        match self {
            Family::Power { .. } => "power",
            Family::SmoothedPower { .. } => "smoothed_power",
            Family::SmoothedNorm => "smoothed_norm",
            Family::Product { .. } => "product",
            Family::Quadratic { .. } => "quadratic",
            Family::PerturbedPower { .. } => "perturbed_power",
            Family::PerturbedQuadratic { .. } => "perturbed_quadratic",
        }
    }
}

#[derive(Debug, Clone)]
struct Builtin {
    family: Family,
    d: usize,
    /// `c` when `A = c·I`.
    isotropic: Option<f64>,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale_into(out: &mut [f64], x: &[f64], k: f64) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o = k * xi;
    }
}

impl Builtin {
    fn radial_value(&self, r: f64) -> f64 {
        match &self.family {
            Family::Power { alpha } => r.powf(*alpha),
            Family::SmoothedPower { alpha } => (1.0 + r * r).powf(alpha / 2.0),
            Family::SmoothedNorm => (1.0 + r * r).sqrt(),
            Family::PerturbedPower { alpha } => r.powf(*alpha) + r.cos(),
            Family::PerturbedQuadratic { s } => 0.5 * r * r + r.powf(1.0 + s).cos(),
            Family::Quadratic { .. } => 0.5 * self.isotropic.unwrap_or(f64::NAN) * r * r,
            Family::Product { .. } => f64::NAN,
        }
    }

    /// `k(r)` with `∇V(x) = k(‖x‖)·x` for radial families; `k` is taken as its limit at 0.
    fn radial_factor(&self, r: f64) -> f64 {
        match &self.family {
            Family::Power { alpha } => {
                if r > 0.0 {
                    alpha * r.powf(alpha - 2.0)
                } else {
                    0.0
                }
            }
            Family::SmoothedPower { alpha } => alpha * (1.0 + r * r).powf(alpha / 2.0 - 1.0),
            Family::SmoothedNorm => 1.0 / (1.0 + r * r).sqrt(),
            Family::PerturbedPower { alpha } => {
                if r > 0.0 {
                    alpha * r.powf(alpha - 2.0) - r.sin() / r
                } else {
                    0.0
                }
            }
            Family::PerturbedQuadratic { s } => {
                if r > 0.0 {
                    1.0 - (1.0 + s) * r.powf(s - 1.0) * r.powf(1.0 + s).sin()
                } else {
                    0.0
                }
            }
            Family::Quadratic { .. } => self.isotropic.unwrap_or(f64::NAN),
            Family::Product { .. } => f64::NAN,
        }
    }
}

impl Potential for Builtin {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        match &self.family {
            Family::Product { alpha } => x.iter().map(|xi| (1.0 + xi * xi).powf(alpha / 2.0)).sum(),
            Family::Quadratic { a } if self.isotropic.is_none() => {
                let v = DVector::from_column_slice(x);
                0.5 * v.dot(&(a * &v))
            }
            _ => self.radial_value(norm(x)),
        }
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Product { alpha } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = alpha * (1.0 + xi * xi).powf(alpha / 2.0 - 1.0) * xi;
                }
            }
            Family::Quadratic { a } if self.isotropic.is_none() => {
                let v = DVector::from_column_slice(x);
                out.copy_from_slice((a * v).as_slice());
            }
            _ => {
                let k = self.radial_factor(norm(x));
                scale_into(out, x, k);
            }
        }
    }

    fn radial(&self, r: f64) -> Option<f64> {
        match &self.family {
            Family::Product { .. } => None,
            Family::Quadratic { .. } if self.isotropic.is_none() => None,
            _ => Some(self.radial_value(r)),
        }
    }
}

/// A target potential together with its metadata.
#[derive(Clone)]
pub struct PotentialSpec {
    pub id: String,
    pub potential: Arc<dyn Potential>,
    pub smoothness: SmoothnessRecord,
    /// Declared functional-inequality constants (only those known in closed form).
    pub fi: Vec<FiConstants>,
    /// `m = ∫‖x‖ dπ(x)`, when known.
    pub mean_norm: Option<f64>,
    pub v_at_0: f64,
    pub min_v: Option<f64>,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("id", &self.id)
            .field("d", &self.dim())
            .field("smoothness", &self.smoothness)
            .field("fi", &self.fi)
            .field("mean_norm", &self.mean_norm)
            .field("v_at_0", &self.v_at_0)
            .field("min_v", &self.min_v)
            .finish()
    }
}

impl PotentialSpec {
    /// Wraps a user-supplied potential. `V(0)` is evaluated; other metadata starts empty.
    pub fn custom(id: impl Into<String>, potential: Arc<dyn Potential>, smoothness: SmoothnessRecord) -> Result<Self> {
        smoothness.validate()?;
        let d = potential.dim();
        ensure(d >= 1, || "dimension must be at least 1".into())?;
        let v_at_0 = potential.value(&vec![0.0; d]);
        Ok(Self { id: id.into(), potential, smoothness, fi: Vec::new(), mean_norm: None, v_at_0, min_v: None })
    }

    pub fn with_fi(mut self, fi: FiConstants) -> Result<Self> {
        fi.validate()?;
        self.fi.push(fi);
        Ok(self)
    }

    pub fn with_mean_norm(mut self, m: f64) -> Self {
        self.mean_norm = Some(m);
        self
    }

    pub fn with_min_v(mut self, min_v: f64) -> Self {
        self.min_v = Some(min_v);
        self
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.potential.value(x)
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        self.potential.grad(x, out)
    }

    pub fn grad_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.potential.grad(x, &mut g);
        g
    }

    pub fn is_radial(&self) -> bool {
        self.potential.radial(0.0).is_some()
    }

    /// First declared constant of the given kind (`"PI"`, `"LSI"`, `"LO"`, `"MLSI"`).
    pub fn fi_of_kind(&self, kind: &str) -> Option<FiConstants> {
        self.fi.iter().copied().find(|f| f.kind_name().eq_ignore_ascii_case(kind))
    }
}

/// Builds one of the named example targets in dimension `d`.
pub fn make_builtin(family: Family, d: usize) -> Result<PotentialSpec> {
    ensure(d >= 1, || "dimension must be at least 1".into())?;
    let (smoothness, fi, min_v_known, isotropic) = match &family {
        Family::Power { alpha } => {
            let a = *alpha;
            ensure(a > 1.0 && a <= 2.0, || format!("power family needs alpha in (1, 2], got {a}"))?;
            let fi = if a == 2.0 { lsi_pair(0.5) } else { Vec::new() };
            (SmoothnessRecord::new(a - 1.0, a * 2f64.powf(2.0 - a))?, fi, Some(0.0), None)
        }
        Family::SmoothedPower { alpha } => {
            let a = *alpha;
            ensure((1.0..=2.0).contains(&a), || format!("smoothed_power needs alpha in [1, 2], got {a}"))?;
            let fi = if a == 2.0 { lsi_pair(0.5) } else { Vec::new() };
            (SmoothnessRecord::new(1.0, a)?, fi, Some(1.0), None)
        }
        Family::SmoothedNorm => (SmoothnessRecord::new(1.0, 1.0)?, Vec::new(), Some(1.0), None),
        Family::Product { alpha } => {
            let a = *alpha;
            ensure((1.0..=2.0).contains(&a), || format!("product family needs alpha in [1, 2], got {a}"))?;
            let fi = if a == 2.0 { lsi_pair(0.5) } else { Vec::new() };
            (SmoothnessRecord::new(1.0, a)?, fi, Some(d as f64), None)
        }
        Family::Quadratic { a } => {
            ensure(a.nrows() == d && a.ncols() == d, || format!("precision matrix must be {d}x{d}"))?;
            let (lmin, lmax) = spd_extremes(a)?;
            let c = 1.0 / lmin;
            let iso = is_scalar_matrix(a).then(|| a[(0, 0)]);
            (SmoothnessRecord::new(1.0, lmax)?, lsi_pair(c), Some(0.0), iso)
        }
        Family::PerturbedPower { alpha } => {
            let a = *alpha;
            ensure(a > 1.0 && a <= 2.0, || format!("perturbed_power needs alpha in (1, 2], got {a}"))?;
            let fi = if a == 2.0 {
                vec![FiConstants::Lsi { c: 0.5 * E * E }, FiConstants::Pi { c: 0.5 * E * E, log_concave: false }]
            } else {
                Vec::new()
            };
            (SmoothnessRecord::new(a - 1.0, (a + 1.0) * 2f64.powf(2.0 - a))?, fi, None, None)
        }
        Family::PerturbedQuadratic { s } => {
            let s = *s;
            ensure(s > 0.0 && s <= 1.0, || format!("perturbed_quadratic needs s in (0, 1], got {s}"))?;
            let fi = vec![FiConstants::Lsi { c: E * E }, FiConstants::Pi { c: E * E, log_concave: false }];
            (SmoothnessRecord::new(s, 2.0 + 2.0 * (1.0 + s))?, fi, None, None)
        }
    };
    let id = family.id().to_string();
    let potential: Arc<dyn Potential> = Arc::new(Builtin { family, d, isotropic });
    let mut spec = PotentialSpec::custom(id, potential, smoothness)?;
    spec.fi = fi;
    spec.min_v = match min_v_known {
        Some(v) => Some(v),
        None => Some(radial_minimum(spec.potential.as_ref())?),
    };
    if spec.is_radial() || d <= 2 {
        spec.mean_norm = Some(estimate_mean_norm(&spec, 0)?.value);
    }
    Ok(spec)
}

fn lsi_pair(c: f64) -> Vec<FiConstants> {
    vec![FiConstants::Lsi { c }, FiConstants::Pi { c, log_concave: true }]
}

fn is_scalar_matrix(a: &DMatrix<f64>) -> bool {
    let c = a[(0, 0)];
    a.iter().enumerate().all(|(k, &v)| {
        let (i, j) = (k % a.nrows(), k / a.nrows());
        if i == j {
            v == c
        } else {
            v == 0.0
        }
    })
}

/// Smallest and largest eigenvalue of a symmetric positive-definite matrix.
pub(crate) fn spd_extremes(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    ensure(a.is_square() && a.nrows() > 0, || "matrix must be square and non-empty".into())?;
    let asym = (a - a.transpose()).abs().max();
    ensure(asym <= 1e-12 * a.abs().max().max(1.0), || format!("matrix is not symmetric (asymmetry {asym:e})"))?;
    let eig = a.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    ensure(lmin > 0.0, || format!("matrix is not positive-definite (smallest eigenvalue {lmin:e})"))?;
    Ok((lmin, lmax))
}

/// Global minimum of a radial potential by a dense scan and golden-section refinement.
fn radial_minimum(p: &dyn Potential) -> Result<f64> {
    let v = |r: f64| p.radial(r).expect("radial potential");
    if p.radial(0.0).is_none() {
        return Err(LabError::MissingMetadata("min V for a non-radial potential".into()));
    }
    // Beyond r_hi the potential exceeds V(0), so the minimum lies inside.
    let v0 = v(0.0);
    let mut r_hi = 1.0;
    while v(r_hi) <= v0 + 1.0 || v(2.0 * r_hi) <= v0 + 1.0 {
        r_hi *= 2.0;
        if r_hi > 1e8 {
            return Err(LabError::NonNormalizable("potential does not grow".into()));
        }
    }
    let r_hi = 2.0 * r_hi;
    let n = 200_000;
    let dr = r_hi / n as f64;
    let (mut best_i, mut best) = (0usize, v0);
    for i in 1..=n {
        let val = v(i as f64 * dr);
        if val < best {
            best = val;
            best_i = i;
        }
    }
    let (mut a, mut b) = ((best_i as f64 - 1.0).max(0.0) * dr, (best_i as f64 + 1.0) * dr);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if v(c) < v(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best.min(v(0.5 * (a + b))))
}

/// How a mean norm was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanNormMethod {
    RadialQuadrature,
    Grid,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanNormEstimate {
    pub value: f64,
    /// Standard error for Monte Carlo estimates.
    pub std_error: Option<f64>,
    pub method: MeanNormMethod,
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Support radius of `r^(d−1) e^{−V(r)}`: past the mode, where the log-integrand has dropped by 60.
fn radial_window(p: &dyn Potential, d: usize) -> Result<f64> {
    let logg = |r: f64| (d as f64 - 1.0) * r.max(1e-300).ln() - p.radial(r).unwrap();
    let mut best = if d == 1 { -p.radial(0.0).unwrap() } else { f64::NEG_INFINITY };
    let mut r = 1e-3;
    loop {
        let lg = logg(r);
        if !lg.is_finite() && lg > 0.0 {
            return Err(LabError::NonNormalizable("radial integrand is infinite".into()));
        }
        if lg > best {
            best = lg;
        } else if lg < best - 60.0 {
            return Ok(r);
        }
        r *= 1.05;
        if r > 1e7 {
            return Err(LabError::NonNormalizable("radial integrand does not decay".into()));
        }
    }
}

/// Estimates `m = ∫‖x‖ dπ`.
///
/// Radial targets use a 1D quadrature of `r^d e^{−V(r)}` against `r^(d−1) e^{−V(r)}`;
/// other targets with `d ≤ 2` use a midpoint grid; quadratic and product targets in
/// higher dimension fall back to exact Monte Carlo sampling with `seed`.
pub fn estimate_mean_norm(spec: &PotentialSpec, seed: u64) -> Result<MeanNormEstimate> {
    let p = spec.potential.as_ref();
    let d = spec.dim();
    if spec.is_radial() {
        let r_hi = radial_window(p, d)?;
        // Shift by the log-integrand maximum for stability.
        let shift = {
            let mut m = f64::NEG_INFINITY;
            let n = 4000;
            for i in 0..=n {
                let r = r_hi * i as f64 / n as f64;
                let lg = if d == 1 { -p.radial(r).unwrap() } else { (d as f64 - 1.0) * r.max(1e-300).ln() - p.radial(r).unwrap() };
                m = m.max(lg);
            }
            m
        };
        let g = |r: f64, k: f64| {
            let pw = d as f64 - 1.0 + k;
            if pw == 0.0 {
                return (-p.radial(r).unwrap() - shift).exp();
            }
            if r == 0.0 {
                return 0.0;
            }
            (pw * r.ln() - p.radial(r).unwrap() - shift).exp()
        };
        let n = 400_000;
        let z = simpson(|r| g(r, 0.0), 0.0, r_hi, n);
        let m1 = simpson(|r| g(r, 1.0), 0.0, r_hi, n);
        if !(z > 0.0 && z.is_finite()) {
            return Err(LabError::NonNormalizable(format!("{} normalizer {z}", spec.id)));
        }
        return Ok(MeanNormEstimate { value: m1 / z, std_error: None, method: MeanNormMethod::RadialQuadrature });
    }
    if d <= 2 {
        return grid_mean_norm(spec);
    }
    monte_carlo_mean_norm(spec, seed)
}

fn grid_mean_norm(spec: &PotentialSpec) -> Result<MeanNormEstimate> {
    let p = spec.potential.as_ref();
    let d = spec.dim();
    let v0 = spec.min_v.unwrap_or(spec.v_at_0);
    let boundary_min = |w: f64| -> f64 {
        let k = 512;
        let mut m = f64::INFINITY;
        for i in 0..=k {
            let t = -w + 2.0 * w * i as f64 / k as f64;
            if d == 1 {
                m = m.min(p.value(&[w])).min(p.value(&[-w]));
            } else {
                for x in [[t, w], [t, -w], [w, t], [-w, t]] {
                    m = m.min(p.value(&x));
                }
            }
        }
        m
    };
    let mut w = 1.0;
    while boundary_min(w) - v0 < 60.0 {
        w *= 1.25;
        if w > 1e6 {
            return Err(LabError::NonNormalizable(format!("{} does not decay on any window", spec.id)));
        }
    }
    let n: usize = if d == 1 { 20_000 } else { 1024 };
    let dx = 2.0 * w / n as f64;
    let c = |i: usize| -w + (i as f64 + 0.5) * dx;
    let (mut z, mut m1) = (0.0, 0.0);
    if d == 1 {
        for i in 0..n {
            let x = c(i);
            let wgt = (-(p.value(&[x]) - v0)).exp();
            z += wgt;
            m1 += wgt * x.abs();
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                let x = [c(i), c(j)];
                let wgt = (-(p.value(&x) - v0)).exp();
                z += wgt;
                m1 += wgt * norm(&x);
            }
        }
    }
    Ok(MeanNormEstimate { value: m1 / z, std_error: None, method: MeanNormMethod::Grid })
}

fn monte_carlo_mean_norm(spec: &PotentialSpec, seed: u64) -> Result<MeanNormEstimate> {
    let d = spec.dim();
    let n = 200_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample: Box<dyn FnMut(&mut ChaCha8Rng, &mut [f64])> = if spec.id == "quadratic" {
        // x = L⁻ᵀ z with A = L Lᵀ has covariance A⁻¹.
        let a = quadratic_precision(spec)?;
        let chol = a.cholesky().ok_or_else(|| LabError::ParameterOutOfRange("precision not positive-definite".into()))?;
        let lt = chol.l().transpose();
        Box::new(move |rng: &mut ChaCha8Rng, out: &mut [f64]| {
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = lt.solve_upper_triangular(&z).expect("triangular solve");
            out.copy_from_slice(x.as_slice());
        })
    } else if spec.id == "product" {
        let marginal = product_marginal_cdf(spec)?;
        Box::new(move |rng: &mut ChaCha8Rng, out: &mut [f64]| {
            for o in out.iter_mut() {
                *o = marginal.sample(rng.random::<f64>());
            }
        })
    } else {
        return Err(LabError::MissingMetadata(format!(
            "mean norm of {} in dimension {d} must be declared (no exact sampler)",
            spec.id
        )));
    };
    let mut x = vec![0.0; d];
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        sample(&mut rng, &mut x);
        let r = norm(&x);
        s1 += r;
        s2 += r * r;
    }
    let mean = s1 / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    Ok(MeanNormEstimate {
        value: mean,
        std_error: Some((var / n as f64).sqrt()),
        method: MeanNormMethod::MonteCarlo,
    })
}

fn quadratic_precision(spec: &PotentialSpec) -> Result<DMatrix<f64>> {
    let d = spec.dim();
    let mut a = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    let mut g = vec![0.0; d];
    for j in 0..d {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        spec.grad(&e, &mut g);
        for i in 0..d {
            a[(i, j)] = g[i];
        }
    }
    Ok(a)
}

struct TabulatedCdf {
    x: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedCdf {
    fn sample(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.x.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.x[k - 1] + t * (self.x[k] - self.x[k - 1])
    }
}

fn product_marginal_cdf(spec: &PotentialSpec) -> Result<TabulatedCdf> {
    let d = spec.dim();
    let v1 = |t: f64| {
        let mut x = vec![0.0; d];
        x[0] = t;
        spec.value(&x) - spec.v_at_0
    };
    let mut w = 1.0;
    while v1(w) < 60.0 {
        w *= 1.25;
    }
    let n = 200_000;
    let dx = 2.0 * w / n as f64;
    let x: Vec<f64> = (0..=n).map(|i| -w + i as f64 * dx).collect();
    let dens: Vec<f64> = x.iter().map(|&t| (-v1(t)).exp()).collect();
    let mut cdf = vec![0.0; n + 1];
    for i in 1..=n {
        cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * dx;
    }
    let total = cdf[n];
    cdf.iter_mut().for_each(|c| *c /= total);
    Ok(TabulatedCdf { x, cdf })
}

/// Outcome of a sampled Hölder check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub s: f64,
    pub declared_l: f64,
    /// Largest observed `‖∇V(x) − ∇V(y)‖ / ‖x − y‖^s`.
    pub max_ratio: f64,
    pub n_pairs: usize,
    pub violated: bool,
}

/// Samples point pairs at several scales (including antipodal pairs) and reports the
/// largest Hölder quotient against the declared constant.
pub fn verify_holder(spec: &PotentialSpec, n_pairs: usize, seed: u64) -> Result<HolderReport> {
    ensure(n_pairs >= 1, || "n_pairs must be at least 1".into())?;
    verify_holder_with(spec, spec.smoothness, n_pairs, seed)
}

/// As [`verify_holder`] but against an explicit record, e.g. a deliberately wrong one.
pub fn verify_holder_with(spec: &PotentialSpec, rec: SmoothnessRecord, n_pairs: usize, seed: u64) -> Result<HolderReport> {
    ensure(n_pairs >= 1, || "n_pairs must be at least 1".into())?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
    let (mut gx, mut gy) = (vec![0.0; d], vec![0.0; d]);
    let mut max_ratio: f64 = 0.0;
    for i in 0..n_pairs {
        let sx = 10f64.powf(rng.random_range(-2.0..2.0));
        let x: Vec<f64> = gauss(&mut rng).into_iter().map(|v| sx * v).collect();
        let y: Vec<f64> = match i % 3 {
            0 => {
                let step = 10f64.powf(rng.random_range(-4.0..1.0));
                x.iter().zip(gauss(&mut rng)).map(|(a, b)| a + step * b).collect()
            }
            1 => x.iter().map(|v| -v).collect(),
            _ => {
                let sy = 10f64.powf(rng.random_range(-2.0..2.0));
                gauss(&mut rng).into_iter().map(|v| sy * v).collect()
            }
        };
        let dist = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dist == 0.0 {
            continue;
        }
        spec.grad(&x, &mut gx);
        spec.grad(&y, &mut gy);
        let gdiff = norm(&gx.iter().zip(&gy).map(|(a, b)| a - b).collect::<Vec<_>>());
        max_ratio = max_ratio.max(gdiff / dist.powf(rec.s));
    }
    Ok(HolderReport {
        s: rec.s,
        declared_l: rec.l,
        max_ratio,
        n_pairs,
        violated: max_ratio > rec.l * (1.0 + 1e-9),
    })
}

/// `V̂(x) = V(x) + (γ/2)(‖x‖ − R)₊²`.
#[derive(Debug, Clone)]
pub struct ModifiedPotential {
    pub base: PotentialSpec,
    pub gamma: f64,
    pub radius: f64,
}

/// Builds the modified potential; requires `γ > 0` and `R ≥ max{1, 2m}`.
pub fn make_modified(base: &PotentialSpec, gamma: f64, radius: f64) -> Result<ModifiedPotential> {
    ensure(gamma > 0.0 && gamma.is_finite(), || format!("gamma = {gamma} must be positive"))?;
    let m = base
        .mean_norm
        .ok_or_else(|| LabError::MissingMetadata(format!("mean norm of {} is required for the radius floor", base.id)))?;
    let floor = 1f64.max(2.0 * m);
    ensure(radius >= floor, || format!("radius R = {radius} below the admissible floor max(1, 2m) = {floor}"))?;
    Ok(ModifiedPotential { base: base.clone(), gamma, radius })
}

impl ModifiedPotential {
    /// Gradient-growth bound `L + (L + γ)‖x‖`.
    pub fn growth_bound(&self, x: &[f64]) -> f64 {
        let l = self.base.smoothness.l;
        l + (l + self.gamma) * norm(x)
    }

    /// Wraps the modified potential as a spec; `L` grows by `γ`, other metadata is inherited.
    pub fn to_spec(&self) -> Result<PotentialSpec> {
        let rec = SmoothnessRecord::new(self.base.smoothness.s, self.base.smoothness.l + self.gamma)?;
        let mut spec = PotentialSpec::custom(format!("modified_{}", self.base.id), Arc::new(self.clone()), rec)?;
        spec.min_v = self.base.min_v;
        Ok(spec)
    }
}

impl Potential for ModifiedPotential {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let excess = (norm(x) - self.radius).max(0.0);
        self.base.value(x) + 0.5 * self.gamma * excess * excess
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        self.base.grad(x, out);
        let r = norm(x);
        if r > self.radius {
            let k = self.gamma * (r - self.radius) / r;
            for (o, xi) in out.iter_mut().zip(x) {
                *o += k * xi;
            }
        }
    }

    fn radial(&self, r: f64) -> Option<f64> {
        let excess = (r - self.radius).max(0.0);
        self.base.potential.radial(r).map(|v| v + 0.5 * self.gamma * excess * excess)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn all_builtins(d: usize) -> Vec<PotentialSpec> {
        let mut a = DMatrix::identity(d, d);
        for i in 0..d {
            a[(i, i)] = 1.0 + i as f64;
        }
        vec![
            make_builtin(Family::Power { alpha: 1.5 }, d).unwrap(),
            make_builtin(Family::Power { alpha: 2.0 }, d).unwrap(),
            make_builtin(Family::SmoothedPower { alpha: 1.3 }, d).unwrap(),
            make_builtin(Family::SmoothedNorm, d).unwrap(),
            make_builtin(Family::Product { alpha: 1.5 }, d).unwrap(),
            make_builtin(Family::Quadratic { a }, d).unwrap(),
            make_builtin(Family::PerturbedPower { alpha: 1.5 }, d).unwrap(),
            make_builtin(Family::PerturbedQuadratic { s: 0.5 }, d).unwrap(),
        ]
    }

    #[test]
    fn gradient_vanishes_at_origin() {
        for d in [1, 2, 3] {
            for spec in all_builtins(d) {
                let g = spec.grad_vec(&vec![0.0; d]);
                assert!(g.iter().all(|&v| v == 0.0), "{} d={d}: {g:?}", spec.id);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in [1, 2, 3] {
            for spec in all_builtins(d) {
                for _ in 0..100 {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let g = spec.grad_vec(&x);
                    let gnorm = norm(&g);
                    let mut err: f64 = 0.0;
                    for i in 0..d {
                        let eps = 1e-6 * (1.0 + x[i].abs());
                        let (mut xp, mut xm) = (x.clone(), x.clone());
                        xp[i] += eps;
                        xm[i] -= eps;
                        let fd = (spec.value(&xp) - spec.value(&xm)) / (2.0 * eps);
                        err = err.max((fd - g[i]).abs());
                    }
                    assert!(err <= 1e-5 * gnorm.max(1.0), "{} at {x:?}: err {err:e}", spec.id);
                }
            }
        }
    }

    #[test]
    fn smoothed_norm_examples() {
        let spec = make_builtin(Family::SmoothedNorm, 3).unwrap();
        let g = spec.grad_vec(&[1.0, 0.0, 0.0]);
        assert_relative_eq!(g[0], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(&g[1..], &[0.0, 0.0]);
    }

    #[test]
    fn quadratic_power_example() {
        let spec = make_builtin(Family::Power { alpha: 2.0 }, 1).unwrap();
        assert_eq!(spec.value(&[3.0]), 9.0);
        assert_eq!(spec.grad_vec(&[3.0]), vec![6.0]);
    }

    #[test]
    fn family_metadata() {
        let p = make_builtin(Family::Power { alpha: 1.5 }, 2).unwrap();
        assert_relative_eq!(p.smoothness.s, 0.5);
        let sp = make_builtin(Family::SmoothedPower { alpha: 1.5 }, 2).unwrap();
        assert_eq!(sp.smoothness.s, 1.0);
        assert!(make_builtin(Family::Power { alpha: 2.5 }, 1).is_err());
        assert!(make_builtin(Family::Power { alpha: 1.0 }, 1).is_err());
        assert!(make_builtin(Family::PerturbedQuadratic { s: 0.0 }, 1).is_err());
        let q = make_builtin(Family::Quadratic { a: DMatrix::from_diagonal_element(2, 2, 4.0) }, 2).unwrap();
        assert_eq!(q.fi_of_kind("lsi"), Some(FiConstants::Lsi { c: 0.25 }));
        assert!(q.is_radial());
    }

    #[test]
    fn perturbations_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [1, 3] {
            let pp = make_builtin(Family::PerturbedPower { alpha: 1.5 }, d).unwrap();
            let p = make_builtin(Family::Power { alpha: 1.5 }, d).unwrap();
            let pq = make_builtin(Family::PerturbedQuadratic { s: 0.5 }, d).unwrap();
            let q = make_builtin(Family::Quadratic { a: DMatrix::identity(d, d) }, d).unwrap();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-20.0..20.0)).collect();
                assert!((pp.value(&x) - p.value(&x)).abs() <= 1.0);
                assert!((pq.value(&x) - q.value(&x)).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn min_v_for_perturbed_families() {
        let pq = make_builtin(Family::PerturbedQuadratic { s: 1.0 }, 1).unwrap();
        let min_v = pq.min_v.unwrap();
        // Critical points solve sin(r²) = 1/2; the lowest is at r² = 5π/6.
        let exact = 5.0 * std::f64::consts::PI / 12.0 - 3f64.sqrt() / 2.0;
        assert_relative_eq!(min_v, exact, max_relative = 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = rng.random_range(-4.0..4.0);
            assert!(pq.value(&[x]) >= min_v - 1e-12);
        }
        let pp = make_builtin(Family::PerturbedPower { alpha: 1.5 }, 2).unwrap();
        assert_relative_eq!(pp.min_v.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_norm_examples() {
        let gauss = make_builtin(Family::Quadratic { a: DMatrix::identity(1, 1) }, 1).unwrap();
        assert_relative_eq!(gauss.mean_norm.unwrap(), (2.0 / PI).sqrt(), max_relative = 1e-8);
        let p2 = make_builtin(Family::Power { alpha: 2.0 }, 1).unwrap();
        assert_relative_eq!(p2.mean_norm.unwrap(), 1.0 / PI.sqrt(), max_relative = 1e-8);
        // Chi distribution with 3 degrees of freedom: mean 2·sqrt(2/π).
        let g3 = make_builtin(Family::Quadratic { a: DMatrix::identity(3, 3) }, 3).unwrap();
        assert_relative_eq!(g3.mean_norm.unwrap(), 2.0 * (2.0 / PI).sqrt(), max_relative = 1e-8);
        for d in [1, 2] {
            for spec in all_builtins(d) {
                assert!(spec.mean_norm.unwrap() > 0.0, "{}", spec.id);
            }
        }
    }

    #[test]
    fn grid_mean_norm_matches_anisotropic_gaussian_monte_carlo() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let spec = make_builtin(Family::Quadratic { a: a.clone() }, 2).unwrap();
        let grid = estimate_mean_norm(&spec, 0).unwrap();
        assert_eq!(grid.method, MeanNormMethod::Grid);
        let mc = monte_carlo_mean_norm(&spec, 11).unwrap();
        let se = mc.std_error.unwrap();
        assert!((grid.value - mc.value).abs() < 4.0 * se, "{} vs {} ± {se}", grid.value, mc.value);
    }

    #[test]
    fn product_monte_carlo_in_high_dimension() {
        let spec = make_builtin(Family::Product { alpha: 2.0 }, 4).unwrap();
        assert!(spec.mean_norm.is_none());
        // Coordinates are N(0, 1/2), so ‖x‖ is chi(4)/sqrt(2) with mean 3·sqrt(π)/4.
        let est = estimate_mean_norm(&spec, 5).unwrap();
        let exact = 0.75 * PI.sqrt();
        assert!((est.value - exact).abs() < 4.0 * est.std_error.unwrap(), "{} vs {exact}", est.value);
        let pp = make_builtin(Family::PerturbedPower { alpha: 1.5 }, 4).unwrap();
        assert!(pp.mean_norm.is_some(), "radial targets use quadrature in any dimension");
    }

    #[test]
    fn holder_checks() {
        let q = make_builtin(Family::Quadratic { a: DMatrix::identity(3, 3) }, 3).unwrap();
        let rep = verify_holder(&q, 3000, 1).unwrap();
        assert!(!rep.violated && rep.max_ratio <= 1.0 + 1e-12);
        for (fam, d) in [
            (Family::Power { alpha: 1.5 }, 2),
            (Family::Power { alpha: 1.2 }, 3),
            (Family::SmoothedPower { alpha: 1.7 }, 2),
            (Family::SmoothedNorm, 2),
            (Family::Product { alpha: 1.5 }, 3),
            (Family::PerturbedPower { alpha: 1.5 }, 2),
        ] {
            let spec = make_builtin(fam, d).unwrap();
            let rep = verify_holder(&spec, 20_000, 2).unwrap();
            assert!(!rep.violated, "{}: {rep:?}", spec.id);
        }
        let p = make_builtin(Family::Power { alpha: 1.5 }, 2).unwrap();
        let under = SmoothnessRecord::new(0.5, 0.5 * p.smoothness.l).unwrap();
        assert!(verify_holder_with(&p, under, 1000, 3).unwrap().violated);
        assert!(verify_holder(&p, 0, 0).is_err());
    }

    #[test]
    fn modified_potential_examples() {
        let zero = PotentialSpec::custom("zero", Arc::new(Zero), SmoothnessRecord::new(1.0, 1.0).unwrap())
            .unwrap()
            .with_mean_norm(0.1);
        let m = make_modified(&zero, 2.0, 1.0).unwrap();
        assert_eq!(m.value(&[3.0]), 4.0);
        let mut g = [0.0];
        m.grad(&[3.0], &mut g);
        assert_eq!(g[0], 4.0);
        let base = make_builtin(Family::SmoothedNorm, 2).unwrap();
        let mm = make_modified(&base, 0.5, 5.0).unwrap();
        assert_eq!(mm.value(&[1.0, 2.0]), base.value(&[1.0, 2.0]));
        assert!(make_modified(&base, 0.5, 3.0).is_err());
        assert!(make_modified(&base, 0.5, 0.9).is_err());
        assert!(make_modified(&base, 0.0, 3.0).is_err());
        let no_m = PotentialSpec { mean_norm: None, ..base };
        assert!(matches!(make_modified(&no_m, 1.0, 5.0), Err(LabError::MissingMetadata(_))));
    }

    #[derive(Debug)]
    struct Zero;
    impl Potential for Zero {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, _x: &[f64]) -> f64 {
            0.0
        }
        fn grad(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
    }

    #[test]
    fn beta_alpha_reduces_at_order_one() {
        assert_relative_eq!(beta_alpha(1.0, 2.0, 5.0), 192.0);
        assert!(beta_alpha(2.0, 1.0, 10.0) < 96.0);
    }

    #[test]
    fn fi_validation() {
        assert!(FiConstants::Lo { alpha: 2.5, c: 1.0 }.validate().is_err());
        assert!(FiConstants::Lsi { c: 0.0 }.validate().is_err());
        assert!(FiConstants::Mlsi { alpha0: 1.0, alpha1: 1.0, c: 1.0, c_tail: 1.0 }.validate().is_ok());
        assert!(FiConstants::Mlsi { alpha0: 3.0, alpha1: 1.0, c: 1.0, c_tail: 1.0 }.validate().is_err());
        let json = r#"{"kind":"lo","alpha":1.5,"c":2.0}"#;
        let fi: FiConstants = serde_json::from_str(json).unwrap();
        assert_eq!(fi, FiConstants::Lo { alpha: 1.5, c: 2.0 });
    }
}

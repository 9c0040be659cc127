//! The six commands. Each fills a [`RunReport`] and writes its tables under `out`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use langevin_core::density_lab::{
    decay_curve, fit_log_linear, propagate_diffusion_until, target_density_grid, DiffusionConfig,
};
use langevin_core::divergence::{
    check_change_of_measure, check_weak_triangle, check_weak_triangle_weighted, chi2_grid, kl_gaussian, kl_grid,
    renyi_gaussian, renyi_grid, renyi_inf_grid, tv_grid, w2_gaussian,
};
use langevin_core::gaussian_oracle::{bias_bound, lmc_law, renyi_bias};
use langevin_core::planner::{
    init_design, plan_lo, plan_log_concave, plan_lsi, plan_mlsi, predict_continuous_decay, InitVariant,
};
use langevin_core::potentials::{make_builtin, make_modified, verify_holder, Family};
use langevin_core::sampler::{check_brownian_mgf_with_constant, check_displacement_mgf, lmc_run, write_norms_csv, Ensemble};
use langevin_core::{
    Axis, FiConstants, GaussianLaw, GridDensity, PotentialSpec, QuadraticTarget,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{missing, ExperimentConfig, InitConfig, Theorem, TriangleForm};
use crate::report::{Assertion, RunReport};
use crate::CliError;

/// Creates `out/name` and records it, or does nothing without an output directory.
fn write_output(
    out: Option<&Path>,
    name: &str,
    report: &mut RunReport,
    write: impl FnOnce(BufWriter<File>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let Some(dir) = out else {
        return Ok(());
    };
    write(BufWriter::new(File::create(dir.join(name))?))?;
    report.outputs.push(name.to_string());
    Ok(())
}

pub fn plan(cfg: &ExperimentConfig, report: &mut RunReport, out: Option<&Path>) -> Result<(), CliError> {
    let plan_cfg = cfg.plan.as_ref().ok_or_else(|| missing("plan"))?;
    let req = &plan_cfg.request;
    let theorem = match (plan_cfg.theorem, req.fi) {
        (Some(t), _) => t,
        (None, FiConstants::Lsi { .. }) => Theorem::Lsi,
        (None, FiConstants::Pi { log_concave: true, .. }) => Theorem::LogConcave,
        (None, FiConstants::Lo { .. }) => Theorem::Lo,
        (None, FiConstants::Mlsi { .. }) => Theorem::Mlsi,
        (None, FiConstants::Pi { .. }) => {
            return Err(CliError::Config("a Poincaré constant without log-concavity needs an explicit theorem".into()))
        }
    };
    let plan = match theorem {
        Theorem::Lsi => plan_lsi(req),
        Theorem::LogConcave => plan_log_concave(req),
        Theorem::Lo => plan_lo(req),
        Theorem::Mlsi => plan_mlsi(req),
    }?;
    for p in &plan.preconditions {
        let op = if p.strict { "<" } else { "<=" };
        let check = if p.strict { Assertion::lt } else { Assertion::le };
        report.check(check(p.name.clone(), format!("{} {op} {}", p.lhs, p.rhs), p.lhs, p.rhs));
    }
    report.metric("plan", &plan);
    write_output(out, "plan.json", report, |w| serde_json::to_writer_pretty(w, &plan).map_err(|e| CliError::Config(e.to_string())))
}

pub fn sample(cfg: &ExperimentConfig, report: &mut RunReport, out: Option<&Path>) -> Result<(), CliError> {
    let pot = cfg.potential()?;
    let spec = pot.spec()?;
    let sc = cfg.sample.ok_or_else(|| missing("sample"))?;
    let init = cfg.init()?;
    let (run, law) = match init.gaussian(&spec)? {
        Some(law) => (lmc_run(&spec, &law, sc.h, sc.n_steps, sc.n_particles, cfg.seed)?, Some(law)),
        None => {
            let axes = cfg.grid()?.axes(spec.dim())?;
            let pi = target_density_grid(&spec, axes)?;
            let mut ens = Ensemble::from_grid(&pi, sc.n_particles, cfg.seed, sc.h)?;
            let mut norms = vec![ens.norm_stats()];
            ens.advance(&spec, sc.n_steps, Some(&mut norms))?;
            (langevin_core::sampler::LmcRun { ensemble: ens, norms }, None)
        }
    };
    let (mean, cov) = run.ensemble.moments();
    let d = spec.dim();
    report.metric("mean", &mean);
    report.metric("variance", (0..d).map(|a| cov[a * d + a]).collect::<Vec<_>>());
    report.metric("final_norms", run.norms.last());

    if let (Some(target), Some(law)) = (pot.quadratic()?, law) {
        let exact = lmc_law(&target, &law, sc.h, sc.n_steps)?;
        let n = sc.n_particles as f64;
        for a in 0..d {
            let var = exact.cov[(a, a)];
            let z_mean = (mean[a] - exact.mean[a]).abs() / (var / n).sqrt();
            let z_var = (cov[a * d + a] - var).abs() / (var * (2.0 / n).sqrt());
            report.check(Assertion::le(format!("mean[{a}] vs exact law"), "|deviation| / SE <= 4", z_mean, 4.0));
            report.check(Assertion::le(format!("variance[{a}] vs exact law"), "|deviation| / SE <= 4", z_var, 4.0));
        }
    }
    write_output(out, "particles.csv", report, |w| Ok(run.ensemble.write_csv(w)?))?;
    write_output(out, "norms.csv", report, |w| Ok(write_norms_csv(&run.norms, w)?))
}

pub fn bias_scan(cfg: &ExperimentConfig, report: &mut RunReport, out: Option<&Path>) -> Result<(), CliError> {
    let bc = cfg.bias_scan.as_ref().ok_or_else(|| missing("bias_scan"))?;
    if bc.dims.is_empty() || bc.orders.is_empty() || bc.steps.is_empty() {
        return Err(CliError::Config("bias_scan needs nonempty dims, orders and steps".into()));
    }
    let bias = |d: usize, h: f64, q: f64| renyi_bias(&QuadraticTarget::isotropic(d, 1.0)?, h, q);
    let mut rows = Vec::new();
    for &d in &bc.dims {
        let target = QuadraticTarget::isotropic(d, 1.0)?;
        for &q in &bc.orders {
            for &h in &bc.steps {
                let b = bias(d, h, q)?;
                let bound = bias_bound(&target, h, q);
                let h_ratio = b / bias(d, h / 2.0, q)?;
                let d_ratio = bias(2 * d, h, q)? / b;
                report.check(Assertion::le(format!("bias d={d} q={q} h={h}"), "bias <= 86 d h q^2 C L^2", b, bound));
                let dev = (d_ratio - 2.0).abs();
                report.check(Assertion::le(format!("d-doubling d={d} q={q} h={h}"), "|bias(2d)/bias(d) - 2| <= 1e-10", dev, 1e-10));
                if let Some([lo, hi]) = bc.h_ratio_range {
                    let name = format!("h-halving d={d} q={q} h={h}");
                    report.check(Assertion::le(name.clone(), format!("{lo} <= bias(h)/bias(h/2)"), lo, h_ratio));
                    report.check(Assertion::le(name, format!("bias(h)/bias(h/2) <= {hi}"), h_ratio, hi));
                }
                rows.push([d as f64, q, h, b, bound, h_ratio, d_ratio]);
            }
        }
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r[5]).collect();
    report.metric("h_ratio_min", ratios.iter().cloned().fold(f64::INFINITY, f64::min));
    report.metric("h_ratio_max", ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    report.metric("rows", rows.len());
    write_output(out, "bias_scan.csv", report, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["d", "q", "h", "bias", "bound", "h_ratio", "d_ratio"])?;
        for r in &rows {
            wtr.write_record([
                format!("{}", r[0]),
                format!("{}", r[1]),
                format!("{:e}", r[2]),
                format!("{:.17e}", r[3]),
                format!("{:.17e}", r[4]),
                format!("{:.17e}", r[5]),
                format!("{:.17e}", r[6]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })
}

/// Grid law of `μ0`: the target itself or a discretized Gaussian.
fn grid_init(init: &InitConfig, spec: &PotentialSpec, axes: &[Axis], pi: &GridDensity) -> Result<GridDensity, CliError> {
    match init.gaussian(spec)? {
        Some(law) => Ok(GridDensity::from_gaussian(axes.to_vec(), &law)?),
        None => Ok(pi.clone()),
    }
}

pub fn decay(cfg: &ExperimentConfig, report: &mut RunReport, out: Option<&Path>) -> Result<(), CliError> {
    let spec = cfg.potential()?.spec()?;
    let dc = cfg.decay.as_ref().ok_or_else(|| missing("decay"))?;
    let axes = cfg.grid()?.axes(spec.dim())?;
    let pi = target_density_grid(&spec, axes.clone())?;
    let mu0 = grid_init(cfg.init()?, &spec, &axes, &pi)?;
    let diff = DiffusionConfig::new(dc.h_fine, dc.n_steps).record_every(dc.record_every);
    let stop_below = dc.stop_below.unwrap_or(0.0);
    let prop = propagate_diffusion_until(&mu0, &spec, &diff, |g| {
        renyi_grid(dc.q, g, &pi).map(|r| r.value < stop_below).unwrap_or(true)
    })?;
    let curve = decay_curve(dc.q, &prop.snapshots, &pi)?;
    let r0 = curve.values[0];
    report.metric("R0", r0);
    report.metric("final_time", curve.times.last());
    report.metric("final_value", curve.values.last());
    report.metric("max_mass_drift", prop.max_abs_drift());
    report.metric("max_boundary_mass", prop.max_boundary_mass);
    let rise = curve.max_increase().max(0.0);
    report.check(Assertion::le("monotone decay", "max increase of R_q between records <= 1e-12 max(1, R0)", rise, 1e-12 * r0.max(1.0)));

    let crossing = curve.crossing_time(1.0).filter(|_| r0 > 1.0);
    report.metric("crossing_time_R_1", crossing);
    if r0 > 1.0 {
        let (t1, t_end) = (crossing.unwrap_or(f64::INFINITY), curve.times[curve.times.len() - 1]);
        report.check(Assertion::le("phase transition", "first time with R_q <= 1 <= final recorded time", t1, t_end));
    }
    let pre_slope = crossing.filter(|t| *t > 0.0).map(|t1| -r0.ln() / t1);
    report.metric("pre_phase_slope", pre_slope);
    if let Some(fit) = fit_log_linear(&curve, 0.0, dc.fit_below) {
        report.metric("terminal_fit", fit);
        report.metric("terminal_over_pre_phase_slope", pre_slope.map(|p| fit.slope / p));
        report.check(Assertion::le("terminal segment is log-linear", "0.99 <= R^2 of the log-linear fit", 0.99, fit.r_squared));
        if let Some(exp) = dc.expected_terminal_slope {
            let rel = ((fit.slope - exp.value) / exp.value).abs();
            report.check(Assertion::le(
                "terminal slope",
                format!("|slope - ({})| / |{}| <= {}", exp.value, exp.value, exp.tolerance),
                rel,
                exp.tolerance,
            ));
        }
    }

    let meta = [("target", spec.id.clone()), ("h_fine", dc.h_fine.to_string()), ("R0", r0.to_string())];
    write_output(out, "decay.csv", report, |w| Ok(curve.write_csv(w, &meta)?))?;
    let fi = spec.fi.iter().find(|fi| !matches!(fi, FiConstants::Mlsi { .. }));
    if let (Some(fi), true) = (fi, r0 > 0.0) {
        let predicted = predict_continuous_decay(fi, dc.q, r0, &curve.times)?;
        let worst = curve
            .values
            .iter()
            .zip(&predicted.values)
            .filter(|(_, p)| **p > 0.0)
            .map(|(m, p)| m / p)
            .fold(0.0, f64::max);
        report.metric("predicted_from", fi);
        report.metric("max_measured_over_predicted", worst);
        let meta = [("target", spec.id.clone()), ("inequality", fi.kind_name().to_string()), ("R0", r0.to_string())];
        write_output(out, "predicted.csv", report, |w| Ok(predicted.write_csv(w, &meta)?))?;
    }
    Ok(())
}

pub fn init_check(cfg: &ExperimentConfig, report: &mut RunReport, _out: Option<&Path>) -> Result<(), CliError> {
    let spec = cfg.potential()?.spec()?;
    let InitConfig::Design { variant } = cfg.init()? else {
        return Err(CliError::Config("init-check needs an init of kind `design`".into()));
    };
    let axes = cfg.grid()?.axes(spec.dim())?;
    let (law, bound) = init_design(&spec, *variant)?;
    let against = match *variant {
        InitVariant::Modified { gamma, radius } => make_modified(&spec, gamma, radius)?.to_spec()?,
        _ => spec.clone(),
    };
    let pi = target_density_grid(&against, axes.clone())?;
    let measured = renyi_inf_grid(&GridDensity::from_gaussian(axes, &law)?, &pi)?;
    report.metric("init_mean", law.mean.as_slice());
    report.metric("init_cov", law.cov.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>());
    report.metric("bound", bound);
    report.metric("grid_r_inf", measured);
    report.check(Assertion::le(format!("R_inf(mu0 || {})", against.id), "grid R_inf <= init_design bound", measured, bound));
    Ok(())
}

fn random_density(rng: &mut ChaCha8Rng, n: usize) -> Result<GridDensity, CliError> {
    let sigma = rng.random_range(0.1..2.0);
    let w: Vec<f64> = (0..n).map(|_| (sigma * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
    Ok(GridDensity::from_weights(vec![Axis::new(0.0, 1.0, n)?], w)?)
}

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Result<GaussianLaw, CliError> {
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.7);
    let cov = &b * b.transpose() + DMatrix::identity(d, d) * 0.3;
    Ok(GaussianLaw::new(mean, 0.5 * (&cov + cov.transpose()))?)
}

pub fn verify(cfg: &ExperimentConfig, report: &mut RunReport, _out: Option<&Path>) -> Result<(), CliError> {
    let vc = cfg.verify.unwrap_or_default();
    let n = vc.instances;
    if n == 0 || vc.mc_paths < 2 {
        return Err(CliError::Config("verify needs instances >= 1 and mc_paths >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut bad = 0;
    for _ in 0..n {
        let (mu, nu) = (random_density(&mut rng, 32)?, random_density(&mut rng, 32)?);
        let event: Vec<bool> = (0..32).map(|_| rng.random_bool(0.3)).collect();
        bad += usize::from(!check_change_of_measure(&mu, &nu, &event)?.holds);
    }
    report.check(Assertion::none_violated("change of measure", bad, n));

    for q in [2.0, 3.0, 5.0] {
        let mut bad = 0;
        for _ in 0..n {
            let (mu, nu, pi) = (random_density(&mut rng, 24)?, random_density(&mut rng, 24)?, random_density(&mut rng, 24)?);
            let check = match vc.weak_triangle {
                TriangleForm::Weighted => check_weak_triangle_weighted(q, &mu, &nu, &pi)?,
                TriangleForm::Stated => check_weak_triangle(q, &mu, &nu, &pi)?,
            };
            bad += usize::from(!check.holds);
        }
        report.check(Assertion::none_violated(format!("weak triangle ({:?}) q = {q}", vc.weak_triangle).to_lowercase(), bad, n));
    }

    let orders = [1.5, 2.0, 3.0, 5.0, 8.0];
    let (mut mono, mut bridge, mut tv) = (0, 0, 0);
    for _ in 0..n {
        let (mu, pi) = (random_density(&mut rng, 32)?, random_density(&mut rng, 32)?);
        let r = orders.iter().map(|q| renyi_grid(*q, &mu, &pi).map(|r| r.value)).collect::<Result<Vec<_>, _>>()?;
        let ordered = kl_grid(&mu, &pi)? <= r[0] + 1e-9 && r.windows(2).all(|w| w[0] <= w[1] + 1e-9);
        mono += usize::from(!ordered);
        bridge += usize::from((r[1] - chi2_grid(&mu, &pi)?.ln_1p()).abs() > 1e-9);
        tv += usize::from(2.0 * tv_grid(&mu, &pi)?.powi(2) > r[1] + 1e-9);
    }
    report.check(Assertion::none_violated("monotonicity in q", mono, n));
    report.check(Assertion::none_violated("R_2 = ln(1 + chi^2)", bridge, n));
    report.check(Assertion::none_violated("2 TV^2 <= R_2", tv, n));

    let (mut kl_bad, mut w2_bad) = (0, 0);
    for i in 0..n {
        let d = 1 + i % 3;
        let (g1, g2) = (random_gaussian(&mut rng, d)?, random_gaussian(&mut rng, d)?);
        let Ok(r2) = renyi_gaussian(2.0, &g1, &g2) else {
            continue;
        };
        let c_pi = g2.cov.clone().symmetric_eigen().eigenvalues.max();
        let w2 = w2_gaussian(&g1, &g2)?;
        kl_bad += usize::from(kl_gaussian(&g1, &g2)? > r2.value + 1e-9);
        w2_bad += usize::from((w2 * w2 / (2.0 * c_pi)).ln_1p() > r2.value + 1e-9);
    }
    report.check(Assertion::none_violated("KL <= R_2 (Gaussian)", kl_bad, n));
    report.check(Assertion::none_violated("ln(1 + W2^2/(2 C_PI)) <= R_2 (Gaussian)", w2_bad, n));

    let h = 0.01;
    for d in [1, 2] {
        let r = check_brownian_mgf_with_constant(d, h, 0.5 / (4.0 * h), vc.mc_paths, 64, cfg.seed.wrapping_add(d as u64), vc.brownian_constant)?;
        let slack = r.squared.bound * (1.0 + 3.0 * r.squared.std_error / r.squared.mean);
        let ineq = format!("E exp(lambda sup|B|^2) <= exp({} d h lambda) (+3 SE)", vc.brownian_constant);
        report.check(Assertion::le(format!("Brownian MGF d = {d}"), ineq, r.squared.mean, slack));
        for (s, f) in &r.fractional {
            let slack = f.bound * (1.0 + 3.0 * f.std_error / f.mean);
            let ineq = format!("E exp(lambda sup|B|^{}) <= exp(144 (dh)^{s} lambda) (+3 SE)", 2.0 * s);
            report.check(Assertion::le(format!("Brownian MGF d = {d}, s = {s}"), ineq, f.mean, slack));
        }
    }
    let quad = make_builtin(Family::Quadratic { a: DMatrix::identity(1, 1) }, 1)?;
    for z0 in [0.0, 5.0] {
        let r = check_displacement_mgf(&quad, &[z0], h, 0.5 / (96.0 * h), 1.0, vc.mc_paths, 64, cfg.seed)?;
        let slack = r.bound * (1.0 + 3.0 * r.std_error / r.mean);
        report.check(Assertion::le(format!("displacement MGF quadratic z0 = {z0}"), "E exp(lambda sup|z_t - z0|^2) <= bound (+3 SE)", r.mean, slack));
    }

    let axes = vec![Axis::new(-40.0, 40.0, 8000)?];
    for spec in [quad.clone(), make_builtin(Family::SmoothedNorm, 1)?] {
        let (law, bound) = init_design(&spec, InitVariant::General)?;
        let pi = target_density_grid(&spec, axes.clone())?;
        let measured = renyi_inf_grid(&GridDensity::from_gaussian(axes.clone(), &law)?, &pi)?;
        report.check(Assertion::le(format!("init bound {}", spec.id), "grid R_inf <= init_design bound", measured, bound));
    }

    for (family, d) in [
        (Family::Power { alpha: 1.5 }, 2),
        (Family::SmoothedPower { alpha: 1.5 }, 2),
        (Family::SmoothedNorm, 3),
        (Family::Product { alpha: 1.5 }, 3),
    ] {
        let spec = make_builtin(family, d)?;
        let h = verify_holder(&spec, 2000, cfg.seed)?;
        report.check(Assertion::le(
            format!("Hölder record {} d = {d}", spec.id),
            format!("max |grad V(x) - grad V(y)| / |x - y|^{} <= L", h.s),
            h.max_ratio,
            h.declared_l * (1.0 + 1e-9),
        ));
    }
    report.metric("instances", n);
    report.metric("mc_paths", vc.mc_paths);
    Ok(())
}

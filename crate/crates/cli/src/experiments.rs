//! Experiment runner: builds the instance, computes the certificate and gain
//! bounds, runs paired reduced/closed-loop simulations per gain multiplier,
//! and emits CSVs, a JSON summary, and a plot script.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use fbopt_core::bounds::{
    estimate_l, gradient_bound, lasalle_eval, lti_bound, newton_bound, optimal_delta,
    psi_dot_slack, BoundInputs, LMode, LaSalleFamily,
};
use fbopt_core::controller::{ControlLaw, Metric, SaddleSigns};
use fbopt_core::linalg;
use fbopt_core::plant::{lti_certificate, solve_lti_lyapunov, LyapunovCertificate, Plant};
use fbopt_core::problem::Problem;
use fbopt_core::sim::{
    simulate_closed_loop, simulate_reduced, Outcome, SimConfig, ThresholdSpec, Trajectory,
};

use crate::affine::{
    bracket_instability, exact_threshold, run_exact_until_converged, AffineMode,
};
use crate::error::CliError;
use crate::instance::{resolve, scalar_reference, ResolvedInstance};
use crate::schema::{ExperimentConfig, ExperimentKind, InstanceSpec, RecipeSpec, SimOverrides};
use crate::suite;

/// Default Lyapunov shift fraction for generated instances.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.9;
/// Shift fraction for the scalar reference instance, where it produces the
/// canonical constants P = 1, τ = ½, γ = ζ = 1.
pub const SCALAR_MARGIN_FRACTION: f64 = 0.5;

/// Certificate constants and gain bounds of an LTI/quadratic instance.
pub struct Certification {
    pub p: DMatrix<f64>,
    pub tau: f64,
    pub cert: LyapunovCertificate,
    pub l: f64,
    pub eps_star: f64,
    pub hess_min: f64,
    pub hess_max: f64,
    pub lti_primary: f64,
    pub lti_cond: f64,
}

pub fn certify(
    inst: &ResolvedInstance,
    problem: &Problem,
    margin_fraction: f64,
) -> Result<Certification, CliError> {
    let (p, tau) = solve_lti_lyapunov(inst.plant.a(), margin_fraction)?;
    let cert = lti_certificate(&inst.plant, &p, tau)?;
    let l = estimate_l(problem, LMode::AnalyticQuadratic)?;
    let eps_star = gradient_bound(&BoundInputs {
        gamma: cert.gamma,
        zeta: cert.zeta,
        l,
        ..Default::default()
    })?;
    let hess = problem.reduced_hessian(&DVector::zeros(problem.input_dim()))?;
    let (hess_min, hess_max) = linalg::symmetric_eigen_range(&hess);
    let (lti_primary, lti_cond) = lti_bound(&p, tau, inst.plant.steady_state_gain(), l)?;
    Ok(Certification {
        p,
        tau,
        cert,
        l,
        eps_star,
        hess_min,
        hess_max,
        lti_primary,
        lti_cond,
    })
}

impl Certification {
    pub fn to_json(&self) -> Value {
        json!({
            "tau": self.tau,
            "alpha": self.cert.alpha,
            "beta": self.cert.beta,
            "gamma": self.cert.gamma,
            "zeta": self.cert.zeta,
            "l": self.l,
            "eps_star": self.eps_star,
            "reduced_hessian_min": self.hess_min,
            "reduced_hessian_max": self.hess_max,
            "lti_bound": self.lti_primary,
            "lti_bound_condition_form": self.lti_cond,
        })
    }
}

pub fn outcome_str(o: Outcome) -> &'static str {
    match o {
        Outcome::Converged => "converged",
        Outcome::Oscillating => "oscillating",
        Outcome::Diverged => "diverged",
        Outcome::HorizonExhausted => "horizon_exhausted",
    }
}

fn apply_overrides(mut cfg: SimConfig, o: &SimOverrides) -> SimConfig {
    if let Some(dt) = o.dt {
        cfg.dt = dt;
    }
    if let Some(h) = o.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = o.record_stride {
        cfg.record_stride = s;
    }
    if let Some(t) = o.convergence_tol {
        cfg.convergence_tol = t;
    }
    if let Some(d) = o.divergence_threshold {
        cfg.divergence_threshold = d;
    }
    cfg
}

/// Step count per exact-integration run; the matrix exponential makes the
/// step size irrelevant for accuracy, this only sets the sampling density.
const EXACT_STEPS: f64 = 2000.0;

/// Horizon for a linear convergence run at contraction rate `rate`,
/// comfortably past the point where a unit-scale residual falls below 1e−6.
pub fn convergence_config(rate: f64, overrides: &SimOverrides) -> SimConfig {
    let horizon = 30.0 / rate.max(1e-12);
    let mut cfg = SimConfig::new(horizon / EXACT_STEPS, horizon);
    cfg.convergence_tol = 1e-6;
    apply_overrides(cfg, overrides)
}

/// Fixed-window configuration for instability classification: long enough
/// for the envelope comparison, short enough that each bisection probe is
/// cheap.
pub fn threshold_config(overrides: &SimOverrides) -> SimConfig {
    let mut cfg = SimConfig::new(0.2, 300.0);
    cfg.convergence_tol = 1e-6;
    apply_overrides(cfg, overrides)
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)?;
    let n = traj.x.first().map_or(0, |v| v.len());
    let p = traj.u.first().map_or(0, |v| v.len());
    let q = traj.aux.first().map_or(0, |v| v.len());
    let mut header = vec![String::from("time")];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..p).map(|i| format!("u{i}")));
    header.extend((0..q).map(|i| format!("aux{i}")));
    header.push(String::from("residual"));
    writer.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![format!("{:.17e}", traj.times[k])];
        row.extend(traj.x[k].iter().map(|v| format!("{v:.17e}")));
        row.extend(traj.u[k].iter().map(|v| format!("{v:.17e}")));
        row.extend(traj.aux[k].iter().map(|v| format!("{v:.17e}")));
        row.push(format!("{:.17e}", traj.residuals[k]));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn run_json(label: &str, mode: &str, eps: f64, traj: &Trajectory, csv: &str) -> Value {
    json!({
        "label": label,
        "mode": mode,
        "eps": eps,
        "outcome": outcome_str(traj.outcome),
        "final_residual": traj.final_residual,
        "samples": traj.len(),
        "dt": if traj.len() > 1 { traj.times[1] - traj.times[0] } else { 0.0 },
        "horizon": traj.times.last().copied().unwrap_or(0.0),
        "csv": csv,
    })
}

/// Counts Ψ̇ samples above the numerical slack on the interior of a run.
pub fn lasalle_violation_fraction(
    problem: &Problem,
    cert: &LyapunovCertificate,
    delta: f64,
    family: &LaSalleFamily,
    traj: &Trajectory,
) -> Result<(usize, usize), CliError> {
    let samples = lasalle_eval(problem, cert, delta, family, traj)?;
    let dt = if traj.len() > 1 {
        traj.times[1] - traj.times[0]
    } else {
        1.0
    };
    let interior = samples.len().saturating_sub(2);
    let mut violations = 0usize;
    for (psi, psi_dot) in samples.iter().skip(1).take(interior) {
        if *psi_dot > psi_dot_slack(dt, *psi) {
            violations += 1;
        }
    }
    Ok((violations, interior))
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Renders the experiment's trajectories: closed loop solid, reduced dashed."""
import csv
import json
import pathlib
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = pathlib.Path(__file__).resolve().parent
summary = json.loads((here / "summary.json").read_text())

def load(name):
    with open(here / name) as f:
        rows = list(csv.DictReader(f))
    t = [float(r["time"]) for r in rows]
    cols = {k: [float(r[k]) for r in rows] for k in rows[0] if k != "time"}
    return t, cols

fig, (ax_u, ax_res) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
for run in summary.get("runs", []):
    t, cols = load(run["csv"])
    style = "-" if run["mode"] == "closed" else "--"
    for k, series in cols.items():
        if k.startswith("u"):
            ax_u.plot(t, series, style, lw=1.0,
                      label=f'{run["label"]} {run["mode"]} {k}')
    ax_res.semilogy(t, [max(v, 1e-18) for v in cols["residual"]], style,
                    label=f'{run["label"]} {run["mode"]}')
ax_u.set_ylabel("inputs u")
ax_res.set_ylabel("first-order residual")
ax_res.set_xlabel("time")
for ax in (ax_u, ax_res):
    ax.legend(fontsize=6)
fig.tight_layout()
out = here / "figure.png"
fig.savefig(out, dpi=150)
print(out)
"#;

pub struct ExperimentOutcome {
    pub summary: Value,
    pub summary_path: PathBuf,
    pub suite_failed: bool,
}

pub fn run_experiment(
    config: &ExperimentConfig,
    base_dir: &Path,
) -> Result<ExperimentOutcome, CliError> {
    config.validate()?;
    let out_dir = base_dir
        .join(&config.output_dir)
        .join(config.experiment.name());
    fs::create_dir_all(&out_dir)?;
    let mut suite_failed = false;
    let summary = match config.experiment {
        ExperimentKind::FigGradient => fig_gradient_like(config, base_dir, &out_dir, false)?,
        ExperimentKind::FigNewton => fig_gradient_like(config, base_dir, &out_dir, true)?,
        ExperimentKind::FigSubgradient => fig_subgradient(config, &out_dir)?,
        ExperimentKind::FigNesterov => fig_nesterov(config, &out_dir)?,
        ExperimentKind::FigSaddle => fig_saddle(config, base_dir, &out_dir)?,
        ExperimentKind::BoundsReport => bounds_report(config, base_dir)?,
        ExperimentKind::ThresholdSweep => threshold_sweep(config, base_dir)?,
        ExperimentKind::PropertySuite => {
            let report = suite::run_suite(config.seed.unwrap_or(0));
            suite_failed = report.iter().any(|c| !c.passed);
            suite::report_json(&report)
        }
    };
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    fs::write(out_dir.join("plot.py"), PLOT_SCRIPT)?;
    Ok(ExperimentOutcome {
        summary,
        summary_path,
        suite_failed,
    })
}

/// Default seed list of the multi-seed stability study: 20 seeds of the
/// state-dominant family whose closed loop has a finite stability boundary
/// within nine decades of ε* (verified by an eigenvalue sweep; a few seeds
/// of the generator stay Hurwitz at every gain and are skipped).
pub const DEFAULT_SWEEP_SEEDS: [u64; 20] = [
    0, 1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14, 15, 17, 18, 19, 20, 21,
];

fn default_recipe(
    config: &ExperimentConfig,
    n: usize,
    p: usize,
    r: usize,
    state_dominant: bool,
) -> InstanceSpec {
    InstanceSpec::Recipe(RecipeSpec {
        version: 1,
        n,
        p,
        seed: config.seed.unwrap_or(0),
        hurwitz_margin: 0.1,
        hessian_regularization: 0.1,
        output_constraints: r,
        state_dominant,
    })
}

fn resolve_or_default(
    config: &ExperimentConfig,
    base_dir: &Path,
    n: usize,
    p: usize,
    r: usize,
    state_dominant: bool,
) -> Result<ResolvedInstance, CliError> {
    match &config.instance {
        Some(spec) => resolve(spec, base_dir),
        None => resolve(&default_recipe(config, n, p, r, state_dominant), base_dir),
    }
}

fn instance_json(inst: &ResolvedInstance) -> Value {
    serde_json::to_value(&inst.spec).unwrap_or(Value::Null)
}

/// Shared driver of the gradient and Newton figure experiments: a paired
/// reduced/closed run per multiplier, an instability threshold, and a
/// LaSalle descent audit on converged closed runs.
fn fig_gradient_like(
    config: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
    newton: bool,
) -> Result<Value, CliError> {
    let inst = resolve_or_default(config, base_dir, 20, 5, 0, !newton)?;
    let problem = inst.problem()?;
    let margin = config.margin_fraction.unwrap_or(DEFAULT_MARGIN_FRACTION);
    let cert = certify(&inst, &problem, margin)?;
    let eps_base = if newton {
        newton_bound(&BoundInputs {
            gamma: cert.cert.gamma,
            zeta: cert.cert.zeta,
            l: cert.l,
            mu: Some(cert.hess_min),
            ..Default::default()
        })?
    } else {
        cert.eps_star
    };
    let make_law = |eps: f64| -> ControlLaw {
        if newton {
            ControlLaw::Newton {
                eps,
                mu: cert.hess_min,
            }
        } else {
            ControlLaw::Gradient {
                metric: Metric::ScaledIdentity(eps),
            }
        }
    };

    let n = problem.state_dim();
    let p = problem.input_dim();
    let u_star = problem.quadratic_minimizer()?;
    let x0 = DVector::zeros(n);
    let u0 = DVector::zeros(p);
    let aux0 = DVector::zeros(0);

    // empirical stability boundary; some instances stay Hurwitz at every
    // gain, in which case no threshold is reported
    let spec = ThresholdSpec {
        problem: &problem,
        make_law: &make_law,
        x0: x0.clone(),
        u0: u0.clone(),
        aux0: aux0.clone(),
        reference_u: Some(u_star.clone()),
        config: threshold_config(&config.sim),
    };
    let eps_crit = match bracket_instability(&inst, &spec, eps_base, 9) {
        Ok((lo, hi)) => Some(exact_threshold(&inst, &spec, lo, hi)?),
        Err(CliError::Bracket(_)) => None,
        Err(e) => return Err(e),
    };

    let mut runs = Vec::new();
    let mut lasalle = Vec::new();
    for &mult in &config.eps_multipliers {
        let eps = mult * eps_base;
        let law = make_law(eps);
        // reduced Newton contracts at rate ε exactly; the gradient flow at
        // rate ε·λ_min of the reduced Hessian
        let rate = if newton { eps } else { eps * cert.hess_min };
        let cfg = convergence_config(rate, &config.sim);
        let label = format!("mult_{mult}");
        for (mode, tag) in [(AffineMode::Closed, "closed"), (AffineMode::Reduced, "reduced")] {
            let traj = run_exact_until_converged(
                &inst, &problem, &law, mode, &x0, &u0, &aux0, &cfg, eps, 4,
            )?;
            let csv = format!("run_{label}_{tag}.csv");
            write_trajectory_csv(&out_dir.join(&csv), &traj)?;
            if mode == AffineMode::Closed && traj.outcome == Outcome::Converged {
                let delta = optimal_delta(eps * cert.l, eps * cert.cert.zeta)?;
                let (viol, interior) = lasalle_violation_fraction(
                    &problem,
                    &cert.cert,
                    delta,
                    &LaSalleFamily::Gradient,
                    &traj,
                )?;
                lasalle.push(json!({
                    "label": label,
                    "delta": delta,
                    "violations": viol,
                    "interior_samples": interior,
                }));
            }
            runs.push(run_json(&label, tag, eps, &traj, &csv));
        }
    }

    // Newton-specific diagnostic: the reduced linearization −εQ∇²Φ̃ must be
    // isotropic at −εI
    let isotropy_defect = if newton {
        let eps = eps_base;
        let q = fbopt_core::controller::newton_metric(&problem, eps, &u_star)?;
        let hess = problem.reduced_hessian(&u_star)?;
        let m = -(&q * &hess) + DMatrix::identity(p, p) * eps;
        Some(linalg::operator_norm(&m))
    } else {
        None
    };

    Ok(json!({
        "experiment": config.experiment.name(),
        "config": serde_json::to_value(config)?,
        "instance": instance_json(&inst),
        "constants": cert.to_json(),
        "eps_base": eps_base,
        "eps_crit": eps_crit,
        "eps_crit_over_base": eps_crit.map(|e| e / eps_base),
        "isotropy_defect": isotropy_defect,
        "runs": runs,
        "lasalle": lasalle,
    }))
}

/// The 1-D nonsmooth benchmark: ẋ = −x + u with Φ = |x|. The reduced
/// subgradient flow reaches the kink and stays; the closed loop chatters.
pub fn subgradient_instance() -> Result<ResolvedInstance, CliError> {
    let mut inst = scalar_reference()?;
    inst.objective.hessian_xx[(0, 0)] = 0.0;
    let inst_spec = crate::instance::to_inline(&inst);
    let mut inline = inst_spec;
    inline.l1_weight_x = 1.0;
    crate::instance::resolve(
        &InstanceSpec::Inline(Box::new(inline)),
        Path::new("."),
    )
}

fn fig_subgradient(config: &ExperimentConfig, out_dir: &Path) -> Result<Value, CliError> {
    let inst = subgradient_instance()?;
    let problem = inst.problem()?;
    let law = ControlLaw::Subgradient { tie_rule: 0.0 };
    let x0 = DVector::from_element(1, 1.0);
    let u0 = DVector::from_element(1, 1.0);
    let aux0 = DVector::zeros(0);

    let mut reduced_cfg = SimConfig::new(1e-4, 10.0);
    reduced_cfg.record_stride = 10;
    let reduced_cfg = apply_overrides(reduced_cfg, &config.sim);
    let reduced = simulate_reduced(&problem, &law, &u0, &aux0, &reduced_cfg)?;

    let mut closed_cfg = SimConfig::new(1e-3, 100.0);
    closed_cfg.record_stride = 10;
    let closed_cfg = apply_overrides(closed_cfg, &config.sim);
    let closed = simulate_closed_loop(&problem, &law, &x0, &u0, &aux0, &closed_cfg)?;

    // amplitude of the chattering tail
    let tail = closed.len() - closed.len() / 10;
    let amplitude = closed.x[tail..]
        .iter()
        .map(|x| x[0].abs())
        .fold(0.0f64, f64::max);

    let mut runs = Vec::new();
    for (traj, tag) in [(&reduced, "reduced"), (&closed, "closed")] {
        let csv = format!("run_l1_{tag}.csv");
        write_trajectory_csv(&out_dir.join(&csv), traj)?;
        runs.push(run_json("l1", tag, 1.0, traj, &csv));
    }
    Ok(json!({
        "experiment": config.experiment.name(),
        "config": serde_json::to_value(config)?,
        "instance": instance_json(&inst),
        "limit_cycle_amplitude": amplitude,
        "runs": runs,
    }))
}

/// The 1-D accelerated-flow benchmark: ẋ = −x + u with Φ = x², damping r/t.
pub fn nesterov_instance() -> Result<ResolvedInstance, CliError> {
    let mut inst = scalar_reference()?;
    inst.objective.hessian_xx[(0, 0)] = 2.0;
    let inline = crate::instance::to_inline(&inst);
    crate::instance::resolve(&InstanceSpec::Inline(Box::new(inline)), Path::new("."))
}

fn fig_nesterov(config: &ExperimentConfig, out_dir: &Path) -> Result<Value, CliError> {
    let inst = nesterov_instance()?;
    let problem = inst.problem()?;
    let law = ControlLaw::Accelerated { r: 3.0 };
    let x0 = DVector::from_element(1, 1.0);
    let u0 = DVector::from_element(1, 1.0);
    let aux0 = DVector::zeros(1);

    let mut closed_cfg = SimConfig::new(0.01, 200.0);
    closed_cfg.record_stride = 5;
    let closed_cfg = apply_overrides(closed_cfg, &config.sim);
    let closed = simulate_closed_loop(&problem, &law, &x0, &u0, &aux0, &closed_cfg)?;

    let mut reduced_cfg = SimConfig::new(0.01, 200.0);
    reduced_cfg.record_stride = 5;
    reduced_cfg.convergence_tol = 1e-3;
    let reduced_cfg = apply_overrides(reduced_cfg, &config.sim);
    let reduced = simulate_reduced(&problem, &law, &u0, &aux0, &reduced_cfg)?;

    let mut runs = Vec::new();
    for (traj, tag) in [(&reduced, "reduced"), (&closed, "closed")] {
        let csv = format!("run_accelerated_{tag}.csv");
        write_trajectory_csv(&out_dir.join(&csv), traj)?;
        runs.push(run_json("accelerated", tag, 1.0, traj, &csv));
    }
    Ok(json!({
        "experiment": config.experiment.name(),
        "config": serde_json::to_value(config)?,
        "instance": instance_json(&inst),
        "runs": runs,
    }))
}

fn saddle_signs(config: &ExperimentConfig) -> SaddleSigns {
    if config.literal_saddle_signs {
        SaddleSigns::Literal
    } else {
        SaddleSigns::DescentConsistent
    }
}

fn fig_saddle(
    config: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
) -> Result<Value, CliError> {
    let inst = resolve_or_default(config, base_dir, 20, 10, 5, false)?;
    let problem = inst.problem()?;
    let (g, rhs) = inst
        .output_constraint
        .as_ref()
        .ok_or_else(|| CliError::Config(String::from("saddle experiment needs a constraint")))?;
    let r = g.nrows();
    let sigma = config.sigma;
    let signs = saddle_signs(config);
    let make_law = move |eps: f64| ControlLaw::SaddlePoint { eps, sigma, signs };

    let n = problem.state_dim();
    let p = problem.input_dim();
    let x0 = DVector::zeros(n);
    let u0 = DVector::zeros(p);
    let aux0 = DVector::zeros(r);
    // KKT point of the constrained reduced problem as envelope reference
    let (u_kkt, _lambda_kkt) = saddle_kkt_point(&inst, &problem)?;

    let spec = ThresholdSpec {
        problem: &problem,
        make_law: &make_law,
        x0: x0.clone(),
        u0: u0.clone(),
        aux0: aux0.clone(),
        reference_u: Some(u_kkt.clone()),
        config: threshold_config(&config.sim),
    };
    // find a stable starting gain, then a decade bracket
    let mut probe = 1.0;
    let (lo, hi) = loop {
        match bracket_instability(&inst, &spec, probe, 9) {
            Ok(pair) => break pair,
            Err(CliError::Bracket(_)) if probe > 1e-8 => probe /= 10.0,
            Err(e) => return Err(e),
        }
    };
    let eps_crit = exact_threshold(&inst, &spec, lo, hi)?;
    let eps_run = 0.3 * eps_crit;

    let mut runs = Vec::new();
    let mut diagnostics = Vec::new();
    for &mult in &config.eps_multipliers {
        let eps = mult * eps_run;
        let law = make_law(eps);
        let cfg = convergence_config(eps * 0.1, &config.sim);
        let label = format!("mult_{mult}");
        for (mode, tag) in [(AffineMode::Closed, "closed"), (AffineMode::Reduced, "reduced")] {
            let traj = run_exact_until_converged(
                &inst, &problem, &law, mode, &x0, &u0, &aux0, &cfg, eps, 6,
            )?;
            if mode == AffineMode::Closed {
                let xf = traj.final_x();
                let violation = (g * xf - rhs).norm();
                let kkt = problem.kkt_residual(xf, traj.final_u(), Some(traj.aux.last().unwrap()))?;
                diagnostics.push(json!({
                    "label": label,
                    "constraint_violation": violation,
                    "kkt_residual": kkt,
                }));
            }
            let csv = format!("run_{label}_{tag}.csv");
            write_trajectory_csv(&out_dir.join(&csv), &traj)?;
            runs.push(run_json(&label, tag, eps, &traj, &csv));
        }
    }

    Ok(json!({
        "experiment": config.experiment.name(),
        "config": serde_json::to_value(config)?,
        "instance": instance_json(&inst),
        "sigma": sigma,
        "eps_crit": eps_crit,
        "eps_run": eps_run,
        "runs": runs,
        "diagnostics": diagnostics,
    }))
}

/// Solves the equality-constrained reduced KKT system
/// [H̃ (AH)ᵀ; AH 0] [u; λ] = [−g₀; b − A h(0)].
pub fn saddle_kkt_point(
    inst: &ResolvedInstance,
    problem: &Problem,
) -> Result<(DVector<f64>, DVector<f64>), CliError> {
    let (g, rhs) = inst
        .output_constraint
        .as_ref()
        .ok_or_else(|| CliError::Config(String::from("instance has no output constraint")))?;
    let p = problem.input_dim();
    let r = g.nrows();
    let zero_u = DVector::zeros(p);
    let hess = problem.reduced_hessian(&zero_u)?;
    let g0 = problem.reduced_gradient(&zero_u)?;
    let gh = g * inst.plant.steady_state_gain();
    let resid0 = g * inst.plant.steady_state(&zero_u)? - rhs;
    let dim = p + r;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (p, p)).copy_from(&hess);
    kkt.view_mut((0, p), (p, r)).copy_from(&gh.transpose());
    kkt.view_mut((p, 0), (r, p)).copy_from(&gh);
    let mut rhs_vec = DVector::zeros(dim);
    rhs_vec.rows_mut(0, p).copy_from(&(-&g0));
    rhs_vec.rows_mut(p, r).copy_from(&(-&resid0));
    let sol = kkt
        .lu()
        .solve(&rhs_vec)
        .ok_or_else(|| CliError::Core(String::from("singular reduced KKT system")))?;
    Ok((sol.rows(0, p).into_owned(), sol.rows(p, r).into_owned()))
}

fn bounds_report(config: &ExperimentConfig, base_dir: &Path) -> Result<Value, CliError> {
    let (inst, margin_default) = match &config.instance {
        Some(spec) => (resolve(spec, base_dir)?, DEFAULT_MARGIN_FRACTION),
        None => (scalar_reference()?, SCALAR_MARGIN_FRACTION),
    };
    let problem = inst.problem()?;
    let margin = config.margin_fraction.unwrap_or(margin_default);
    let cert = certify(&inst, &problem, margin)?;
    let newton = newton_bound(&BoundInputs {
        gamma: cert.cert.gamma,
        zeta: cert.cert.zeta,
        l: cert.l,
        mu: Some(cert.hess_min),
        ..Default::default()
    })?;
    let general = fbopt_core::bounds::general_bound(&BoundInputs {
        gamma: cert.cert.gamma,
        zeta: cert.cert.zeta,
        l: cert.l,
        mu: Some(cert.hess_min),
        kappa_v: Some(1.0),
        ell: Some(cert.hess_max),
        ..Default::default()
    })?;
    Ok(json!({
        "experiment": config.experiment.name(),
        "config": serde_json::to_value(config)?,
        "instance": instance_json(&inst),
        "margin_fraction": margin,
        "constants": cert.to_json(),
        "bounds": {
            "gradient": cert.eps_star,
            "newton": newton,
            "general_kappa1": general,
            "lti": cert.lti_primary,
            "lti_condition_form": cert.lti_cond,
        },
    }))
}

/// Per-seed threshold sweep with ε* verification runs; the backbone of the
/// multi-seed stability study.
fn threshold_sweep(config: &ExperimentConfig, base_dir: &Path) -> Result<Value, CliError> {
    let seeds: Vec<u64> = match &config.seeds {
        Some(s) => s.clone(),
        None => DEFAULT_SWEEP_SEEDS.to_vec(),
    };
    let mut rows = Vec::new();
    for &seed in &seeds {
        let row = sweep_seed(config, base_dir, seed)?;
        rows.push(row);
    }
    Ok(json!({
        "experiment": config.experiment.name(),
        "config": serde_json::to_value(config)?,
        "seeds": seeds,
        "rows": rows,
    }))
}

/// One sweep entry: certificate constants, convergence of both flows at ε*,
/// and the bisected empirical boundary.
pub fn sweep_seed(
    config: &ExperimentConfig,
    base_dir: &Path,
    seed: u64,
) -> Result<Value, CliError> {
    let spec = match &config.instance {
        Some(InstanceSpec::Recipe(r)) => {
            let mut r = r.clone();
            r.seed = seed;
            InstanceSpec::Recipe(r)
        }
        Some(other) => other.clone(),
        None => InstanceSpec::Recipe(RecipeSpec {
            version: 1,
            n: 20,
            p: 5,
            seed,
            hurwitz_margin: 0.1,
            hessian_regularization: 0.1,
            output_constraints: 0,
            state_dominant: true,
        }),
    };
    let inst = resolve(&spec, base_dir)?;
    let problem = inst.problem()?;
    let margin = config.margin_fraction.unwrap_or(DEFAULT_MARGIN_FRACTION);
    let cert = certify(&inst, &problem, margin)?;
    let eps_star = cert.eps_star;
    let make_law = |eps: f64| ControlLaw::Gradient {
        metric: Metric::ScaledIdentity(eps),
    };
    let n = problem.state_dim();
    let p = problem.input_dim();
    let x0 = DVector::zeros(n);
    let u0 = DVector::zeros(p);
    let aux0 = DVector::zeros(0);
    let u_star = problem.quadratic_minimizer()?;

    let cfg = convergence_config(eps_star * cert.hess_min, &config.sim);
    let law = make_law(eps_star);
    let closed = run_exact_until_converged(
        &inst,
        &problem,
        &law,
        AffineMode::Closed,
        &x0,
        &u0,
        &aux0,
        &cfg,
        eps_star,
        4,
    )?;
    let reduced = run_exact_until_converged(
        &inst,
        &problem,
        &law,
        AffineMode::Reduced,
        &x0,
        &u0,
        &aux0,
        &cfg,
        eps_star,
        4,
    )?;

    let tspec = ThresholdSpec {
        problem: &problem,
        make_law: &make_law,
        x0,
        u0,
        aux0,
        reference_u: Some(u_star),
        config: threshold_config(&config.sim),
    };
    let (lo, hi) = bracket_instability(&inst, &tspec, eps_star, 9)?;
    let eps_crit = exact_threshold(&inst, &tspec, lo, hi)?;

    Ok(json!({
        "seed": seed,
        "eps_star": eps_star,
        "eps_crit": eps_crit,
        "ratio": eps_crit / eps_star,
        "closed_outcome": outcome_str(closed.outcome),
        "closed_final_residual": closed.final_residual,
        "reduced_outcome": outcome_str(reduced.outcome),
        "reduced_final_residual": reduced.final_residual,
        "constants": cert.to_json(),
    }))
}

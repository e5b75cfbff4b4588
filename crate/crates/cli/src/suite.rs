//! Machine-checkable property suite over the numerical invariants of the
//! toolkit. Failures are data (reported with a counterexample), not panics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use fbopt_core::bounds::{
    general_bound, gradient_bound, lambda_matrix, momentum_bound_holds, optimal_delta,
    BoundInputs, LaSalleFamily,
};
use fbopt_core::controller::{ControlLaw, Metric};
use fbopt_core::geometry::PolyhedralSet;
use fbopt_core::plant::{
    converse_lyapunov_constants, lyapunov_eval, DecayConstants,
};
use fbopt_core::problem::{Problem, QuadraticObjective};
use fbopt_core::sim::{simulate_closed_loop, Outcome, SimConfig};

use crate::affine::{run_exact, AffineMode};
use crate::error::CliError;
use crate::experiments::{
    certify, lasalle_violation_fraction, saddle_kkt_point, DEFAULT_MARGIN_FRACTION,
};
use crate::instance::{resolve, ResolvedInstance};
use crate::schema::{InstanceSpec, RecipeSpec};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub witness: Option<String>,
}

impl CheckResult {
    fn pass(name: &'static str) -> Self {
        CheckResult {
            name,
            passed: true,
            witness: None,
        }
    }

    fn fail(name: &'static str, witness: String) -> Self {
        CheckResult {
            name,
            passed: false,
            witness: Some(witness),
        }
    }
}

pub fn report_json(results: &[CheckResult]) -> Value {
    json!({
        "experiment": "property_suite",
        "passed": results.iter().all(|c| c.passed),
        "checks": results
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "passed": c.passed,
                    "witness": c.witness,
                })
            })
            .collect::<Vec<_>>(),
    })
}

fn wrap(name: &'static str, body: impl FnOnce() -> Result<Option<String>, CliError>) -> CheckResult {
    match body() {
        Ok(None) => CheckResult::pass(name),
        Ok(Some(witness)) => CheckResult::fail(name, witness),
        Err(e) => CheckResult::fail(name, format!("check errored: {e}")),
    }
}

pub fn run_suite(seed: u64) -> Vec<CheckResult> {
    vec![
        wrap("lemma_ratio_agreement", || lemma_ratio_agreement(seed)),
        wrap("projection_identities", || projection_identities(seed)),
        wrap("projected_feasibility", projected_feasibility),
        wrap("bound_consistency", || bound_consistency(seed)),
        wrap("converse_constants_grid", converse_constants_grid),
        wrap("determinism", || determinism(seed)),
        wrap("rk4_order", rk4_order),
        wrap("certificate_sandwich", || certificate_sandwich(seed)),
        wrap("lasalle_descent", lasalle_descent),
        wrap("saddle_kkt_equivalence", saddle_kkt_equivalence),
    ]
}

/// The 2×2 combination test at δ = β₁/(β₁+β₂) must agree with the scalar
/// ratio test α₁α₂/(α₁ξ + β₁β₂) > 1.
fn lemma_ratio_agreement(seed: u64) -> Result<Option<String>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a);
    for trial in 0..1000 {
        let alpha1 = rng.random_range(0.05..5.0);
        let alpha2 = rng.random_range(0.05..5.0);
        let xi = rng.random_range(0.0..2.0 * alpha2);
        let beta1 = rng.random_range(0.01..5.0);
        let beta2 = rng.random_range(0.01..5.0);
        let delta = optimal_delta(beta1, beta2)?;
        let (_, negdef) = lambda_matrix(alpha1, alpha2, xi, beta1, beta2, delta);
        let ratio = alpha1 * alpha2 / (alpha1 * xi + beta1 * beta2);
        if negdef != (ratio > 1.0) {
            return Ok(Some(format!(
                "trial {trial}: alpha1={alpha1} alpha2={alpha2} xi={xi} beta1={beta1} \
                 beta2={beta2} negdef={negdef} ratio={ratio}"
            )));
        }
    }
    Ok(None)
}

/// Tangent-projection identities ηᵀ(v−η) = 0 and vᵀ(v−η) = ‖v−η‖².
fn projection_identities(seed: u64) -> Result<Option<String>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2b);
    for trial in 0..1000 {
        let dim = rng.random_range(1..=4);
        let lower = DVector::from_fn(dim, |_, _| -rng.random_range(0.1..2.0));
        let upper = DVector::from_fn(dim, |_, _| rng.random_range(0.1..2.0));
        let set = PolyhedralSet::from_box(lower, upper)?;
        let z = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
        let u = set.project_point(&z)?;
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        let eta = set.project_tangent(&u, &v)?;
        let slack = &v - &eta;
        let orth = eta.dot(&slack).abs();
        let moreau = (v.dot(&slack) - slack.norm_squared()).abs();
        if orth > 1e-9 || moreau > 1e-9 {
            return Ok(Some(format!(
                "trial {trial}: dim={dim} orth={orth:.3e} moreau={moreau:.3e}"
            )));
        }
    }
    Ok(None)
}

/// A projected closed-loop run never leaves the input box (≤ 1e−8) and
/// settles at the projected stationary point.
fn projected_feasibility() -> Result<Option<String>, CliError> {
    let plant = fbopt_core::plant::LtiPlant::new(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
    )?;
    let objective = QuadraticObjective::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
        DVector::from_element(1, 1.0),
        DVector::zeros(1),
        0.0,
    )?;
    let set = PolyhedralSet::from_box(DVector::zeros(1), DVector::from_element(1, 1.0))?;
    let problem = Problem::new(Box::new(objective), std::sync::Arc::new(plant))
        .with_input_set(set)?;
    let law = ControlLaw::ProjectedGradient { eps: 0.5 };
    let config = SimConfig::new(0.001, 20.0);
    let traj = simulate_closed_loop(
        &problem,
        &law,
        &DVector::from_element(1, 0.5),
        &DVector::from_element(1, 0.5),
        &DVector::zeros(0),
        &config,
    )?;
    let set_ref = problem.input_set().unwrap();
    let worst = traj
        .u
        .iter()
        .map(|u| set_ref.violation(u))
        .fold(0.0f64, f64::max);
    if worst > 1e-8 {
        return Ok(Some(format!("max feasibility violation {worst:.3e}")));
    }
    if traj.outcome != Outcome::Converged {
        return Ok(Some(format!("projected run ended {:?}", traj.outcome)));
    }
    Ok(None)
}

/// general_bound with κ = 1 and ℓ ≥ μ never exceeds half the gradient
/// bound, and the momentum predicate matches a direct evaluation.
fn bound_consistency(seed: u64) -> Result<Option<String>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3c);
    for trial in 0..1000 {
        let gamma = rng.random_range(0.05..5.0);
        let zeta = rng.random_range(0.05..5.0);
        let l = rng.random_range(0.05..5.0);
        let mu = rng.random_range(0.05..2.0);
        let ell = mu * rng.random_range(1.0..10.0);
        let inputs = BoundInputs {
            gamma,
            zeta,
            l,
            mu: Some(mu),
            kappa_v: Some(1.0),
            ell: Some(ell),
            ..Default::default()
        };
        let grad = gradient_bound(&inputs)?;
        let general = general_bound(&inputs)?;
        if general > 0.5 * grad * (1.0 + 1e-12) {
            return Ok(Some(format!(
                "trial {trial}: general={general} gradient={grad}"
            )));
        }
        let kappa_q = rng.random_range(0.05..3.0);
        let lambda_d = rng.random_range(0.05..3.0);
        let (holds, _) = momentum_bound_holds(&BoundInputs {
            gamma,
            zeta,
            l,
            kappa_q: Some(kappa_q),
            lambda_d: Some(lambda_d),
            ..Default::default()
        })?;
        let direct = kappa_q * kappa_q / lambda_d < gamma / (zeta * l);
        if holds != direct {
            return Ok(Some(format!(
                "trial {trial}: predicate={holds} direct={direct} kq={kappa_q} ld={lambda_d}"
            )));
        }
    }
    Ok(None)
}

/// The converse-Lyapunov constants match an independently arranged
/// evaluation of the closed forms on a 100-point grid (rel ≤ 1e−12),
/// with the γ constant pinned at ½.
fn converse_constants_grid() -> Result<Option<String>, CliError> {
    let mut point = 0usize;
    for i in 0..5 {
        for j in 0..5 {
            for k in 0..4 {
                point += 1;
                let kk = 1.1 + 0.45 * i as f64;
                let tau = 0.3 + 0.35 * j as f64;
                let lx = tau * (1.3 + 0.4 * k as f64); // keep away from lx = tau
                let lu = 0.2 + 0.1 * i as f64;
                let lh = 0.5 + 0.2 * j as f64;
                let c = converse_lyapunov_constants(&DecayConstants {
                    overshoot: kk,
                    decay_rate: tau,
                    lip_x: lx,
                    lip_u: lu,
                    lip_h: lh,
                })?;
                // independent arrangement via exp_m1
                let t = (2.0 * kk * kk).ln() / (2.0 * tau);
                let alpha = -(-2.0 * lx * t).exp_m1() / (2.0 * lx);
                let beta = -kk * kk * (-2.0 * tau * t).exp_m1() / (2.0 * tau);
                let s = lx - tau;
                let delta = 2.0 * kk * (s * t).exp_m1() / s;
                let lp = lx * lh + lu;
                let zeta_prime =
                    2.0 * kk * lp * ((s * t - 1.0) * (s * t).exp() + 1.0) / (s * s);
                let zeta = delta * lh + zeta_prime;
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
                let worst = [
                    rel(c.horizon, t),
                    rel(c.alpha, alpha),
                    rel(c.beta, beta),
                    rel(c.delta, delta),
                    rel(c.zeta_prime, zeta_prime),
                    rel(c.zeta, zeta),
                ]
                .into_iter()
                .fold(0.0f64, f64::max);
                if worst > 1e-12 || c.gamma != 0.5 {
                    return Ok(Some(format!(
                        "point {point}: K={kk} tau={tau} lx={lx} rel={worst:.3e} gamma={}",
                        c.gamma
                    )));
                }
            }
        }
    }
    Ok(None)
}

fn small_instance(seed: u64) -> Result<ResolvedInstance, CliError> {
    resolve(
        &InstanceSpec::Recipe(RecipeSpec {
            version: 1,
            n: 8,
            p: 3,
            seed,
            hurwitz_margin: 0.1,
            hessian_regularization: 0.1,
            output_constraints: 0,
            state_dominant: false,
        }),
        std::path::Path::new("."),
    )
}

/// Identical seed and config must reproduce trajectories bitwise, for both
/// the finite-difference and the exact integrator.
fn determinism(seed: u64) -> Result<Option<String>, CliError> {
    let inst = small_instance(seed)?;
    let problem = inst.problem()?;
    let law = ControlLaw::Gradient {
        metric: Metric::ScaledIdentity(0.01),
    };
    let x0 = DVector::zeros(8);
    let u0 = DVector::zeros(3);
    let aux0 = DVector::zeros(0);
    let config = SimConfig::new(0.01, 5.0);
    let a = simulate_closed_loop(&problem, &law, &x0, &u0, &aux0, &config)?;
    let b = simulate_closed_loop(&problem, &law, &x0, &u0, &aux0, &config)?;
    if a.times != b.times || a.x != b.x || a.u != b.u || a.residuals != b.residuals {
        return Ok(Some(String::from("rk4 runs differ between replays")));
    }
    let mut exact_cfg = SimConfig::new(0.5, 200.0);
    exact_cfg.convergence_tol = 1e-9;
    let c = run_exact(
        &inst,
        &problem,
        &law,
        AffineMode::Closed,
        &x0,
        &u0,
        &aux0,
        &exact_cfg,
        0.01,
    )?;
    let d = run_exact(
        &inst,
        &problem,
        &law,
        AffineMode::Closed,
        &x0,
        &u0,
        &aux0,
        &exact_cfg,
        0.01,
    )?;
    if c.times != d.times || c.x != d.x || c.u != d.u || c.residuals != d.residuals {
        return Ok(Some(String::from("exact runs differ between replays")));
    }
    Ok(None)
}

/// Halving dt must shrink the RK4 error against a dt/8 reference by ≥ 8×.
fn rk4_order() -> Result<Option<String>, CliError> {
    let plant = fbopt_core::plant::LtiPlant::new(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
    )?;
    let objective = QuadraticObjective::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
        DVector::zeros(1),
        DVector::zeros(1),
        0.0,
    )?;
    let problem = Problem::new(Box::new(objective), std::sync::Arc::new(plant));
    let law = ControlLaw::Gradient {
        metric: Metric::ScaledIdentity(1.0),
    };
    let x0 = DVector::from_element(1, 1.0);
    let u0 = DVector::from_element(1, 1.0);
    let run = |dt: f64| -> Result<f64, CliError> {
        let mut config = SimConfig::new(dt, 5.0);
        config.convergence_tol = 1e-300;
        let traj = simulate_closed_loop(&problem, &law, &x0, &u0, &DVector::zeros(0), &config)?;
        Ok(traj.final_u()[0])
    };
    let reference = run(0.0125)?;
    let e1 = (run(0.1)? - reference).abs();
    let e2 = (run(0.05)? - reference).abs();
    if e1 / e2 < 8.0 {
        return Ok(Some(format!("error ratio {:.3}", e1 / e2)));
    }
    Ok(None)
}

/// Certificate sandwich α‖x−h(u)‖² ≤ W ≤ β‖x−h(u)‖² and the gradient
/// bound ‖∇ᵤW‖ ≤ ζ‖x−h(u)‖ on 1000 random points.
fn certificate_sandwich(seed: u64) -> Result<Option<String>, CliError> {
    let inst = small_instance(seed)?;
    let problem = inst.problem()?;
    let cert = certify(&inst, &problem, DEFAULT_MARGIN_FRACTION)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d);
    for trial in 0..1000 {
        let x = DVector::from_fn(8, |_, _| rng.random_range(-3.0..3.0));
        let u = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        let (w, _, grad_u) = lyapunov_eval(&cert.cert, problem.plant(), &x, &u)?;
        let e = (&x - problem.plant().steady_state(&u)?).norm();
        let lo = cert.cert.alpha * e * e;
        let hi = cert.cert.beta * e * e;
        let tol = 1e-9 * (1.0 + hi);
        if w < lo - tol || w > hi + tol {
            return Ok(Some(format!(
                "trial {trial}: sandwich violated w={w} lo={lo} hi={hi}"
            )));
        }
        if grad_u.norm() > cert.cert.zeta * e + tol {
            return Ok(Some(format!(
                "trial {trial}: gradient bound violated {} > {}",
                grad_u.norm(),
                cert.cert.zeta * e
            )));
        }
    }
    Ok(None)
}

/// On a converged closed-loop run below the gradient bound, the LaSalle
/// value must be non-increasing up to numerical slack at ≥ 99% of interior
/// samples.
fn lasalle_descent() -> Result<Option<String>, CliError> {
    let inst = small_instance(0)?;
    let problem = inst.problem()?;
    let cert = certify(&inst, &problem, DEFAULT_MARGIN_FRACTION)?;
    let eps = 0.5 * cert.eps_star;
    let law = ControlLaw::Gradient {
        metric: Metric::ScaledIdentity(eps),
    };
    let rate = eps * cert.hess_min;
    let horizon = 30.0 / rate;
    let mut config = SimConfig::new(horizon / 2000.0, horizon);
    config.convergence_tol = 1e-6;
    let traj = run_exact(
        &inst,
        &problem,
        &law,
        AffineMode::Closed,
        &DVector::zeros(8),
        &DVector::zeros(3),
        &DVector::zeros(0),
        &config,
        eps,
    )?;
    if traj.outcome != Outcome::Converged {
        return Ok(Some(format!("run ended {:?}", traj.outcome)));
    }
    let delta = optimal_delta(eps * cert.l, eps * cert.cert.zeta)?;
    let (violations, interior) = lasalle_violation_fraction(
        &problem,
        &cert.cert,
        delta,
        &LaSalleFamily::Gradient,
        &traj,
    )?;
    if interior == 0 || violations * 100 > interior {
        return Ok(Some(format!("{violations}/{interior} interior ascent samples")));
    }
    Ok(None)
}

/// The saddle flow must vanish exactly at the KKT point of the constrained
/// reduced problem.
fn saddle_kkt_equivalence() -> Result<Option<String>, CliError> {
    let inst = resolve(
        &InstanceSpec::Recipe(RecipeSpec {
            version: 1,
            n: 8,
            p: 4,
            seed: 3,
            hurwitz_margin: 0.1,
            hessian_regularization: 0.1,
            output_constraints: 2,
            state_dominant: false,
        }),
        std::path::Path::new("."),
    )?;
    let problem = inst.problem()?;
    let (u_star, lambda_star) = saddle_kkt_point(&inst, &problem)?;
    let x_star = problem.plant().steady_state(&u_star)?;
    let law = ControlLaw::SaddlePoint {
        eps: 0.7,
        sigma: 10.0,
        signs: Default::default(),
    };
    let (du, dl) = law.field(&problem, 1.0, &x_star, &u_star, &lambda_star)?;
    let speed = du.norm().max(dl.norm());
    if speed > 1e-8 * (1.0 + u_star.norm()) {
        return Ok(Some(format!("field norm {speed:.3e} at the KKT point")));
    }
    let kkt = problem.kkt_residual(&x_star, &u_star, Some(&lambda_star))?;
    if kkt > 1e-8 * (1.0 + u_star.norm()) {
        return Ok(Some(format!("kkt residual {kkt:.3e} at the KKT point")));
    }
    Ok(None)
}

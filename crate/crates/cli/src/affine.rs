//! Exact integration of affine interconnections. With an LTI plant and a
//! quadratic objective the closed loop of the constant-metric families is an
//! affine ODE ṡ = Ms + c, which we step with the matrix exponential of the
//! augmented matrix [[M, c], [0, 0]]. This makes the very long horizons of
//! the small-gain convergence runs affordable: the per-step error is that of
//! the Padé exponential, not of a finite-difference scheme, so dt can be a
//! large fraction of the horizon.

use nalgebra::{DMatrix, DVector};

use fbopt_core::controller::{ControlLaw, Metric, SaddleSigns};
use fbopt_core::plant::Plant;
use fbopt_core::problem::Problem;
use fbopt_core::sim::{
    classify_outcome, run_residual, trajectory_is_unstable, Outcome, SimConfig, ThresholdSpec,
    Trajectory,
};

use crate::error::CliError;
use crate::instance::ResolvedInstance;

/// ṡ = m·s + c over the stacked state s = (x, u, aux) (closed loop) or
/// s = (u, aux) (reduced flow).
pub struct AffineSystem {
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineMode {
    Closed,
    Reduced,
}

fn quadratic_terms(
    problem: &Problem,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>), CliError> {
    let objective = problem.objective();
    if objective.l1_weight_x() > 0.0 {
        return Err(CliError::NotAffine("l1 regularization is nonsmooth"));
    }
    let (pxx, pxu, puu) = objective
        .hessian_blocks()
        .ok_or(CliError::NotAffine("objective is not quadratic"))?;
    let zero_x = DVector::zeros(problem.state_dim());
    let zero_u = DVector::zeros(problem.input_dim());
    let (qx, qu) = objective.gradient(&zero_x, &zero_u);
    Ok((pxx.clone_owned(), pxu.clone_owned(), puu.clone_owned(), qx, qu))
}

/// Q of the input-update metric, evaluated at u = 0 (constant for the
/// supported families).
fn metric_matrix(problem: &Problem, metric: &Metric) -> Result<DMatrix<f64>, CliError> {
    Ok(metric.evaluate(problem, &DVector::zeros(problem.input_dim()))?)
}

/// Assembles the closed-loop affine system for the given law, or reports why
/// the law has no affine closed form.
pub fn closed_loop_system(
    inst: &ResolvedInstance,
    problem: &Problem,
    law: &ControlLaw,
) -> Result<AffineSystem, CliError> {
    if problem.input_set().is_some() {
        return Err(CliError::NotAffine("input constraints make the flow projected"));
    }
    let (pxx, pxu, puu, qx, qu) = quadratic_terms(problem)?;
    let n = problem.state_dim();
    let p = problem.input_dim();
    let a = inst.plant.a();
    let b = inst.plant.b();
    let w = inst.plant.disturbance();
    let h = inst.plant.steady_state_gain();

    // gradient pieces of u̇ = −Q(Hᵀ∇ₓΦ + ∇ᵤΦ)
    let gx_coef = h.transpose() * &pxx + pxu.transpose(); // × x
    let gu_coef = h.transpose() * &pxu + &puu; // × u
    let g_const = h.transpose() * &qx + &qu;

    match law {
        ControlLaw::Gradient { metric } => {
            let q = metric_matrix(problem, metric)?;
            let dim = n + p;
            let mut m = DMatrix::zeros(dim, dim);
            let mut c = DVector::zeros(dim);
            m.view_mut((0, 0), (n, n)).copy_from(a);
            m.view_mut((0, n), (n, p)).copy_from(b);
            c.rows_mut(0, n).copy_from(w);
            m.view_mut((n, 0), (p, n)).copy_from(&(-(&q * &gx_coef)));
            m.view_mut((n, n), (p, p)).copy_from(&(-(&q * &gu_coef)));
            c.rows_mut(n, p).copy_from(&(-(&q * &g_const)));
            Ok(AffineSystem { m, c })
        }
        ControlLaw::Newton { eps, mu } => {
            let metric = Metric::Newton { eps: *eps, mu: *mu };
            let law = ControlLaw::Gradient { metric };
            closed_loop_system(inst, problem, &law)
        }
        ControlLaw::HeavyBall { metric, damping } => {
            let q = metric_matrix(problem, metric)?;
            let d = metric_matrix(problem, damping)?;
            let dim = n + 2 * p;
            let mut m = DMatrix::zeros(dim, dim);
            let mut c = DVector::zeros(dim);
            m.view_mut((0, 0), (n, n)).copy_from(a);
            m.view_mut((0, n), (n, p)).copy_from(b);
            c.rows_mut(0, n).copy_from(w);
            // u̇ = Qz
            m.view_mut((n, n + p), (p, p)).copy_from(&q);
            // ż = −Dz − Q(gradient)
            m.view_mut((n + p, 0), (p, n)).copy_from(&(-(&q * &gx_coef)));
            m.view_mut((n + p, n), (p, p)).copy_from(&(-(&q * &gu_coef)));
            m.view_mut((n + p, n + p), (p, p)).copy_from(&(-&d));
            c.rows_mut(n + p, p).copy_from(&(-(&q * &g_const)));
            Ok(AffineSystem { m, c })
        }
        ControlLaw::SaddlePoint { eps, sigma, signs } => {
            let (g, rhs) = inst
                .output_constraint
                .as_ref()
                .ok_or(CliError::NotAffine("saddle flow needs an output constraint"))?;
            let r = g.nrows();
            let dim = n + p + r;
            let sign = match signs {
                SaddleSigns::DescentConsistent => 1.0,
                SaddleSigns::Literal => -1.0,
            };
            let mut m = DMatrix::zeros(dim, dim);
            let mut c = DVector::zeros(dim);
            m.view_mut((0, 0), (n, n)).copy_from(a);
            m.view_mut((0, n), (n, p)).copy_from(b);
            c.rows_mut(0, n).copy_from(w);
            // u̇ = −ε(Hᵀ(∇ₓΦ ± (Aᵀλ + σAᵀ(Ax − b))) + ∇ᵤΦ)
            let hg = h.transpose() * g.transpose(); // p×r
            let ux = &gx_coef + (&hg * g) * (sigma * sign);
            m.view_mut((n, 0), (p, n)).copy_from(&(ux * (-eps)));
            m.view_mut((n, n), (p, p)).copy_from(&(&gu_coef * (-eps)));
            m.view_mut((n, n + p), (p, r)).copy_from(&(&hg * (-eps * sign)));
            c.rows_mut(n, p)
                .copy_from(&((&g_const - (&hg * rhs) * (sigma * sign)) * (-eps)));
            // λ̇ = ε(Ax − b)
            m.view_mut((n + p, 0), (r, n)).copy_from(&(g * *eps));
            c.rows_mut(n + p, r).copy_from(&(rhs * (-eps)));
            Ok(AffineSystem { m, c })
        }
        _ => Err(CliError::NotAffine("unsupported control-law family")),
    }
}

/// Assembles the reduced affine flow, with the plant slaved to x = h(u).
pub fn reduced_system(
    inst: &ResolvedInstance,
    problem: &Problem,
    law: &ControlLaw,
) -> Result<AffineSystem, CliError> {
    if problem.input_set().is_some() {
        return Err(CliError::NotAffine("input constraints make the flow projected"));
    }
    // ∇Φ̃(u) = H̃u + g0 for the quadratic objective
    quadratic_terms(problem)?; // reject nonsmooth / non-quadratic objectives
    let p = problem.input_dim();
    let zero_u = DVector::zeros(p);
    let hess = problem.reduced_hessian(&zero_u)?;
    let g0 = problem.reduced_gradient(&zero_u)?;
    let h = inst.plant.steady_state_gain();
    let x0 = inst.plant.steady_state(&zero_u)?;

    match law {
        ControlLaw::Gradient { metric } => {
            let q = metric_matrix(problem, metric)?;
            Ok(AffineSystem {
                m: -(&q * &hess),
                c: -(&q * &g0),
            })
        }
        ControlLaw::Newton { eps, mu } => {
            let metric = Metric::Newton { eps: *eps, mu: *mu };
            reduced_system(inst, problem, &ControlLaw::Gradient { metric })
        }
        ControlLaw::HeavyBall { metric, damping } => {
            let q = metric_matrix(problem, metric)?;
            let d = metric_matrix(problem, damping)?;
            let dim = 2 * p;
            let mut m = DMatrix::zeros(dim, dim);
            let mut c = DVector::zeros(dim);
            m.view_mut((0, p), (p, p)).copy_from(&q);
            m.view_mut((p, 0), (p, p)).copy_from(&(-(&q * &hess)));
            m.view_mut((p, p), (p, p)).copy_from(&(-&d));
            c.rows_mut(p, p).copy_from(&(-(&q * &g0)));
            Ok(AffineSystem { m, c })
        }
        ControlLaw::SaddlePoint { eps, sigma, signs } => {
            let (g, rhs) = inst
                .output_constraint
                .as_ref()
                .ok_or(CliError::NotAffine("saddle flow needs an output constraint"))?;
            let r = g.nrows();
            let sign = match signs {
                SaddleSigns::DescentConsistent => 1.0,
                SaddleSigns::Literal => -1.0,
            };
            let gh = g * h; // r×p
            let resid0 = g * &x0 - rhs; // violation at u = 0
            let dim = p + r;
            let mut m = DMatrix::zeros(dim, dim);
            let mut c = DVector::zeros(dim);
            let uu = &hess + (gh.transpose() * &gh) * (sigma * sign);
            m.view_mut((0, 0), (p, p)).copy_from(&(uu * (-eps)));
            m.view_mut((0, p), (p, r))
                .copy_from(&(gh.transpose() * (-eps * sign)));
            c.rows_mut(0, p)
                .copy_from(&((&g0 + (gh.transpose() * &resid0) * (sigma * sign)) * (-eps)));
            m.view_mut((p, 0), (r, p)).copy_from(&(&gh * *eps));
            c.rows_mut(p, r).copy_from(&(&resid0 * *eps));
            Ok(AffineSystem { m, c })
        }
        _ => Err(CliError::NotAffine("unsupported control-law family")),
    }
}

/// One-step transition (E, d) with s⁺ = Es + d over an interval dt, via the
/// exponential of the augmented matrix.
pub fn transition(sys: &AffineSystem, dt: f64) -> (DMatrix<f64>, DVector<f64>) {
    let dim = sys.m.nrows();
    let mut aug = DMatrix::zeros(dim + 1, dim + 1);
    aug.view_mut((0, 0), (dim, dim)).copy_from(&(&sys.m * dt));
    aug.view_mut((0, dim), (dim, 1)).copy_from(&(&sys.c * dt));
    let e = aug.exp();
    let step = e.view((0, 0), (dim, dim)).into_owned();
    let offset = e.view((0, dim), (dim, 1)).column(0).into_owned();
    (step, offset)
}

/// Integrates the affine system exactly and records every step, reusing the
/// simulator's residual and outcome conventions.
pub fn run_exact(
    inst: &ResolvedInstance,
    problem: &Problem,
    law: &ControlLaw,
    mode: AffineMode,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    aux0: &DVector<f64>,
    config: &SimConfig,
    eps_used: f64,
) -> Result<Trajectory, CliError> {
    let sys = match mode {
        AffineMode::Closed => closed_loop_system(inst, problem, law)?,
        AffineMode::Reduced => reduced_system(inst, problem, law)?,
    };
    let n = problem.state_dim();
    let p = problem.input_dim();
    let q = law.aux_dim(problem);
    let steps = (config.horizon / config.dt + 0.5) as usize;
    if steps == 0 {
        return Err(CliError::Config(String::from(
            "horizon shorter than one step",
        )));
    }
    let (e, d) = transition(&sys, config.dt);
    let h = inst.plant.steady_state_gain();
    let x_base = inst.plant.steady_state(&DVector::zeros(p))?;
    let kink_tol = 1e-8f64.max(10.0 * config.dt);

    let mut s = match mode {
        AffineMode::Closed => {
            let mut s = DVector::zeros(n + p + q);
            s.rows_mut(0, n).copy_from(x0);
            s.rows_mut(n, p).copy_from(u0);
            s.rows_mut(n + p, q).copy_from(aux0);
            s
        }
        AffineMode::Reduced => {
            let mut s = DVector::zeros(p + q);
            s.rows_mut(0, p).copy_from(u0);
            s.rows_mut(p, q).copy_from(aux0);
            s
        }
    };

    let mut traj = Trajectory {
        times: Vec::new(),
        x: Vec::new(),
        u: Vec::new(),
        aux: Vec::new(),
        residuals: Vec::new(),
        outcome: Outcome::HorizonExhausted,
        final_residual: f64::INFINITY,
        max_state_norm: 0.0,
        nan_encountered: false,
        eps_used,
    };

    let split = |s: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        match mode {
            AffineMode::Closed => (
                s.rows(0, n).into_owned(),
                s.rows(n, p).into_owned(),
                s.rows(n + p, q).into_owned(),
            ),
            AffineMode::Reduced => {
                let u = s.rows(0, p).into_owned();
                let x = h * &u + &x_base;
                (x, u, s.rows(p, q).into_owned())
            }
        }
    };

    let mut t = config.start_time;
    for step in 0..=steps {
        let (x, u, aux) = split(&s);
        let norm = (x.norm_squared() + u.norm_squared() + aux.norm_squared()).sqrt();
        traj.max_state_norm = traj.max_state_norm.max(norm);
        if !norm.is_finite() {
            traj.nan_encountered = true;
            traj.outcome = Outcome::Diverged;
            break;
        }
        let residual = run_residual(problem, law, &x, &u, &aux, kink_tol)?;
        traj.times.push(t);
        traj.x.push(x);
        traj.u.push(u);
        traj.aux.push(aux);
        traj.residuals.push(residual);
        traj.final_residual = residual;
        if norm > config.divergence_threshold {
            traj.outcome = Outcome::Diverged;
            break;
        }
        if residual <= config.convergence_tol {
            traj.outcome = Outcome::Converged;
            break;
        }
        if step == steps {
            break;
        }
        s = &e * s + &d;
        t += config.dt;
    }
    if !matches!(traj.outcome, Outcome::Converged | Outcome::Diverged) {
        traj.outcome = classify_outcome(&traj, config);
    }
    Ok(traj)
}

/// Convergence run with horizon escalation: doubles the horizon (keeping the
/// step count fixed) until the run converges or the doubling budget runs out.
#[allow(clippy::too_many_arguments)]
pub fn run_exact_until_converged(
    inst: &ResolvedInstance,
    problem: &Problem,
    law: &ControlLaw,
    mode: AffineMode,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    aux0: &DVector<f64>,
    config: &SimConfig,
    eps_used: f64,
    max_doublings: usize,
) -> Result<Trajectory, CliError> {
    let mut cfg = config.clone();
    let steps = (config.horizon / config.dt + 0.5).max(1.0);
    let mut traj = run_exact(inst, problem, law, mode, x0, u0, aux0, &cfg, eps_used)?;
    for _ in 0..max_doublings {
        if traj.outcome != Outcome::HorizonExhausted {
            break;
        }
        cfg.horizon *= 2.0;
        cfg.dt = cfg.horizon / steps;
        traj = run_exact(inst, problem, law, mode, x0, u0, aux0, &cfg, eps_used)?;
    }
    Ok(traj)
}

/// Escalates ε upward by decades from `eps_lo` until a run is classified
/// unstable, returning the (stable, unstable) bracket.
#[allow(clippy::too_many_arguments)]
pub fn bracket_instability(
    inst: &ResolvedInstance,
    spec: &ThresholdSpec<'_>,
    eps_lo: f64,
    max_decades: u32,
) -> Result<(f64, f64), CliError> {
    let run = |eps: f64| -> Result<bool, CliError> {
        let law = (spec.make_law)(eps);
        let traj = run_exact(
            inst,
            spec.problem,
            &law,
            AffineMode::Closed,
            &spec.x0,
            &spec.u0,
            &spec.aux0,
            &spec.config,
            eps,
        )?;
        Ok(trajectory_is_unstable(spec, &traj)?)
    };
    if run(eps_lo)? {
        return Err(CliError::Bracket(format!(
            "run already unstable at eps = {eps_lo:.3e}"
        )));
    }
    let mut hi = eps_lo;
    for _ in 0..max_decades {
        hi *= 10.0;
        if run(hi)? {
            return Ok((hi / 10.0, hi));
        }
    }
    Err(CliError::Bracket(format!(
        "no instability up to eps = {hi:.3e}"
    )))
}

/// Bisects the empirical stability boundary to 0.5% relative width using the
/// exact integrator for each candidate gain.
pub fn exact_threshold(
    inst: &ResolvedInstance,
    spec: &ThresholdSpec<'_>,
    eps_lo: f64,
    eps_hi: f64,
) -> Result<f64, CliError> {
    if !(eps_lo > 0.0 && eps_hi > eps_lo) {
        return Err(CliError::Config(String::from("need 0 < eps_lo < eps_hi")));
    }
    let run = |eps: f64| -> Result<bool, CliError> {
        let law = (spec.make_law)(eps);
        let traj = run_exact(
            inst,
            spec.problem,
            &law,
            AffineMode::Closed,
            &spec.x0,
            &spec.u0,
            &spec.aux0,
            &spec.config,
            eps,
        )?;
        Ok(trajectory_is_unstable(spec, &traj)?)
    };
    if run(eps_lo)? {
        return Err(CliError::Bracket(format!(
            "lower bracket end {eps_lo:.3e} is unstable"
        )));
    }
    if !run(eps_hi)? {
        return Err(CliError::Bracket(format!(
            "upper bracket end {eps_hi:.3e} is stable"
        )));
    }
    let mut lo = eps_lo;
    let mut hi = eps_hi;
    while (hi - lo) > 0.005 * lo {
        let mid = 0.5 * (lo + hi);
        if run(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

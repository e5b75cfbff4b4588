//! Fixed-step integration of the reduced and interconnected dynamics,
//! outcome classification, and empirical instability-threshold bisection.

use alloc::vec::Vec;
use libm::fabs;
use nalgebra::DVector;

use crate::controller::{ControlLaw, ControllerError};
use crate::geometry::DEFAULT_ACTIVITY_TOL;
use crate::problem::{Problem, ProblemError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    EulerProjected,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub method: Method,
    /// State-norm cutoff for declaring divergence.
    pub divergence_threshold: f64,
    /// Residual target for declaring convergence.
    pub convergence_tol: f64,
    /// Keep every k-th step (the final state is always kept).
    pub record_stride: usize,
    /// Initial value of the explicit time variable (the accelerated flow is
    /// singular at t = 0, so simulations start at t = 1 by default).
    pub start_time: f64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            method: Method::Rk4,
            divergence_threshold: 1e6,
            convergence_tol: 1e-6,
            record_stride: 1,
            start_time: 1.0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be positive"));
        }
        if self.horizon < self.dt {
            return Err(SimError::InvalidConfig("horizon must be at least dt"));
        }
        if !(self.divergence_threshold > 0.0) || !(self.convergence_tol > 0.0) {
            return Err(SimError::InvalidConfig("thresholds must be positive"));
        }
        if self.record_stride == 0 {
            return Err(SimError::InvalidConfig("record_stride must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Oscillating,
    Diverged,
    HorizonExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidConfig(&'static str),
    Controller(ControllerError),
    Problem(ProblemError),
    InvalidBracket { lo: Outcome, hi: Outcome },
    EmptyTrajectory,
}

impl From<ControllerError> for SimError {
    fn from(e: ControllerError) -> Self {
        SimError::Controller(e)
    }
}

impl From<ProblemError> for SimError {
    fn from(e: ProblemError) -> Self {
        SimError::Problem(e)
    }
}

impl From<crate::plant::PlantError> for SimError {
    fn from(e: crate::plant::PlantError) -> Self {
        SimError::Problem(ProblemError::Plant(e))
    }
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::InvalidConfig(msg) => write!(f, "invalid simulation config: {msg}"),
            SimError::Controller(e) => write!(f, "{e}"),
            SimError::Problem(e) => write!(f, "{e}"),
            SimError::InvalidBracket { lo, hi } => {
                write!(f, "invalid bisection bracket: lo {lo:?}, hi {hi:?}")
            }
            SimError::EmptyTrajectory => write!(f, "trajectory has no samples"),
        }
    }
}

/// Recorded simulation result.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub aux: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub outcome: Outcome,
    pub final_residual: f64,
    pub max_state_norm: f64,
    pub nan_encountered: bool,
    /// Gain annotation for reports; not used internally.
    pub eps_used: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_u(&self) -> &DVector<f64> {
        self.u.last().expect("nonempty trajectory")
    }

    pub fn final_x(&self) -> &DVector<f64> {
        self.x.last().expect("nonempty trajectory")
    }
}

/// First-order residual used for run classification. Extends the problem's
/// KKT residual with the family's auxiliary state: momentum norm for the
/// second-order families, dual feasibility for the saddle flow, and a
/// minimum-norm subgradient selection for ℓ1 objectives (components of x
/// within `kink_tol` of a kink contribute their smallest subgradient).
pub fn run_residual(
    problem: &Problem,
    law: &ControlLaw,
    x: &DVector<f64>,
    u: &DVector<f64>,
    aux: &DVector<f64>,
    kink_tol: f64,
) -> Result<f64, ProblemError> {
    let rho = problem.objective().l1_weight_x();
    let base = if rho > 0.0 {
        let (mut gx, gu) = problem.objective().gradient(x, u);
        for i in 0..x.len() {
            if fabs(x[i]) <= kink_tol {
                // min-norm element of gx_i + rho·[−1, 1]
                gx[i] = if fabs(gx[i]) <= rho {
                    0.0
                } else {
                    gx[i] - rho * gx[i].signum()
                };
            } else {
                gx[i] += rho * x[i].signum();
            }
        }
        let jac = problem.plant().steady_state_jacobian(u)?;
        let raw = -(jac.transpose() * gx + gu);
        let grad_norm = match problem.input_set() {
            Some(set) => set.project_tangent(u, &raw)?.norm(),
            None => raw.norm(),
        };
        let steady = (x - problem.plant().steady_state(u)?).norm();
        steady.max(grad_norm)
    } else {
        let multipliers = match law {
            ControlLaw::SaddlePoint { .. } => Some(aux),
            _ => None,
        };
        problem.kkt_residual(x, u, multipliers)?
    };
    Ok(match law {
        ControlLaw::HeavyBall { .. } | ControlLaw::Accelerated { .. } => base.max(aux.norm()),
        _ => base,
    })
}

enum Mode {
    Closed,
    Reduced,
}

/// Simulates the plant interconnected with the control law (RK4 for smooth
/// families, projected Euler for the projected family).
pub fn simulate_closed_loop(
    problem: &Problem,
    law: &ControlLaw,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    aux0: &DVector<f64>,
    config: &SimConfig,
) -> Result<Trajectory, SimError> {
    simulate(problem, law, Some(x0), u0, aux0, config, Mode::Closed)
}

/// Simulates the reduced dynamics with x slaved to h(u); the x column is
/// filled with h(u(t)) for plotting parity with the closed loop.
pub fn simulate_reduced(
    problem: &Problem,
    law: &ControlLaw,
    u0: &DVector<f64>,
    aux0: &DVector<f64>,
    config: &SimConfig,
) -> Result<Trajectory, SimError> {
    simulate(problem, law, None, u0, aux0, config, Mode::Reduced)
}

fn simulate(
    problem: &Problem,
    law: &ControlLaw,
    x0: Option<&DVector<f64>>,
    u0: &DVector<f64>,
    aux0: &DVector<f64>,
    config: &SimConfig,
    mode: Mode,
) -> Result<Trajectory, SimError> {
    config.validate()?;
    let expected_aux = law.aux_dim(problem);
    if aux0.len() != expected_aux {
        return Err(SimError::Controller(ControllerError::DimensionMismatch {
            context: "auxiliary initial state",
            expected: expected_aux,
            got: aux0.len(),
        }));
    }
    if law.is_projected() {
        let set = problem
            .input_set()
            .ok_or(SimError::Controller(ControllerError::MissingInputSet))?;
        if !set.contains(u0, DEFAULT_ACTIVITY_TOL) {
            return Err(SimError::Controller(ControllerError::Geometry(
                crate::geometry::GeometryError::Infeasible {
                    violation: set.violation(u0),
                },
            )));
        }
    }

    let projected = law.is_projected() || config.method == Method::EulerProjected;
    let dt = config.dt;
    let kink_tol = DEFAULT_ACTIVITY_TOL.max(10.0 * dt);
    let steps = (config.horizon / dt + 0.5) as usize;

    let mut u = u0.clone();
    let mut aux = aux0.clone();
    let mut x = match (&mode, x0) {
        (Mode::Closed, Some(x)) => x.clone(),
        _ => problem.plant().steady_state(&u)?,
    };
    let mut t = config.start_time;

    let mut traj = Trajectory {
        times: Vec::new(),
        x: Vec::new(),
        u: Vec::new(),
        aux: Vec::new(),
        residuals: Vec::new(),
        outcome: Outcome::HorizonExhausted,
        final_residual: f64::NAN,
        max_state_norm: 0.0,
        nan_encountered: false,
        eps_used: f64::NAN,
    };

    let record =
        |traj: &mut Trajectory, t: f64, x: &DVector<f64>, u: &DVector<f64>, aux: &DVector<f64>| -> Result<f64, SimError> {
            let res = run_residual(problem, law, x, u, aux, kink_tol)?;
            traj.times.push(t);
            traj.x.push(x.clone());
            traj.u.push(u.clone());
            traj.aux.push(aux.clone());
            traj.residuals.push(res);
            Ok(res)
        };

    record(&mut traj, t, &x, &u, &aux)?;
    traj.max_state_norm = state_norm(&x, &u, &aux);

    let mut finished: Option<Outcome> = None;
    for step in 1..=steps {
        if projected {
            // projected Euler: step along the projected field, then project
            // the new point back onto the set to remove O(dt²) drift
            let (du, daux) = law.field(problem, t, &x, &u, &aux)?;
            let u_raw = &u + &du * dt;
            u = match problem.input_set() {
                Some(set) if law.is_projected() => set
                    .project_point(&u_raw)
                    .map_err(ControllerError::Geometry)?,
                _ => u_raw,
            };
            aux += daux * dt;
            match mode {
                Mode::Closed => {
                    let dx = problem.plant().dynamics(&x, &u);
                    x += dx * dt;
                }
                Mode::Reduced => x = problem.plant().steady_state(&u)?,
            }
        } else {
            match mode {
                Mode::Closed => {
                    let f = |t: f64, x: &DVector<f64>, u: &DVector<f64>, aux: &DVector<f64>|
                        -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), SimError> {
                        let (du, daux) = law.field(problem, t, x, u, aux)?;
                        Ok((problem.plant().dynamics(x, u), du, daux))
                    };
                    let (k1x, k1u, k1a) = f(t, &x, &u, &aux)?;
                    let h = dt / 2.0;
                    let (k2x, k2u, k2a) =
                        f(t + h, &(&x + &k1x * h), &(&u + &k1u * h), &(&aux + &k1a * h))?;
                    let (k3x, k3u, k3a) =
                        f(t + h, &(&x + &k2x * h), &(&u + &k2u * h), &(&aux + &k2a * h))?;
                    let (k4x, k4u, k4a) =
                        f(t + dt, &(&x + &k3x * dt), &(&u + &k3u * dt), &(&aux + &k3a * dt))?;
                    x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
                    u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0);
                    aux += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
                }
                Mode::Reduced => {
                    let f = |t: f64, u: &DVector<f64>, aux: &DVector<f64>|
                        -> Result<(DVector<f64>, DVector<f64>), SimError> {
                        let xs = problem.plant().steady_state(u)?;
                        Ok(law.field(problem, t, &xs, u, aux)?)
                    };
                    let (k1u, k1a) = f(t, &u, &aux)?;
                    let h = dt / 2.0;
                    let (k2u, k2a) = f(t + h, &(&u + &k1u * h), &(&aux + &k1a * h))?;
                    let (k3u, k3a) = f(t + h, &(&u + &k2u * h), &(&aux + &k2a * h))?;
                    let (k4u, k4a) = f(t + dt, &(&u + &k3u * dt), &(&aux + &k3a * dt))?;
                    u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0);
                    aux += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
                    x = problem.plant().steady_state(&u)?;
                }
            }
        }
        t = config.start_time + step as f64 * dt;

        let norm = state_norm(&x, &u, &aux);
        traj.max_state_norm = traj.max_state_norm.max(norm);
        if !norm.is_finite() {
            traj.nan_encountered = true;
            finished = Some(Outcome::Diverged);
        } else if norm >= config.divergence_threshold {
            finished = Some(Outcome::Diverged);
        }

        let at_record = step % config.record_stride == 0 || step == steps || finished.is_some();
        if at_record {
            let res = if traj.nan_encountered {
                f64::NAN
            } else {
                record(&mut traj, t, &x, &u, &aux)?
            };
            if traj.nan_encountered {
                traj.times.push(t);
                traj.x.push(x.clone());
                traj.u.push(u.clone());
                traj.aux.push(aux.clone());
                traj.residuals.push(res);
            }
            if finished.is_none() && res <= config.convergence_tol {
                finished = Some(Outcome::Converged);
            }
        }
        if let Some(outcome) = finished {
            traj.outcome = outcome;
            break;
        }
    }
    traj.final_residual = *traj.residuals.last().unwrap_or(&f64::NAN);
    if finished.is_none() {
        traj.outcome = classify_outcome(&traj, config);
    }
    Ok(traj)
}

fn state_norm(x: &DVector<f64>, u: &DVector<f64>, aux: &DVector<f64>) -> f64 {
    libm::sqrt(x.norm_squared() + u.norm_squared() + aux.norm_squared())
}

/// Classifies a finished run. Divergence and convergence are threshold
/// checks; the oscillation label compares residual levels over the last two
/// 10%-of-horizon windows and requires sign alternation of the first input
/// coordinate around its late-window mean.
pub fn classify_outcome(traj: &Trajectory, config: &SimConfig) -> Outcome {
    if traj.is_empty() {
        return Outcome::HorizonExhausted;
    }
    if traj.nan_encountered || traj.max_state_norm >= config.divergence_threshold {
        return Outcome::Diverged;
    }
    if traj.final_residual <= config.convergence_tol {
        return Outcome::Converged;
    }
    let n = traj.len();
    let w = (n / 10).max(2);
    if n < 2 * w {
        return Outcome::HorizonExhausted;
    }
    let mean = |lo: usize, hi: usize| -> f64 {
        traj.residuals[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    };
    let m_prev = mean(n - 2 * w, n - w);
    let m_last = mean(n - w, n);
    let sustained = m_last > config.convergence_tol && m_last >= 0.9 * m_prev;
    if !sustained {
        return Outcome::HorizonExhausted;
    }
    // sign alternation of u[0] around its late-window mean
    let u_mean = traj.u[n - w..n].iter().map(|u| u[0]).sum::<f64>() / w as f64;
    let mut flips = 0usize;
    let mut prev_sign = 0i8;
    for u in &traj.u[n - w..n] {
        let d = u[0] - u_mean;
        let s = if d > 0.0 { 1 } else if d < 0.0 { -1 } else { 0 };
        if s != 0 {
            if prev_sign != 0 && s != prev_sign {
                flips += 1;
            }
            prev_sign = s;
        }
    }
    if flips >= 3 {
        Outcome::Oscillating
    } else {
        Outcome::HorizonExhausted
    }
}

/// Inputs for the instability-threshold bisection.
pub struct ThresholdSpec<'a> {
    pub problem: &'a Problem,
    /// Builds the control law for a candidate gain ε.
    pub make_law: &'a dyn Fn(f64) -> ControlLaw,
    pub x0: DVector<f64>,
    pub u0: DVector<f64>,
    pub aux0: DVector<f64>,
    /// Known equilibrium input, used as the reference for envelope-growth
    /// detection near the stability boundary (growth there is too slow to
    /// reach the divergence cutoff within any reasonable horizon).
    pub reference_u: Option<DVector<f64>>,
    pub config: SimConfig,
}

/// Envelope-growth classifier: a run is unstable if it diverged outright or
/// if the deviation envelope over the last 10% of the horizon exceeds the
/// envelope over the 40–50% window by more than 5%.
pub fn trajectory_is_unstable(spec: &ThresholdSpec<'_>, traj: &Trajectory) -> Result<bool, SimError> {
    match traj.outcome {
        Outcome::Diverged => return Ok(true),
        Outcome::Converged => return Ok(false),
        _ => {}
    }
    let reference_u = match &spec.reference_u {
        Some(u) => u,
        None => return Ok(false),
    };
    let x_ref = spec.problem.plant().steady_state(reference_u)?;
    let n = traj.len();
    if n < 10 {
        return Err(SimError::EmptyTrajectory);
    }
    let dev = |k: usize| -> f64 {
        libm::sqrt(
            (&traj.x[k] - &x_ref).norm_squared() + (&traj.u[k] - reference_u).norm_squared(),
        )
    };
    let window_max = |lo: usize, hi: usize| -> f64 {
        (lo..hi).map(dev).fold(0.0f64, f64::max)
    };
    let mid = window_max(4 * n / 10, n / 2);
    let late = window_max(9 * n / 10, n);
    Ok(late > 1.05 * mid && late > 10.0 * spec.config.convergence_tol)
}

/// Bisects the empirical stability boundary in ε to 0.5% relative width.
/// Requires a valid bracket: stable at `eps_lo`, unstable at `eps_hi`.
pub fn find_instability_threshold(
    spec: &ThresholdSpec<'_>,
    eps_lo: f64,
    eps_hi: f64,
) -> Result<f64, SimError> {
    if !(eps_lo > 0.0 && eps_hi > eps_lo) {
        return Err(SimError::InvalidConfig("need 0 < eps_lo < eps_hi"));
    }
    let run = |eps: f64| -> Result<(bool, Outcome), SimError> {
        let law = (spec.make_law)(eps);
        let traj = simulate_closed_loop(
            spec.problem,
            &law,
            &spec.x0,
            &spec.u0,
            &spec.aux0,
            &spec.config,
        )?;
        Ok((trajectory_is_unstable(spec, &traj)?, traj.outcome))
    };
    let (lo_unstable, lo_outcome) = run(eps_lo)?;
    let (hi_unstable, hi_outcome) = run(eps_hi)?;
    if lo_unstable || !hi_unstable {
        return Err(SimError::InvalidBracket {
            lo: lo_outcome,
            hi: hi_outcome,
        });
    }
    let mut lo = eps_lo;
    let mut hi = eps_hi;
    while (hi - lo) > 0.005 * lo {
        let mid = 0.5 * (lo + hi);
        let (unstable, _) = run(mid)?;
        if unstable {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::boxed::Box;
    use alloc::sync::Arc;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    use crate::controller::Metric;
    use crate::geometry::PolyhedralSet;
    use crate::plant::LtiPlant;
    use crate::problem::{random_instance, InstanceOptions, QuadraticObjective};

    fn scalar_plant() -> LtiPlant {
        LtiPlant::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        )
        .unwrap()
    }

    fn scalar_problem() -> Problem {
        let objective = QuadraticObjective::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        Problem::new(Box::new(objective), Arc::new(scalar_plant()))
    }

    fn gradient_law(eps: f64) -> ControlLaw {
        ControlLaw::Gradient {
            metric: Metric::ScaledIdentity(eps),
        }
    }

    #[test]
    fn scalar_gradient_run_converges() {
        let prob = scalar_problem();
        let config = SimConfig::new(0.01, 50.0);
        let traj = simulate_closed_loop(
            &prob,
            &gradient_law(1.0),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(0),
            &config,
        )
        .unwrap();
        assert_eq!(traj.outcome, Outcome::Converged);
        assert!(traj.final_u()[0].abs() <= 1e-4);
    }

    #[test]
    fn equilibrium_start_is_stationary() {
        let prob = scalar_problem();
        let u_star = DVector::zeros(1);
        let x_star = prob.plant().steady_state(&u_star).unwrap();
        let config = SimConfig::new(0.01, 1.0);
        let traj = simulate_closed_loop(
            &prob,
            &gradient_law(1.0),
            &x_star,
            &u_star,
            &DVector::zeros(0),
            &config,
        )
        .unwrap();
        for k in 0..traj.len() {
            assert!((&traj.u[k] - &u_star).norm() <= 1e-12);
            assert!((&traj.x[k] - &x_star).norm() <= 1e-12);
        }
        assert_eq!(traj.outcome, Outcome::Converged);
    }

    #[test]
    fn reduced_gradient_converges_on_random_quadratic() {
        let prob = random_instance(8, 3, 2, InstanceOptions::default())
            .unwrap()
            .into_problem()
            .unwrap();
        let u_star = prob.quadratic_minimizer().unwrap();
        let config = SimConfig::new(0.002, 200.0);
        let traj = simulate_reduced(
            &prob,
            &gradient_law(0.05),
            &DVector::zeros(3),
            &DVector::zeros(0),
            &config,
        )
        .unwrap();
        assert_eq!(traj.outcome, Outcome::Converged);
        assert!(traj.final_residual <= 1e-6);
        assert!((traj.final_u() - u_star).norm() <= 1e-4);
    }

    #[test]
    fn heavy_ball_reduced_energy_monotone() {
        let prob = random_instance(5, 2, 6, InstanceOptions::default())
            .unwrap()
            .into_problem()
            .unwrap();
        let law = ControlLaw::HeavyBall {
            metric: Metric::ScaledIdentity(0.05),
            damping: Metric::ScaledIdentity(0.5),
        };
        let config = SimConfig::new(0.005, 100.0);
        let traj = simulate_reduced(
            &prob,
            &law,
            &DVector::from_column_slice(&[1.0, -1.0]),
            &DVector::zeros(2),
            &config,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..traj.len() {
            let v = prob.reduced_objective(&traj.u[k]).unwrap() + 0.5 * traj.aux[k].norm_squared();
            assert!(v <= prev + 10.0 * config.dt * (1.0 + v.abs()));
            prev = v;
        }
    }

    fn l1_problem() -> Problem {
        let objective = QuadraticObjective::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap()
        .with_l1_weight(1.0);
        Problem::new(Box::new(objective), Arc::new(scalar_plant()))
    }

    #[test]
    fn subgradient_reduced_converges_closed_loop_oscillates() {
        let prob = l1_problem();
        let law = ControlLaw::Subgradient { tie_rule: 0.0 };
        let mut reduced_config = SimConfig::new(1e-4, 10.0);
        reduced_config.record_stride = 10;
        let reduced = simulate_reduced(
            &prob,
            &law,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(0),
            &reduced_config,
        )
        .unwrap();
        assert_eq!(reduced.outcome, Outcome::Converged);
        assert!(reduced.final_u()[0].abs() <= 1e-3);

        let mut closed_config = SimConfig::new(1e-3, 100.0);
        closed_config.record_stride = 10;
        let closed = simulate_closed_loop(
            &prob,
            &law,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(0),
            &closed_config,
        )
        .unwrap();
        assert_eq!(closed.outcome, Outcome::Oscillating);
    }

    #[test]
    fn accelerated_closed_loop_fails_on_scalar_plant() {
        // plant ẋ = −x + u with Φ = x²; the decaying damping eventually
        // destabilizes the interconnection
        let objective = QuadraticObjective::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let prob = Problem::new(Box::new(objective), Arc::new(scalar_plant()));
        let law = ControlLaw::Accelerated { r: 3.0 };
        let mut config = SimConfig::new(0.01, 200.0);
        config.record_stride = 5;
        let closed = simulate_closed_loop(
            &prob,
            &law,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            &config,
        )
        .unwrap();
        assert!(
            matches!(closed.outcome, Outcome::Oscillating | Outcome::Diverged),
            "outcome {:?}",
            closed.outcome
        );
        // while the reduced flow settles
        let mut reduced_config = SimConfig::new(0.01, 200.0);
        reduced_config.convergence_tol = 1e-3;
        reduced_config.record_stride = 5;
        let reduced = simulate_reduced(
            &prob,
            &law,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            &reduced_config,
        )
        .unwrap();
        assert_eq!(reduced.outcome, Outcome::Converged);
    }

    #[test]
    fn rk4_order_check() {
        let prob = scalar_problem();
        let law = gradient_law(1.0);
        let x0 = DVector::from_element(1, 1.0);
        let u0 = DVector::from_element(1, 1.0);
        let run = |dt: f64| -> f64 {
            let mut config = SimConfig::new(dt, 5.0);
            config.convergence_tol = 1e-300; // never stop early
            let traj =
                simulate_closed_loop(&prob, &law, &x0, &u0, &DVector::zeros(0), &config).unwrap();
            traj.final_u()[0]
        };
        let reference = run(0.0125);
        let e1 = (run(0.1) - reference).abs();
        let e2 = (run(0.05) - reference).abs();
        assert!(e1 / e2 >= 8.0, "error ratio {}", e1 / e2);
    }

    #[test]
    fn projected_run_stays_feasible() {
        // cost pushes u toward -1; the trajectory must stop at the bound
        let objective = QuadraticObjective::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let set = PolyhedralSet::from_box(DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        let prob = Problem::new(Box::new(objective), Arc::new(scalar_plant()))
            .with_input_set(set)
            .unwrap();
        let law = ControlLaw::ProjectedGradient { eps: 0.5 };
        let config = SimConfig::new(0.001, 20.0);
        let traj = simulate_closed_loop(
            &prob,
            &law,
            &DVector::from_element(1, 0.5),
            &DVector::from_element(1, 0.5),
            &DVector::zeros(0),
            &config,
        )
        .unwrap();
        let set_ref = prob.input_set().unwrap();
        for u in &traj.u {
            assert!(set_ref.violation(u) <= 1e-8);
        }
        // converges to the projected KKT point u = 0
        assert_eq!(traj.outcome, Outcome::Converged);
        assert!(traj.final_u()[0].abs() <= 1e-3);
    }

    /// Scalar instance with a finite stability boundary: Φ = ½x² + cxu + ½du²
    /// with c = −0.5, d = 0.25 gives the closed-loop matrix
    /// [[−1, 1], [−ε(1+c), −ε(c+d)]] whose trace crosses zero at ε = 4.
    fn hopf_scalar_problem() -> Problem {
        let objective = QuadraticObjective::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -0.5),
            DMatrix::from_element(1, 1, 0.25),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        Problem::new(Box::new(objective), Arc::new(scalar_plant()))
    }

    #[test]
    fn threshold_matches_analytic_hopf_boundary() {
        let prob = hopf_scalar_problem();
        let make_law = |eps: f64| gradient_law(eps);
        let mut config = SimConfig::new(0.02, 200.0);
        config.record_stride = 5;
        let spec = ThresholdSpec {
            problem: &prob,
            make_law: &make_law,
            x0: DVector::from_element(1, 1.0),
            u0: DVector::from_element(1, 1.0),
            aux0: DVector::zeros(0),
            reference_u: Some(DVector::zeros(1)),
            config,
        };
        let eps_crit = find_instability_threshold(&spec, 1.0, 16.0).unwrap();
        assert_relative_eq!(eps_crit, 4.0, max_relative = 0.02);
    }

    #[test]
    fn threshold_rejects_bad_bracket() {
        let prob = hopf_scalar_problem();
        let make_law = |eps: f64| gradient_law(eps);
        let spec = ThresholdSpec {
            problem: &prob,
            make_law: &make_law,
            x0: DVector::from_element(1, 1.0),
            u0: DVector::from_element(1, 1.0),
            aux0: DVector::zeros(0),
            reference_u: Some(DVector::zeros(1)),
            config: SimConfig::new(0.02, 100.0),
        };
        assert!(matches!(
            find_instability_threshold(&spec, 0.5, 2.0),
            Err(SimError::InvalidBracket { .. })
        ));
    }

    #[test]
    fn simulation_is_deterministic() {
        let prob = random_instance(6, 2, 12, InstanceOptions::default())
            .unwrap()
            .into_problem()
            .unwrap();
        let config = SimConfig::new(0.01, 5.0);
        let run = || {
            simulate_closed_loop(
                &prob,
                &gradient_law(0.01),
                &DVector::zeros(6),
                &DVector::zeros(2),
                &DVector::zeros(0),
                &config,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.times, b.times);
        assert_eq!(a.u, b.u);
        assert_eq!(a.x, b.x);
        assert_eq!(a.residuals, b.residuals);
    }

    #[test]
    fn diverging_run_is_labelled() {
        let prob = hopf_scalar_problem();
        let mut config = SimConfig::new(0.02, 200.0);
        config.divergence_threshold = 1e4;
        let traj = simulate_closed_loop(
            &prob,
            &gradient_law(100.0),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(0),
            &config,
        )
        .unwrap();
        assert_eq!(traj.outcome, Outcome::Diverged);
    }
}

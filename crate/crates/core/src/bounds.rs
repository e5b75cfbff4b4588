//! Stability bounds as pure formulas, the 2×2 negative-definiteness test
//! with its optimal combination weight, mixed Lipschitz-constant estimation,
//! and numerical evaluation of LaSalle certificates along trajectories.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg;
use crate::plant::{lyapunov_eval, LyapunovCertificate, PlantError};
use crate::problem::{Problem, ProblemError};
use crate::sim::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub enum BoundsError {
    MissingField(&'static str),
    NonPositive(&'static str),
    AnalyticModeNeedsQuadratic,
    Problem(ProblemError),
    Plant(PlantError),
    TrajectoryTooShort,
}

impl From<ProblemError> for BoundsError {
    fn from(e: ProblemError) -> Self {
        BoundsError::Problem(e)
    }
}

impl From<PlantError> for BoundsError {
    fn from(e: PlantError) -> Self {
        BoundsError::Plant(e)
    }
}

impl core::fmt::Display for BoundsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BoundsError::MissingField(name) => write!(f, "missing bound input: {name}"),
            BoundsError::NonPositive(name) => write!(f, "bound input must be positive: {name}"),
            BoundsError::AnalyticModeNeedsQuadratic => {
                write!(f, "analytic L estimation needs a quadratic objective")
            }
            BoundsError::Problem(e) => write!(f, "{e}"),
            BoundsError::Plant(e) => write!(f, "{e}"),
            BoundsError::TrajectoryTooShort => {
                write!(f, "trajectory too short for certificate evaluation")
            }
        }
    }
}

/// Constants consumed by the bound formulas. `gamma`, `zeta` come from the
/// plant certificate, `l` is the mixed Lipschitz constant; the optional
/// fields feed the family-specific bounds.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundInputs {
    pub gamma: f64,
    pub zeta: f64,
    pub l: f64,
    /// Strong-convexity / strong-monotonicity modulus μ.
    pub mu: Option<f64>,
    /// sup over u of λ_max(Q(u)).
    pub kappa_q: Option<f64>,
    /// inf over u of λ_min(D(u)).
    pub lambda_d: Option<f64>,
    /// Lyapunov gradient bound κ of the general algorithm class.
    pub kappa_v: Option<f64>,
    /// Lipschitz constant ℓ of the reduced gradient field.
    pub ell: Option<f64>,
}

impl BoundInputs {
    fn check_core(&self) -> Result<(), BoundsError> {
        if !(self.gamma > 0.0) {
            return Err(BoundsError::NonPositive("gamma"));
        }
        if !(self.zeta > 0.0) {
            return Err(BoundsError::NonPositive("zeta"));
        }
        if self.l < 0.0 {
            return Err(BoundsError::NonPositive("L"));
        }
        Ok(())
    }

    fn need(v: Option<f64>, name: &'static str) -> Result<f64, BoundsError> {
        let v = v.ok_or(BoundsError::MissingField(name))?;
        if !(v > 0.0) {
            return Err(BoundsError::NonPositive(name));
        }
        Ok(v)
    }
}

/// How the mixed Lipschitz constant is obtained.
#[derive(Debug, Clone, Copy)]
pub enum LMode {
    /// Exact operator norm for a quadratic objective with an affine
    /// steady-state map.
    AnalyticQuadratic,
    /// Empirical supremum over random (x, x′, u) triples, inflated by 1.1
    /// because a finite sample under-estimates a supremum.
    Sampled { samples: usize, seed: u64, radius: f64 },
}

/// Smallest L with ‖H(u)ᵀ(∇Φ(x′,u) − ∇Φ(x,u))‖ ≤ L‖x′ − x‖.
pub fn estimate_l(problem: &Problem, mode: LMode) -> Result<f64, BoundsError> {
    match mode {
        LMode::AnalyticQuadratic => {
            let (pxx, pxu, _) = problem
                .objective()
                .hessian_blocks()
                .ok_or(BoundsError::AnalyticModeNeedsQuadratic)?;
            let h = problem
                .plant()
                .steady_state_jacobian(&DVector::zeros(problem.input_dim()))
                .map_err(ProblemError::from)?;
            Ok(linalg::operator_norm(&(h.transpose() * pxx + pxu.transpose())))
        }
        LMode::Sampled { samples, seed, radius } => {
            Ok(sampled_l_ratio(problem, samples, seed, radius)? * 1.1)
        }
    }
}

/// Raw sampled supremum of the Assumption-2 ratio (no inflation).
pub fn sampled_l_ratio(
    problem: &Problem,
    samples: usize,
    seed: u64,
    radius: f64,
) -> Result<f64, BoundsError> {
    let n = problem.state_dim();
    let p = problem.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let u = DVector::from_fn(p, |_, _| rng.random_range(-radius..radius));
        let x = DVector::from_fn(n, |_, _| rng.random_range(-radius..radius));
        let xp = DVector::from_fn(n, |_, _| rng.random_range(-radius..radius));
        let dx = (&xp - &x).norm();
        if dx < 1e-12 {
            continue;
        }
        let g = problem.sensitivity_gradient(&x, &u)?;
        let gp = problem.sensitivity_gradient(&xp, &u)?;
        best = best.max((gp - g).norm() / dx);
    }
    Ok(best)
}

/// Critical gain of the variable-metric gradient flow: ε* = γ/(ζL).
/// Returns +∞ when L = 0 (the gradient is insensitive to the plant state,
/// so any gain is admissible).
pub fn gradient_bound(inputs: &BoundInputs) -> Result<f64, BoundsError> {
    inputs.check_core()?;
    if inputs.l == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(inputs.gamma / (inputs.zeta * inputs.l))
}

/// Critical gain of the Newton flow: γμ/(ζL).
pub fn newton_bound(inputs: &BoundInputs) -> Result<f64, BoundsError> {
    inputs.check_core()?;
    let mu = BoundInputs::need(inputs.mu, "mu")?;
    if inputs.l == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(inputs.gamma * mu / (inputs.zeta * inputs.l))
}

/// Heavy-ball admissibility: (sup λ_max Q)² / inf λ_min D < γ/(ζL).
/// Returns (holds, margin) with margin = γ/(ζL) − κ_Q²/λ_D.
pub fn momentum_bound_holds(inputs: &BoundInputs) -> Result<(bool, f64), BoundsError> {
    inputs.check_core()?;
    let kappa_q = BoundInputs::need(inputs.kappa_q, "kappa_q")?;
    let lambda_d = BoundInputs::need(inputs.lambda_d, "lambda_d")?;
    let rhs = if inputs.l == 0.0 {
        f64::INFINITY
    } else {
        inputs.gamma / (inputs.zeta * inputs.l)
    };
    let margin = rhs - kappa_q * kappa_q / lambda_d;
    Ok((margin > 0.0, margin))
}

/// Critical gain for the general algorithm class: γ/(ζL(1 + κℓ/μ)).
pub fn general_bound(inputs: &BoundInputs) -> Result<f64, BoundsError> {
    inputs.check_core()?;
    let mu = BoundInputs::need(inputs.mu, "mu")?;
    let kappa_v = BoundInputs::need(inputs.kappa_v, "kappa_v")?;
    let ell = BoundInputs::need(inputs.ell, "ell")?;
    if inputs.l == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(inputs.gamma / (inputs.zeta * inputs.l * (1.0 + kappa_v * ell / mu)))
}

/// Quadratic-certificate gain bound. Returns the primary value
/// 2τλ_min(P)/(L‖PH‖) and the weaker condition-number form 2τ/(κ(P)L‖H‖).
pub fn lti_bound(
    p: &DMatrix<f64>,
    tau: f64,
    h: &DMatrix<f64>,
    l: f64,
) -> Result<(f64, f64), BoundsError> {
    let (pmin, pmax) = linalg::symmetric_eigen_range(p);
    if pmin <= 0.0 {
        return Err(BoundsError::NonPositive("P (must be positive definite)"));
    }
    if tau <= 0.0 {
        return Err(BoundsError::NonPositive("tau"));
    }
    if l < 0.0 {
        return Err(BoundsError::NonPositive("L"));
    }
    if l == 0.0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let primary = 2.0 * tau * pmin / (l * linalg::operator_norm(&(p * h)));
    let cond = 2.0 * tau / ((pmax / pmin) * l * linalg::operator_norm(h));
    Ok((primary, cond))
}

/// Builds Λ = [[−(1−δ)α₁, ½((1−δ)β₁+δβ₂)], [sym, −δ(α₂−ξ)]] and decides
/// negative definiteness by leading principal minors.
pub fn lambda_matrix(
    alpha1: f64,
    alpha2: f64,
    xi: f64,
    beta1: f64,
    beta2: f64,
    delta: f64,
) -> (DMatrix<f64>, bool) {
    let off = 0.5 * ((1.0 - delta) * beta1 + delta * beta2);
    let m = DMatrix::from_row_slice(
        2,
        2,
        &[
            -(1.0 - delta) * alpha1,
            off,
            off,
            -delta * (alpha2 - xi),
        ],
    );
    let negdef = m[(0, 0)] < 0.0 && (m[(0, 0)] * m[(1, 1)] - off * off) > 0.0;
    (m, negdef)
}

/// Optimal combination weight δ = β₁/(β₁+β₂) for the 2×2 test.
pub fn optimal_delta(beta1: f64, beta2: f64) -> Result<f64, BoundsError> {
    if beta1 < 0.0 || beta2 < 0.0 {
        return Err(BoundsError::NonPositive("beta"));
    }
    if beta1 + beta2 == 0.0 {
        return Err(BoundsError::NonPositive("beta1 + beta2"));
    }
    Ok(beta1 / (beta1 + beta2))
}

/// Which LaSalle function to assemble along a trajectory.
#[derive(Debug, Clone)]
pub enum LaSalleFamily {
    /// Ψ = (1−δ)Φ̃(u) + δW(x,u).
    Gradient,
    /// Ψ = (1−δ)(Φ̃(u) + ½‖z‖²) + δW(x,u).
    HeavyBall,
    /// Ψ = (1−δ)‖u − u*‖² + δW(x,u) for a strongly monotone reduced field
    /// with known equilibrium u*.
    General { u_star: DVector<f64> },
}

/// Numerical slack for comparing Ψ̇ samples against zero: central
/// differencing of an RK4 trajectory carries O(dt²) error amplified by the
/// field magnitude.
pub fn psi_dot_slack(dt: f64, psi: f64) -> f64 {
    10.0 * dt * psi.abs().max(1.0)
}

/// Ψ and a central-difference Ψ̇ per trajectory sample (one-sided at the
/// endpoints). Needs the explicit quadratic plant Lyapunov function.
pub fn lasalle_eval(
    problem: &Problem,
    cert: &LyapunovCertificate,
    delta: f64,
    family: &LaSalleFamily,
    trajectory: &Trajectory,
) -> Result<Vec<(f64, f64)>, BoundsError> {
    let n = trajectory.len();
    if n < 3 {
        return Err(BoundsError::TrajectoryTooShort);
    }
    let mut psi = Vec::with_capacity(n);
    for k in 0..n {
        let (w, _, _) = lyapunov_eval(cert, problem.plant(), &trajectory.x[k], &trajectory.u[k])?;
        let v = match family {
            LaSalleFamily::Gradient => problem.reduced_objective(&trajectory.u[k])?,
            LaSalleFamily::HeavyBall => {
                problem.reduced_objective(&trajectory.u[k])?
                    + 0.5 * trajectory.aux[k].norm_squared()
            }
            LaSalleFamily::General { u_star } => (&trajectory.u[k] - u_star).norm_squared(),
        };
        psi.push((1.0 - delta) * v + delta * w);
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (lo, hi) = if k == 0 {
            (0, 1)
        } else if k == n - 1 {
            (n - 2, n - 1)
        } else {
            (k - 1, k + 1)
        };
        let dot = (psi[hi] - psi[lo]) / (trajectory.times[hi] - trajectory.times[lo]);
        out.push((psi[k], dot));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::boxed::Box;
    use alloc::sync::Arc;
    use approx::assert_relative_eq;

    use crate::controller::{ControlLaw, Metric};
    use crate::plant::{lti_certificate, solve_lti_lyapunov, LtiPlant};
    use crate::problem::{random_instance, InstanceOptions, QuadraticObjective};
    use crate::sim::{simulate_closed_loop, SimConfig};

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

    #[test]
    fn analytic_l_scalar_and_degenerate() {
        let prob = scalar_problem();
        assert_relative_eq!(
            estimate_l(&prob, LMode::AnalyticQuadratic).unwrap(),
            1.0,
            epsilon = 1e-14
        );

        // cost independent of x: L = 0
        let objective = QuadraticObjective::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let prob0 = Problem::new(Box::new(objective), Arc::new(scalar_plant()));
        assert_eq!(estimate_l(&prob0, LMode::AnalyticQuadratic).unwrap(), 0.0);
    }

    #[test]
    fn analytic_l_dominates_sampled_ratio() {
        let prob = random_instance(8, 3, 19, InstanceOptions::default())
            .unwrap()
            .into_problem()
            .unwrap();
        let analytic = estimate_l(&prob, LMode::AnalyticQuadratic).unwrap();
        let raw = sampled_l_ratio(&prob, 10_000, 5, 3.0).unwrap();
        assert!(analytic >= raw - 1e-9, "analytic {analytic} < sampled {raw}");
        // the sample comes close for a quadratic cost
        assert!(raw >= 0.5 * analytic);
    }

    fn inputs(gamma: f64, zeta: f64, l: f64) -> BoundInputs {
        BoundInputs {
            gamma,
            zeta,
            l,
            ..Default::default()
        }
    }

    #[test]
    fn gradient_bound_examples() {
        assert_relative_eq!(gradient_bound(&inputs(1.0, 1.0, 1.0)).unwrap(), 1.0);
        assert_relative_eq!(gradient_bound(&inputs(2.0, 4.0, 0.5)).unwrap(), 1.0);
        // scaling the cost by c scales L by c and the bound by 1/c
        let c = 3.7;
        assert_relative_eq!(
            gradient_bound(&inputs(1.0, 1.0, c)).unwrap(),
            gradient_bound(&inputs(1.0, 1.0, 1.0)).unwrap() / c,
            epsilon = 1e-14
        );
        assert!(gradient_bound(&inputs(1.0, 1.0, 0.0)).unwrap().is_infinite());
    }

    #[test]
    fn newton_bound_examples() {
        let mut i = inputs(1.0, 1.0, 1.0);
        i.mu = Some(2.0);
        assert_relative_eq!(newton_bound(&i).unwrap(), 2.0);
        // uniform cost scaling moves L and mu together: bound invariant
        let c = 5.0;
        let mut scaled = inputs(1.0, 1.0, c);
        scaled.mu = Some(2.0 * c);
        assert_relative_eq!(newton_bound(&scaled).unwrap(), 2.0, epsilon = 1e-14);
        // mu = 1 reduces to the gradient bound
        let mut unit = inputs(1.3, 0.7, 2.0);
        unit.mu = Some(1.0);
        assert_relative_eq!(
            newton_bound(&unit).unwrap(),
            gradient_bound(&unit).unwrap(),
            epsilon = 1e-14
        );
        assert!(matches!(
            newton_bound(&inputs(1.0, 1.0, 1.0)),
            Err(BoundsError::MissingField("mu"))
        ));
    }

    #[test]
    fn momentum_predicate_examples() {
        let mut i = inputs(1.0, 1.0, 1.0); // gamma/(zeta L) = 1
        i.kappa_q = Some(1.0);
        i.lambda_d = Some(2.0);
        let (holds, margin) = momentum_bound_holds(&i).unwrap();
        assert!(holds);
        assert_relative_eq!(margin, 0.5);

        i.kappa_q = Some(2.0);
        i.lambda_d = Some(1.0);
        let (holds, margin) = momentum_bound_holds(&i).unwrap();
        assert!(!holds);
        assert_relative_eq!(margin, -3.0);

        // boundary is excluded (strict inequality)
        i.kappa_q = Some(1.0);
        i.lambda_d = Some(1.0);
        let (holds, margin) = momentum_bound_holds(&i).unwrap();
        assert!(!holds);
        assert_relative_eq!(margin, 0.0);
    }

    #[test]
    fn general_bound_examples() {
        let mut i = inputs(1.0, 1.0, 1.0);
        i.mu = Some(0.8);
        i.ell = Some(0.8);
        i.kappa_v = Some(1.0);
        // kappa = 1, ell = mu: exactly half the gradient bound
        assert_relative_eq!(
            general_bound(&i).unwrap(),
            gradient_bound(&i).unwrap() / 2.0,
            epsilon = 1e-14
        );
        // kappa*ell/mu -> 0 recovers the gradient bound
        i.kappa_v = Some(1e-14);
        assert_relative_eq!(
            general_bound(&i).unwrap(),
            gradient_bound(&i).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn general_bound_at_most_half_gradient_when_ell_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let mut i = inputs(
                rng.random_range(0.1..5.0),
                rng.random_range(0.1..5.0),
                rng.random_range(0.1..5.0),
            );
            let mu = rng.random_range(0.1..2.0);
            i.mu = Some(mu);
            i.ell = Some(mu * rng.random_range(1.0..10.0));
            i.kappa_v = Some(1.0);
            assert!(general_bound(&i).unwrap() <= gradient_bound(&i).unwrap() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn lti_bound_scalar_consistency_and_invariance() {
        let plant = scalar_plant();
        let (p, tau) = solve_lti_lyapunov(plant.a(), 0.5).unwrap();
        let (primary, cond) = lti_bound(&p, tau, plant.steady_state_gain(), 1.0).unwrap();
        assert_relative_eq!(primary, 1.0, epsilon = 1e-12);
        assert!(cond <= primary + 1e-12);

        // the gradient-bound route through the certificate agrees
        let cert = lti_certificate(&plant, &p, tau).unwrap();
        let via_gradient = gradient_bound(&inputs(cert.gamma, cert.zeta, 1.0)).unwrap();
        assert_relative_eq!(primary, via_gradient, epsilon = 1e-12);

        // scaling P leaves the bound unchanged
        let (scaled, _) = lti_bound(&(&p * 9.0), tau, plant.steady_state_gain(), 1.0).unwrap();
        assert_relative_eq!(scaled, primary, epsilon = 1e-12);
    }

    #[test]
    fn lti_condition_number_form_is_weaker() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let n = rng.random_range(1..6usize);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let p = &m * m.transpose() + DMatrix::identity(n, n) * 0.2;
            let h = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let (primary, cond) = lti_bound(&p, 0.7, &h, 1.3).unwrap();
            assert!(cond <= primary + 1e-12);
        }
    }

    #[test]
    fn lambda_matrix_symmetric_example() {
        let (m, negdef) = lambda_matrix(2.0, 2.0, 0.0, 1.0, 1.0, 0.5);
        assert_relative_eq!(m[(0, 0)], -1.0);
        assert_relative_eq!(m[(0, 1)], 0.5);
        assert!(negdef);
        let ev = m.symmetric_eigenvalues();
        let mut evs = [ev[0], ev[1]];
        evs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(evs[0], -1.5, epsilon = 1e-12);
        assert_relative_eq!(evs[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn lambda_matrix_boundary_and_degenerate_delta() {
        // ratio exactly 1: alpha1*alpha2 = alpha1*xi + beta1*beta2
        let (alpha1, xi, beta1, beta2) = (2.0, 0.5, 1.0, 3.0);
        let alpha2 = (alpha1 * xi + beta1 * beta2) / alpha1;
        let delta = optimal_delta(beta1, beta2).unwrap();
        let (m, negdef) = lambda_matrix(alpha1, alpha2, xi, beta1, beta2, delta);
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        assert_relative_eq!(det, 0.0, epsilon = 1e-12);
        assert!(!negdef);

        // delta at the ends kills a diagonal entry
        let (_, nd0) = lambda_matrix(1.0, 1.0, 0.0, 1.0, 1.0, 0.0);
        let (_, nd1) = lambda_matrix(1.0, 1.0, 0.0, 1.0, 1.0, 1.0);
        assert!(!nd0 && !nd1);
    }

    #[test]
    fn optimal_delta_examples() {
        assert_relative_eq!(optimal_delta(1.0, 1.0).unwrap(), 0.5);
        // kappa cancels in (kappa L, kappa zeta)
        let (kappa, l, zeta) = (3.0, 0.8, 1.7);
        assert_relative_eq!(
            optimal_delta(kappa * l, kappa * zeta).unwrap(),
            l / (l + zeta),
            epsilon = 1e-14
        );
        assert_relative_eq!(optimal_delta(1.0, 0.0).unwrap(), 1.0);
        assert!(optimal_delta(0.0, 0.0).is_err());
    }

    #[test]
    fn lambda_matrix_matches_ratio_test_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut seen_true = 0;
        let mut seen_false = 0;
        for _ in 0..1000 {
            let alpha1 = rng.random_range(0.05..5.0);
            let alpha2 = rng.random_range(0.05..5.0);
            let beta1 = rng.random_range(0.05..5.0);
            let beta2 = rng.random_range(0.05..5.0);
            let xi = rng.random_range(0.0..3.0);
            let ratio: f64 = alpha1 * alpha2 / (alpha1 * xi + beta1 * beta2);
            if (ratio - 1.0).abs() < 1e-9 {
                continue;
            }
            let delta = optimal_delta(beta1, beta2).unwrap();
            let (_, negdef) = lambda_matrix(alpha1, alpha2, xi, beta1, beta2, delta);
            assert_eq!(negdef, ratio > 1.0, "ratio {ratio}");
            if negdef {
                seen_true += 1;
            } else {
                seen_false += 1;
            }
        }
        assert!(seen_true > 100 && seen_false > 100);
    }

    #[test]
    fn lasalle_constant_at_equilibrium() {
        let prob = scalar_problem();
        let plant = scalar_plant();
        let (p, tau) = solve_lti_lyapunov(plant.a(), 0.5).unwrap();
        let cert = lti_certificate(&plant, &p, tau).unwrap();
        // a stationary trajectory at the equilibrium (a live run would stop
        // after one step, leaving too few samples to difference)
        let n = 50;
        let traj = Trajectory {
            times: (0..n).map(|k| k as f64 * 0.01).collect(),
            x: (0..n).map(|_| DVector::zeros(1)).collect(),
            u: (0..n).map(|_| DVector::zeros(1)).collect(),
            aux: (0..n).map(|_| DVector::zeros(0)).collect(),
            residuals: (0..n).map(|_| 0.0).collect(),
            outcome: crate::sim::Outcome::Converged,
            final_residual: 0.0,
            max_state_norm: 0.0,
            nan_encountered: false,
            eps_used: 0.5,
        };
        let series = lasalle_eval(&prob, &cert, 0.5, &LaSalleFamily::Gradient, &traj).unwrap();
        for (psi, dot) in &series {
            assert!(psi.abs() <= 1e-12);
            assert!(dot.abs() <= 1e-12);
        }
    }

    #[test]
    fn lasalle_descends_under_admissible_gain() {
        let prob = scalar_problem();
        let plant = scalar_plant();
        let (p, tau) = solve_lti_lyapunov(plant.a(), 0.5).unwrap();
        let cert = lti_certificate(&plant, &p, tau).unwrap();
        let eps = 0.5; // half of eps* = 1
        let law = ControlLaw::Gradient {
            metric: Metric::ScaledIdentity(eps),
        };
        let mut config = SimConfig::new(0.01, 30.0);
        config.convergence_tol = 1e-300;
        let traj = simulate_closed_loop(
            &prob,
            &law,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(0),
            &config,
        )
        .unwrap();
        let delta = optimal_delta(eps * 1.0, eps * 1.0).unwrap(); // (kappa L, kappa zeta)
        let series = lasalle_eval(&prob, &cert, delta, &LaSalleFamily::Gradient, &traj).unwrap();
        for (k, (psi, dot)) in series.iter().enumerate().skip(1).take(series.len() - 2) {
            assert!(
                *dot <= psi_dot_slack(config.dt, *psi),
                "sample {k}: psi_dot {dot}"
            );
        }
    }

    #[test]
    fn lasalle_detects_unstable_run() {
        // gradient law on an instance with a finite stability boundary,
        // driven far past it
        let objective = QuadraticObjective::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -0.5),
            DMatrix::from_element(1, 1, 0.25),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let prob = Problem::new(Box::new(objective), Arc::new(scalar_plant()));
        let plant = scalar_plant();
        let (p, tau) = solve_lti_lyapunov(plant.a(), 0.5).unwrap();
        let cert = lti_certificate(&plant, &p, tau).unwrap();
        let law = ControlLaw::Gradient {
            metric: Metric::ScaledIdentity(8.0),
        };
        let mut config = SimConfig::new(0.01, 30.0);
        config.divergence_threshold = 1e8;
        let traj = simulate_closed_loop(
            &prob,
            &law,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(0),
            &config,
        )
        .unwrap();
        let series = lasalle_eval(&prob, &cert, 0.5, &LaSalleFamily::Gradient, &traj).unwrap();
        let violations = series
            .iter()
            .skip(1)
            .take(series.len().saturating_sub(2))
            .filter(|(psi, dot)| *dot > psi_dot_slack(config.dt, *psi))
            .count();
        assert!(violations > 0);
    }
}

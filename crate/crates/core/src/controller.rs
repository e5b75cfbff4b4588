//! Controller vector fields: variable-metric gradient, Newton, projected
//! gradient, heavy ball, augmented saddle point, and the two non-examples
//! (subgradient and accelerated gradient), plus the affine output-feedback
//! variant.
//!
//! All laws are pure functions of the instantaneous state (and, for the
//! accelerated flow, of time); the simulator composes them with a plant.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{GeometryError, DEFAULT_ACTIVITY_TOL};
use crate::linalg;
use crate::plant::Plant;
use crate::problem::{Objective, Problem, ProblemError};

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerError {
    MetricNotPositiveDefinite { min_eigenvalue: f64 },
    StrongConvexityViolated { min_eigenvalue: f64, mu: f64 },
    DampingNotPositiveDefinite { min_eigenvalue: f64 },
    MissingOutputConstraint,
    MissingInputSet,
    InvalidParameter(&'static str),
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    Problem(ProblemError),
    Geometry(GeometryError),
}

impl From<ProblemError> for ControllerError {
    fn from(e: ProblemError) -> Self {
        ControllerError::Problem(e)
    }
}

impl From<GeometryError> for ControllerError {
    fn from(e: GeometryError) -> Self {
        ControllerError::Geometry(e)
    }
}

impl core::fmt::Display for ControllerError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ControllerError::MetricNotPositiveDefinite { min_eigenvalue } => {
                write!(f, "metric not positive definite (lambda_min {min_eigenvalue:.3e})")
            }
            ControllerError::StrongConvexityViolated { min_eigenvalue, mu } => write!(
                f,
                "reduced Hessian lambda_min {min_eigenvalue:.3e} below stated modulus {mu:.3e}"
            ),
            ControllerError::DampingNotPositiveDefinite { min_eigenvalue } => {
                write!(f, "damping not positive definite (lambda_min {min_eigenvalue:.3e})")
            }
            ControllerError::MissingOutputConstraint => {
                write!(f, "saddle-point law needs an output constraint (A, b)")
            }
            ControllerError::MissingInputSet => {
                write!(f, "projected law needs an input constraint set")
            }
            ControllerError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            ControllerError::DimensionMismatch { context, expected, got } => {
                write!(f, "{context}: expected dimension {expected}, got {got}")
            }
            ControllerError::Problem(e) => write!(f, "{e}"),
            ControllerError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

/// Variable metric Q(u) of the optimization dynamics.
#[derive(Debug, Clone)]
pub enum Metric {
    /// Q ≡ ε I.
    ScaledIdentity(f64),
    /// A fixed symmetric positive definite matrix.
    Constant(DMatrix<f64>),
    /// ε (∇²Φ̃(u))⁻¹ with stated strong-convexity modulus μ.
    Newton { eps: f64, mu: f64 },
}

const METRIC_EIG_TOL: f64 = 1e-9;

impl Metric {
    /// Evaluates Q(u) and checks positive definiteness.
    pub fn evaluate(&self, problem: &Problem, u: &DVector<f64>) -> Result<DMatrix<f64>, ControllerError> {
        let p = problem.input_dim();
        match self {
            Metric::ScaledIdentity(eps) => {
                if *eps <= 0.0 {
                    return Err(ControllerError::MetricNotPositiveDefinite {
                        min_eigenvalue: *eps,
                    });
                }
                Ok(DMatrix::identity(p, p) * *eps)
            }
            Metric::Constant(q) => {
                if q.nrows() != p || q.ncols() != p {
                    return Err(ControllerError::DimensionMismatch {
                        context: "constant metric",
                        expected: p,
                        got: q.nrows(),
                    });
                }
                let min = linalg::min_symmetric_eigenvalue(q);
                if min <= 0.0 {
                    return Err(ControllerError::MetricNotPositiveDefinite {
                        min_eigenvalue: min,
                    });
                }
                Ok(q.clone())
            }
            Metric::Newton { eps, mu } => newton_metric_checked(problem, *eps, *mu, u),
        }
    }

    /// Applies Q(u) to a vector without forming the Newton inverse.
    pub fn apply(
        &self,
        problem: &Problem,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, ControllerError> {
        match self {
            Metric::ScaledIdentity(eps) => {
                if *eps <= 0.0 {
                    return Err(ControllerError::MetricNotPositiveDefinite {
                        min_eigenvalue: *eps,
                    });
                }
                Ok(v * *eps)
            }
            Metric::Constant(_) => {
                let q = self.evaluate(problem, u)?;
                Ok(q * v)
            }
            Metric::Newton { eps, mu } => {
                let hess = checked_reduced_hessian(problem, *mu, u)?;
                let sol = hess
                    .lu()
                    .solve(v)
                    .ok_or(ControllerError::MetricNotPositiveDefinite {
                        min_eigenvalue: 0.0,
                    })?;
                Ok(sol * *eps)
            }
        }
    }
}

fn checked_reduced_hessian(
    problem: &Problem,
    mu: f64,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>, ControllerError> {
    if mu <= 0.0 {
        return Err(ControllerError::InvalidParameter(
            "strong-convexity modulus mu must be positive",
        ));
    }
    let hess = problem.reduced_hessian(u)?;
    let min = linalg::min_symmetric_eigenvalue(&hess);
    if min < mu - METRIC_EIG_TOL {
        return Err(ControllerError::StrongConvexityViolated {
            min_eigenvalue: min,
            mu,
        });
    }
    Ok(hess)
}

fn newton_metric_checked(
    problem: &Problem,
    eps: f64,
    mu: f64,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>, ControllerError> {
    if eps <= 0.0 {
        return Err(ControllerError::InvalidParameter("eps must be positive"));
    }
    let hess = checked_reduced_hessian(problem, mu, u)?;
    let p = hess.nrows();
    let inv = hess
        .lu()
        .solve(&DMatrix::identity(p, p))
        .ok_or(ControllerError::MetricNotPositiveDefinite {
            min_eigenvalue: 0.0,
        })?;
    Ok(inv * eps)
}

/// ε (∇²Φ̃(u))⁻¹, computed through a linear solve.
pub fn newton_metric(
    problem: &Problem,
    eps: f64,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>, ControllerError> {
    let hess = problem.reduced_hessian(u)?;
    let min = linalg::min_symmetric_eigenvalue(&hess);
    if min <= 0.0 {
        return Err(ControllerError::MetricNotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    if eps <= 0.0 {
        return Err(ControllerError::InvalidParameter("eps must be positive"));
    }
    let p = hess.nrows();
    let inv = hess
        .lu()
        .solve(&DMatrix::identity(p, p))
        .ok_or(ControllerError::MetricNotPositiveDefinite {
            min_eigenvalue: min,
        })?;
    Ok(inv * eps)
}

/// u̇ = −Q(u) H(u)ᵀ∇Φ(x, u).
pub fn gradient_law(
    problem: &Problem,
    metric: &Metric,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, ControllerError> {
    let raw = problem.sensitivity_gradient(x, u)?;
    Ok(-metric.apply(problem, u, &raw)?)
}

/// u̇ = [−ε H(u)ᵀ∇Φ(x, u)] projected onto the tangent cone of 𝒰 at u.
pub fn projected_gradient_law(
    problem: &Problem,
    eps: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, ControllerError> {
    if eps <= 0.0 {
        return Err(ControllerError::InvalidParameter("eps must be positive"));
    }
    let set = problem.input_set().ok_or(ControllerError::MissingInputSet)?;
    if !set.contains(u, DEFAULT_ACTIVITY_TOL) {
        return Err(ControllerError::Geometry(GeometryError::Infeasible {
            violation: set.violation(u),
        }));
    }
    if !set.is_regular(u, 1e-10)? {
        return Err(ControllerError::Geometry(GeometryError::RankDeficient));
    }
    let raw = -(problem.sensitivity_gradient(x, u)?) * eps;
    Ok(set.project_tangent(u, &raw)?)
}

/// Heavy-ball pair: u̇ = Q(u) z, ż = −D(u) z − Q(u) H(u)ᵀ∇Φ(x, u).
pub fn heavy_ball_law(
    problem: &Problem,
    metric: &Metric,
    damping: &Metric,
    x: &DVector<f64>,
    u: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), ControllerError> {
    let d = damping.evaluate(problem, u).map_err(|e| match e {
        ControllerError::MetricNotPositiveDefinite { min_eigenvalue } => {
            ControllerError::DampingNotPositiveDefinite {
                min_eigenvalue,
            }
        }
        other => other,
    })?;
    let du = metric.apply(problem, u, z)?;
    let raw = problem.sensitivity_gradient(x, u)?;
    let dz = -(&d * z) - metric.apply(problem, u, &raw)?;
    Ok((du, dz))
}

/// Sign convention of the saddle-point law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaddleSigns {
    /// Gradient-descent/ascent pair of the augmented Lagrangian
    /// L(u,λ) = Φ̃ + λᵀ(Ah(u)−b) + (σ/2)‖Ah(u)−b‖².
    #[default]
    DescentConsistent,
    /// Flips the sign of the Aᵀλ and augmentation terms inside u̇.
    Literal,
}

/// Augmented saddle-point pair (descent-consistent by default):
/// u̇ = −ε H(u)ᵀ(∇Φ(x,u) + Aᵀλ + σAᵀ(Ax−b)), λ̇ = ε(Ax−b).
pub fn saddle_point_law(
    problem: &Problem,
    eps: f64,
    sigma: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    lambda: &DVector<f64>,
    signs: SaddleSigns,
) -> Result<(DVector<f64>, DVector<f64>), ControllerError> {
    if eps <= 0.0 {
        return Err(ControllerError::InvalidParameter("eps must be positive"));
    }
    if sigma < 0.0 {
        return Err(ControllerError::InvalidParameter("sigma must be nonnegative"));
    }
    let oc = problem
        .output_constraint()
        .ok_or(ControllerError::MissingOutputConstraint)?;
    if lambda.len() != oc.matrix.nrows() {
        return Err(ControllerError::DimensionMismatch {
            context: "dual variable",
            expected: oc.matrix.nrows(),
            got: lambda.len(),
        });
    }
    let violation = &oc.matrix * x - &oc.rhs;
    let dual_term = oc.matrix.transpose() * (lambda + &violation * sigma);
    let (gx, gu) = problem.objective().gradient(x, u);
    let jac = problem.plant().steady_state_jacobian(u).map_err(ProblemError::from)?;
    let grad_x_term = match signs {
        SaddleSigns::DescentConsistent => gx + dual_term,
        SaddleSigns::Literal => gx - dual_term,
    };
    let du = -(jac.transpose() * grad_x_term + gu) * eps;
    let dlambda = violation * eps;
    Ok((du, dlambda))
}

/// Subgradient selection law −H(u)ᵀ g, with g the smooth gradient plus the
/// ℓ1 sign selection (tie_rule at components within the kink tolerance).
pub fn subgradient_law(
    problem: &Problem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    tie_rule: f64,
) -> Result<DVector<f64>, ControllerError> {
    let rho = problem.objective().l1_weight_x();
    let (mut gx, gu) = problem.objective().gradient(x, u);
    if rho > 0.0 {
        for i in 0..x.len() {
            let s = if x[i].abs() <= DEFAULT_ACTIVITY_TOL {
                tie_rule
            } else if x[i] > 0.0 {
                1.0
            } else {
                -1.0
            };
            gx[i] += rho * s;
        }
    }
    let jac = problem.plant().steady_state_jacobian(u).map_err(ProblemError::from)?;
    Ok(-(jac.transpose() * gx + gu))
}

/// Accelerated-gradient pair: u̇ = z, ż = −(r/t) z − H(u)ᵀ∇Φ(x, u).
pub fn accelerated_law(
    problem: &Problem,
    r: f64,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), ControllerError> {
    if t <= 0.0 {
        return Err(ControllerError::InvalidParameter(
            "accelerated flow needs t > 0",
        ));
    }
    if r <= 0.0 {
        return Err(ControllerError::InvalidParameter("damping exponent r must be positive"));
    }
    let raw = problem.sensitivity_gradient(x, u)?;
    Ok((z.clone(), -z * (r / t) - raw))
}

/// Output-feedback gradient law for an affine measurement y = Cx + d and a
/// cost Φ_io(y, u): u̇ = −Q(u) (C∇h(u))ᵀ∇_yΦ_io − Q(u)∇ᵤΦ_io.
pub fn output_feedback_law(
    plant: &dyn Plant,
    objective_io: &dyn Objective,
    metric_matrix: &DMatrix<f64>,
    c: &DMatrix<f64>,
    _d: &DVector<f64>,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, ControllerError> {
    if c.ncols() != plant.state_dim() {
        return Err(ControllerError::DimensionMismatch {
            context: "output map",
            expected: plant.state_dim(),
            got: c.ncols(),
        });
    }
    if y.len() != c.nrows() {
        return Err(ControllerError::DimensionMismatch {
            context: "measurement",
            expected: c.nrows(),
            got: y.len(),
        });
    }
    let min = linalg::min_symmetric_eigenvalue(metric_matrix);
    if min <= 0.0 {
        return Err(ControllerError::MetricNotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    let (gy, gu) = objective_io.gradient(y, u);
    let jac_io = c * plant.steady_state_jacobian(u).map_err(ProblemError::from)?;
    Ok(-(metric_matrix * (jac_io.transpose() * gy + gu)))
}

/// A configured control law, ready for interconnection by the simulator.
#[derive(Clone)]
pub enum ControlLaw {
    Gradient { metric: Metric },
    Newton { eps: f64, mu: f64 },
    ProjectedGradient { eps: f64 },
    HeavyBall { metric: Metric, damping: Metric },
    SaddlePoint { eps: f64, sigma: f64, signs: SaddleSigns },
    Subgradient { tie_rule: f64 },
    Accelerated { r: f64 },
}

impl ControlLaw {
    /// Dimension of the auxiliary state (momentum or duals).
    pub fn aux_dim(&self, problem: &Problem) -> usize {
        match self {
            ControlLaw::HeavyBall { .. } | ControlLaw::Accelerated { .. } => problem.input_dim(),
            ControlLaw::SaddlePoint { .. } => problem
                .output_constraint()
                .map(|oc| oc.matrix.nrows())
                .unwrap_or(0),
            _ => 0,
        }
    }

    pub fn is_projected(&self) -> bool {
        matches!(self, ControlLaw::ProjectedGradient { .. })
    }

    /// Evaluates (u̇, auẋ) at time `t` for plant state `x`.
    pub fn field(
        &self,
        problem: &Problem,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        aux: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), ControllerError> {
        match self {
            ControlLaw::Gradient { metric } => {
                Ok((gradient_law(problem, metric, x, u)?, DVector::zeros(0)))
            }
            ControlLaw::Newton { eps, mu } => {
                let metric = Metric::Newton { eps: *eps, mu: *mu };
                Ok((gradient_law(problem, &metric, x, u)?, DVector::zeros(0)))
            }
            ControlLaw::ProjectedGradient { eps } => Ok((
                projected_gradient_law(problem, *eps, x, u)?,
                DVector::zeros(0),
            )),
            ControlLaw::HeavyBall { metric, damping } => {
                let (du, dz) = heavy_ball_law(problem, metric, damping, x, u, aux)?;
                Ok((du, dz))
            }
            ControlLaw::SaddlePoint { eps, sigma, signs } => {
                let (du, dl) = saddle_point_law(problem, *eps, *sigma, x, u, aux, *signs)?;
                Ok((du, dl))
            }
            ControlLaw::Subgradient { tie_rule } => Ok((
                subgradient_law(problem, x, u, *tie_rule)?,
                DVector::zeros(0),
            )),
            ControlLaw::Accelerated { r } => {
                let (du, dz) = accelerated_law(problem, *r, t, x, u, aux)?;
                Ok((du, dz))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::boxed::Box;
    use alloc::sync::Arc;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn random_problem(n: usize, p: usize, seed: u64) -> Problem {
        random_instance(n, p, seed, InstanceOptions::default())
            .unwrap()
            .into_problem()
            .unwrap()
    }

    #[test]
    fn gradient_law_scalar_example() {
        let prob = scalar_problem();
        let x = DVector::from_element(1, 1.0);
        let u = DVector::from_element(1, 1.0);
        let du = gradient_law(&prob, &Metric::ScaledIdentity(1.0), &x, &u).unwrap();
        assert_relative_eq!(du[0], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_law_vanishes_at_optimizer() {
        let prob = random_problem(6, 3, 13);
        let u_star = prob.quadratic_minimizer().unwrap();
        let x_star = prob.plant().steady_state(&u_star).unwrap();
        let du = gradient_law(&prob, &Metric::ScaledIdentity(0.7), &x_star, &u_star).unwrap();
        assert!(du.norm() <= 1e-9);
        // equilibrium <-> KKT
        assert!(prob.kkt_residual(&x_star, &u_star, None).unwrap() <= 1e-9);
    }

    #[test]
    fn gradient_law_matches_reduced_gradient_at_steady_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..10 {
            let prob = random_problem(5, 2, seed);
            let u = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let x = prob.plant().steady_state(&u).unwrap();
            let q = {
                let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
                &m * m.transpose() + DMatrix::identity(2, 2) * 0.1
            };
            let du = gradient_law(&prob, &Metric::Constant(q.clone()), &x, &u).unwrap();
            let expected = -(&q * prob.reduced_gradient(&u).unwrap());
            assert!((du - expected).norm() <= 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_metric() {
        let prob = scalar_problem();
        let x = DVector::from_element(1, 1.0);
        let u = DVector::zeros(1);
        let q = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            gradient_law(&prob, &Metric::Constant(q), &x, &u),
            Err(ControllerError::MetricNotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn newton_metric_diagonal_example() {
        // reduced Hessian diag(2, 8) via a static plant-free construction:
        // plant H = 0 so the reduced Hessian equals hessian_uu
        let plant = LtiPlant::new(
            -DMatrix::<f64>::identity(2, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        let objective = QuadraticObjective::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 8.0])),
            DVector::zeros(2),
            DVector::zeros(2),
            0.0,
        )
        .unwrap();
        let prob = Problem::new(Box::new(objective), Arc::new(plant));
        let m = newton_metric(&prob, 1.0, &DVector::zeros(2)).unwrap();
        assert_relative_eq!(m[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(m[(1, 1)], 0.125, epsilon = 1e-12);
        assert_relative_eq!(m[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn newton_closed_reduced_flow_is_isotropic() {
        let prob = random_problem(7, 3, 5);
        let eps = 0.8;
        let hess = prob.reduced_hessian(&DVector::zeros(3)).unwrap();
        let q = newton_metric(&prob, eps, &DVector::zeros(3)).unwrap();
        // Jacobian of u̇ = −Q ∇Φ̃ at u* is −Q∇²Φ̃ = −εI
        let jac = -(&q * &hess);
        for ev in jac.complex_eigenvalues().iter() {
            assert_relative_eq!(ev.re, -eps, epsilon = 1e-9);
            assert!(ev.im.abs() <= 1e-9);
        }
    }

    #[test]
    fn newton_metric_norm_bounded_by_eps_over_mu() {
        let prob = random_problem(6, 3, 17);
        let hess = prob.reduced_hessian(&DVector::zeros(3)).unwrap();
        let mu = linalg::min_symmetric_eigenvalue(&hess);
        let eps = 1.3;
        let m = newton_metric(&prob, eps, &DVector::zeros(3)).unwrap();
        assert!(linalg::operator_norm(&m) <= eps / mu + 1e-10);
    }

    fn box_problem() -> Problem {
        let set = PolyhedralSet::from_box(DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        scalar_problem().with_input_set(set).unwrap()
    }

    #[test]
    fn projected_law_interior_matches_gradient_law() {
        let prob = box_problem();
        let u = DVector::from_element(1, 0.5);
        let x = DVector::from_element(1, 0.8);
        let eps = 0.7;
        let proj = projected_gradient_law(&prob, eps, &x, &u).unwrap();
        let grad = gradient_law(&prob, &Metric::ScaledIdentity(eps), &x, &u).unwrap();
        assert!((proj - grad).norm() <= 1e-14);
    }

    #[test]
    fn projected_law_zeroes_outward_field_at_bound() {
        // at u = 0 with the raw field pointing outward (negative), the
        // tangent cone {w >= 0} kills the step
        let prob = box_problem();
        let u = DVector::zeros(1);
        let x = DVector::from_element(1, 0.3); // raw field = -eps*0.3 < 0
        let proj = projected_gradient_law(&prob, 1.0, &x, &u).unwrap();
        assert_relative_eq!(proj[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn projected_law_positively_homogeneous_in_eps() {
        let prob = box_problem();
        let u = DVector::zeros(1);
        let x = DVector::from_element(1, -0.4);
        let a = projected_gradient_law(&prob, 1.0, &x, &u).unwrap();
        let b = projected_gradient_law(&prob, 2.0, &x, &u).unwrap();
        assert_relative_eq!(b[0], 2.0 * a[0], epsilon = 1e-12);
    }

    #[test]
    fn projected_law_rejects_infeasible_point() {
        let prob = box_problem();
        let u = DVector::from_element(1, 2.0);
        let x = DVector::zeros(1);
        assert!(projected_gradient_law(&prob, 1.0, &x, &u).is_err());
    }

    #[test]
    fn heavy_ball_hand_example_and_equilibrium() {
        let prob = scalar_problem();
        let q = Metric::ScaledIdentity(1.0);
        let d = Metric::ScaledIdentity(2.0);
        let one = DVector::from_element(1, 1.0);
        let (du, dz) = heavy_ball_law(&prob, &q, &d, &one, &one, &one).unwrap();
        assert_relative_eq!(du[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(dz[0], -3.0, epsilon = 1e-14);

        let u_star = DVector::zeros(1);
        let x_star = prob.plant().steady_state(&u_star).unwrap();
        let z0 = DVector::zeros(1);
        let (du0, dz0) = heavy_ball_law(&prob, &q, &d, &x_star, &u_star, &z0).unwrap();
        assert!(du0.norm() <= 1e-14 && dz0.norm() <= 1e-14);
    }

    #[test]
    fn heavy_ball_reduced_energy_decays() {
        // V = Φ̃(u) + ½zᵀz along the reduced flow has V̇ = −zᵀDz
        let prob = random_problem(4, 2, 8);
        let q = Metric::ScaledIdentity(1.0);
        let d_mat = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 3.0]));
        let d = Metric::Constant(d_mat.clone());
        let mut u = DVector::from_column_slice(&[1.0, -1.0]);
        let mut z = DVector::from_column_slice(&[0.5, 0.2]);
        let dt = 1e-3;
        let mut prev_v = f64::INFINITY;
        for step in 0..2000 {
            let x = prob.plant().steady_state(&u).unwrap();
            let v = prob.reduced_objective(&u).unwrap() + 0.5 * z.norm_squared();
            if step > 0 {
                let predicted = -z.dot(&(&d_mat * &z));
                let observed = (v - prev_v) / dt;
                // first-order Euler error scales with dt * field size
                assert!(
                    (observed - predicted).abs() <= 50.0 * dt * (1.0 + predicted.abs()),
                    "step {step}: observed {observed}, predicted {predicted}"
                );
            }
            prev_v = v;
            let (du, dz) = heavy_ball_law(&prob, &q, &d, &x, &u, &z).unwrap();
            u += du * dt;
            z += dz * dt;
        }
    }

    fn saddle_problem(seed: u64) -> Problem {
        let mut opts = InstanceOptions::default();
        opts.output_constraints = 2;
        random_instance(6, 4, seed, opts)
            .unwrap()
            .into_problem()
            .unwrap()
    }

    #[test]
    fn saddle_dual_direction_example() {
        let prob = saddle_problem(3);
        let u = DVector::zeros(4);
        // choose x so that Ax - b = (1, -2)
        let oc = prob.output_constraint().unwrap();
        let a = oc.matrix.clone();
        let target = &oc.rhs + DVector::from_column_slice(&[1.0, -2.0]);
        let x = a.clone().svd(true, true).solve(&target, 1e-12).unwrap();
        let lambda = DVector::zeros(2);
        let (_, dl) = saddle_point_law(&prob, 0.5, 0.0, &x, &u, &lambda, SaddleSigns::default())
            .unwrap();
        assert_relative_eq!(dl[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(dl[1], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn saddle_reduced_flow_is_lagrangian_descent_ascent() {
        // at x = h(u) the law is exactly (−ε∇ᵤL, +ε∇_λL) for
        // L = Φ̃ + λᵀ(Ah(u)−b) + σ/2‖Ah(u)−b‖²
        let prob = saddle_problem(9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = 0.6;
        let sigma = 10.0;
        let lagrangian = |u: &DVector<f64>, lambda: &DVector<f64>| -> f64 {
            let oc = prob.output_constraint().unwrap();
            let h = prob.plant().steady_state(u).unwrap();
            let viol = &oc.matrix * &h - &oc.rhs;
            prob.reduced_objective(u).unwrap() + lambda.dot(&viol) + 0.5 * sigma * viol.norm_squared()
        };
        for _ in 0..5 {
            let u = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let lambda = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let x = prob.plant().steady_state(&u).unwrap();
            let (du, dl) =
                saddle_point_law(&prob, eps, sigma, &x, &u, &lambda, SaddleSigns::default())
                    .unwrap();
            let step = 1e-6;
            for i in 0..4 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += step;
                um[i] -= step;
                let fd = (lagrangian(&up, &lambda) - lagrangian(&um, &lambda)) / (2.0 * step);
                assert_relative_eq!(du[i], -eps * fd, max_relative = 1e-4, epsilon = 1e-6);
            }
            for i in 0..2 {
                let mut lp = lambda.clone();
                let mut lm = lambda.clone();
                lp[i] += step;
                lm[i] -= step;
                let fd = (lagrangian(&u, &lp) - lagrangian(&u, &lm)) / (2.0 * step);
                assert_relative_eq!(dl[i], eps * fd, max_relative = 1e-4, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn saddle_vanishes_at_kkt_point() {
        let prob = saddle_problem(4);
        // solve the equality-constrained reduced QP:
        // min Φ̃(u) s.t. A h(u) = b, stationarity gives the KKT pair
        let oc = prob.output_constraint().unwrap();
        let a = oc.matrix.clone();
        let b = oc.rhs.clone();
        let h = prob.plant().steady_state_jacobian(&DVector::zeros(4)).unwrap();
        let g = &a * &h; // constraint in terms of u: G u = b - A h(0)
        let rhs_vec = &b - &a * prob.plant().steady_state(&DVector::zeros(4)).unwrap();
        let hess = prob.reduced_hessian(&DVector::zeros(4)).unwrap();
        let grad0 = prob.reduced_gradient(&DVector::zeros(4)).unwrap();
        // KKT system [Hess Gᵀ; G 0][u; λ] = [−grad0; rhs]
        let m = 2;
        let mut kkt = DMatrix::zeros(4 + m, 4 + m);
        kkt.view_mut((0, 0), (4, 4)).copy_from(&hess);
        kkt.view_mut((0, 4), (4, m)).copy_from(&g.transpose());
        kkt.view_mut((4, 0), (m, 4)).copy_from(&g);
        let mut rhs_full = DVector::zeros(4 + m);
        rhs_full.rows_mut(0, 4).copy_from(&(-&grad0));
        rhs_full.rows_mut(4, m).copy_from(&rhs_vec);
        let sol = kkt.lu().solve(&rhs_full).unwrap();
        let u_star = sol.rows(0, 4).clone_owned();
        let lambda_star = sol.rows(4, m).clone_owned();
        let x_star = prob.plant().steady_state(&u_star).unwrap();
        let (du, dl) =
            saddle_point_law(&prob, 1.0, 10.0, &x_star, &u_star, &lambda_star, SaddleSigns::default())
                .unwrap();
        assert!(du.norm() <= 1e-8, "du norm {}", du.norm());
        assert!(dl.norm() <= 1e-8);
        // and the full KKT residual vanishes there too
        assert!(
            prob.kkt_residual(&x_star, &u_star, Some(&lambda_star)).unwrap() <= 1e-8
        );
    }

    fn l1_problem() -> Problem {
        // plant ẋ = -x + u, Φ = |x|
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
    fn subgradient_bang_bang_cases() {
        let prob = l1_problem();
        let u = DVector::zeros(1);
        let pos = DVector::from_element(1, 0.5);
        let neg = DVector::from_element(1, -0.5);
        let zero = DVector::zeros(1);
        assert_relative_eq!(subgradient_law(&prob, &pos, &u, 0.0).unwrap()[0], -1.0);
        assert_relative_eq!(subgradient_law(&prob, &neg, &u, 0.0).unwrap()[0], 1.0);
        assert_relative_eq!(subgradient_law(&prob, &zero, &u, 0.0).unwrap()[0], 0.0);
    }

    #[test]
    fn subgradient_adds_smooth_and_l1_parts() {
        // Φ = ½x² + ρ|x|: output must equal smooth law plus the selection term
        let rho = 0.7;
        let objective = QuadraticObjective::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap()
        .with_l1_weight(rho);
        let prob = Problem::new(Box::new(objective), Arc::new(scalar_plant()));
        let x = DVector::from_element(1, 2.0);
        let u = DVector::from_element(1, 1.0);
        let smooth = gradient_law(&scalar_problem(), &Metric::ScaledIdentity(1.0), &x, &u).unwrap();
        let combined = subgradient_law(&prob, &x, &u, 0.0).unwrap();
        assert_relative_eq!(combined[0], smooth[0] - rho, epsilon = 1e-14);
    }

    #[test]
    fn accelerated_damping_term_behavior() {
        let prob = scalar_problem();
        let x = DVector::zeros(1);
        let u = DVector::zeros(1);
        let z = DVector::from_element(1, 1.0);
        let r = 3.0;
        // t = r: damping contribution is exactly −z
        let (du, dz) = accelerated_law(&prob, r, r, &x, &u, &z).unwrap();
        assert_relative_eq!(du[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(dz[0], -1.0, epsilon = 1e-14);
        // large t: damping vanishes
        let (_, dz_large) = accelerated_law(&prob, r, 1e12, &x, &u, &z).unwrap();
        assert!(dz_large[0].abs() <= 1e-11);
        assert!(accelerated_law(&prob, r, 0.0, &x, &u, &z).is_err());
    }

    #[test]
    fn accelerated_reduced_run_matches_refined_integration() {
        // reduced flow for Φ̃(u) = ½u²: ü = −(r/t)u̇ − u, integrated twice
        // with dt and dt/10; trajectories must agree to 1e-6
        let prob = scalar_problem();
        let r = 3.0;
        let run = |dt: f64| -> Vec<f64> {
            let mut u = DVector::from_element(1, 1.0);
            let mut z = DVector::zeros(1);
            let steps = (9.0 / dt + 0.5) as usize;
            let mut out = Vec::new();
            for step in 0..steps {
                let t = 1.0 + step as f64 * dt;
                // RK4 on the time-varying field with x slaved to h(u)
                let f = |t: f64, u: &DVector<f64>, z: &DVector<f64>| {
                    let x = prob.plant().steady_state(u).unwrap();
                    accelerated_law(&prob, r, t, &x, u, z).unwrap()
                };
                let (k1u, k1z) = f(t, &u, &z);
                let (k2u, k2z) = f(t + dt / 2.0, &(&u + &k1u * (dt / 2.0)), &(&z + &k1z * (dt / 2.0)));
                let (k3u, k3z) = f(t + dt / 2.0, &(&u + &k2u * (dt / 2.0)), &(&z + &k2z * (dt / 2.0)));
                let (k4u, k4z) = f(t + dt, &(&u + &k3u * dt), &(&z + &k3z * dt));
                u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0);
                z += (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (dt / 6.0);
                out.push(u[0]);
            }
            out
        };
        let coarse = run(0.01);
        let fine = run(0.001);
        // compare at matching times (every 10th fine sample)
        for (i, c) in coarse.iter().enumerate() {
            let f = fine[(i + 1) * 10 - 1];
            assert!((c - f).abs() <= 1e-6, "sample {i}: {c} vs {f}");
        }
    }

    #[test]
    fn output_feedback_identity_map_matches_gradient_law() {
        let prob = scalar_problem();
        let x = DVector::from_element(1, 1.3);
        let u = DVector::from_element(1, 0.4);
        let q = DMatrix::from_element(1, 1, 1.0);
        let c = DMatrix::identity(1, 1);
        let d = DVector::zeros(1);
        let objective = QuadraticObjective::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let du_of = output_feedback_law(prob.plant(), &objective, &q, &c, &d, &x, &u).unwrap();
        let du_g = gradient_law(&prob, &Metric::ScaledIdentity(1.0), &x, &u).unwrap();
        assert_relative_eq!(du_of[0], du_g[0], epsilon = 1e-14);
    }

    #[test]
    fn output_feedback_equals_pulled_back_cost() {
        // Φ_io(y, u) = ½yᵀy on y = Cx + d equals the gradient law on
        // Φ(x, u) = ½‖Cx + d‖²
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let inst = random_instance(5, 2, 77, InstanceOptions::default()).unwrap();
        let plant = Arc::new(inst.plant);
        let m = 3;
        let c = DMatrix::from_fn(m, 5, |_, _| rng.random_range(-1.0..1.0));
        let d = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let io_objective = QuadraticObjective::new(
            DMatrix::identity(m, m),
            DMatrix::zeros(m, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(m),
            DVector::zeros(2),
            0.0,
        )
        .unwrap();
        // pulled-back cost: ½xᵀCᵀCx + (Cᵀd)ᵀx + ½dᵀd
        let pulled = QuadraticObjective::new(
            c.transpose() * &c,
            DMatrix::zeros(5, 2),
            DMatrix::zeros(2, 2),
            c.transpose() * &d,
            DVector::zeros(2),
            0.5 * d.norm_squared(),
        )
        .unwrap();
        let prob = Problem::new(Box::new(pulled), Arc::clone(&plant) as Arc<dyn Plant>);
        let q = DMatrix::identity(2, 2) * 0.9;
        for _ in 0..10 {
            let x = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
            let u = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let y = &c * &x + &d;
            let du_of =
                output_feedback_law(plant.as_ref(), &io_objective, &q, &c, &d, &y, &u).unwrap();
            let du_g = gradient_law(&prob, &Metric::Constant(q.clone()), &x, &u).unwrap();
            assert!((du_of - du_g).norm() <= 1e-12);
        }
    }

    #[test]
    fn output_feedback_at_steady_state_is_reduced_gradient() {
        let inst = random_instance(4, 2, 55, InstanceOptions::default()).unwrap();
        let plant = Arc::new(inst.plant);
        let c = DMatrix::identity(4, 4);
        let d = DVector::zeros(4);
        let io_objective = QuadraticObjective::new(
            DMatrix::identity(4, 4),
            DMatrix::zeros(4, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(4),
            DVector::zeros(2),
            0.0,
        )
        .unwrap();
        let u = DVector::from_column_slice(&[0.3, -0.8]);
        let y = plant.steady_state(&u).unwrap();
        let q = DMatrix::identity(2, 2);
        let du =
            output_feedback_law(plant.as_ref(), &io_objective, &q, &c, &d, &y, &u).unwrap();
        let prob = Problem::new(
            Box::new(QuadraticObjective::new(
                DMatrix::identity(4, 4),
                DMatrix::zeros(4, 2),
                DMatrix::identity(2, 2),
                DVector::zeros(4),
                DVector::zeros(2),
                0.0,
            )
            .unwrap()),
            Arc::clone(&plant) as Arc<dyn Plant>,
        );
        let expected = -prob.reduced_gradient(&u).unwrap();
        assert!((du - expected).norm() <= 1e-12);
    }

    #[test]
    fn newton_family_rejects_overstated_modulus() {
        let prob = random_problem(5, 2, 61);
        let hess = prob.reduced_hessian(&DVector::zeros(2)).unwrap();
        let actual_mu = linalg::min_symmetric_eigenvalue(&hess);
        let metric = Metric::Newton { eps: 1.0, mu: actual_mu * 10.0 };
        let x = prob.plant().steady_state(&DVector::zeros(2)).unwrap();
        assert!(matches!(
            gradient_law(&prob, &metric, &x, &DVector::zeros(2)),
            Err(ControllerError::StrongConvexityViolated { .. })
        ));
    }
}

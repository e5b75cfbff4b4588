//! Objective functions, the optimal-steady-state problem, reduced problem,
//! KKT residuals and reproducible random instance generation.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{GeometryError, PolyhedralSet};
use crate::linalg;
use crate::plant::{LtiPlant, Plant, PlantError};

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemError {
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    Plant(PlantError),
    Geometry(GeometryError),
    MissingHessian,
    NotPositiveDefinite(String),
    MissingOutputConstraint,
}

impl From<PlantError> for ProblemError {
    fn from(e: PlantError) -> Self {
        ProblemError::Plant(e)
    }
}

impl From<GeometryError> for ProblemError {
    fn from(e: GeometryError) -> Self {
        ProblemError::Geometry(e)
    }
}

impl core::fmt::Display for ProblemError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ProblemError::DimensionMismatch { context, expected, got } => {
                write!(f, "{context}: expected dimension {expected}, got {got}")
            }
            ProblemError::Plant(e) => write!(f, "plant error: {e}"),
            ProblemError::Geometry(e) => write!(f, "geometry error: {e}"),
            ProblemError::MissingHessian => write!(f, "objective does not expose a Hessian"),
            ProblemError::NotPositiveDefinite(msg) => write!(f, "{msg}"),
            ProblemError::MissingOutputConstraint => {
                write!(f, "problem has no output constraint (A, b)")
            }
        }
    }
}

/// Differentiable cost Φ(x, u). The ℓ1 weight on x is carried separately so
/// the smooth gradient stays well-defined; its subgradient selection lives in
/// the controller module.
pub trait Objective: Send + Sync {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    /// Gradient of the smooth part, split as (∇ₓΦ, ∇ᵤΦ).
    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
    /// Hessian blocks (∇²ₓₓ, ∇²ₓᵤ, ∇²ᵤᵤ), if available.
    fn hessian_blocks(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>)> {
        None
    }
    fn l1_weight_x(&self) -> f64 {
        0.0
    }
}

/// Quadratic cost
/// Φ(x,u) = ½xᵀPₓₓx + xᵀPₓᵤu + ½uᵀPᵤᵤu + qₓᵀx + qᵤᵀu + c (+ ρ‖x‖₁).
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub hessian_xx: DMatrix<f64>,
    pub hessian_xu: DMatrix<f64>,
    pub hessian_uu: DMatrix<f64>,
    pub linear_x: DVector<f64>,
    pub linear_u: DVector<f64>,
    pub offset: f64,
    pub l1_weight_x: f64,
}

impl QuadraticObjective {
    pub fn new(
        hessian_xx: DMatrix<f64>,
        hessian_xu: DMatrix<f64>,
        hessian_uu: DMatrix<f64>,
        linear_x: DVector<f64>,
        linear_u: DVector<f64>,
        offset: f64,
    ) -> Result<Self, ProblemError> {
        let n = hessian_xx.nrows();
        let p = hessian_uu.nrows();
        let checks: [(usize, usize, &'static str); 5] = [
            (hessian_xx.ncols(), n, "hessian_xx must be square"),
            (hessian_uu.ncols(), p, "hessian_uu must be square"),
            (hessian_xu.nrows(), n, "hessian_xu rows"),
            (linear_x.len(), n, "linear_x"),
            (linear_u.len(), p, "linear_u"),
        ];
        for (got, expected, context) in checks {
            if got != expected {
                return Err(ProblemError::DimensionMismatch { context, expected, got });
            }
        }
        if hessian_xu.ncols() != p {
            return Err(ProblemError::DimensionMismatch {
                context: "hessian_xu cols",
                expected: p,
                got: hessian_xu.ncols(),
            });
        }
        let sym = |m: &DMatrix<f64>| (m - m.transpose()).amax() <= 1e-10 * (1.0 + m.amax());
        if !sym(&hessian_xx) || !sym(&hessian_uu) {
            return Err(ProblemError::NotPositiveDefinite(String::from(
                "Hessian blocks must be symmetric",
            )));
        }
        Ok(Self {
            hessian_xx,
            hessian_xu,
            hessian_uu,
            linear_x,
            linear_u,
            offset,
            l1_weight_x: 0.0,
        })
    }

    pub fn with_l1_weight(mut self, rho: f64) -> Self {
        self.l1_weight_x = rho.max(0.0);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.hessian_xx.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.hessian_uu.nrows()
    }
}

impl Objective for QuadraticObjective {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let smooth = 0.5 * x.dot(&(&self.hessian_xx * x))
            + x.dot(&(&self.hessian_xu * u))
            + 0.5 * u.dot(&(&self.hessian_uu * u))
            + self.linear_x.dot(x)
            + self.linear_u.dot(u)
            + self.offset;
        smooth + self.l1_weight_x * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            &self.hessian_xx * x + &self.hessian_xu * u + &self.linear_x,
            self.hessian_xu.transpose() * x + &self.hessian_uu * u + &self.linear_u,
        )
    }

    fn hessian_blocks(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>)> {
        Some((&self.hessian_xx, &self.hessian_xu, &self.hessian_uu))
    }

    fn l1_weight_x(&self) -> f64 {
        self.l1_weight_x
    }
}

/// Objective from closures, for costs without quadratic structure.
pub struct FnObjective {
    #[allow(clippy::type_complexity)]
    pub value: Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>,
    #[allow(clippy::type_complexity)]
    pub gradient:
        Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>,
}

impl Objective for FnObjective {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.value)(x, u)
    }

    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.gradient)(x, u)
    }
}

/// Asymptotic output constraint A x − b = 0.
#[derive(Debug, Clone)]
pub struct OutputConstraint {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// The optimal-steady-state problem
/// min Φ(x,u) s.t. x = h(u), optionally u ∈ 𝒰 and A x = b.
pub struct Problem {
    objective: Box<dyn Objective>,
    plant: Arc<dyn Plant>,
    input_set: Option<PolyhedralSet>,
    output_constraint: Option<OutputConstraint>,
}

impl Problem {
    pub fn new(objective: Box<dyn Objective>, plant: Arc<dyn Plant>) -> Self {
        Self {
            objective,
            plant,
            input_set: None,
            output_constraint: None,
        }
    }

    pub fn with_input_set(mut self, set: PolyhedralSet) -> Result<Self, ProblemError> {
        if set.dim() != self.plant.input_dim() {
            return Err(ProblemError::DimensionMismatch {
                context: "input set",
                expected: self.plant.input_dim(),
                got: set.dim(),
            });
        }
        self.input_set = Some(set);
        Ok(self)
    }

    pub fn with_output_constraint(
        mut self,
        matrix: DMatrix<f64>,
        rhs: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        if matrix.ncols() != self.plant.state_dim() {
            return Err(ProblemError::DimensionMismatch {
                context: "output constraint",
                expected: self.plant.state_dim(),
                got: matrix.ncols(),
            });
        }
        if rhs.len() != matrix.nrows() {
            return Err(ProblemError::DimensionMismatch {
                context: "output constraint rhs",
                expected: matrix.nrows(),
                got: rhs.len(),
            });
        }
        self.output_constraint = Some(OutputConstraint { matrix, rhs });
        Ok(self)
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    pub fn plant(&self) -> &dyn Plant {
        self.plant.as_ref()
    }

    pub fn plant_handle(&self) -> Arc<dyn Plant> {
        Arc::clone(&self.plant)
    }

    pub fn input_set(&self) -> Option<&PolyhedralSet> {
        self.input_set.as_ref()
    }

    pub fn output_constraint(&self) -> Option<&OutputConstraint> {
        self.output_constraint.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    /// Reduced objective Φ̃(u) = Φ(h(u), u).
    pub fn reduced_objective(&self, u: &DVector<f64>) -> Result<f64, ProblemError> {
        let x = self.plant.steady_state(u)?;
        Ok(self.objective.value(&x, u))
    }

    /// H(u)ᵀ∇Φ(x, u) with H(u)ᵀ = [∇h(u)ᵀ I].
    pub fn sensitivity_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, ProblemError> {
        let (gx, gu) = self.objective.gradient(x, u);
        let jac = self.plant.steady_state_jacobian(u)?;
        Ok(jac.transpose() * gx + gu)
    }

    /// Reduced gradient ∇Φ̃(u) = H(u)ᵀ∇Φ(h(u), u).
    pub fn reduced_gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        let x = self.plant.steady_state(u)?;
        self.sensitivity_gradient(&x, u)
    }

    /// Reduced Hessian Hᵀ∇²ₓₓΦ H + Hᵀ∇²ₓᵤΦ + ∇²ₓᵤΦᵀH + ∇²ᵤᵤΦ
    /// (exact for quadratic objectives with an affine steady-state map).
    pub fn reduced_hessian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>, ProblemError> {
        let (pxx, pxu, puu) = self
            .objective
            .hessian_blocks()
            .ok_or(ProblemError::MissingHessian)?;
        let jac = self.plant.steady_state_jacobian(u)?;
        let cross = jac.transpose() * pxu;
        Ok(jac.transpose() * pxx * &jac + &cross + cross.transpose() + puu)
    }

    /// Scalar first-order optimality residual at (x, u): the max of
    /// ‖x − h(u)‖, the (projected) Lagrangian-gradient norm, and ‖Ax − b‖.
    pub fn kkt_residual(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        multipliers: Option<&DVector<f64>>,
    ) -> Result<f64, ProblemError> {
        let steady_residual = (x - self.plant.steady_state(u)?).norm();

        let (mut gx, gu) = self.objective.gradient(x, u);
        let mut constraint_residual = 0.0;
        if let Some(oc) = &self.output_constraint {
            let violation = &oc.matrix * x - &oc.rhs;
            constraint_residual = violation.norm();
            if let Some(lambda) = multipliers {
                if lambda.len() != oc.matrix.nrows() {
                    return Err(ProblemError::DimensionMismatch {
                        context: "multipliers",
                        expected: oc.matrix.nrows(),
                        got: lambda.len(),
                    });
                }
                gx += oc.matrix.transpose() * lambda;
            }
        } else if let Some(lambda) = multipliers {
            if lambda.len() != 0 {
                return Err(ProblemError::DimensionMismatch {
                    context: "multipliers without output constraint",
                    expected: 0,
                    got: lambda.len(),
                });
            }
        }
        let jac = self.plant.steady_state_jacobian(u)?;
        let raw = -(jac.transpose() * gx + gu);
        let gradient_residual = match &self.input_set {
            Some(set) => set.project_tangent(u, &raw)?.norm(),
            None => raw.norm(),
        };
        Ok(steady_residual.max(gradient_residual).max(constraint_residual))
    }

    /// Minimizer of the reduced quadratic problem via the dense normal
    /// equations (test oracle; requires a positive definite reduced Hessian).
    pub fn quadratic_minimizer(&self) -> Result<DVector<f64>, ProblemError> {
        let p = self.input_dim();
        let u0 = DVector::zeros(p);
        let hess = self.reduced_hessian(&u0)?;
        let grad0 = self.reduced_gradient(&u0)?;
        hess.lu()
            .solve(&(-grad0))
            .ok_or_else(|| ProblemError::NotPositiveDefinite(String::from("singular reduced Hessian")))
    }
}

/// Options for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceOptions {
    /// Spectral-abscissa margin enforced on A.
    pub hurwitz_margin: f64,
    /// Regularization added to the objective Hessian GᵀG.
    pub hessian_regularization: f64,
    /// Number of output-constraint rows (saddle-point experiments).
    pub output_constraints: usize,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        Self {
            hurwitz_margin: 0.1,
            hessian_regularization: 0.1,
            output_constraints: 0,
        }
    }
}

/// A generated benchmark instance.
pub struct RandomInstance {
    pub plant: LtiPlant,
    pub objective: QuadraticObjective,
    pub output_constraint: Option<(DMatrix<f64>, DVector<f64>)>,
    pub seed: u64,
}

impl RandomInstance {
    pub fn into_problem(self) -> Result<Problem, ProblemError> {
        let plant = Arc::new(self.plant);
        let problem = Problem::new(Box::new(self.objective), plant);
        match self.output_constraint {
            Some((a, b)) => problem.with_output_constraint(a, b),
            None => Ok(problem),
        }
    }
}

/// Deterministic random instance: A = −MMᵀ − margin·I + (S−Sᵀ)/2 with M, S
/// standard Gaussian (Hurwitz by construction), Gaussian B and disturbance,
/// objective Hessian GᵀG + reg·I block-partitioned. The reduced Hessian is
/// positive definite by construction and re-checked before returning.
pub fn random_instance(
    n: usize,
    p: usize,
    seed: u64,
    options: InstanceOptions,
) -> Result<RandomInstance, ProblemError> {
    assert!(n >= 1 && p >= 1, "instance dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let m = DMatrix::from_fn(n, n, |_, _| normal(&mut rng));
    let s = DMatrix::from_fn(n, n, |_, _| normal(&mut rng));
    let a = -(&m * m.transpose()) - DMatrix::<f64>::identity(n, n) * options.hurwitz_margin
        + (&s - s.transpose()) * 0.5;
    let b = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let w = DVector::from_fn(n, |_, _| normal(&mut rng));
    let plant = LtiPlant::new(a, b, w)?;

    let g = DMatrix::from_fn(n + p, n + p, |_, _| normal(&mut rng));
    let full = g.transpose() * &g
        + DMatrix::<f64>::identity(n + p, n + p) * options.hessian_regularization;
    let hessian_xx = full.view((0, 0), (n, n)).into_owned();
    let hessian_xu = full.view((0, n), (n, p)).into_owned();
    let hessian_uu = full.view((n, n), (p, p)).into_owned();
    let linear_x = DVector::from_fn(n, |_, _| normal(&mut rng));
    let linear_u = DVector::from_fn(p, |_, _| normal(&mut rng));
    let objective = QuadraticObjective::new(
        (&hessian_xx + hessian_xx.transpose()) * 0.5,
        hessian_xu,
        (&hessian_uu + hessian_uu.transpose()) * 0.5,
        linear_x,
        linear_u,
        0.0,
    )?;

    // compact level sets of the reduced problem (strict convexity)
    let h = plant.steady_state_gain();
    let cross = h.transpose() * &objective.hessian_xu;
    let reduced = h.transpose() * &objective.hessian_xx * h
        + &cross
        + cross.transpose()
        + &objective.hessian_uu;
    let lam = linalg::min_symmetric_eigenvalue(&reduced);
    if lam <= 0.0 {
        return Err(ProblemError::NotPositiveDefinite(String::from(
            "generated reduced Hessian is not positive definite",
        )));
    }

    let output_constraint = if options.output_constraints > 0 {
        let r = options.output_constraints;
        let a_out = DMatrix::from_fn(r, n, |_, _| normal(&mut rng));
        // choose a right-hand side attainable at steady state
        let u_ref = DVector::from_fn(p, |_, _| normal(&mut rng));
        let b_out = &a_out * plant.steady_state(&u_ref)?;
        Some((a_out, b_out))
    } else {
        None
    };

    Ok(RandomInstance {
        plant,
        objective,
        output_constraint,
        seed,
    })
}

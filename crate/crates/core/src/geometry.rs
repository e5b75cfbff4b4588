//! Regular polyhedral sets, tangent/normal cones and projections.
//!
//! Everything here is restricted to polyhedra: the tangent cone at a feasible
//! point is again a polyhedral cone, and all projections reduce to small
//! equality/inequality-constrained least-squares problems solved by a primal
//! active-set iteration. Input dimensions are tiny (p ≤ 10 in all
//! experiments), so no attempt at sparsity or scale is made.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::linalg;

/// Default absolute tolerance for deciding whether an inequality is active.
pub const DEFAULT_ACTIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    DimensionMismatch { expected: usize, got: usize },
    Infeasible { violation: f64 },
    /// Active constraint rows are linearly dependent (LICQ failure).
    RankDeficient,
    /// The active-set iteration failed to terminate.
    ProjectionFailed,
    EmptySet,
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeometryError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            GeometryError::Infeasible { violation } => {
                write!(f, "point infeasible (violation {violation:.3e})")
            }
            GeometryError::RankDeficient => write!(f, "active constraint rows rank deficient"),
            GeometryError::ProjectionFailed => write!(f, "active-set projection did not terminate"),
            GeometryError::EmptySet => write!(f, "no feasible point supplied for the set"),
        }
    }
}

/// A polyhedron { v | E v = e, C v ≤ c } with a stored feasible point.
///
/// Boxes are a special case with closed-form projections; the box shortcut is
/// kept alongside the generated inequality rows.
#[derive(Debug, Clone)]
pub struct PolyhedralSet {
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: DVector<f64>,
    feasible_point: DVector<f64>,
    bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl PolyhedralSet {
    /// General polyhedron from equality and inequality blocks. A feasible
    /// point must be supplied; it doubles as the nonemptiness witness and the
    /// starting point of projections.
    pub fn new(
        eq: Option<(DMatrix<f64>, DVector<f64>)>,
        ineq: Option<(DMatrix<f64>, DVector<f64>)>,
        feasible_point: DVector<f64>,
    ) -> Result<Self, GeometryError> {
        let p = feasible_point.len();
        let (eq_matrix, eq_rhs) = eq.unwrap_or((DMatrix::zeros(0, p), DVector::zeros(0)));
        let (ineq_matrix, ineq_rhs) = ineq.unwrap_or((DMatrix::zeros(0, p), DVector::zeros(0)));
        if eq_matrix.ncols() != p {
            return Err(GeometryError::DimensionMismatch {
                expected: p,
                got: eq_matrix.ncols(),
            });
        }
        if ineq_matrix.ncols() != p {
            return Err(GeometryError::DimensionMismatch {
                expected: p,
                got: ineq_matrix.ncols(),
            });
        }
        let set = Self {
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
            feasible_point: feasible_point.clone(),
            bounds: None,
        };
        let viol = set.violation(&feasible_point);
        if viol > DEFAULT_ACTIVITY_TOL {
            return Err(GeometryError::Infeasible { violation: viol });
        }
        Ok(set)
    }

    /// Axis-aligned box { v | lower ≤ v ≤ upper }. Infinite entries drop the
    /// corresponding bound.
    pub fn from_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, GeometryError> {
        let p = lower.len();
        if upper.len() != p {
            return Err(GeometryError::DimensionMismatch {
                expected: p,
                got: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(GeometryError::EmptySet);
        }
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..p {
            if upper[i].is_finite() {
                let mut row = vec![0.0; p];
                row[i] = 1.0;
                rows.push(row);
                rhs.push(upper[i]);
            }
            if lower[i].is_finite() {
                let mut row = vec![0.0; p];
                row[i] = -1.0;
                rows.push(row);
                rhs.push(-lower[i]);
            }
        }
        let ineq_matrix = if rows.is_empty() {
            DMatrix::zeros(0, p)
        } else {
            DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
        };
        let feasible_point = DVector::from_fn(p, |i, _| {
            let l = if lower[i].is_finite() { lower[i] } else { f64::NEG_INFINITY };
            let u = if upper[i].is_finite() { upper[i] } else { f64::INFINITY };
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l,
                (false, true) => u,
                (false, false) => 0.0,
            }
        });
        Ok(Self {
            eq_matrix: DMatrix::zeros(0, p),
            eq_rhs: DVector::zeros(0),
            ineq_matrix,
            ineq_rhs: DVector::from_vec(rhs),
            feasible_point,
            bounds: Some((lower, upper)),
        })
    }

    pub fn dim(&self) -> usize {
        self.feasible_point.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_matrix.nrows()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_matrix.nrows()
    }

    pub fn feasible_point(&self) -> &DVector<f64> {
        &self.feasible_point
    }

    pub fn is_box(&self) -> bool {
        self.bounds.is_some()
    }

    pub fn eq(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.eq_matrix, &self.eq_rhs)
    }

    pub fn ineq(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.ineq_matrix, &self.ineq_rhs)
    }

    /// Worst constraint violation at `v` (0 for feasible points).
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.num_eq() > 0 {
            let r = &self.eq_matrix * v - &self.eq_rhs;
            worst = worst.max(r.amax());
        }
        if self.num_ineq() > 0 {
            let r = &self.ineq_matrix * v - &self.ineq_rhs;
            worst = worst.max(r.max().max(0.0));
        }
        worst
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.violation(v) <= tol
    }

    /// Indices of inequality rows active at `u` within `tol`.
    pub fn active_set(&self, u: &DVector<f64>, tol: f64) -> Result<Vec<usize>, GeometryError> {
        let viol = self.violation(u);
        if viol > tol {
            return Err(GeometryError::Infeasible { violation: viol });
        }
        let mut active = Vec::new();
        for j in 0..self.num_ineq() {
            let slack = self.ineq_rhs[j] - self.ineq_matrix.row(j).transpose().dot(u);
            if slack.abs() <= tol {
                active.push(j);
            }
        }
        Ok(active)
    }

    /// LICQ check: the stacked equality and active-inequality rows must have
    /// full row rank.
    pub fn is_regular(&self, u: &DVector<f64>, tol: f64) -> Result<bool, GeometryError> {
        let active = self.active_set(u, DEFAULT_ACTIVITY_TOL)?;
        let stacked = self.stacked_active(&active);
        if stacked.nrows() == 0 {
            return Ok(true);
        }
        if stacked.nrows() > self.dim() {
            return Ok(false);
        }
        Ok(linalg::rank_with_tol(&stacked, tol) == stacked.nrows())
    }

    fn stacked_active(&self, active: &[usize]) -> DMatrix<f64> {
        let mut blocks = Vec::new();
        if self.num_eq() > 0 {
            blocks.push(self.eq_matrix.clone());
        }
        if !active.is_empty() {
            let mut m = DMatrix::zeros(active.len(), self.dim());
            for (i, &j) in active.iter().enumerate() {
                m.row_mut(i).copy_from(&self.ineq_matrix.row(j));
            }
            blocks.push(m);
        }
        linalg::vstack(&blocks)
    }

    /// Projects `v` onto the tangent cone T_u of the set at the feasible
    /// point `u`: argmin over { w | E w = 0, C_active w ≤ 0 } of ‖v − w‖².
    pub fn project_tangent(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, GeometryError> {
        let active = self.active_set(u, DEFAULT_ACTIVITY_TOL)?;
        if let Some((lower, upper)) = &self.bounds {
            // box: zero out outward components at active bounds
            let mut w = v.clone();
            for i in 0..self.dim() {
                let at_lower = lower[i].is_finite() && (u[i] - lower[i]).abs() <= DEFAULT_ACTIVITY_TOL;
                let at_upper = upper[i].is_finite() && (upper[i] - u[i]).abs() <= DEFAULT_ACTIVITY_TOL;
                if at_lower && w[i] < 0.0 {
                    w[i] = 0.0;
                }
                if at_upper && w[i] > 0.0 {
                    w[i] = 0.0;
                }
            }
            return Ok(w);
        }
        let stacked = self.stacked_active(&active);
        if stacked.nrows() > 0 && linalg::rank_with_tol(&stacked, 1e-10) < stacked.nrows() {
            return Err(GeometryError::RankDeficient);
        }
        if active.is_empty() && self.num_eq() == 0 {
            return Ok(v.clone());
        }
        let mut cone_ineq = DMatrix::zeros(active.len(), self.dim());
        for (i, &j) in active.iter().enumerate() {
            cone_ineq.row_mut(i).copy_from(&self.ineq_matrix.row(j));
        }
        active_set_project(
            v,
            &self.eq_matrix,
            &DVector::zeros(self.num_eq()),
            &cone_ineq,
            &DVector::zeros(active.len()),
            &DVector::zeros(self.dim()),
        )
    }

    /// Moreau decomposition of `v` at `u`: returns (w, η) with
    /// w = [v] the tangent-cone projection and η = v − w ∈ N_u.
    pub fn normal_decomposition(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), GeometryError> {
        let w = self.project_tangent(u, v)?;
        let eta = v - &w;
        Ok((w, eta))
    }

    /// Euclidean nearest point of the set to `z`.
    pub fn project_point(&self, z: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        if self.contains(z, 1e-12) {
            return Ok(z.clone());
        }
        if let Some((lower, upper)) = &self.bounds {
            return Ok(DVector::from_fn(self.dim(), |i, _| {
                z[i].max(lower[i]).min(upper[i])
            }));
        }
        active_set_project(
            z,
            &self.eq_matrix,
            &self.eq_rhs,
            &self.ineq_matrix,
            &self.ineq_rhs,
            &self.feasible_point,
        )
    }
}

/// Primal active-set solve of min ‖y − z‖² s.t. E y = e, C y ≤ c, starting
/// from the feasible point `start`.
fn active_set_project(
    z: &DVector<f64>,
    eq: &DMatrix<f64>,
    eq_rhs: &DVector<f64>,
    ineq: &DMatrix<f64>,
    ineq_rhs: &DVector<f64>,
    start: &DVector<f64>,
) -> Result<DVector<f64>, GeometryError> {
    let p = z.len();
    let r = ineq.nrows();
    let tol = 1e-10;
    let mut y = start.clone();
    let mut working: Vec<usize> = (0..r)
        .filter(|&j| (ineq_rhs[j] - ineq.row(j).transpose().dot(&y)).abs() <= tol)
        .collect();

    for _ in 0..(4 * (r + p) + 16) {
        // equality-constrained projection onto { E y = e, C_W y = c_W }
        let mut rows = Vec::new();
        if eq.nrows() > 0 {
            rows.push(eq.clone());
        }
        if !working.is_empty() {
            let mut m = DMatrix::zeros(working.len(), p);
            for (i, &j) in working.iter().enumerate() {
                m.row_mut(i).copy_from(&ineq.row(j));
            }
            rows.push(m);
        }
        let a = linalg::vstack(&rows);
        let m = a.nrows();
        let mut rhs_vec = DVector::zeros(m);
        for i in 0..eq.nrows() {
            rhs_vec[i] = eq_rhs[i];
        }
        for (i, &j) in working.iter().enumerate() {
            rhs_vec[eq.nrows() + i] = ineq_rhs[j];
        }
        // KKT system [I Aᵀ; A 0] [ŷ; μ] = [z; b]
        let mut kkt = DMatrix::zeros(p + m, p + m);
        kkt.view_mut((0, 0), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        if m > 0 {
            kkt.view_mut((0, p), (p, m)).copy_from(&a.transpose());
            kkt.view_mut((p, 0), (m, p)).copy_from(&a);
        }
        let mut full_rhs = DVector::zeros(p + m);
        full_rhs.rows_mut(0, p).copy_from(z);
        if m > 0 {
            full_rhs.rows_mut(p, m).copy_from(&rhs_vec);
        }
        let sol = match kkt.lu().solve(&full_rhs) {
            Some(s) => s,
            None => {
                // degenerate working set; drop the newest constraint
                if working.pop().is_none() {
                    return Err(GeometryError::RankDeficient);
                }
                continue;
            }
        };
        let y_hat = DVector::from_iterator(p, sol.rows(0, p).iter().cloned());
        let mu = sol.rows(p, m).clone_owned();

        let step = &y_hat - &y;
        // blocking constraint among the non-working inequalities
        let mut alpha = 1.0;
        let mut blocking = None;
        for j in 0..r {
            if working.contains(&j) {
                continue;
            }
            let dir = ineq.row(j).transpose().dot(&step);
            if dir > tol {
                let slack = ineq_rhs[j] - ineq.row(j).transpose().dot(&y);
                let a_j = slack / dir;
                if a_j < alpha - tol {
                    alpha = a_j.max(0.0);
                    blocking = Some(j);
                }
            }
        }
        y += step * alpha;
        if let Some(j) = blocking {
            working.push(j);
            continue;
        }
        // full step taken: check signs of inequality multipliers
        let mut most_negative: Option<(usize, f64)> = None;
        for (i, &_j) in working.iter().enumerate() {
            let m_i = mu[eq.nrows() + i];
            if m_i < -tol && most_negative.map(|(_, v)| m_i < v).unwrap_or(true) {
                most_negative = Some((i, m_i));
            }
        }
        match most_negative {
            Some((i, _)) => {
                working.remove(i);
            }
            None => return Ok(y),
        }
    }
    Err(GeometryError::ProjectionFailed)
}

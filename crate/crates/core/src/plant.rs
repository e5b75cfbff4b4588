//! Plant models, steady-state maps and Lyapunov certificates.
//!
//! LTI plants get an explicit quadratic Lyapunov function from a shifted
//! Lyapunov solve; nonlinear plants carry user-supplied decay constants and
//! the converse-Lyapunov constants are evaluated from closed forms.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use libm::{exp, log};
use nalgebra::{DMatrix, DVector};

use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub enum PlantError {
    NotHurwitz { abscissa: f64 },
    SingularDynamics,
    DimensionMismatch { expected: usize, got: usize },
    LyapunovSolveFailed(String),
    LmiViolated { excess: f64 },
    InvalidConstants(String),
    NonDecayingSample,
    NoExplicitLyapunov,
}

impl core::fmt::Display for PlantError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PlantError::NotHurwitz { abscissa } => {
                write!(f, "matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")
            }
            PlantError::SingularDynamics => write!(f, "singular state matrix"),
            PlantError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            PlantError::LyapunovSolveFailed(msg) => write!(f, "Lyapunov solve failed: {msg}"),
            PlantError::LmiViolated { excess } => {
                write!(f, "Lyapunov LMI violated by {excess:.3e}")
            }
            PlantError::InvalidConstants(msg) => write!(f, "invalid constants: {msg}"),
            PlantError::NonDecayingSample => {
                write!(f, "sampled trajectory does not decay towards the steady state")
            }
            PlantError::NoExplicitLyapunov => {
                write!(f, "operation needs an explicit quadratic Lyapunov function")
            }
        }
    }
}

/// A plant ẋ = f(x, u) with a well-defined steady-state map h(u).
pub trait Plant: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError>;
    /// Jacobian ∇h(u), an n×p matrix.
    fn steady_state_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>, PlantError>;
}

/// ẋ = A x + B u + w with A Hurwitz; h(u) = H u + R w, H = −A⁻¹B, R = −A⁻¹.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w: DVector<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DVector<f64>) -> Result<Self, PlantError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(PlantError::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(PlantError::DimensionMismatch {
                expected: n,
                got: b.nrows(),
            });
        }
        if w.len() != n {
            return Err(PlantError::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
        let abscissa = linalg::spectral_abscissa(&a);
        if abscissa >= 0.0 {
            return Err(PlantError::NotHurwitz { abscissa });
        }
        let lu = a.clone().lu();
        let a_inv_b = lu.solve(&b).ok_or(PlantError::SingularDynamics)?;
        let a_inv = lu
            .solve(&DMatrix::identity(n, n))
            .ok_or(PlantError::SingularDynamics)?;
        Ok(Self {
            a,
            b,
            w,
            h: -a_inv_b,
            r: -a_inv,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn disturbance(&self) -> &DVector<f64> {
        &self.w
    }

    /// Steady-state input gain H = −A⁻¹B.
    pub fn steady_state_gain(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn spectral_abscissa(&self) -> f64 {
        linalg::spectral_abscissa(&self.a)
    }
}

impl Plant for LtiPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.w
    }

    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        if u.len() != self.input_dim() {
            return Err(PlantError::DimensionMismatch {
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        Ok(&self.h * u + &self.r * &self.w)
    }

    fn steady_state_jacobian(&self, _u: &DVector<f64>) -> Result<DMatrix<f64>, PlantError> {
        Ok(self.h.clone())
    }
}

/// Exponential-decay and Lipschitz constants of a nonlinear plant
/// (user-supplied or estimated; not verifiable globally).
#[derive(Debug, Clone, Copy)]
pub struct DecayConstants {
    pub overshoot: f64,
    pub decay_rate: f64,
    pub lip_x: f64,
    pub lip_u: f64,
    pub lip_h: f64,
}

type DynamicsFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type SteadyStateFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Nonlinear plant given by callables plus its decay constants.
pub struct NonlinearPlant {
    state_dim: usize,
    input_dim: usize,
    f: DynamicsFn,
    h: SteadyStateFn,
    jacobian_h: JacobianFn,
    pub constants: DecayConstants,
}

impl NonlinearPlant {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        f: DynamicsFn,
        h: SteadyStateFn,
        jacobian_h: JacobianFn,
        constants: DecayConstants,
    ) -> Result<Self, PlantError> {
        if constants.overshoot < 1.0 || constants.decay_rate <= 0.0 {
            return Err(PlantError::InvalidConstants(String::from(
                "need overshoot K >= 1 and decay rate tau > 0",
            )));
        }
        Ok(Self {
            state_dim,
            input_dim,
            f,
            h,
            jacobian_h,
            constants,
        })
    }
}

impl Plant for NonlinearPlant {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, u)
    }

    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        Ok((self.h)(u))
    }

    fn steady_state_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>, PlantError> {
        Ok((self.jacobian_h)(u))
    }
}

/// Constants (α, β, γ, ζ) of a plant Lyapunov function
/// α‖x−h(u)‖² ≤ W ≤ β‖x−h(u)‖², Ẇ ≤ −γ‖x−h(u)‖², ‖∇ᵤW‖ ≤ ζ‖x−h(u)‖,
/// with the explicit quadratic data (P, τ) in the LTI case.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub lti_data: Option<LtiCertificateData>,
}

#[derive(Debug, Clone)]
pub struct LtiCertificateData {
    pub p: DMatrix<f64>,
    pub tau: f64,
}

/// Tolerance for the certificate LMI λ_max(AᵀP + PA + 2τP) ≤ tol.
pub const LMI_TOL: f64 = 1e-9;

/// Shifted Lyapunov solve: τ = margin_fraction · (−spectral abscissa of A),
/// P solves (A+τI)ᵀP + P(A+τI) = −I. Retry with a smaller fraction if the
/// shifted matrix is defective enough to break the solve.
pub fn solve_lti_lyapunov(
    a: &DMatrix<f64>,
    margin_fraction: f64,
) -> Result<(DMatrix<f64>, f64), PlantError> {
    if !(0.0..1.0).contains(&margin_fraction) || margin_fraction <= 0.0 {
        return Err(PlantError::InvalidConstants(String::from(
            "margin_fraction must lie in (0, 1)",
        )));
    }
    let abscissa = linalg::spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(PlantError::NotHurwitz { abscissa });
    }
    let n = a.nrows();
    let tau = margin_fraction * (-abscissa);
    let shifted = a + DMatrix::<f64>::identity(n, n) * tau;
    let p = linalg::solve_lyapunov(&shifted, &(-DMatrix::<f64>::identity(n, n)))
        .map_err(PlantError::LyapunovSolveFailed)?;
    let excess = lmi_excess(a, &p, tau);
    if excess > LMI_TOL {
        return Err(PlantError::LmiViolated { excess });
    }
    if linalg::min_symmetric_eigenvalue(&p) <= 0.0 {
        return Err(PlantError::LyapunovSolveFailed(String::from(
            "solution not positive definite",
        )));
    }
    Ok((p, tau))
}

/// λ_max(AᵀP + PA + 2τP); ≤ 0 means the decay LMI holds.
pub fn lmi_excess(a: &DMatrix<f64>, p: &DMatrix<f64>, tau: f64) -> f64 {
    let m = a.transpose() * p + p * a + p * (2.0 * tau);
    linalg::symmetric_eigen_range(&m).1
}

/// Certificate for W(x,u) = ½‖x−h(u)‖²_P: γ = 2τλ_min(P), ζ = ‖PH‖,
/// α = ½λ_min(P), β = ½λ_max(P).
pub fn lti_certificate(
    plant: &LtiPlant,
    p: &DMatrix<f64>,
    tau: f64,
) -> Result<LyapunovCertificate, PlantError> {
    let excess = lmi_excess(plant.a(), p, tau);
    if excess > LMI_TOL {
        return Err(PlantError::LmiViolated { excess });
    }
    let (pmin, pmax) = linalg::symmetric_eigen_range(p);
    Ok(LyapunovCertificate {
        alpha: 0.5 * pmin,
        beta: 0.5 * pmax,
        gamma: 2.0 * tau * pmin,
        zeta: linalg::operator_norm(&(p * plant.steady_state_gain())),
        lti_data: Some(LtiCertificateData {
            p: p.clone(),
            tau,
        }),
    })
}

/// Output of the converse-Lyapunov construction for an exponentially stable
/// plant with decay constants (K, τ) and Lipschitz moduli (ℓx, ℓu, ℓ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverseConstants {
    pub horizon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub zeta_prime: f64,
    pub zeta: f64,
}

/// Explicit converse-Lyapunov constants:
/// T = ln(2K²)/(2τ), α = (1−e^{−2ℓxT})/(2ℓx), β = K²(1−e^{−2τT})/(2τ),
/// γ = 1/2, δ = 2K(1−e^{(ℓx−τ)T})/(τ−ℓx),
/// ζ′ = 2Kℓ′/(ℓx−τ)² · ((ℓxT−τT−1)e^{(ℓx−τ)T}+1) with ℓ′ = ℓxℓ+ℓu,
/// ζ = δℓ + ζ′.
///
/// δ and ζ′ have removable singularities at ℓx = τ which are evaluated by
/// series expansion when the gap is below 1e-8 relative.
pub fn converse_lyapunov_constants(
    constants: &DecayConstants,
) -> Result<ConverseConstants, PlantError> {
    let DecayConstants {
        overshoot: k,
        decay_rate: tau,
        lip_x: lx,
        lip_u: lu,
        lip_h: l,
    } = *constants;
    if k < 1.0 || tau <= 0.0 || lx <= 0.0 || lu <= 0.0 || l <= 0.0 {
        return Err(PlantError::InvalidConstants(String::from(
            "need K >= 1, tau > 0 and positive Lipschitz moduli",
        )));
    }
    let t = log(2.0 * k * k) / (2.0 * tau);
    let alpha = (1.0 - exp(-2.0 * lx * t)) / (2.0 * lx);
    let beta = k * k * (1.0 - exp(-2.0 * tau * t)) / (2.0 * tau);
    let gamma = 0.5;
    let s = lx - tau;
    let near_singular = s.abs() < 1e-8 * lx.max(tau);
    let delta = if near_singular {
        // limit of 2K(1 - e^{sT})/(-s) as s -> 0
        2.0 * k * t * (1.0 + 0.5 * s * t)
    } else {
        2.0 * k * (1.0 - exp(s * t)) / (tau - lx)
    };
    let l_prime = lx * l + lu;
    let zeta_prime = if near_singular {
        // ((sT-1)e^{sT}+1)/s² -> T²/2 + sT³/3
        2.0 * k * l_prime * (t * t / 2.0 + s * t * t * t / 3.0)
    } else {
        2.0 * k * l_prime / (s * s) * ((lx * t - tau * t - 1.0) * exp(s * t) + 1.0)
    };
    Ok(ConverseConstants {
        horizon: t,
        alpha,
        beta,
        gamma,
        delta,
        zeta_prime,
        zeta: delta * l + zeta_prime,
    })
}

/// Exponential-envelope fit of decay experiments: simulates the plant under
/// each constant probe input from each initial state, fits
/// log‖x(t)−h(û)‖ ≈ log(K‖x₀−h(û)‖) − τt by least squares, then inflates K
/// until the envelope K‖x₀−h‖e^{−τt} dominates every sample.
pub fn estimate_decay(
    plant: &dyn Plant,
    probe_inputs: &[DVector<f64>],
    x0_samples: &[DVector<f64>],
    dt: f64,
    horizon: f64,
) -> Result<(f64, f64), PlantError> {
    let mut slopes: Vec<f64> = Vec::new();
    let mut envelopes: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for u in probe_inputs {
        let target = plant.steady_state(u)?;
        for x0 in x0_samples {
            let d0 = (x0 - &target).norm();
            if d0 < 1e-12 {
                continue;
            }
            let mut x = x0.clone();
            let mut t = 0.0;
            let mut samples = Vec::new();
            while t <= horizon {
                let d = (&x - &target).norm();
                if d > 1e-12 {
                    samples.push((t, d));
                }
                // classic RK4 with frozen input
                let k1 = plant.dynamics(&x, u);
                let k2 = plant.dynamics(&(&x + &k1 * (dt / 2.0)), u);
                let k3 = plant.dynamics(&(&x + &k2 * (dt / 2.0)), u);
                let k4 = plant.dynamics(&(&x + &k3 * dt), u);
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
                t += dt;
            }
            let dend = (&x - &target).norm();
            if dend >= d0 {
                return Err(PlantError::NonDecayingSample);
            }
            // least-squares slope of log(d/d0) against t
            let mut stt = 0.0;
            let mut sty = 0.0;
            let mut st = 0.0;
            let mut sy = 0.0;
            let m = samples.len() as f64;
            for &(ti, di) in &samples {
                let y = log(di / d0);
                stt += ti * ti;
                sty += ti * y;
                st += ti;
                sy += y;
            }
            let slope = (m * sty - st * sy) / (m * stt - st * st);
            slopes.push(slope);
            envelopes.push((d0, samples));
        }
    }
    if slopes.is_empty() {
        return Err(PlantError::NonDecayingSample);
    }
    // the slowest decay across samples governs the envelope
    let tau = -slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if tau <= 0.0 {
        return Err(PlantError::NonDecayingSample);
    }
    let mut k: f64 = 1.0;
    for (d0, samples) in &envelopes {
        for &(ti, di) in samples {
            let needed = di / (d0 * exp(-tau * ti));
            k = k.max(needed);
        }
    }
    Ok((k, tau))
}

/// W(x,u) = ½‖x−h(u)‖²_P with exact gradients
/// ∇ₓW = P(x−h(u)), ∇ᵤW = −∇h(u)ᵀP(x−h(u)).
pub fn lyapunov_eval(
    cert: &LyapunovCertificate,
    plant: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(f64, DVector<f64>, DVector<f64>), PlantError> {
    let data = cert.lti_data.as_ref().ok_or(PlantError::NoExplicitLyapunov)?;
    let e = x - plant.steady_state(u)?;
    let pe = &data.p * &e;
    let w = 0.5 * e.dot(&pe);
    let grad_u = -(plant.steady_state_jacobian(u)?.transpose() * &pe);
    Ok((w, pe, grad_u))
}

//! Benchmark operator families on the periodic box `[0, 2pi]^d`.
//!
//! All families share the diffusion part `-Delta` (i.e. `sigma = sqrt(2)·I`)
//! and differ in drift `b`, reaction `f`, and what kind of reference
//! eigenpair is available:
//!
//! * **Fokker–Planck**: `L psi = -Delta psi - grad V . grad psi - (Delta V) psi`
//!   with `V(x) = sin(sum_i c_i cos x_i)`. First eigenpair is exactly
//!   `(0, e^{-V})`.
//! * **Linear Schrödinger**: `L psi = -Delta psi + V psi` with the separable
//!   potential `V(x) = sum_i c_i cos x_i`; reference eigenpairs come from the
//!   1-d spectral solver, tensorized.
//! * **Nonlinear (cubic) Schrödinger**: `L psi = -Delta psi + eps psi^3 + V psi`
//!   with a potential rigged so that `(-3, e^{phi}/c)`,
//!   `phi = (1/d) sum_i cos x_i`, is an exact eigenpair; `c` normalizes the
//!   eigenfunction to unit mean square over the box.
//! * **Double well**: `L psi = -Delta psi + V psi`,
//!   `V(x) = sum_i A_i cos(2 x_i)` — same spectral reference route, used for
//!   second-eigenpair experiments.

use crate::linalg::Mat;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("epsilon must be nonnegative, got {0}")]
    BadEpsilon(f64),
}

/// Which operator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    FokkerPlanck,
    LinearSchrodinger,
    NonlinearSchrodinger,
    DoubleWell,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::FokkerPlanck => "fokker_planck",
            ProblemKind::LinearSchrodinger => "linear_schrodinger",
            ProblemKind::NonlinearSchrodinger => "nonlinear_schrodinger",
            ProblemKind::DoubleWell => "double_well",
        }
    }
}

/// Reaction structure of the zeroth-order term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reaction {
    /// `f(x) * u` with `f` the value returned by [`Problem::potential`].
    Linear,
    /// `eps * u^3 + V(x) * u` with `V` the value returned by
    /// [`Problem::potential`].
    Cubic { epsilon: f64 },
}

/// One separable 1-d potential factor `coeff * cos(freq * x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor1d {
    pub coeff: f64,
    pub freq: u8,
}

/// A fully specified operator instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    kind: ProblemKind,
    dim: usize,
    coefficients: Vec<f64>,
    epsilon: f64,
    /// Squared normalization constant of the cubic family's eigenfunction;
    /// 1.0 for the other families.
    c_sq: f64,
}

/// Evenly spaced coefficients across `[lo, hi]`; a single coordinate takes
/// the upper endpoint (the value quoted for the 1-d instances).
fn linspace_coeffs(lo: f64, hi: f64, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![hi];
    }
    (0..d)
        .map(|i| lo + (hi - lo) * i as f64 / (d - 1) as f64)
        .collect()
}

impl Problem {
    /// Default coefficient vector for a family at dimension `d`.
    ///
    /// Fokker–Planck spreads over `[0.1, 1]`, the linear Schrödinger
    /// potential over `[0, 0.2]`. The double well uses one deep coordinate
    /// (`A_1 = 1.5`) and shallow remaining ones (`A_i = 0.2`) so the low
    /// eigenvalues are well separated; its 1-d instance is the nearly
    /// degenerate `A = 5`. The cubic family has no free coefficients.
    pub fn default_coefficients(kind: ProblemKind, d: usize) -> Vec<f64> {
        match kind {
            ProblemKind::FokkerPlanck => linspace_coeffs(0.1, 1.0, d),
            ProblemKind::LinearSchrodinger => linspace_coeffs(0.0, 0.2, d),
            ProblemKind::NonlinearSchrodinger => Vec::new(),
            ProblemKind::DoubleWell => {
                if d == 1 {
                    vec![5.0]
                } else {
                    let mut a = vec![0.2; d];
                    a[0] = 1.5;
                    a
                }
            }
        }
    }

    pub fn fokker_planck(dim: usize, coefficients: Option<Vec<f64>>) -> Result<Self, ProblemError> {
        Self::with_coeffs(ProblemKind::FokkerPlanck, dim, coefficients, 0.0)
    }

    pub fn linear_schrodinger(
        dim: usize,
        coefficients: Option<Vec<f64>>,
    ) -> Result<Self, ProblemError> {
        Self::with_coeffs(ProblemKind::LinearSchrodinger, dim, coefficients, 0.0)
    }

    pub fn double_well(dim: usize, coefficients: Option<Vec<f64>>) -> Result<Self, ProblemError> {
        Self::with_coeffs(ProblemKind::DoubleWell, dim, coefficients, 0.0)
    }

    /// Cubic Schrödinger instance. `epsilon` scales the cubic term; the
    /// potential's leading term carries the same factor, so the closed-form
    /// eigenpair survives any nonnegative `epsilon` (1.0 is the standard
    /// instance, 0.0 degenerates to a linear Schrödinger operator).
    pub fn nonlinear_schrodinger(dim: usize, epsilon: f64) -> Result<Self, ProblemError> {
        if dim == 0 {
            return Err(ProblemError::ZeroDim);
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(ProblemError::BadEpsilon(epsilon));
        }
        let c_sq = nls_c_squared(dim);
        Ok(Problem {
            kind: ProblemKind::NonlinearSchrodinger,
            dim,
            coefficients: Vec::new(),
            epsilon,
            c_sq,
        })
    }

    fn with_coeffs(
        kind: ProblemKind,
        dim: usize,
        coefficients: Option<Vec<f64>>,
        epsilon: f64,
    ) -> Result<Self, ProblemError> {
        if dim == 0 {
            return Err(ProblemError::ZeroDim);
        }
        let coefficients = match coefficients {
            Some(c) => {
                if c.len() != dim {
                    return Err(ProblemError::CoefficientCount { expected: dim, got: c.len() });
                }
                c
            }
            None => Self::default_coefficients(kind, dim),
        };
        Ok(Problem { kind, dim, coefficients, epsilon, c_sq: 1.0 })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Diffusion scale: `sigma = sigma_scalar * I`.
    pub fn sigma(&self) -> f64 {
        SQRT_2
    }

    pub fn reaction(&self) -> Reaction {
        match self.kind {
            ProblemKind::NonlinearSchrodinger => Reaction::Cubic { epsilon: self.epsilon },
            _ => Reaction::Linear,
        }
    }

    pub fn has_drift(&self) -> bool {
        self.kind == ProblemKind::FokkerPlanck
    }

    /// Drift `b(x)` for every row of `pts` (a `(k, d)` batch).
    pub fn drift(&self, pts: &Mat) -> Mat {
        assert_eq!(pts.cols(), self.dim);
        let mut out = Mat::zeros(pts.rows(), self.dim);
        if self.kind == ProblemKind::FokkerPlanck {
            for r in 0..pts.rows() {
                let x = pts.row(r);
                let s: f64 = x
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(&xi, &ci)| ci * xi.cos())
                    .sum();
                let cos_s = s.cos();
                let row = out.row_mut(r);
                for i in 0..self.dim {
                    // b = grad V with V = sin(sum_j c_j cos x_j).
                    row[i] = -self.coefficients[i] * x[i].sin() * cos_s;
                }
            }
        }
        out
    }

    /// Zeroth-order coefficient at every row of `pts`: the multiplier `f(x)`
    /// for linear reactions, or the potential `V(x)` entering the cubic
    /// reaction.
    pub fn potential(&self, pts: &Mat) -> Vec<f64> {
        assert_eq!(pts.cols(), self.dim);
        let mut out = Vec::with_capacity(pts.rows());
        for r in 0..pts.rows() {
            out.push(self.potential_at(pts.row(r)));
        }
        out
    }

    /// Scalar version of [`Problem::potential`].
    pub fn potential_at(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        match self.kind {
            ProblemKind::FokkerPlanck => {
                // f = -Delta V for V = sin(S), S = sum_j c_j cos x_j:
                // Delta V = -cos(S)·S - sin(S)·sum_j c_j^2 sin^2 x_j.
                let s: f64 = x
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(&xi, &ci)| ci * xi.cos())
                    .sum();
                let sq: f64 = x
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(&xi, &ci)| ci * ci * xi.sin() * xi.sin())
                    .sum();
                s * s.cos() + s.sin() * sq
            }
            ProblemKind::LinearSchrodinger => x
                .iter()
                .zip(&self.coefficients)
                .map(|(&xi, &ci)| ci * xi.cos())
                .sum(),
            ProblemKind::DoubleWell => x
                .iter()
                .zip(&self.coefficients)
                .map(|(&xi, &ai)| ai * (2.0 * xi).cos())
                .sum(),
            ProblemKind::NonlinearSchrodinger => {
                let d = self.dim as f64;
                let phi: f64 = x.iter().map(|&xi| xi.cos()).sum::<f64>() / d;
                let trig: f64 = x
                    .iter()
                    .map(|&xi| {
                        let s = xi.sin();
                        s * s / (d * d) - xi.cos() / d
                    })
                    .sum();
                -(self.epsilon / self.c_sq) * (2.0 * phi).exp() + trig - 3.0
            }
        }
    }

    /// Exact first eigenvalue, for the families that have one in closed form.
    pub fn lambda_exact(&self) -> Option<f64> {
        match self.kind {
            ProblemKind::FokkerPlanck => Some(0.0),
            ProblemKind::NonlinearSchrodinger => Some(-3.0),
            _ => None,
        }
    }

    /// Exact first eigenfunction value, where known in closed form.
    pub fn psi_exact(&self, x: &[f64]) -> Option<f64> {
        assert_eq!(x.len(), self.dim);
        match self.kind {
            ProblemKind::FokkerPlanck => {
                let s: f64 = x
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(&xi, &ci)| ci * xi.cos())
                    .sum();
                Some((-s.sin()).exp())
            }
            ProblemKind::NonlinearSchrodinger => {
                let d = self.dim as f64;
                let phi: f64 = x.iter().map(|&xi| xi.cos()).sum::<f64>() / d;
                Some(phi.exp() / self.c_sq.sqrt())
            }
            _ => None,
        }
    }

    /// Exact gradient of the first eigenfunction, where known.
    pub fn grad_psi_exact(&self, x: &[f64]) -> Option<Vec<f64>> {
        assert_eq!(x.len(), self.dim);
        match self.kind {
            ProblemKind::FokkerPlanck => {
                let psi = self.psi_exact(x).unwrap();
                let s: f64 = x
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(&xi, &ci)| ci * xi.cos())
                    .sum();
                let cos_s = s.cos();
                Some(
                    x.iter()
                        .zip(&self.coefficients)
                        .map(|(&xi, &ci)| psi * ci * xi.sin() * cos_s)
                        .collect(),
                )
            }
            ProblemKind::NonlinearSchrodinger => {
                let psi = self.psi_exact(x).unwrap();
                let d = self.dim as f64;
                Some(x.iter().map(|&xi| -psi * xi.sin() / d).collect())
            }
            _ => None,
        }
    }

    /// Per-coordinate potential factors for the separable families, feeding
    /// the spectral reference solver.
    pub fn spectral_factors(&self) -> Option<Vec<Factor1d>> {
        match self.kind {
            ProblemKind::LinearSchrodinger => Some(
                self.coefficients
                    .iter()
                    .map(|&c| Factor1d { coeff: c, freq: 1 })
                    .collect(),
            ),
            ProblemKind::DoubleWell => Some(
                self.coefficients
                    .iter()
                    .map(|&a| Factor1d { coeff: a, freq: 2 })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Squared normalization constant of the cubic family (`1.0` elsewhere).
    pub fn normalization_c_squared(&self) -> f64 {
        self.c_sq
    }
}

/// `c^2 = mean over the box of e^{2 phi}`, computed by the trapezoid rule on
/// a uniform grid. The integrand is periodic and analytic, so the rule
/// converges geometrically; 2048 points is far past machine precision.
fn nls_c_squared(dim: usize) -> f64 {
    let n = 2048;
    let d = dim as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let theta = 2.0 * PI * k as f64 / n as f64;
        acc += ((2.0 / d) * theta.cos()).exp();
    }
    (acc / n as f64).powi(dim as i32)
}

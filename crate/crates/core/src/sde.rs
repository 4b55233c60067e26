//! Forward diffusion paths and pathwise propagation of the candidate
//! eigenfunction value along them.
//!
//! The training signal is built by simulating `X_{n+1} = X_n + sigma dW_n`
//! from uniform starting points and carrying a scalar value `U_n` alongside
//! each path:
//!
//! ```text
//! U_{n+1} = U_n + (f_n - lambda U_n - (b . g_n) / sigma) dt_n + g_n . dW_n
//! ```
//!
//! where `g_n` is the scaled-gradient head evaluated at `X_n`, `f_n` is the
//! zeroth-order term (`f(X_n) U_n` for linear operators, a reaction such as
//! `eps U_n^3 + V(X_n) U_n` for semilinear ones), and *the same* increments
//! `dW_n` drive both the state and the value. At an exact eigenpair, with
//! `U_0 = psi(X_0)`, the terminal value matches `psi(X_T)` up to the time
//! discretization error; the training loss penalizes that mismatch.
//!
//! Propagation happens on an autodiff [`Tape`], so `U_T` stays
//! differentiable with respect to whatever parameters the heads expose. Path
//! positions and increments enter as constants: gradients flow through the
//! heads, not through the simulated paths.
//!
//! Paths live on the torus only through the heads' periodicity; positions
//! are not wrapped back into `[0, 2pi)`, which keeps increments exact and
//! costs nothing because every shipped ansatz is `2pi`-periodic.

use crate::autodiff::{Shape, Tape, Var};
use crate::linalg::Mat;
use crate::problems::{Problem, Reaction};
use crate::reference::RefPair;
use crate::rng::{RunRng, StreamKind};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("time grid must run 0 = t_0 < t_1 < ... < t_N with N >= 1")]
    BadGrid,
    #[error("diffusion coefficient must be finite and positive, got {0}")]
    BadSigma(f64),
    #[error("normalizer must be finite and nonzero, got {0}")]
    BadNormalizer(f64),
    #[error("clip bounds must be finite with lower < upper, got [{0}, {1}]")]
    BadClip(f64, f64),
    #[error("non-finite value at propagation level {level}")]
    NonFinite { level: usize },
}

/// Partition `0 = t_0 < ... < t_N` of the simulation horizon.
#[derive(Clone, Debug)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n` steps over `[0, horizon]`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self, SdeError> {
        if !(horizon > 0.0) || !horizon.is_finite() || n == 0 {
            return Err(SdeError::BadGrid);
        }
        let knots = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        Ok(TimeGrid { knots })
    }

    /// Arbitrary strictly increasing knots starting at zero.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self, SdeError> {
        if knots.len() < 2 || knots[0] != 0.0 {
            return Err(SdeError::BadGrid);
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(SdeError::BadGrid);
            }
        }
        Ok(TimeGrid { knots })
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.knots[n + 1] - self.knots[n]
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// A batch of `K` simulated paths: `N + 1` state levels and the `N`
/// increment levels that produced them, all `(K, d)` matrices.
#[derive(Clone, Debug)]
pub struct PathBatch {
    grid: TimeGrid,
    /// Levels `X_0 .. X_N`.
    pub x: Vec<Mat>,
    /// Increments `dW_0 .. dW_{N-1}`.
    pub dw: Vec<Mat>,
}

impl PathBatch {
    /// Assemble a batch from precomputed levels (used by tests that need
    /// hand-crafted paths, e.g. noise-free ones). Shapes must be coherent.
    pub fn new(grid: TimeGrid, x: Vec<Mat>, dw: Vec<Mat>) -> Result<Self, SdeError> {
        let n = grid.steps();
        if x.len() != n + 1 || dw.len() != n || x[0].rows() == 0 {
            return Err(SdeError::BadGrid);
        }
        let (k, d) = (x[0].rows(), x[0].cols());
        let coherent = x.iter().all(|m| m.rows() == k && m.cols() == d)
            && dw.iter().all(|m| m.rows() == k && m.cols() == d);
        if !coherent {
            return Err(SdeError::BadGrid);
        }
        Ok(PathBatch { grid, x, dw })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.x[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.x[0].cols()
    }

    pub fn initial(&self) -> &Mat {
        &self.x[0]
    }

    pub fn terminal(&self) -> &Mat {
        self.x.last().unwrap()
    }

    /// All pre-terminal levels stacked into one `(N * K, d)` matrix,
    /// level-major: rows `n*K .. (n+1)*K` hold level `n`. Evaluating a head
    /// once on this stack and slicing per level is cheaper than `N` separate
    /// evaluations and, because every head is row-independent, produces
    /// bitwise identical values.
    pub fn stacked_preterminal(&self) -> Mat {
        let (k, d, n) = (self.paths(), self.dim(), self.grid.steps());
        let mut out = Mat::zeros(n * k, d);
        for (lvl, m) in self.x[..n].iter().enumerate() {
            out.as_mut_slice()[lvl * k * d..(lvl + 1) * k * d].copy_from_slice(m.as_slice());
        }
        out
    }
}

/// `K` starting points drawn uniformly from `[0, 2pi)^d`.
///
/// Draws are addressed per path: path `p` of the batch uses stream
/// `(kind, step, path_offset + p)`, so a shard generating paths
/// `[path_offset, path_offset + k)` reproduces exactly the rows a
/// whole-batch draw would have produced.
pub fn sample_initial(
    k: usize,
    dim: usize,
    rng: &RunRng,
    kind: StreamKind,
    step: u64,
    path_offset: u64,
) -> Mat {
    let mut out = Mat::zeros(k, dim);
    for p in 0..k {
        let mut s = rng.stream(kind, step, path_offset + p as u64);
        for v in out.row_mut(p) {
            *v = s.gen_range(0.0..TAU);
        }
    }
    out
}

/// Simulate `X_{n+1} = X_n + sigma dW_n` from the given starting points,
/// with `dW_n ~ Normal(0, dt_n I)` drawn from per-path Wiener streams (path
/// `p` uses stream `(Wiener, step, path_offset + p)`).
pub fn simulate_forward(
    x0: &Mat,
    grid: &TimeGrid,
    sigma: f64,
    rng: &RunRng,
    step: u64,
    path_offset: u64,
) -> Result<PathBatch, SdeError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SdeError::BadSigma(sigma));
    }
    let (k, d, n) = (x0.rows(), x0.cols(), grid.steps());
    if k == 0 || d == 0 {
        return Err(SdeError::BadGrid);
    }
    let sqrt_dt: Vec<f64> = (0..n).map(|i| grid.dt(i).sqrt()).collect();
    let mut dw = vec![Mat::zeros(k, d); n];
    for p in 0..k {
        let mut s = rng.stream(StreamKind::Wiener, step, path_offset + p as u64);
        for (lvl, m) in dw.iter_mut().enumerate() {
            for v in m.row_mut(p) {
                let z: f64 = s.sample(StandardNormal);
                *v = z * sqrt_dt[lvl];
            }
        }
    }
    let mut x = Vec::with_capacity(n + 1);
    x.push(x0.clone());
    for m in &dw {
        let prev = x.last().unwrap();
        let mut next = Mat::zeros(k, d);
        for (o, (&xp, &inc)) in next
            .as_mut_slice()
            .iter_mut()
            .zip(prev.as_slice().iter().zip(m.as_slice()))
        {
            *o = xp + sigma * inc;
        }
        x.push(next);
    }
    Ok(PathBatch { grid: grid.clone(), x, dw })
}

/// The two network outputs and the eigenvalue, abstracted so propagation can
/// run against the trainable ansatz or against closed-form oracles.
///
/// Implementations receive point batches as plain matrices and are free to
/// put either constants (oracles) or parameter-dependent graphs (networks)
/// on the tape. A [`crate::network::Bound`] implementation must have been
/// bound on the *same* tape it is asked to evaluate on.
pub trait Heads {
    /// Candidate eigenfunction at a `(k, d)` batch: `Vec(k)` node.
    fn psi(&self, tape: &mut Tape, pts: &Mat) -> Var;
    /// Scaled gradient (`sigma^T grad psi` ansatz) at a `(k, d)` batch:
    /// `(k, d)` node.
    fn scaled_grad(&self, tape: &mut Tape, pts: &Mat) -> Var;
    /// Current eigenvalue: scalar node.
    fn lambda(&self, tape: &mut Tape) -> Var;
}

/// Trainable heads: both networks plus the eigenvalue parameter.
pub struct NetHeads<'a> {
    pub bound: &'a crate::network::Bound,
}

impl Heads for NetHeads<'_> {
    fn psi(&self, tape: &mut Tape, pts: &Mat) -> Var {
        let x = tape.constant(pts.as_slice(), Shape::Mat(pts.rows(), pts.cols()));
        self.bound.psi(tape, x)
    }

    fn scaled_grad(&self, tape: &mut Tape, pts: &Mat) -> Var {
        let x = tape.constant(pts.as_slice(), Shape::Mat(pts.rows(), pts.cols()));
        self.bound.scaled_grad(tape, x)
    }

    fn lambda(&self, _tape: &mut Tape) -> Var {
        self.bound.lambda
    }
}

/// Oracle heads built from closures; everything enters the tape as
/// constants. Intended for tests and diagnostics.
pub struct FnHeads<P, G>
where
    P: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub psi: P,
    pub grad: G,
    pub lambda: f64,
}

impl<P, G> Heads for FnHeads<P, G>
where
    P: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn psi(&self, tape: &mut Tape, pts: &Mat) -> Var {
        let vals: Vec<f64> = (0..pts.rows()).map(|r| (self.psi)(pts.row(r))).collect();
        tape.constant(&vals, Shape::Vec(pts.rows()))
    }

    fn scaled_grad(&self, tape: &mut Tape, pts: &Mat) -> Var {
        let mut vals = Vec::with_capacity(pts.rows() * pts.cols());
        for r in 0..pts.rows() {
            let g = (self.grad)(pts.row(r));
            assert_eq!(g.len(), pts.cols(), "gradient oracle has wrong width");
            vals.extend_from_slice(&g);
        }
        tape.constant(&vals, Shape::Mat(pts.rows(), pts.cols()))
    }

    fn lambda(&self, tape: &mut Tape) -> Var {
        tape.constant_scalar(self.lambda)
    }
}

/// Oracle heads from a reference eigenpair: `psi` as-is and `sigma * grad
/// psi` for the scaled-gradient head.
pub struct RefHeads<'a> {
    pub pair: &'a RefPair,
    pub sigma: f64,
}

impl Heads for RefHeads<'_> {
    fn psi(&self, tape: &mut Tape, pts: &Mat) -> Var {
        let vals: Vec<f64> = (0..pts.rows()).map(|r| self.pair.psi(pts.row(r))).collect();
        tape.constant(&vals, Shape::Vec(pts.rows()))
    }

    fn scaled_grad(&self, tape: &mut Tape, pts: &Mat) -> Var {
        let mut vals = Vec::with_capacity(pts.rows() * pts.cols());
        for r in 0..pts.rows() {
            for g in self.pair.grad(pts.row(r)) {
                vals.push(self.sigma * g);
            }
        }
        tape.constant(&vals, Shape::Mat(pts.rows(), pts.cols()))
    }

    fn lambda(&self, tape: &mut Tape) -> Var {
        tape.constant_scalar(self.pair.lambda())
    }
}

/// How the initial value `U_0 = psi(X_0) / Z` divides by the running
/// normalizer.
///
/// `Detached` treats `Z` as a plain number (the default training mode: no
/// gradient flows into the normalizer). `OnTape` divides by a scalar tape
/// node so the normalizer stays inside the differentiated graph.
#[derive(Clone, Copy, Debug)]
pub enum Normalizer {
    Detached(f64),
    OnTape(Var),
}

/// Clipping window applied to the propagated value after each semilinear
/// update.
#[derive(Clone, Copy, Debug)]
pub struct ClipBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ClipBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, SdeError> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(SdeError::BadClip(lower, upper));
        }
        Ok(ClipBounds { lower, upper })
    }

    pub fn symmetric(radius: f64) -> Result<Self, SdeError> {
        Self::new(-radius, radius)
    }
}

/// Result of propagating a batch: one `Vec(K)` tape node per time level
/// (`u[0]` is `U_0`, `u[N]` is the terminal value entering the loss) and a
/// count of clip activations across all paths and steps.
#[derive(Debug)]
pub struct Propagated {
    pub u: Vec<Var>,
    pub clip_events: u64,
}

/// Linear propagation: the zeroth-order term is `f(X_n) U_n` with `f` the
/// problem's scalar coefficient, and values are never clipped. Works for any
/// problem; a semilinear problem's reaction is *not* applied here, its
/// potential is used as a plain linear coefficient (useful for degeneration
/// checks).
pub fn propagate_linear(
    tape: &mut Tape,
    heads: &dyn Heads,
    problem: &Problem,
    batch: &PathBatch,
    z: Normalizer,
) -> Result<Propagated, SdeError> {
    propagate(tape, heads, problem, batch, z, None, false)
}

/// Semilinear propagation: the zeroth-order term comes from the problem's
/// reaction evaluated on the *unclipped* running value, and each updated
/// value is clipped into `bounds` before the next step (the initial value is
/// not clipped).
pub fn propagate_semilinear(
    tape: &mut Tape,
    heads: &dyn Heads,
    problem: &Problem,
    batch: &PathBatch,
    z: Normalizer,
    bounds: ClipBounds,
) -> Result<Propagated, SdeError> {
    propagate(tape, heads, problem, batch, z, Some(bounds), true)
}

fn propagate(
    tape: &mut Tape,
    heads: &dyn Heads,
    problem: &Problem,
    batch: &PathBatch,
    z: Normalizer,
    clip: Option<ClipBounds>,
    with_reaction: bool,
) -> Result<Propagated, SdeError> {
    let (k, d, n) = (batch.paths(), batch.dim(), batch.grid().steps());
    assert_eq!(d, problem.dim(), "path dimension does not match problem");
    let sigma = problem.sigma();

    // Scaled-gradient head over every pre-terminal level at once.
    let stacked = batch.stacked_preterminal();
    let g_all = heads.scaled_grad(tape, &stacked);
    assert_eq!(g_all.shape, Shape::Mat(n * k, d), "scaled-gradient head shape");
    let lambda = heads.lambda(tape);
    assert_eq!(lambda.shape, Shape::Scalar, "lambda head shape");

    let psi0 = heads.psi(tape, batch.initial());
    assert_eq!(psi0.shape, Shape::Vec(k), "psi head shape");
    let mut u = match z {
        Normalizer::Detached(zv) => {
            if !zv.is_finite() || zv == 0.0 {
                return Err(SdeError::BadNormalizer(zv));
            }
            tape.scale(psi0, 1.0 / zv)
        }
        Normalizer::OnTape(zvar) => {
            assert_eq!(zvar.shape, Shape::Scalar, "normalizer node shape");
            let zv = tape.scalar_value(zvar);
            if !zv.is_finite() || zv == 0.0 {
                return Err(SdeError::BadNormalizer(zv));
            }
            let r = tape.recip(zvar);
            tape.mul_scalar(psi0, r)
        }
    };
    check_finite(tape, u, 0)?;

    let mut levels = Vec::with_capacity(n + 1);
    levels.push(u);
    let mut clip_events = 0u64;

    for step in 0..n {
        let g_n = tape.row_slice(g_all, step * k, k);

        // Zeroth-order term of the update.
        let zero_order = if with_reaction {
            match problem.reaction() {
                Reaction::Linear => {
                    let f_n = tape.constant(&problem.potential(&batch.x[step]), Shape::Vec(k));
                    tape.mul(f_n, u)
                }
                Reaction::Cubic { epsilon } => {
                    let v_n = tape.constant(&problem.potential(&batch.x[step]), Shape::Vec(k));
                    let u_sq = tape.mul(u, u);
                    let u_cu = tape.mul(u_sq, u);
                    let cubic = tape.scale(u_cu, epsilon);
                    let vu = tape.mul(v_n, u);
                    tape.add(cubic, vu)
                }
            }
        } else {
            let f_n = tape.constant(&problem.potential(&batch.x[step]), Shape::Vec(k));
            tape.mul(f_n, u)
        };

        let lu = tape.mul_scalar(u, lambda);
        let mut integrand = tape.sub(zero_order, lu);
        if problem.has_drift() {
            // b(X_n) . g_n / sigma, entering with a minus sign.
            let mut b = problem.drift(&batch.x[step]);
            for v in b.as_mut_slice() {
                *v /= sigma;
            }
            let b_n = tape.constant(b.as_slice(), Shape::Mat(k, d));
            let ddot = tape.row_dot(b_n, g_n);
            integrand = tape.sub(integrand, ddot);
        }
        let inc = tape.scale(integrand, batch.grid().dt(step));

        let dw_n = tape.constant(batch.dw[step].as_slice(), Shape::Mat(k, d));
        let noise = tape.row_dot(g_n, dw_n);

        let drifted = tape.add(u, inc);
        let raw = tape.add(drifted, noise);
        check_finite(tape, raw, step + 1)?;

        u = if let Some(b) = clip {
            clip_events += tape
                .value(raw)
                .iter()
                .filter(|&&v| v < b.lower || v > b.upper)
                .count() as u64;
            tape.clip(raw, b.lower, b.upper)
        } else {
            raw
        };
        levels.push(u);
    }

    Ok(Propagated { u: levels, clip_events })
}

fn check_finite(tape: &Tape, v: Var, level: usize) -> Result<(), SdeError> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SdeError::NonFinite { level })
    }
}

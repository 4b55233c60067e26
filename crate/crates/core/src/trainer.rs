//! The training loop: batch sampling, propagation, the fixed-point loss,
//! Adam updates of both heads and the eigenvalue, piecewise-constant
//! schedules, and the two-phase protocol for excited eigenpairs.
//!
//! One step does, in order: sample starting points and Brownian paths for
//! the batch; estimate the batch normalizer and fold it into the moving
//! average `Z`; propagate `U_0 = psi(X_0)/Z` along the paths; assemble the
//! loss
//!
//! ```text
//! (1/K) sum_k ( eta1 |psi(X_T^k)/Z - U_T^k|^2
//!             + eta2 |G(X_T^k) - sigma^T grad(psi/Z)(X_T^k)|^2 )
//!   + eta3 (Z0 - Z)^+
//! ```
//!
//! backpropagate, and take one Adam step. Only the eigenfunction head is
//! divided by `Z`; the gradient head `G` is compared unnormalized. The
//! gradient-consistency term needs the derivative of `psi`'s *input*
//! gradient with respect to parameters, which the tape provides by
//! recording the inner backward pass as ops.
//!
//! By default `Z` is treated as a constant inside a step (the moving
//! average exists precisely to decouple the loss from the current batch's
//! estimate); `grad_through_z` switches to differentiating through the
//! batch estimate, the EMA, and the hinge, for study.
//!
//! Determinism: all randomness is addressed by (purpose, step, path), so
//! histories are reproducible bit for bit for a given configuration,
//! including across checkpoint/resume and regardless of worker count. The
//! batch is cut into fixed `shard_size` pieces whose partial results merge
//! in shard order; the shard size is part of the configuration, not a
//! runtime choice, so reductions are associativity-stable too.

use crate::autodiff::{AutodiffError, Shape, Tape};
use crate::checkpoint::Checkpoint;
use crate::linalg::Mat;
use crate::metrics::{self, MetricsError, ValidationSet};
use crate::network::{NetworkSpec, Params};
use crate::normalization::{batch_normalizer, ema, hinge};
use crate::problems::{Problem, Reaction};
use crate::reference::RefPair;
use crate::rng::{RunRng, StreamKind};
use crate::sde::{
    propagate_linear, propagate_semilinear, sample_initial, simulate_forward, ClipBounds,
    NetHeads, Normalizer, PathBatch, SdeError, TimeGrid,
};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("propagated state became non-finite at step {step} (time level {level})")]
    NonFiniteState { step: u64, level: usize },
    #[error("batch normalizer degenerated to zero at step {step} with no prior value")]
    DegenerateNormalizer { step: u64 },
    #[error("checkpoint does not match this run: {0}")]
    CheckpointMismatch(String),
}

/// Right-continuous piecewise-constant lookup: `values[0]` applies through
/// step `boundaries[0]`, `values[1]` from `boundaries[0] + 1` through
/// `boundaries[1]`, and so on ("this rate for the first 30000 steps, that
/// one from the 30001st").
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    values: Vec<f64>,
    boundaries: Vec<u64>,
}

impl Schedule {
    pub fn new(values: Vec<f64>, boundaries: Vec<u64>) -> Result<Self, TrainError> {
        if values.is_empty() {
            return Err(TrainError::Config("schedule needs at least one value".into()));
        }
        if values.len() != boundaries.len() + 1 {
            return Err(TrainError::Config(format!(
                "schedule with {} values needs {} boundaries, got {}",
                values.len(),
                values.len() - 1,
                boundaries.len()
            )));
        }
        if !boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(TrainError::Config("schedule boundaries must be strictly increasing".into()));
        }
        if boundaries.first().is_some_and(|&b| b == 0) {
            return Err(TrainError::Config("schedule boundaries start after step 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Config("schedule values must be finite".into()));
        }
        Ok(Schedule { values, boundaries })
    }

    pub fn constant(value: f64) -> Self {
        Schedule { values: vec![value], boundaries: Vec::new() }
    }

    /// Value in effect at 1-based step `step`.
    pub fn at(&self, step: u64) -> f64 {
        let idx = self.boundaries.partition_point(|&b| b < step);
        self.values[idx]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn boundaries(&self) -> &[u64] {
        &self.boundaries
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hp: AdamParams,
}

impl AdamState {
    pub fn new(n: usize, hp: AdamParams) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, hp }
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (b1, b2, eps) = (self.hp.beta1, self.hp.beta2, self.hp.epsilon);
        let mc = 1.0 - b1.powi(self.t as i32);
        let vc = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / mc;
            let vhat = self.v[i] / vc;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Loss weights and the value-clipping window.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub z0: f64,
    pub clip: ClipBounds,
    /// Fan shard work out to the thread pool (results merge in shard order
    /// either way).
    pub parallel: bool,
}

/// How the loss treats the normalizer for the current step.
#[derive(Clone, Copy, Debug)]
pub enum ZPolicy {
    /// Use this value, no gradient through it (tests, finite differences).
    Fixed(f64),
    /// Estimate from the batch and fold into the EMA; `prev = None` marks
    /// the first step (the estimate is adopted directly). With
    /// `differentiate`, the estimate, the EMA and the hinge all stay on the
    /// tape (requires a single shard).
    Ema { prev: Option<f64>, gamma: f64, differentiate: bool },
}

/// One full loss evaluation: value, flat parameter gradient, the normalizer
/// used, and clip statistics.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub z: f64,
    pub clip_events: u64,
}

/// Eigenfunction head values on a point batch, numerically (no gradients).
fn psi_values(params: &Params, points: &Mat) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = params.bind_const(&mut tape);
    let x = tape.constant(points.as_slice(), Shape::Mat(points.rows(), points.cols()));
    let psi = bound.psi(&mut tape, x);
    tape.value(psi).to_vec()
}

struct ShardOutcome {
    loss_sum: f64,
    grad: Vec<f64>,
    clip_events: u64,
}

/// Propagate one shard, assemble its (unweighted-by-K) loss sum, and
/// backpropagate to a flat gradient.
fn shard_loss(
    problem: &Problem,
    params: &Params,
    batch: &PathBatch,
    z: f64,
    cfg: &LossConfig,
) -> Result<ShardOutcome, TrainError> {
    let (k, d) = (batch.paths(), batch.dim());
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let heads = NetHeads { bound: &bound };
    let prop = match problem.reaction() {
        Reaction::Linear => {
            propagate_linear(&mut tape, &heads, problem, batch, Normalizer::Detached(z))?
        }
        Reaction::Cubic { .. } => propagate_semilinear(
            &mut tape,
            &heads,
            problem,
            batch,
            Normalizer::Detached(z),
            cfg.clip,
        )?,
    };
    let u_t = *prop.u.last().unwrap();

    let x_t = tape.leaf(batch.terminal().as_slice(), Shape::Mat(k, d));
    let (psi_t, psi_t_xgrad) = bound.psi_with_input_grad(&mut tape, x_t)?;
    let g_t = bound.scaled_grad(&mut tape, x_t);

    let psi_t_n = tape.scale(psi_t, 1.0 / z);
    let target_grad = tape.scale(psi_t_xgrad, problem.sigma() / z);

    let d1 = tape.sub(psi_t_n, u_t);
    let t1 = tape.square(d1);
    let d2 = tape.sub(g_t, target_grad);
    let t2 = tape.row_dot(d2, d2);
    let w1 = tape.scale(t1, cfg.eta1);
    let w2 = tape.scale(t2, cfg.eta2);
    let per_path = tape.add(w1, w2);
    let root = tape.sum(per_path);

    let grads = tape.backward(root)?;
    let mut flat = vec![0.0; params.num_params()];
    bound.collect_gradients(&grads, &mut flat);
    Ok(ShardOutcome {
        loss_sum: tape.scalar_value(root),
        grad: flat,
        clip_events: prop.clip_events,
    })
}

/// Loss and gradient through the fully differentiated normalizer: batch
/// estimate, EMA, initial/terminal divisions and hinge all live on one tape.
fn whole_batch_loss_grad_z(
    problem: &Problem,
    params: &Params,
    batch: &PathBatch,
    prev: Option<f64>,
    gamma: f64,
    cfg: &LossConfig,
) -> Result<StepResult, TrainError> {
    let (k, d) = (batch.paths(), batch.dim());
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let heads = NetHeads { bound: &bound };

    let x0 = tape.constant(batch.initial().as_slice(), Shape::Mat(k, d));
    let psi0 = bound.psi(&mut tape, x0);
    let total = tape.sum(psi0);
    let sign = {
        let v = tape.scalar_value(total);
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let z_var = if sign == 0.0 {
        // Degenerate batch: keep the previous normalizer as a constant
        // (there is nothing to differentiate through).
        match prev {
            Some(p) => tape.constant_scalar(p),
            None => return Err(TrainError::DegenerateNormalizer { step: 0 }),
        }
    } else {
        let sq = tape.square(psi0);
        let msq = tape.sum(sq);
        let msq = tape.scale(msq, 1.0 / k as f64);
        let rms = tape.sqrt(msq);
        let zhat = tape.scale(rms, sign);
        match prev {
            Some(p) => {
                let scaled = tape.scale(zhat, 1.0 - gamma);
                tape.shift(scaled, gamma * p)
            }
            None => zhat,
        }
    };

    let prop = match problem.reaction() {
        Reaction::Linear => {
            propagate_linear(&mut tape, &heads, problem, batch, Normalizer::OnTape(z_var))?
        }
        Reaction::Cubic { .. } => propagate_semilinear(
            &mut tape,
            &heads,
            problem,
            batch,
            Normalizer::OnTape(z_var),
            cfg.clip,
        )?,
    };
    let u_t = *prop.u.last().unwrap();

    let x_t = tape.leaf(batch.terminal().as_slice(), Shape::Mat(k, d));
    let (psi_t, psi_t_xgrad) = bound.psi_with_input_grad(&mut tape, x_t)?;
    let g_t = bound.scaled_grad(&mut tape, x_t);

    let r = tape.recip(z_var);
    let psi_t_n = tape.mul_scalar(psi_t, r);
    let over_z = tape.mul_scalar(psi_t_xgrad, r);
    let target_grad = tape.scale(over_z, problem.sigma());

    let d1 = tape.sub(psi_t_n, u_t);
    let t1 = tape.square(d1);
    let d2 = tape.sub(g_t, target_grad);
    let t2 = tape.row_dot(d2, d2);
    let w1 = tape.scale(t1, cfg.eta1);
    let w2 = tape.scale(t2, cfg.eta2);
    let per_path = tape.add(w1, w2);
    let mean = tape.sum(per_path);
    let mean = tape.scale(mean, 1.0 / k as f64);

    let neg_z = tape.neg(z_var);
    let gap = tape.shift(neg_z, cfg.z0);
    let hinge_var = tape.relu(gap);
    let weighted_hinge = tape.scale(hinge_var, cfg.eta3);
    let root = tape.add(mean, weighted_hinge);

    let grads = tape.backward(root)?;
    let mut flat = vec![0.0; params.num_params()];
    bound.collect_gradients(&grads, &mut flat);
    Ok(StepResult {
        loss: tape.scalar_value(root),
        grad: flat,
        z: tape.scalar_value(z_var),
        clip_events: prop.clip_events,
    })
}

/// Evaluate the training loss and its parameter gradient on presampled
/// paths. `batches` are the batch's shards in path order; the loss averages
/// over all their paths together.
pub fn step_loss_and_gradient(
    problem: &Problem,
    params: &Params,
    batches: &[PathBatch],
    z_policy: ZPolicy,
    cfg: &LossConfig,
) -> Result<StepResult, TrainError> {
    if batches.is_empty() {
        return Err(TrainError::Config("need at least one path shard".into()));
    }
    let k_total: usize = batches.iter().map(|b| b.paths()).sum();

    // Resolve the normalizer for this step.
    let (z, differentiate) = match z_policy {
        ZPolicy::Fixed(z) => (z, false),
        ZPolicy::Ema { prev, gamma, differentiate } => {
            if differentiate {
                if batches.len() != 1 {
                    return Err(TrainError::Config(
                        "grad_through_z needs the whole batch on a single shard".into(),
                    ));
                }
                let out =
                    whole_batch_loss_grad_z(problem, params, &batches[0], prev, gamma, cfg)?;
                if !out.loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { step: 0 });
                }
                return Ok(out);
            }
            let psi0: Vec<f64> = if cfg.parallel && batches.len() > 1 {
                let per: Vec<Vec<f64>> =
                    batches.par_iter().map(|b| psi_values(params, b.initial())).collect();
                per.into_iter().flatten().collect()
            } else {
                let mut all = Vec::with_capacity(k_total);
                for b in batches {
                    all.extend(psi_values(params, b.initial()));
                }
                all
            };
            let zhat = batch_normalizer(&psi0);
            let z = if zhat == 0.0 {
                match prev {
                    Some(p) => p,
                    None => return Err(TrainError::DegenerateNormalizer { step: 0 }),
                }
            } else {
                match prev {
                    Some(p) => ema(p, gamma, zhat),
                    None => zhat,
                }
            };
            // A blown-up network drives the normalizer non-finite before the
            // loss itself is ever assembled; catch it here so the failure
            // carries the training step instead of a bare input-validation
            // error from the propagator. The running average can also cancel
            // to exactly zero, which no later division would survive.
            if !z.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: 0 });
            }
            if z == 0.0 {
                return Err(TrainError::DegenerateNormalizer { step: 0 });
            }
            (z, false)
        }
    };
    debug_assert!(!differentiate);

    let outcomes: Vec<ShardOutcome> = if cfg.parallel && batches.len() > 1 {
        batches
            .par_iter()
            .map(|b| shard_loss(problem, params, b, z, cfg))
            .collect::<Result<_, _>>()?
    } else {
        let mut v = Vec::with_capacity(batches.len());
        for b in batches {
            v.push(shard_loss(problem, params, b, z, cfg)?);
        }
        v
    };

    // Ordered merge: shard order defines the reduction order.
    let inv_k = 1.0 / k_total as f64;
    let mut grad = vec![0.0; params.num_params()];
    let mut loss_sum = 0.0;
    let mut clip_events = 0u64;
    for o in &outcomes {
        loss_sum += o.loss_sum;
        clip_events += o.clip_events;
        for (g, s) in grad.iter_mut().zip(&o.grad) {
            *g += s;
        }
    }
    for g in &mut grad {
        *g *= inv_k;
    }
    let loss = loss_sum * inv_k + cfg.eta3 * hinge(cfg.z0, z);
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: 0 });
    }
    Ok(StepResult { loss, grad, z, clip_events })
}

/// Supervised pre-fit of both heads toward explicit targets (used to bias
/// excited-state searches toward a chosen eigenfunction before the
/// fixed-point training starts).
pub struct SupervisedInit {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    /// Target for the eigenfunction head.
    pub psi: Box<dyn Fn(&[f64]) -> f64>,
    /// Target for the scaled-gradient head (`sigma^T grad` of the target).
    pub grad: Box<dyn Fn(&[f64]) -> Vec<f64>>,
}

impl SupervisedInit {
    /// Targets `psi_2 + perturbation * psi_1` built from two reference
    /// pairs, the usual seeding for a second-eigenpair run.
    pub fn perturbed_pair(
        main: RefPair,
        perturb: RefPair,
        perturbation: f64,
        sigma: f64,
        steps: u64,
        batch: usize,
        lr: f64,
    ) -> Self {
        let (m2, p2) = (main.clone(), perturb.clone());
        SupervisedInit {
            steps,
            batch,
            lr,
            psi: Box::new(move |x| main.psi(x) + perturbation * perturb.psi(x)),
            grad: Box::new(move |x| {
                let g1 = m2.grad(x);
                let g2 = p2.grad(x);
                g1.iter().zip(&g2).map(|(&a, &b)| sigma * (a + perturbation * b)).collect()
            }),
        }
    }
}

/// Everything the training loop needs that is plain data.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Simulation horizon T.
    pub horizon: f64,
    /// Time discretization steps N.
    pub time_steps: usize,
    /// Paths per training step K.
    pub batch: usize,
    pub iterations: u64,
    pub seed: u64,
    pub lr: Schedule,
    pub gamma: Schedule,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub z0: f64,
    pub clip: ClipBounds,
    pub adam: AdamParams,
    /// Paths per shard: the unit of parallel work and of reduction order.
    pub shard_size: usize,
    /// Fan shards out to the thread pool.
    pub parallel: bool,
    /// Differentiate through the normalizer (study switch; forces a single
    /// shard).
    pub grad_through_z: bool,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
    /// Evaluate against the reference every this many steps.
    pub validation_every: u64,
    pub validation_size: usize,
    /// Reuse one validation set for the whole run instead of resampling per
    /// evaluation.
    pub validation_fixed: bool,
    /// Final metrics average records from this many trailing steps.
    pub summary_window: u64,
    /// Emit a checkpoint every this many steps (0 = never).
    pub checkpoint_every: u64,
    /// Keep the eigenvalue frozen for this many leading steps (0 = always
    /// trainable).
    pub lambda_freeze_steps: u64,
    /// Value to hold the eigenvalue at while frozen (defaults to the
    /// network's initial value).
    pub lambda_bar: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizon: 0.2,
            time_steps: 40,
            batch: 256,
            iterations: 1000,
            seed: 0,
            lr: Schedule::constant(1e-4),
            gamma: Schedule::constant(0.5),
            eta1: 1000.0,
            eta2: 20.0,
            eta3: 100.0,
            z0: 2.0,
            clip: ClipBounds { lower: -5.0, upper: 5.0 },
            adam: AdamParams::default(),
            shard_size: 256,
            parallel: false,
            grad_through_z: false,
            grad_clip: None,
            validation_every: 100,
            validation_size: 256,
            validation_fixed: false,
            summary_window: 1000,
            checkpoint_every: 0,
            lambda_freeze_steps: 0,
            lambda_bar: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::Config(msg.into()));
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return fail("horizon must be positive");
        }
        if self.time_steps == 0 {
            return fail("need at least one time step");
        }
        if self.batch == 0 {
            return fail("batch must be at least 1");
        }
        if self.shard_size == 0 {
            return fail("shard_size must be at least 1");
        }
        if self.grad_through_z && self.shard_size < self.batch {
            return fail("grad_through_z needs shard_size >= batch (single shard)");
        }
        for (name, v) in [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("eta3", self.eta3),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(TrainError::Config(format!("{name} must be nonnegative")));
            }
        }
        if !self.z0.is_finite() {
            return fail("z0 must be finite");
        }
        if self.validation_every == 0 {
            return fail("validation_every must be at least 1");
        }
        if self.validation_size == 0 {
            return fail("validation_size must be at least 1");
        }
        for g in self.gamma.values() {
            if !(0.0..=1.0).contains(g) {
                return fail("gamma values must lie in [0, 1]");
            }
        }
        for l in self.lr.values() {
            if !(*l >= 0.0) {
                return fail("learning rates must be nonnegative");
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) || !c.is_finite() {
                return fail("grad_clip must be positive");
            }
        }
        if let Some(b) = self.lambda_bar {
            if !b.is_finite() {
                return fail("lambda_bar must be finite");
            }
        }
        Ok(())
    }
}

/// One history row, emitted on the validation cadence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub lambda: f64,
    pub z: f64,
    pub err_lambda: Option<f64>,
    pub err_psi_l2: Option<f64>,
    pub err_psi_inf: Option<f64>,
    pub err_grad: Option<f64>,
}

impl TrainRecord {
    pub fn csv_header() -> &'static str {
        "step,loss,lambda,z,err_lambda,err_psi_l2,err_psi_inf,err_grad"
    }

    pub fn to_csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.loss,
            self.lambda,
            self.z,
            opt(self.err_lambda),
            opt(self.err_psi_l2),
            opt(self.err_psi_inf),
            opt(self.err_grad)
        )
    }
}

/// Trailing-window averages of the recorded errors (the run's headline
/// numbers).
#[derive(Clone, Copy, Debug)]
pub struct ErrorSummary {
    /// Records the window covered.
    pub records: usize,
    /// Mean eigenvalue over the window.
    pub lambda: f64,
    pub err_lambda: Option<f64>,
    pub err_psi_l2: Option<f64>,
    pub err_psi_inf: Option<f64>,
    pub err_grad: Option<f64>,
}

/// Final state plus history of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub lambda: f64,
    pub z: f64,
    pub params: Params,
    pub history: Vec<TrainRecord>,
    pub summary: Option<ErrorSummary>,
    pub clip_events: u64,
}

/// Streaming notifications from [`Trainer::train`].
pub enum TrainEvent<'a> {
    Record(&'a TrainRecord),
    Checkpoint(Box<Checkpoint>),
}

/// A configured run: problem, architecture, hyperparameters, optional
/// reference for metrics, optional supervised pre-fit, optional explicit
/// starting parameters.
pub struct Trainer<'a> {
    pub problem: &'a Problem,
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub reference: Option<RefPair>,
    pub supervised: Option<SupervisedInit>,
    pub initial_params: Option<Params>,
}

impl<'a> Trainer<'a> {
    pub fn new(problem: &'a Problem, spec: NetworkSpec, config: TrainConfig) -> Self {
        Trainer { problem, spec, config, reference: None, supervised: None, initial_params: None }
    }

    /// Train start-to-finish with no event sink.
    pub fn run(&self) -> Result<TrainOutcome, TrainError> {
        self.train(None, |_| {})
    }

    /// Network outputs on a point batch (numeric, no gradients).
    fn eval_network(&self, params: &Params, pts: &Mat) -> (Vec<f64>, Mat) {
        let mut tape = Tape::new();
        let bound = params.bind_const(&mut tape);
        let x = tape.constant(pts.as_slice(), Shape::Mat(pts.rows(), pts.cols()));
        let psi = bound.psi(&mut tape, x);
        let g = bound.scaled_grad(&mut tape, x);
        let psi_vals = tape.value(psi).to_vec();
        let g_vals = Mat::from_vec(pts.rows(), pts.cols(), tape.value(g).to_vec());
        (psi_vals, g_vals)
    }

    fn make_record(
        &self,
        step: u64,
        loss: f64,
        params: &Params,
        z: f64,
        rng: &RunRng,
        fixed_vset: Option<&ValidationSet>,
    ) -> Result<TrainRecord, TrainError> {
        let mut rec = TrainRecord {
            step,
            loss,
            lambda: params.lambda,
            z,
            err_lambda: None,
            err_psi_l2: None,
            err_psi_inf: None,
            err_grad: None,
        };
        if let Some(pair) = &self.reference {
            let fresh;
            let vset = match fixed_vset {
                Some(v) => v,
                None => {
                    fresh = ValidationSet::sample(
                        self.problem,
                        pair,
                        self.config.validation_size,
                        rng,
                        step,
                    );
                    &fresh
                }
            };
            let (psi_vals, grad_vals) = self.eval_network(params, &vset.points);
            let errs = metrics::evaluate(&psi_vals, z, &grad_vals, vset)?;
            rec.err_lambda = Some((params.lambda - pair.lambda()).abs());
            rec.err_psi_l2 = Some(errs.psi_l2);
            rec.err_psi_inf = Some(errs.psi_inf);
            rec.err_grad = Some(errs.grad);
        }
        Ok(rec)
    }

    fn supervised_fit(&self, params: &mut Params, rng: &RunRng) -> Result<(), TrainError> {
        let Some(sup) = &self.supervised else { return Ok(()) };
        if sup.steps == 0 {
            return Ok(());
        }
        if sup.batch == 0 || !(sup.lr > 0.0) {
            return Err(TrainError::Config("supervised init needs batch >= 1 and lr > 0".into()));
        }
        let d = self.problem.dim();
        let mut adam = AdamState::new(params.num_params(), self.config.adam);
        let mut flat = params.to_flat();
        for s in 1..=sup.steps {
            let pts = sample_initial(sup.batch, d, rng, StreamKind::Supervised, s, 0);
            let mut psi_t = Vec::with_capacity(sup.batch);
            let mut grad_t = Vec::with_capacity(sup.batch * d);
            for p in 0..sup.batch {
                let x = pts.row(p);
                psi_t.push((sup.psi)(x));
                let g = (sup.grad)(x);
                assert_eq!(g.len(), d, "supervised gradient target has wrong width");
                grad_t.extend_from_slice(&g);
            }

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.constant(pts.as_slice(), Shape::Mat(sup.batch, d));
            let psi = bound.psi(&mut tape, x);
            let g = bound.scaled_grad(&mut tape, x);
            let psi_target = tape.constant(&psi_t, Shape::Vec(sup.batch));
            let grad_target = tape.constant(&grad_t, Shape::Mat(sup.batch, d));
            let d1 = tape.sub(psi, psi_target);
            let t1 = tape.square(d1);
            let d2 = tape.sub(g, grad_target);
            let t2 = tape.row_dot(d2, d2);
            let per_path = tape.add(t1, t2);
            let total = tape.sum(per_path);
            let root = tape.scale(total, 1.0 / sup.batch as f64);
            if !tape.scalar_value(root).is_finite() {
                return Err(TrainError::NonFiniteLoss { step: s });
            }
            let grads = tape.backward(root)?;
            let mut gflat = vec![0.0; params.num_params()];
            bound.collect_gradients(&grads, &mut gflat);
            // The eigenvalue has no business moving during a regression fit.
            *gflat.last_mut().unwrap() = 0.0;
            adam.step(&mut flat, &gflat, sup.lr);
            params.set_flat(&flat);
        }
        Ok(())
    }

    /// Run the training loop, optionally resuming from a checkpoint, and
    /// stream records/checkpoints to `on_event`.
    pub fn train(
        &self,
        resume: Option<Checkpoint>,
        mut on_event: impl FnMut(TrainEvent),
    ) -> Result<TrainOutcome, TrainError> {
        let cfg = &self.config;
        cfg.validate()?;
        let grid = TimeGrid::uniform(cfg.horizon, cfg.time_steps)?;
        let rng = RunRng::new(cfg.seed);
        let loss_cfg = LossConfig {
            eta1: cfg.eta1,
            eta2: cfg.eta2,
            eta3: cfg.eta3,
            z0: cfg.z0,
            clip: cfg.clip,
            parallel: cfg.parallel,
        };

        // Starting state: checkpoint, explicit parameters, or fresh init
        // (with optional supervised pre-fit).
        let mut params;
        let mut adam;
        let mut z_prev: Option<f64>;
        let start_step: u64;
        match resume {
            Some(cp) => {
                if cp.spec != self.spec {
                    return Err(TrainError::CheckpointMismatch(format!(
                        "architecture {:?} vs configured {:?}",
                        cp.spec, self.spec
                    )));
                }
                if cp.seed != cfg.seed {
                    return Err(TrainError::CheckpointMismatch(format!(
                        "checkpoint seed {} vs configured {}",
                        cp.seed, cfg.seed
                    )));
                }
                params = Params::zeros(&self.spec);
                params.set_flat(&cp.params);
                adam = AdamState::new(cp.params.len(), cfg.adam);
                adam.m = cp.adam_m;
                adam.v = cp.adam_v;
                adam.t = cp.adam_t;
                z_prev = Some(cp.z);
                start_step = cp.step;
            }
            None => {
                params = match &self.initial_params {
                    Some(p) => {
                        if p.spec != self.spec {
                            return Err(TrainError::CheckpointMismatch(
                                "initial parameters do not match the architecture".into(),
                            ));
                        }
                        p.clone()
                    }
                    None => Params::init(&self.spec, &rng),
                };
                self.supervised_fit(&mut params, &rng)?;
                if cfg.lambda_freeze_steps > 0 {
                    if let Some(bar) = cfg.lambda_bar {
                        params.lambda = bar;
                    }
                }
                adam = AdamState::new(params.num_params(), cfg.adam);
                z_prev = None;
                start_step = 0;
            }
        }

        let fixed_vset = match (&self.reference, cfg.validation_fixed) {
            (Some(pair), true) => Some(ValidationSet::sample(
                self.problem,
                pair,
                cfg.validation_size,
                &rng,
                0,
            )),
            _ => None,
        };

        let mut history = Vec::new();
        let mut clip_total = 0u64;

        if cfg.iterations == 0 {
            // Metrics-only run: estimate a normalizer from one untouched
            // batch and report the initial state.
            let z = match z_prev {
                Some(z) => z,
                None => {
                    let mut psi0 = Vec::with_capacity(cfg.batch);
                    for (off, len) in shard_ranges(cfg.batch, cfg.shard_size) {
                        let x0 = sample_initial(
                            len,
                            self.problem.dim(),
                            &rng,
                            StreamKind::InitialPoints,
                            0,
                            off as u64,
                        );
                        psi0.extend(psi_values(&params, &x0));
                    }
                    let zhat = batch_normalizer(&psi0);
                    if zhat == 0.0 {
                        return Err(TrainError::DegenerateNormalizer { step: 0 });
                    }
                    zhat
                }
            };
            let rec = self.make_record(start_step, f64::NAN, &params, z, &rng, fixed_vset.as_ref())?;
            on_event(TrainEvent::Record(&rec));
            history.push(rec);
            return Ok(TrainOutcome {
                lambda: params.lambda,
                z,
                params,
                summary: summarize(&history, start_step, cfg.summary_window),
                history,
                clip_events: 0,
            });
        }

        let d = self.problem.dim();
        let sigma = self.problem.sigma();
        for step in (start_step + 1)..=cfg.iterations {
            // Sample this step's paths, shard by shard.
            let shards = shard_ranges(cfg.batch, cfg.shard_size);
            let simulate = |&(off, len): &(usize, usize)| -> Result<PathBatch, SdeError> {
                let x0 = sample_initial(len, d, &rng, StreamKind::InitialPoints, step, off as u64);
                simulate_forward(&x0, &grid, sigma, &rng, step, off as u64)
            };
            let batches: Vec<PathBatch> = if cfg.parallel && shards.len() > 1 {
                shards.par_iter().map(simulate).collect::<Result<_, _>>()?
            } else {
                shards.iter().map(simulate).collect::<Result<_, _>>()?
            };

            let gamma = cfg.gamma.at(step);
            let policy = ZPolicy::Ema {
                prev: z_prev,
                gamma,
                differentiate: cfg.grad_through_z,
            };
            let mut out =
                step_loss_and_gradient(self.problem, &params, &batches, policy, &loss_cfg)
                    .map_err(|e| match e {
                        TrainError::NonFiniteLoss { .. } => TrainError::NonFiniteLoss { step },
                        TrainError::DegenerateNormalizer { .. } => {
                            TrainError::DegenerateNormalizer { step }
                        }
                        TrainError::Sde(SdeError::NonFinite { level }) => {
                            TrainError::NonFiniteState { step, level }
                        }
                        other => other,
                    })?;
            z_prev = Some(out.z);
            clip_total += out.clip_events;

            if step <= cfg.lambda_freeze_steps {
                *out.grad.last_mut().unwrap() = 0.0;
            }
            if let Some(max_norm) = cfg.grad_clip {
                let norm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    let s = max_norm / norm;
                    for g in &mut out.grad {
                        *g *= s;
                    }
                }
            }

            let mut flat = params.to_flat();
            adam.step(&mut flat, &out.grad, cfg.lr.at(step));
            params.set_flat(&flat);

            if step % cfg.validation_every == 0 || step == cfg.iterations {
                let rec =
                    self.make_record(step, out.loss, &params, out.z, &rng, fixed_vset.as_ref())?;
                on_event(TrainEvent::Record(&rec));
                history.push(rec);
            }
            if cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.iterations)
            {
                on_event(TrainEvent::Checkpoint(Box::new(Checkpoint {
                    seed: cfg.seed,
                    step,
                    z: out.z,
                    spec: self.spec.clone(),
                    params: params.to_flat(),
                    adam_m: adam.m.clone(),
                    adam_v: adam.v.clone(),
                    adam_t: adam.t,
                })));
            }
        }

        Ok(TrainOutcome {
            lambda: params.lambda,
            z: z_prev.unwrap_or(f64::NAN),
            params,
            summary: summarize(&history, cfg.iterations, cfg.summary_window),
            history,
            clip_events: clip_total,
        })
    }
}

/// Fixed decomposition of `k` paths into `(offset, len)` shards.
fn shard_ranges(k: usize, shard_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(k.div_ceil(shard_size));
    let mut off = 0;
    while off < k {
        let len = shard_size.min(k - off);
        out.push((off, len));
        off += len;
    }
    out
}

/// Average the records whose step falls in the trailing window
/// `(last_step - window, last_step]`.
fn summarize(history: &[TrainRecord], last_step: u64, window: u64) -> Option<ErrorSummary> {
    let lo = last_step.saturating_sub(window);
    // When the window covers the whole run, a step-0 record counts too.
    let recs: Vec<&TrainRecord> = history.iter().filter(|r| lo == 0 || r.step > lo).collect();
    if recs.is_empty() {
        return None;
    }
    let mean_of = |f: fn(&TrainRecord) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = recs.iter().filter_map(|r| f(r)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    Some(ErrorSummary {
        records: recs.len(),
        lambda: recs.iter().map(|r| r.lambda).sum::<f64>() / recs.len() as f64,
        err_lambda: mean_of(|r| r.err_lambda),
        err_psi_l2: mean_of(|r| r.err_psi_l2),
        err_psi_inf: mean_of(|r| r.err_psi_inf),
        err_grad: mean_of(|r| r.err_grad),
    })
}

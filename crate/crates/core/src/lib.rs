//! Neural eigensolver for second-order differential operators on the
//! periodic box `[0, 2pi]^d`.
//!
//! The library finds eigenpairs of operators
//!
//! ```text
//! L psi = -1/2 Tr(sigma sigma^T Hess psi) - b . grad psi + f psi
//! ```
//!
//! (with `f` optionally depending on `psi` itself in the semilinear case) by
//! training two neural networks — one for the eigenfunction, one for its
//! scaled gradient — so that the pair is a fixed point of the stochastic
//! (Feynman–Kac) representation of the associated parabolic equation. A
//! trainable scalar plays the role of the eigenvalue, and a running
//! normalization keeps the trivial zero solution out of reach.
//!
//! Crate layout:
//!
//! * [`autodiff`], [`linalg`] — tape-based reverse-mode AD and the dense
//!   kernels under it.
//! * [`network`] — periodic trigonometric features and the two MLP heads.
//! * [`sde`] — forward path sampling and the coupled value/gradient
//!   propagation along paths.
//! * [`normalization`] — batch normalizer estimate and its running average.
//! * [`problems`] — the benchmark operator families (Fokker–Planck,
//!   linear/nonlinear Schrödinger, double-well) with closed-form or
//!   spectral references.
//! * [`reference`] — Fourier-Galerkin reference solver for separable
//!   potentials, plus tensor-product assembly.
//! * [`metrics`] — normalized error metrics, density profiles, smoothing.
//! * [`trainer`] — the optimization loop: loss assembly, Adam, schedules,
//!   records, checkpoints.
//! * [`config`] — run configuration, presets, scale mapping.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod normalization;
pub mod problems;
pub mod reference;
pub mod rng;
pub mod sde;
pub mod trainer;

pub use autodiff::{Gradients, Shape, Tape, Var};
pub use config::{AssembledRun, ConfigError, RunConfig, Scale};
pub use linalg::Mat;
pub use problems::Problem;
pub use reference::{reference_for, RefPair};
pub use rng::{RunRng, StreamKind};
pub use trainer::{
    AdamParams, ErrorSummary, Schedule, TrainConfig, TrainError, TrainEvent, TrainOutcome,
    TrainRecord, Trainer,
};

//! Run configuration: a TOML file with `[problem]`, `[network]`, `[sde]`,
//! `[training]` and optional `[reference]` sections, bundled presets for
//! every benchmark experiment, and a scale knob that shrinks any
//! configuration to desk size for quick runs while leaving the presets
//! themselves faithful.
//!
//! Unknown keys are rejected, every numeric field is validated before any
//! compute, and the defaults-filled ("effective") configuration can be
//! serialized back out so a run can be reproduced from its own echo.

use crate::network::NetworkSpec;
use crate::problems::{Problem, ProblemError, ProblemKind};
use crate::reference::{reference_for, RefPair, ReferenceError};
use crate::sde::{ClipBounds, SdeError};
use crate::trainer::{AdamParams, Schedule, SupervisedInit, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Emit(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}` (available: {1})")]
    UnknownPreset(String, String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Operator family selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FokkerPlanck,
    LinearSchrodinger,
    NonlinearSchrodinger,
    DoubleWell,
}

impl Family {
    pub fn kind(self) -> ProblemKind {
        match self {
            Family::FokkerPlanck => ProblemKind::FokkerPlanck,
            Family::LinearSchrodinger => ProblemKind::LinearSchrodinger,
            Family::NonlinearSchrodinger => ProblemKind::NonlinearSchrodinger,
            Family::DoubleWell => ProblemKind::DoubleWell,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub family: Family,
    pub dim: usize,
    /// Potential coefficients (families with per-dimension coefficients
    /// only); omitted means the family's documented defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// Cubic-term strength (nonlinear family only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

fn default_harmonics() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden-layer widths shared by both heads.
    pub hidden: Vec<usize>,
    /// Trigonometric feature harmonics M.
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
    /// Starting value of the trainable eigenvalue.
    #[serde(default)]
    pub lambda_init: f64,
}

fn default_clip_lower() -> f64 {
    -5.0
}

fn default_clip_upper() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    /// Terminal time T.
    pub horizon: f64,
    /// Number of time intervals N.
    pub time_steps: usize,
    /// Semilinear value clip window (P, Q).
    #[serde(default = "default_clip_lower")]
    pub clip_lower: f64,
    #[serde(default = "default_clip_upper")]
    pub clip_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedSection {
    /// Regression steps before the fixed-point phase.
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    /// Weight of the perturbing eigenfunction mixed into the target.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    /// Which eigenpair perturbs the target (the target itself is the run's
    /// reference pair).
    #[serde(default = "default_perturb_k")]
    pub perturb_k: usize,
}

fn default_perturbation() -> f64 {
    0.3
}

fn default_perturb_k() -> usize {
    1
}

fn default_eta1() -> f64 {
    1000.0
}

fn default_eta2() -> f64 {
    20.0
}

fn default_eta3() -> f64 {
    100.0
}

fn default_z0() -> f64 {
    2.0
}

fn default_shard_size() -> usize {
    128
}

fn default_validation_every() -> u64 {
    100
}

fn default_summary_window() -> u64 {
    1000
}

fn default_true() -> bool {
    true
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_epsilon() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub iterations: u64,
    /// Paths per training step K.
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    /// Learning-rate schedule values and (strictly increasing) boundaries.
    pub lr: Vec<f64>,
    #[serde(default)]
    pub lr_boundaries: Vec<u64>,
    /// Normalizer moving-average decay schedule.
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub gamma_boundaries: Vec<u64>,
    #[serde(default = "default_eta1")]
    pub eta1: f64,
    #[serde(default = "default_eta2")]
    pub eta2: f64,
    #[serde(default = "default_eta3")]
    pub eta3: f64,
    #[serde(default = "default_z0")]
    pub z0: f64,
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default)]
    pub grad_through_z: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_validation_every")]
    pub validation_every: u64,
    /// Validation points per evaluation; omitted means the batch size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_size: Option<usize>,
    #[serde(default)]
    pub validation_fixed: bool,
    /// Final metrics average records from this many trailing steps.
    #[serde(default = "default_summary_window")]
    pub summary_window: u64,
    /// Checkpoint cadence in steps (0 = only the final checkpoint).
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Keep the eigenvalue frozen for this many leading steps.
    #[serde(default)]
    pub lambda_freeze_steps: u64,
    /// Absolute value to pin the frozen eigenvalue at.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_bar: Option<f64>,
    /// Pin the frozen eigenvalue at the reference eigenvalue plus this
    /// offset (resolved when the run is assembled).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_bar_offset: Option<f64>,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_epsilon")]
    pub adam_epsilon: f64,
    /// Optional supervised pre-fit of the heads (second-eigenpair runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervised: Option<SupervisedSection>,
}

fn default_nbasis() -> usize {
    40
}

fn default_k() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    /// Fourier basis cut-off for the spectral reference (modes -nbasis ..
    /// nbasis per dimension; ignored by closed-form families).
    #[serde(default = "default_nbasis")]
    pub nbasis: usize,
    /// Which eigenpair the run targets (1 = first).
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection { nbasis: default_nbasis(), k: default_k() }
    }
}

/// Run scale: `Paper` keeps the configuration as written; `Desk` shrinks it
/// to minutes of CPU time (documented mapping, applied uniformly).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(ConfigError::Invalid(format!(
                "unknown scale `{other}` (expected `desk` or `paper`)"
            ))),
        }
    }
}

/// Everything a run needs, assembled from a validated [`RunConfig`]:
/// concrete problem, architecture, hyperparameters, reference pair, and the
/// optional supervised pre-fit.
pub struct AssembledRun {
    pub problem: Problem,
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub reference: RefPair,
    pub supervised: Option<SupervisedInit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub network: NetworkSection,
    pub sde: SdeSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub reference: ReferenceSection,
}

/// Bundled preset names, one per benchmark experiment.
pub const PRESET_NAMES: [&str; 10] = [
    "fp_d5",
    "fp_d10",
    "ls_d5",
    "ls_d10",
    "nls_d5",
    "nls_d10",
    "dw_d10_first",
    "dw_d10_second",
    "dw_d1_first",
    "dw_d1_second",
];

fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "fp_d5" => include_str!("../../../configs/fp_d5.toml"),
        "fp_d10" => include_str!("../../../configs/fp_d10.toml"),
        "ls_d5" => include_str!("../../../configs/ls_d5.toml"),
        "ls_d10" => include_str!("../../../configs/ls_d10.toml"),
        "nls_d5" => include_str!("../../../configs/nls_d5.toml"),
        "nls_d10" => include_str!("../../../configs/nls_d10.toml"),
        "dw_d10_first" => include_str!("../../../configs/dw_d10_first.toml"),
        "dw_d10_second" => include_str!("../../../configs/dw_d10_second.toml"),
        "dw_d1_first" => include_str!("../../../configs/dw_d1_first.toml"),
        "dw_d1_second" => include_str!("../../../configs/dw_d1_second.toml"),
        _ => return None,
    })
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// A bundled preset by name.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match preset_source(name) {
            Some(text) => Self::from_toml_str(text),
            None => Err(ConfigError::UnknownPreset(
                name.to_string(),
                PRESET_NAMES.join(", "),
            )),
        }
    }

    /// Serialize, typically after [`RunConfig::fill_defaults`], so the echo
    /// reproduces the run byte for byte.
    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Materialize the defaults that depend on other fields, so the echoed
    /// configuration is self-contained.
    pub fn fill_defaults(&mut self) {
        if self.problem.coefficients.is_none() && self.problem.family != Family::NonlinearSchrodinger
        {
            self.problem.coefficients = Some(Problem::default_coefficients(
                self.problem.family.kind(),
                self.problem.dim,
            ));
        }
        if self.problem.family == Family::NonlinearSchrodinger && self.problem.epsilon.is_none() {
            self.problem.epsilon = Some(1.0);
        }
        if self.training.validation_size.is_none() {
            self.training.validation_size = Some(self.training.batch);
        }
    }

    /// Structural validation beyond what parsing enforces. Builds the
    /// domain objects once and discards them, so every invariant those
    /// constructors check is checked here too.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_problem()?;
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(ConfigError::Invalid(
                "network.hidden needs at least one nonzero width".into(),
            ));
        }
        if self.network.harmonics == 0 {
            return Err(ConfigError::Invalid("network.harmonics must be at least 1".into()));
        }
        if !self.network.lambda_init.is_finite() {
            return Err(ConfigError::Invalid("network.lambda_init must be finite".into()));
        }
        if self.training.lambda_bar.is_some() && self.training.lambda_bar_offset.is_some() {
            return Err(ConfigError::Invalid(
                "training.lambda_bar and training.lambda_bar_offset are mutually exclusive".into(),
            ));
        }
        if self.reference.k == 0 {
            return Err(ConfigError::Invalid("reference.k is 1-based".into()));
        }
        if let Some(sup) = &self.training.supervised {
            if sup.batch == 0 || !(sup.lr > 0.0) || !sup.lr.is_finite() {
                return Err(ConfigError::Invalid(
                    "training.supervised needs batch >= 1 and a positive lr".into(),
                ));
            }
            if sup.perturb_k == 0 {
                return Err(ConfigError::Invalid("training.supervised.perturb_k is 1-based".into()));
            }
            if !sup.perturbation.is_finite() {
                return Err(ConfigError::Invalid(
                    "training.supervised.perturbation must be finite".into(),
                ));
            }
        }
        // TrainConfig::validate covers the schedule/weight/batch invariants.
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem, ConfigError> {
        let p = &self.problem;
        match p.family {
            Family::NonlinearSchrodinger => {
                if p.coefficients.is_some() {
                    return Err(ConfigError::Invalid(
                        "the nonlinear family has no per-dimension coefficients".into(),
                    ));
                }
                Ok(Problem::nonlinear_schrodinger(p.dim, p.epsilon.unwrap_or(1.0))?)
            }
            family => {
                if p.epsilon.is_some() {
                    return Err(ConfigError::Invalid(
                        "epsilon only applies to the nonlinear family".into(),
                    ));
                }
                let coeffs = p.coefficients.clone();
                Ok(match family {
                    Family::FokkerPlanck => Problem::fokker_planck(p.dim, coeffs)?,
                    Family::LinearSchrodinger => Problem::linear_schrodinger(p.dim, coeffs)?,
                    Family::DoubleWell => Problem::double_well(p.dim, coeffs)?,
                    Family::NonlinearSchrodinger => unreachable!(),
                })
            }
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            dim: self.problem.dim,
            harmonics: self.network.harmonics,
            hidden: self.network.hidden.clone(),
            lambda_init: self.network.lambda_init,
        }
    }

    /// The trainer hyperparameters. `lambda_bar_offset` is not resolved
    /// here (that needs the reference); [`RunConfig::assemble`] fills it in.
    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let t = &self.training;
        Ok(TrainConfig {
            horizon: self.sde.horizon,
            time_steps: self.sde.time_steps,
            batch: t.batch,
            iterations: t.iterations,
            seed: t.seed,
            lr: Schedule::new(t.lr.clone(), t.lr_boundaries.clone())?,
            gamma: Schedule::new(t.gamma.clone(), t.gamma_boundaries.clone())?,
            eta1: t.eta1,
            eta2: t.eta2,
            eta3: t.eta3,
            z0: t.z0,
            clip: ClipBounds::new(self.sde.clip_lower, self.sde.clip_upper)?,
            adam: AdamParams {
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                epsilon: t.adam_epsilon,
            },
            shard_size: t.shard_size,
            parallel: t.parallel,
            grad_through_z: t.grad_through_z,
            grad_clip: t.grad_clip,
            validation_every: t.validation_every,
            validation_size: t.validation_size.unwrap_or(t.batch),
            validation_fixed: t.validation_fixed,
            summary_window: t.summary_window,
            checkpoint_every: t.checkpoint_every,
            lambda_freeze_steps: t.lambda_freeze_steps,
            lambda_bar: t.lambda_bar,
        })
    }

    /// Build every domain object the run needs, resolving the reference
    /// eigenpair, the relative eigenvalue pin, and the supervised targets.
    pub fn assemble(&self) -> Result<AssembledRun, ConfigError> {
        self.validate()?;
        let problem = self.build_problem()?;
        let spec = self.network_spec();
        let mut train = self.train_config()?;
        let reference = reference_for(&problem, self.reference.nbasis, self.reference.k)?;
        if let Some(offset) = self.training.lambda_bar_offset {
            train.lambda_bar = Some(reference.lambda() + offset);
        }
        let supervised = match &self.training.supervised {
            Some(sup) => {
                let perturb = reference_for(&problem, self.reference.nbasis, sup.perturb_k)?;
                Some(SupervisedInit::perturbed_pair(
                    reference.clone(),
                    perturb,
                    sup.perturbation,
                    problem.sigma(),
                    sup.steps,
                    sup.batch,
                    sup.lr,
                ))
            }
            None => None,
        };
        Ok(AssembledRun { problem, spec, train, reference, supervised })
    }

    /// Shrink to the given scale in place. `Paper` is the identity; `Desk`
    /// reduces iterations to at most 1000 (at least 500 where the original
    /// run is that long), caps widths at 40, the batch at 256 and the time
    /// grid at 40 steps, and rescales every step-valued field by the
    /// iteration ratio.
    pub fn apply_scale(&mut self, scale: Scale) {
        if scale == Scale::Paper {
            return;
        }
        let t = &mut self.training;
        let old_iters = t.iterations;
        if old_iters == 0 {
            return;
        }
        let new_iters = old_iters.min((old_iters / 100).clamp(500, 1000));
        let ratio = new_iters as f64 / old_iters as f64;
        let rescale_steps = |b: u64| -> u64 { ((b as f64 * ratio).round() as u64).max(1) };
        let rescale_boundaries = |bs: &mut Vec<u64>| {
            let mut prev = 0u64;
            for b in bs.iter_mut() {
                *b = rescale_steps(*b).max(prev + 1);
                prev = *b;
            }
        };

        t.iterations = new_iters;
        rescale_boundaries(&mut t.lr_boundaries);
        rescale_boundaries(&mut t.gamma_boundaries);
        t.batch = t.batch.min(256);
        t.shard_size = t.shard_size.min(t.batch);
        if let Some(v) = t.validation_size {
            t.validation_size = Some(v.min(256));
        }
        t.summary_window = t.summary_window.min((new_iters / 5).max(t.validation_every));
        if t.checkpoint_every > 0 {
            t.checkpoint_every = t.checkpoint_every.min(new_iters);
        }
        if t.lambda_freeze_steps > 0 {
            t.lambda_freeze_steps = rescale_steps(t.lambda_freeze_steps);
        }
        if let Some(sup) = &mut t.supervised {
            sup.steps = rescale_steps(sup.steps);
            sup.batch = sup.batch.min(256);
        }
        for w in &mut self.network.hidden {
            *w = (*w).min(40);
        }
        self.sde.time_steps = self.sde.time_steps.min(40);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_document_parses_and_defaults_fill() {
        let text = r#"
            [problem]
            family = "linear_schrodinger"
            dim = 2

            [network]
            hidden = [16, 16]

            [sde]
            horizon = 0.3
            time_steps = 20

            [training]
            iterations = 200
            batch = 64
            lr = [1e-3]
            gamma = [0.5]
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.network.harmonics, 5);
        assert_eq!(cfg.training.eta1, 1000.0);
        assert_eq!(cfg.training.eta2, 20.0);
        assert_eq!(cfg.training.eta3, 100.0);
        assert_eq!(cfg.training.z0, 2.0);
        assert_eq!(cfg.sde.clip_lower, -5.0);
        assert_eq!(cfg.sde.clip_upper, 5.0);
        assert_eq!(cfg.reference.k, 1);
        assert!(cfg.training.parallel);
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.validation_size, 64);
        assert_eq!(tc.adam.beta1, 0.9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
            [problem]
            family = "linear_schrodinger"
            dim = 2
            typo_field = 3

            [network]
            hidden = [16]

            [sde]
            horizon = 0.3
            time_steps = 20

            [training]
            iterations = 200
            batch = 64
            lr = [1e-3]
            gamma = [0.5]
        "#;
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("typo_field"), "{err}");
        assert!(RunConfig::from_toml_str("[problem]\nbogus = 1").is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = RunConfig::preset("ls_d5").unwrap();
        cfg.fill_defaults();
        let echoed = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&echoed).unwrap();
        assert_eq!(cfg, back);
        // The filled form is explicit about derived defaults.
        assert_eq!(back.problem.coefficients.as_ref().unwrap().len(), 5);
        assert_eq!(back.training.validation_size, Some(1024));
    }

    #[test]
    fn all_presets_parse_and_assemble() {
        for name in PRESET_NAMES {
            let cfg = RunConfig::preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            let run = cfg.assemble().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(run.problem.dim(), cfg.problem.dim, "{name}");
            assert_eq!(run.spec.hidden, cfg.network.hidden, "{name}");
            assert_eq!(run.spec.harmonics, 5, "{name}");
        }
        assert!(matches!(
            RunConfig::preset("no_such"),
            Err(ConfigError::UnknownPreset(..))
        ));
    }

    #[test]
    fn quoted_preset_values_survive_verbatim() {
        let ls = RunConfig::preset("ls_d5").unwrap();
        assert_eq!(ls.sde.horizon, 0.3);
        assert_eq!(ls.sde.time_steps, 80);
        assert_eq!(ls.network.hidden, vec![80, 80, 80]);
        assert_eq!(ls.training.lr, vec![1e-4, 5e-5, 1e-5]);
        assert_eq!(ls.training.lr_boundaries, vec![30000, 60000]);
        assert_eq!(ls.training.batch, 1024);

        let nls = RunConfig::preset("nls_d5").unwrap();
        assert_eq!(nls.sde.clip_lower, -5.0);
        assert_eq!(nls.sde.clip_upper, 5.0);
        assert_eq!(nls.training.batch, 2048);
        assert_eq!(nls.training.gamma, vec![0.2, 0.9, 0.99]);
        assert_eq!(nls.problem.epsilon, Some(1.0));

        let dw2 = RunConfig::preset("dw_d10_second").unwrap();
        assert_eq!(dw2.training.lambda_freeze_steps, 20000);
        assert_eq!(dw2.training.lambda_bar_offset, Some(0.1));
        assert_eq!(dw2.reference.k, 2);
        assert_eq!(dw2.training.gamma, vec![0.1, 0.9, 0.99]);

        let dw1 = RunConfig::preset("dw_d1_second").unwrap();
        let sup = dw1.training.supervised.as_ref().unwrap();
        assert_eq!(sup.perturbation, 0.3);
        assert_eq!(sup.perturb_k, 1);
        assert_eq!(dw1.network.hidden, vec![40, 40]);
        assert_eq!(dw1.training.iterations, 6000);
    }

    #[test]
    fn relative_eigenvalue_pin_resolves_against_the_reference() {
        let mut cfg = RunConfig::preset("dw_d1_second").unwrap();
        // Small basis is plenty in d = 1 and keeps the test quick.
        cfg.reference.nbasis = 24;
        let run = cfg.assemble().unwrap();
        let lambda2 = run.reference.lambda();
        assert_eq!(run.train.lambda_bar, Some(lambda2));
        assert!(run.supervised.is_some());
        assert!(
            (lambda2 - (-2.076)).abs() < 5e-3,
            "second eigenvalue {lambda2} drifted from the known instance"
        );
    }

    #[test]
    fn desk_scale_shrinks_uniformly() {
        let mut cfg = RunConfig::preset("fp_d5").unwrap();
        cfg.apply_scale(Scale::Desk);
        assert_eq!(cfg.training.iterations, 800);
        assert_eq!(cfg.training.lr_boundaries, vec![300, 600]);
        assert_eq!(cfg.training.gamma_boundaries, vec![300, 600]);
        assert_eq!(cfg.network.hidden, vec![40, 40, 40]);
        assert_eq!(cfg.training.batch, 256);
        assert_eq!(cfg.training.shard_size, 128);
        assert_eq!(cfg.sde.time_steps, 40);
        cfg.validate().unwrap();

        let mut dw1 = RunConfig::preset("dw_d1_second").unwrap();
        dw1.apply_scale(Scale::Desk);
        assert_eq!(dw1.training.iterations, 500);
        assert_eq!(dw1.training.lr_boundaries, vec![167, 333]);
        assert_eq!(dw1.training.lambda_freeze_steps, 167);
        assert_eq!(dw1.training.supervised.as_ref().unwrap().steps, 167);
        dw1.validate().unwrap();

        let mut unscaled = RunConfig::preset("ls_d5").unwrap();
        unscaled.apply_scale(Scale::Paper);
        assert_eq!(unscaled, RunConfig::preset("ls_d5").unwrap());
    }

    #[test]
    fn family_constraints_are_enforced() {
        let mut cfg = RunConfig::preset("fp_d5").unwrap();
        cfg.problem.epsilon = Some(1.0);
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));

        let mut cfg = RunConfig::preset("nls_d5").unwrap();
        cfg.problem.coefficients = Some(vec![0.1; 5]);
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));

        let mut cfg = RunConfig::preset("fp_d5").unwrap();
        cfg.problem.coefficients = Some(vec![0.1, 0.2]);
        assert!(cfg.validate().is_err(), "coefficient arity must match dim");

        let mut cfg = RunConfig::preset("fp_d5").unwrap();
        cfg.reference.k = 2;
        assert!(cfg.assemble().is_err(), "closed-form families only provide the first pair");

        let mut cfg = RunConfig::preset("dw_d10_second").unwrap();
        cfg.training.lambda_bar = Some(1.0);
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn scale_parses_from_flag_text() {
        assert_eq!("desk".parse::<Scale>().unwrap(), Scale::Desk);
        assert_eq!("paper".parse::<Scale>().unwrap(), Scale::Paper);
        assert!("poster".parse::<Scale>().is_err());
    }
}

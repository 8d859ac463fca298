//! Experiment configuration.
//!
//! Config files are TOML restricted to flat `section.key = value` lines, for
//! example
//!
//! ```toml
//! seeds = [0, 1, 2]
//! bandit.arms = 10
//! bandit.policies = ["multi_layer_sequential", "target"]
//! policy.epsilon = 0.05
//! ```
//!
//! Every key is optional; omitted keys keep their defaults. Unknown keys are
//! rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bandit::{PolicyKind, RefitCadence};
use crate::env::{EmailProfile, ReplayFallback};
use crate::optim::OptimizerOpts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BoundCurves,
    SupervisedSim,
    BanditSim,
    ReplayBandit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::BoundCurves => "bounds",
            Self::SupervisedSim => "supervised",
            Self::BanditSim => "bandit",
            Self::ReplayBandit => "replay",
        }
    }
}

/// Bound-curve sweep; the prefactor replaces `‖x‖ c_δ √d / (c_μ λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub layers: usize,
    /// `n_j = decay^{j−1} n`.
    pub decay: f64,
    pub n_min: f64,
    pub n_max: f64,
    /// Log-spaced sweep points including both ends.
    pub points: usize,
    /// Defaults to `q_j = (12 − 2j) / 100`.
    pub q: Option<Vec<f64>>,
    pub prefactor: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            decay: 0.2,
            n_min: 1e2,
            n_max: 1e6,
            points: 81,
            q: None,
            prefactor: 1.0,
        }
    }
}

impl BoundsConfig {
    pub fn slack(&self) -> Vec<f64> {
        self.q
            .clone()
            .unwrap_or_else(|| (1..=self.layers).map(|j| (12.0 - 2.0 * j as f64) / 100.0).collect())
    }
}

/// Supervised estimation study on a sequential chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub dim: usize,
    pub layers: usize,
    /// Total sample sizes (rows reaching layer 1).
    pub n: Vec<usize>,
    /// Defaults to `q_j = 1.2 − 0.2 j`.
    pub q: Option<Vec<f64>>,
    pub sigma_x: f64,
    pub delta: f64,
    pub c_delta_scale: f64,
    /// Overrides `c_delta_scale · c_{δ/J} / c_μ` in the confidence radius
    /// `coef · √(d / n_j)`.
    pub radius_coef: Option<f64>,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            layers: 5,
            n: vec![200, 500, 1_000, 2_000, 5_000, 10_000, 20_000, 50_000, 100_000],
            q: None,
            sigma_x: 1.0,
            delta: 0.1,
            c_delta_scale: 1.0,
            radius_coef: Some(DEFAULT_RADIUS_COEF),
        }
    }
}

/// Calibrated confidence-radius coefficient for the supervised study.
pub const DEFAULT_RADIUS_COEF: f64 = 6.5;

impl SupervisedConfig {
    pub fn slack(&self) -> Vec<f64> {
        self.q
            .clone()
            .unwrap_or_else(|| (1..=self.layers).map(|j| 1.2 - 0.2 * j as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub arms: usize,
    pub layers: usize,
    pub dim: usize,
    pub sigma: f64,
    pub sigma_x: f64,
    pub horizon: usize,
    pub policies: Vec<String>,
    /// Count snapshots in run records every this many steps (0 disables).
    pub snapshot_every: usize,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            arms: 10,
            layers: 4,
            dim: 10,
            sigma: 1.0,
            // keeps σ_x √d at the 45-dimensional setting's value
            sigma_x: 0.17,
            horizon: 2000,
            policies: default_policies(),
            snapshot_every: 0,
        }
    }
}

fn default_policies() -> Vec<String> {
    [
        "multi_layer_sequential",
        "multi_layer_clustered",
        "target",
        "mix",
        "sequential",
        "random",
    ]
    .map(String::from)
    .to_vec()
}

impl BanditConfig {
    /// `A = 50, J = 8, σ = 1, σ_x = 0.08, d = 45, T = 3000`.
    pub fn paper_scale(&mut self) {
        self.arms = 50;
        self.layers = 8;
        self.sigma = 1.0;
        self.sigma_x = 0.08;
        self.dim = 45;
        self.horizon = 3000;
    }
}

/// Hyper-parameters of every policy family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub epsilon: f64,
    pub lambda_sequential: f64,
    pub lambda_clustered: f64,
    pub alpha: f64,
    pub delta: f64,
    pub c_delta_scale: f64,
    /// Slack of the optimistic policy's hypothesis class; defaults to 1 per
    /// layer.
    pub q: Option<Vec<f64>>,
    pub clustered: bool,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            lambda_sequential: 0.01,
            lambda_clustered: 0.005,
            alpha: 0.6,
            delta: 0.1,
            c_delta_scale: 1.0,
            q: None,
            clustered: false,
        }
    }
}

impl PolicyParams {
    pub fn kind(&self, name: &str, layers: usize) -> Result<PolicyKind, HarnessError> {
        let eps = self.epsilon;
        Ok(match name {
            "multi_layer_sequential" => PolicyKind::PracticalSequential {
                lambda_pen: self.lambda_sequential,
                epsilon: eps,
            },
            "multi_layer_clustered" => PolicyKind::PracticalClustered {
                lambda_pen: self.lambda_clustered,
                epsilon: eps,
            },
            "target" => PolicyKind::Target { epsilon: eps },
            "mix" => PolicyKind::Mix { epsilon: eps },
            "sequential" => PolicyKind::SequentialCurriculum {
                alpha: self.alpha,
                epsilon: eps,
            },
            "optimistic" => PolicyKind::Optimistic {
                delta: self.delta,
                c_delta_scale: self.c_delta_scale,
                q: self.q.clone().unwrap_or_else(|| vec![1.0; layers]),
                clustered: self.clustered,
            },
            "random" => PolicyKind::Random,
            other => return Err(HarnessError::Config(format!("unknown policy {other:?}"))),
        })
    }
}

/// Optimizer and refit settings shared by the bandit learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub norm_cap: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub cadence_warmup: usize,
    pub cadence_divisor: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            norm_cap: 20.0,
            grad_tol: 1e-6,
            max_iter: 200,
            cadence_warmup: 200,
            cadence_divisor: 100,
        }
    }
}

impl LearnerConfig {
    pub fn opts(&self) -> OptimizerOpts {
        OptimizerOpts {
            grad_tol: self.grad_tol,
            max_iter: self.max_iter,
            norm_cap: self.norm_cap,
            init_step: 1.0,
        }
    }

    pub fn cadence(&self) -> RefitCadence {
        RefitCadence {
            warmup: self.cadence_warmup,
            divisor: self.cadence_divisor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Logged-interaction CSV; a synthetic email-profile log is generated
    /// when absent.
    pub log: Option<PathBuf>,
    /// Size of the generated log.
    pub records: usize,
    /// Seed of the generated log's ground truth and draws.
    pub log_seed: u64,
    /// Conditional conversion rates of the generated log.
    pub rates: Vec<f64>,
    pub arms: usize,
    pub features: usize,
    pub bins: usize,
    pub fallback: ReplayFallback,
    /// Horizon of the lift runs.
    pub steps: usize,
    /// Horizon of the randomized-action prediction runs.
    pub prediction_steps: usize,
    pub checkpoint_every: usize,
    pub policies: Vec<String>,
    /// Penalty weights for the replay runs, tuned separately from the
    /// simulated setting; every other policy key comes from `policy`.
    pub lambda_sequential: f64,
    pub lambda_clustered: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        let profile = EmailProfile::default();
        Self {
            log: None,
            records: 100_000,
            log_seed: 0,
            rates: profile.rates,
            arms: profile.arms,
            features: profile.features,
            bins: 5,
            fallback: ReplayFallback::AllZero,
            steps: 10_000,
            prediction_steps: 10_000,
            checkpoint_every: 500,
            policies: default_policies(),
            lambda_sequential: 0.05,
            lambda_clustered: 0.05,
        }
    }
}

impl ReplayConfig {
    pub fn policy_params(&self, shared: &PolicyParams) -> PolicyParams {
        PolicyParams {
            lambda_sequential: self.lambda_sequential,
            lambda_clustered: self.lambda_clustered,
            ..shared.clone()
        }
    }

    pub fn profile(&self) -> EmailProfile {
        EmailProfile {
            rates: self.rates.clone(),
            arms: self.arms,
            features: self.features,
            ..EmailProfile::default()
        }
    }
}

/// Hyper-parameter search spaces of the original study. Hidden-unit counts
/// do not apply to GLM learners and are carried for reference only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrids {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub units_baseline: Vec<usize>,
    pub units_multi_layer: Vec<usize>,
}

impl Default for HyperGrids {
    fn default() -> Self {
        Self {
            lambda: vec![0.001, 0.005, 0.01, 0.05],
            alpha: vec![0.1, 0.2, 0.4, 0.6],
            epsilon: vec![0.02, 0.05, 0.1],
            units_baseline: vec![8, 16, 32, 64],
            units_multi_layer: vec![1, 4, 8, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Pins the file to one experiment; the CLI rejects a mismatching
    /// subcommand.
    pub experiment: Option<ExperimentKind>,
    /// Output directory when `--out` is not given.
    pub out_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub bounds: BoundsConfig,
    pub supervised: SupervisedConfig,
    pub bandit: BanditConfig,
    pub policy: PolicyParams,
    pub learner: LearnerConfig,
    pub replay: ReplayConfig,
    pub grids: HyperGrids,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            out_dir: None,
            seeds: (0..10).collect(),
            bounds: BoundsConfig::default(),
            supervised: SupervisedConfig::default(),
            bandit: BanditConfig::default(),
            policy: PolicyParams::default(),
            learner: LearnerConfig::default(),
            replay: ReplayConfig::default(),
            grids: HyperGrids::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        let b = &self.bounds;
        if b.layers == 0 || b.points < 2 || !(b.n_min > 0.0 && b.n_max >= b.n_min) || !(b.decay > 0.0) {
            return Err(HarnessError::Config(
                "bounds: need layers ≥ 1, points ≥ 2, 0 < n_min ≤ n_max, decay > 0".into(),
            ));
        }
        if b.slack().len() != b.layers {
            return Err(HarnessError::Config("bounds.q must have one entry per layer".into()));
        }
        let s = &self.supervised;
        if s.dim == 0 || s.layers == 0 || s.n.is_empty() || s.slack().len() != s.layers {
            return Err(HarnessError::Config(
                "supervised: need dim, layers, n and one q per layer".into(),
            ));
        }
        let bd = &self.bandit;
        if bd.arms == 0 || bd.layers == 0 || bd.dim == 0 || bd.horizon == 0 {
            return Err(HarnessError::Config(
                "bandit: arms, layers, dim and horizon must be positive".into(),
            ));
        }
        for name in &bd.policies {
            self.policy.kind(name, bd.layers)?;
        }
        for name in &self.replay.policies {
            self.replay.policy_params(&self.policy).kind(name, 1)?;
        }
        if !(0.0..=1.0).contains(&self.policy.alpha) {
            return Err(HarnessError::Config(format!(
                "policy.alpha {} outside [0, 1]",
                self.policy.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.policy.epsilon) {
            return Err(HarnessError::Config(format!(
                "policy.epsilon {} outside [0, 1]",
                self.policy.epsilon
            )));
        }
        if !(self.replay.lambda_sequential >= 0.0 && self.replay.lambda_clustered >= 0.0) {
            return Err(HarnessError::Config(
                "replay penalty weights must be non-negative".into(),
            ));
        }
        let r = &self.replay;
        if r.checkpoint_every == 0 || r.bins == 0 {
            return Err(HarnessError::Config(
                "replay: checkpoint_every and bins must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical TOML rendering used for hashing and provenance.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

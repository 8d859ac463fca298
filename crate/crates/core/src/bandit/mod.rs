//! Contextual bandit policies over funnel-structured rewards.
//!
//! Every arm is a funnel. A [`Policy`] keeps one history per arm, feeds it
//! through the funnel data rule (layer `j` sees only pulls with
//! `r_{j−1} = 1`) and refits its estimates on a decaying cadence. The policy
//! family is selected by [`PolicyKind`]:
//!
//! - `Optimistic`: two-stage multi-task estimate per arm, argmax of the
//!   estimated funnel value plus the propagated bonus.
//! - `PracticalSequential` / `PracticalClustered`: penalized per-layer fits
//!   pulled toward the previous layer or the layer mean, with ε-greedy.
//! - `Target`, `Mix`, `SequentialCurriculum`: single-model baselines trained
//!   on the last layer, the mean reward, or a layer schedule.
//! - `Random`: uniform reference for lifts.

mod bonus;
mod record;

pub use bonus::{funnel_bonus_terms, layer_bonus_value, BonusTerms, LAMBDA_FLOOR};
pub use record::{
    cumulative_regret, layer_lift, layer_totals, run_episode, EpisodeOptions, NdjsonRow, RunRecord, StepRecord,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, RewardVector};
use crate::glm::{
    fit_penalized, fit_unconstrained, layer_means, predict_funnel, GlmError, LayerData, LayeredDataset, MeanFunction,
    ThetaStack,
};
use crate::linalg::{dot, norm};
use crate::mtl::{c_delta, mtl_estimate, ConstraintSet, MtlConfig, MtlError, MtlEstimate};
use crate::optim::OptimizerOpts;
use crate::rng::{self, StreamRng};

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error("arm {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error("reward vector has {got} layers, expected {expected}")]
    RewardLength { got: usize, expected: usize },
    #[error("regret needs oracle values, step {0} has none")]
    MissingOracle(usize),
    #[error("non-finite estimate for arm {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Mtl(#[from] MtlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicyKind {
    /// `q` is the hypothesis-class slack; `clustered` picks the class.
    Optimistic {
        delta: f64,
        c_delta_scale: f64,
        q: Vec<f64>,
        clustered: bool,
    },
    PracticalSequential {
        lambda_pen: f64,
        epsilon: f64,
    },
    PracticalClustered {
        lambda_pen: f64,
        epsilon: f64,
    },
    Target {
        epsilon: f64,
    },
    Mix {
        epsilon: f64,
    },
    SequentialCurriculum {
        alpha: f64,
        epsilon: f64,
    },
    Random,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Optimistic { .. } => "optimistic",
            Self::PracticalSequential { .. } => "multi_layer_sequential",
            Self::PracticalClustered { .. } => "multi_layer_clustered",
            Self::Target { .. } => "target",
            Self::Mix { .. } => "mix",
            Self::SequentialCurriculum { .. } => "sequential",
            Self::Random => "random",
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Self::PracticalSequential { epsilon, .. }
            | Self::PracticalClustered { epsilon, .. }
            | Self::Target { epsilon }
            | Self::Mix { epsilon }
            | Self::SequentialCurriculum { epsilon, .. } => *epsilon,
            Self::Optimistic { .. } => 0.0,
            Self::Random => 1.0,
        }
    }

    pub fn validate(&self, layers: usize) -> Result<(), BanditError> {
        let eps = self.epsilon();
        if !(0.0..=1.0).contains(&eps) {
            return Err(BanditError::Config(format!("epsilon {eps} outside [0, 1]")));
        }
        match self {
            Self::Optimistic {
                delta,
                c_delta_scale,
                q,
                ..
            } => {
                if !(*delta > 0.0 && *delta < 1.0) || !(*c_delta_scale > 0.0) {
                    return Err(BanditError::Config(
                        "delta must lie in (0, 1) and c_delta_scale be positive".into(),
                    ));
                }
                if q.len() != layers || q.iter().any(|v| !(*v > 0.0)) {
                    return Err(BanditError::Config(format!(
                        "need {layers} positive slack values, got {q:?}"
                    )));
                }
            }
            Self::PracticalSequential { lambda_pen, .. } | Self::PracticalClustered { lambda_pen, .. } => {
                if !(*lambda_pen >= 0.0) {
                    return Err(BanditError::Config("lambda_pen must be non-negative".into()));
                }
            }
            Self::SequentialCurriculum { alpha, .. } if !(0.0..=1.0).contains(alpha) => {
                return Err(BanditError::Config(format!("alpha {alpha} outside [0, 1]")));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Refit schedule keyed on an arm's own pull count `n`: refit on every pull
/// while `n ≤ warmup`, then whenever at least `⌈n / divisor⌉` pulls arrived
/// since the last refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefitCadence {
    pub warmup: usize,
    pub divisor: usize,
}

impl Default for RefitCadence {
    fn default() -> Self {
        Self {
            warmup: 200,
            divisor: 100,
        }
    }
}

impl RefitCadence {
    pub fn every_step() -> Self {
        Self {
            warmup: usize::MAX,
            divisor: 1,
        }
    }

    pub fn due(&self, pulls: usize, last_refit: usize) -> bool {
        pulls <= self.warmup || self.divisor == 0 || pulls - last_refit >= pulls.div_ceil(self.divisor)
    }
}

/// Problem shape and learner settings shared by every policy kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub arms: usize,
    pub layers: usize,
    pub dim: usize,
    /// Horizon `T`, needed by the optimistic confidence schedule.
    pub horizon: usize,
    /// Context norm bound `d_x`.
    pub d_x: f64,
    pub norm_cap: f64,
    pub opts: OptimizerOpts,
    pub cadence: RefitCadence,
}

impl PolicyContext {
    /// Link with its derivative bounds taken over `|xᵀθ| ≤ d_x · norm_cap`.
    pub fn mean(&self) -> MeanFunction {
        MeanFunction::from_norms(self.d_x, self.norm_cap)
    }
}

#[derive(Debug, Clone)]
struct ArmState {
    funnel: LayeredDataset,
    contexts: Vec<Vec<f64>>,
    rewards: Vec<RewardVector>,
    theta: ThetaStack,
    theta_tilde: Option<ThetaStack>,
    estimate: Option<MtlEstimate>,
    diam: Vec<f64>,
    lambda: Vec<f64>,
    pulls: usize,
    last_refit: usize,
    label_phase: usize,
}

/// Counters for non-fatal refit problems.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDiagnostics {
    pub refits: usize,
    /// Layers whose confidence intersection was empty.
    pub set_fallbacks: usize,
    /// Refits that failed and kept the previous estimate.
    pub fit_failures: usize,
}

/// A bandit policy bound to one problem shape.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    ctx: PolicyContext,
    mean: MeanFunction,
    kappa: f64,
    bonus_coef: f64,
    arms: Vec<ArmState>,
    rng: StreamRng,
    t: usize,
    diagnostics: PolicyDiagnostics,
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniform arm, otherwise `greedy()`. Returns
/// the arm and whether it was exploratory. Exactly one uniform draw is made
/// per call, plus one more on exploration.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    epsilon: f64,
    arms: usize,
    rng: &mut R,
    greedy: impl FnOnce() -> usize,
) -> (usize, bool) {
    let u: f64 = rng.random();
    if u < epsilon {
        (rng.random_range(0..arms), true)
    } else {
        (greedy(), false)
    }
}

impl Policy {
    pub fn new(kind: PolicyKind, ctx: PolicyContext, seed: u64) -> Result<Self, BanditError> {
        if ctx.arms == 0 || ctx.layers == 0 || ctx.dim == 0 {
            return Err(BanditError::Config("arms, layers and dim must be positive".into()));
        }
        if ctx.horizon == 0 {
            return Err(BanditError::Config("horizon must be positive".into()));
        }
        kind.validate(ctx.layers)?;
        let mean = ctx.mean();
        let bounds = mean.bounds()?;
        let (bonus_coef, initial_diam) = match &kind {
            PolicyKind::Optimistic {
                delta,
                c_delta_scale,
                q,
                clustered,
            } => {
                let split = delta / (3.0 * (ctx.arms * ctx.layers * ctx.horizon) as f64);
                let coef = c_delta_scale * c_delta(ctx.d_x, split) / bounds.c_mu;
                let diam: Vec<f64> = (1..=ctx.layers)
                    .map(|j| {
                        if *clustered {
                            2.0 * ctx.norm_cap
                        } else {
                            2.0 * q[..j].iter().sum::<f64>()
                        }
                    })
                    .collect();
                (coef, diam)
            }
            _ => (0.0, vec![f64::INFINITY; ctx.layers]),
        };
        let model_layers = match kind {
            PolicyKind::Target { .. } | PolicyKind::Mix { .. } | PolicyKind::SequentialCurriculum { .. } => 1,
            _ => ctx.layers,
        };
        let arm = ArmState {
            funnel: LayeredDataset::new(ctx.layers, ctx.dim),
            contexts: Vec::new(),
            rewards: Vec::new(),
            theta: ThetaStack::zeros(model_layers, ctx.dim),
            theta_tilde: None,
            estimate: None,
            diam: initial_diam,
            lambda: vec![0.0; ctx.layers],
            pulls: 0,
            last_refit: 0,
            label_phase: 0,
        };
        Ok(Self {
            kind,
            ctx,
            mean,
            kappa: bounds.kappa,
            bonus_coef,
            arms: vec![arm; ctx.arms],
            rng: rng::stream(seed, rng::POLICY),
            t: 0,
            diagnostics: PolicyDiagnostics::default(),
        })
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn context(&self) -> &PolicyContext {
        &self.ctx
    }

    pub fn diagnostics(&self) -> PolicyDiagnostics {
        self.diagnostics
    }

    /// Steps seen so far.
    pub fn t(&self) -> usize {
        self.t
    }

    /// `n_{a,j}` for every arm and layer.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        self.arms.iter().map(|a| a.funnel.counts()).collect()
    }

    /// Current parameter estimates of arm `a` (one layer for the
    /// single-model baselines).
    pub fn estimates(&self, arm: usize) -> &ThetaStack {
        &self.arms[arm].theta
    }

    /// Last multi-task estimate of an optimistic arm.
    pub fn mtl_estimate(&self, arm: usize) -> Option<&MtlEstimate> {
        self.arms[arm].estimate.as_ref()
    }

    /// Curriculum label layer at 1-based step `t`.
    pub fn curriculum_phase(alpha: f64, horizon: usize, layers: usize, t: usize) -> usize {
        let cutoff = alpha * horizon as f64;
        if layers <= 1 || t as f64 > cutoff {
            return layers;
        }
        let raw = ((layers - 1) as f64 * t as f64 / cutoff).ceil() as usize;
        raw.clamp(1, layers - 1)
    }

    /// Estimated funnel value of `arm` at `x`. For the single-model baselines
    /// this is the model's own target (last layer, mean reward, or the
    /// curriculum layer).
    pub fn predict(&self, arm: usize, x: &[f64]) -> f64 {
        let st = &self.arms[arm];
        match self.kind {
            PolicyKind::Target { .. } | PolicyKind::Mix { .. } | PolicyKind::SequentialCurriculum { .. } => {
                self.mean.mu(dot(x, &st.theta.layers[0]))
            }
            PolicyKind::Random => 0.0,
            _ => predict_funnel(&self.mean, &st.theta, x, self.ctx.layers).unwrap_or(0.0),
        }
    }

    /// `Δμ_{a,j}` at `x` (1-based `j`); zero for non-optimistic kinds.
    pub fn layer_bonus(&self, arm: usize, j: usize, x: &[f64]) -> f64 {
        if !matches!(self.kind, PolicyKind::Optimistic { .. }) {
            return 0.0;
        }
        let st = &self.arms[arm];
        let n = st.funnel.layer(j).len();
        layer_bonus_value(
            self.kappa,
            norm(x),
            st.diam[j - 1],
            self.bonus_coef,
            self.ctx.dim,
            n,
            st.lambda[j - 1],
        )
    }

    pub fn funnel_bonus(&self, arm: usize, x: &[f64]) -> Result<BonusTerms, BanditError> {
        let st = &self.arms[arm];
        if !st.theta.layers.iter().all(|l| l.is_finite()) {
            return Err(BanditError::NonFinite(arm));
        }
        let means = layer_means(&self.mean, &st.theta, x);
        let dm: Vec<f64> = (1..=self.ctx.layers).map(|j| self.layer_bonus(arm, j, x)).collect();
        Ok(funnel_bonus_terms(&means, &dm))
    }

    /// Clipped optimistic index `min(P_J + Δμ, 1)` and its unclipped value.
    pub fn optimistic_index(&self, arm: usize, x: &[f64]) -> Result<(f64, f64), BanditError> {
        let p = self.predict(arm, x);
        let b = self.funnel_bonus(arm, x)?;
        Ok((b.index(p), p + b.total))
    }

    fn optimistic_select(&self, x: &[f64]) -> Result<usize, BanditError> {
        let mut best = 0;
        let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for a in 0..self.ctx.arms {
            let key = self.optimistic_index(a, x)?;
            if key.0 > best_key.0 || (key.0 == best_key.0 && key.1 > best_key.1) {
                best = a;
                best_key = key;
            }
        }
        Ok(best)
    }

    fn greedy(&self, x: &[f64]) -> usize {
        let values: Vec<f64> = (0..self.ctx.arms).map(|a| self.predict(a, x)).collect();
        argmax(&values)
    }

    /// Chooses an arm for context `x` and advances the step counter.
    pub fn select(&mut self, x: &[f64]) -> Result<usize, BanditError> {
        self.t += 1;
        match self.kind {
            PolicyKind::Optimistic { .. } => self.optimistic_select(x),
            PolicyKind::Random => Ok(self.rng.random_range(0..self.ctx.arms)),
            _ => {
                let eps = self.kind.epsilon();
                let arms = self.ctx.arms;
                let mut rng = self.rng.clone();
                let (arm, _) = epsilon_greedy(eps, arms, &mut rng, || self.greedy(x));
                self.rng = rng;
                Ok(arm)
            }
        }
    }

    /// Records the outcome of pulling `arm` at `x` and refits that arm when
    /// its cadence (or a curriculum phase change) calls for it. Other arms
    /// are untouched.
    pub fn update(&mut self, arm: usize, x: &[f64], rewards: &RewardVector) -> Result<(), BanditError> {
        if arm >= self.ctx.arms {
            return Err(BanditError::ArmOutOfRange {
                arm,
                arms: self.ctx.arms,
            });
        }
        if rewards.len() != self.ctx.layers {
            return Err(BanditError::RewardLength {
                got: rewards.len(),
                expected: self.ctx.layers,
            });
        }
        let phase = match self.kind {
            PolicyKind::SequentialCurriculum { alpha, .. } => {
                Self::curriculum_phase(alpha, self.ctx.horizon, self.ctx.layers, self.t.max(1))
            }
            _ => 0,
        };
        let st = &mut self.arms[arm];
        st.funnel.push(x, rewards);
        st.contexts.push(x.to_vec());
        st.rewards.push(rewards.clone());
        st.pulls += 1;
        let due = self.ctx.cadence.due(st.pulls, st.last_refit) || phase != st.label_phase;
        if due && !matches!(self.kind, PolicyKind::Random) {
            self.refit(arm, phase);
        }
        Ok(())
    }

    fn refit(&mut self, arm: usize, phase: usize) {
        self.diagnostics.refits += 1;
        let outcome = match self.kind.clone() {
            PolicyKind::Optimistic {
                delta,
                c_delta_scale,
                q,
                clustered,
            } => self.refit_optimistic(arm, delta, c_delta_scale, q, clustered),
            PolicyKind::PracticalSequential { lambda_pen, .. } => self.refit_practical(arm, lambda_pen, false),
            PolicyKind::PracticalClustered { lambda_pen, .. } => self.refit_practical(arm, lambda_pen, true),
            PolicyKind::Target { .. } => {
                let last = self.ctx.layers - 1;
                self.refit_single(arm, |r| r.bits()[last] as f64)
            }
            PolicyKind::Mix { .. } => {
                let jn = self.ctx.layers as f64;
                self.refit_single(arm, |r| r.depth() as f64 / jn)
            }
            PolicyKind::SequentialCurriculum { .. } => self.refit_single(arm, |r| r.bits()[phase - 1] as f64),
            PolicyKind::Random => Ok(()),
        };
        let st = &mut self.arms[arm];
        st.last_refit = st.pulls;
        st.label_phase = phase;
        if let Err(e) = outcome {
            log::warn!("refit of arm {arm} failed, keeping previous estimate: {e}");
            self.diagnostics.fit_failures += 1;
        }
    }

    fn refit_optimistic(
        &mut self,
        arm: usize,
        delta: f64,
        c_delta_scale: f64,
        q: Vec<f64>,
        clustered: bool,
    ) -> Result<(), BanditError> {
        let ctx = self.ctx;
        // per-layer sets at level δ/(3AT) so the union over layers gives δ/(3AJT)
        let cfg = MtlConfig {
            delta: delta / (3.0 * (ctx.arms * ctx.horizon) as f64),
            c_delta_scale,
            d_x: ctx.d_x,
            norm_cap: ctx.norm_cap,
            radius_coef: None,
            opts: ctx.opts,
        };
        let theta0 = if clustered {
            ConstraintSet::ClusteredCenter { q }
        } else {
            ConstraintSet::SequentialChain { q }
        };
        let st = &mut self.arms[arm];
        let est = mtl_estimate(&st.funnel, &theta0, &self.mean, &cfg, st.theta_tilde.as_ref())?;
        if !est.theta_hat.layers.iter().all(|l| l.is_finite()) {
            return Err(BanditError::NonFinite(arm));
        }
        self.diagnostics.set_fallbacks += est.diagnostics.iter().filter(|d| d.fallback).count();
        st.diam = est.diagnostics.iter().map(|d| 2.0 * d.set_radius).collect();
        st.lambda = est.diagnostics.iter().map(|d| d.min_eigenvalue).collect();
        st.theta = est.theta_hat.clone();
        st.theta_tilde = Some(est.theta_tilde.clone());
        st.estimate = Some(est);
        Ok(())
    }

    /// Layer `j` minimizes the per-sample loss plus `λ ‖θ − center‖₂`; the
    /// summed loss is used internally, so the weight is `λ · max(n_j, 1)`.
    fn refit_practical(&mut self, arm: usize, lambda_pen: f64, clustered: bool) -> Result<(), BanditError> {
        let (mean, opts, d) = (self.mean, self.ctx.opts, self.ctx.dim);
        let st = &mut self.arms[arm];
        let mut theta = st.theta.clone();
        for j in 1..=self.ctx.layers {
            let center: Vec<f64> = if clustered {
                let jn = theta.len() as f64;
                (0..d)
                    .map(|k| theta.layers.iter().map(|l| l[k]).sum::<f64>() / jn)
                    .collect()
            } else if j == 1 {
                vec![0.0; d]
            } else {
                theta.layers[j - 2].0.clone()
            };
            let data = st.funnel.layer(j);
            let weight = lambda_pen * data.len().max(1) as f64;
            let fit = fit_penalized(&mean, data, &theta.layers[j - 1], &center, weight, &opts)?;
            if !fit.theta.is_finite() {
                return Err(BanditError::NonFinite(arm));
            }
            theta.layers[j - 1] = fit.theta;
        }
        st.theta = theta;
        Ok(())
    }

    fn refit_single(&mut self, arm: usize, label: impl Fn(&RewardVector) -> f64) -> Result<(), BanditError> {
        let st = &mut self.arms[arm];
        let mut data = LayerData::new(self.ctx.dim);
        for (x, r) in st.contexts.iter().zip(&st.rewards) {
            data.push(x, label(r));
        }
        let fit = fit_unconstrained(&self.mean, &data, &st.theta.layers[0], &self.ctx.opts)?;
        if !fit.theta.is_finite() {
            return Err(BanditError::NonFinite(arm));
        }
        st.theta.layers[0] = fit.theta;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{gen_sequential_bandit_env, Environment, SeqEnvParams};
    use crate::glm::LayerParams;

    fn ctx(arms: usize, layers: usize, dim: usize) -> PolicyContext {
        PolicyContext {
            arms,
            layers,
            dim,
            horizon: 500,
            d_x: 1.0,
            norm_cap: 10.0,
            opts: OptimizerOpts {
                grad_tol: 1e-6,
                max_iter: 300,
                norm_cap: 10.0,
                init_step: 1.0,
            },
            cadence: RefitCadence::default(),
        }
    }

    fn optimistic(layers: usize) -> PolicyKind {
        PolicyKind::Optimistic {
            delta: 0.1,
            c_delta_scale: 1.0,
            q: vec![0.5; layers],
            clustered: false,
        }
    }

    fn bits(b: &[u8]) -> RewardVector {
        RewardVector::from_bits(b).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Policy::new(PolicyKind::Target { epsilon: 1.5 }, ctx(2, 2, 2), 0).is_err());
        assert!(Policy::new(
            PolicyKind::SequentialCurriculum {
                alpha: 1.2,
                epsilon: 0.1
            },
            ctx(2, 2, 2),
            0
        )
        .is_err());
        assert!(Policy::new(
            PolicyKind::Optimistic {
                delta: 0.1,
                c_delta_scale: 1.0,
                q: vec![1.0],
                clustered: false
            },
            ctx(2, 2, 2),
            0
        )
        .is_err());
        let mut p = Policy::new(PolicyKind::Target { epsilon: 0.0 }, ctx(2, 2, 2), 0).unwrap();
        assert!(p.update(2, &[0.0, 0.0], &bits(&[0, 0])).is_err());
        assert!(p.update(0, &[0.0, 0.0], &bits(&[0])).is_err());
    }

    #[test]
    fn cadence_schedule() {
        let c = RefitCadence::default();
        assert!((1..=200).all(|n| c.due(n, n - 1)));
        assert!(!c.due(201, 200));
        assert!(c.due(203, 200));
        assert!(c.due(1000, 990));
        assert!(!c.due(1000, 991));
        assert!(RefitCadence::every_step().due(10_000, 9_999));
    }

    #[test]
    fn curriculum_phases() {
        assert_eq!(Policy::curriculum_phase(0.0, 100, 4, 1), 4);
        assert_eq!(Policy::curriculum_phase(0.4, 100, 4, 1), 1);
        assert_eq!(Policy::curriculum_phase(0.4, 100, 4, 13), 1);
        assert_eq!(Policy::curriculum_phase(0.4, 100, 4, 14), 2);
        assert_eq!(Policy::curriculum_phase(0.4, 100, 4, 40), 3);
        assert_eq!(Policy::curriculum_phase(0.4, 100, 4, 41), 4);
        assert_eq!(Policy::curriculum_phase(0.4, 100, 1, 5), 1);
    }

    #[test]
    fn funnel_data_rule_in_updates() {
        let mut p = Policy::new(optimistic(3), ctx(2, 3, 2), 0).unwrap();
        p.update(0, &[0.1, 0.2], &bits(&[0, 0, 0])).unwrap();
        assert_eq!(p.counts()[0], vec![1, 0, 0]);
        p.update(0, &[0.1, 0.2], &bits(&[1, 1, 0])).unwrap();
        assert_eq!(p.counts()[0], vec![2, 1, 1]);
        assert_eq!(p.counts()[1], vec![0, 0, 0]);
    }

    #[test]
    fn empty_arm_bonus_is_prior_diameter() {
        let p = Policy::new(optimistic(3), ctx(1, 3, 2), 0).unwrap();
        let x = [0.3, 0.4];
        for j in 1..=3 {
            let expected = p.kappa * 0.5 * 2.0 * 0.5 * j as f64;
            assert!((p.layer_bonus(0, j, &x) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn single_arm_and_ties() {
        let mut one = Policy::new(optimistic(2), ctx(1, 2, 2), 0).unwrap();
        assert_eq!(one.select(&[0.2, 0.1]).unwrap(), 0);
        let mut many = Policy::new(optimistic(2), ctx(5, 2, 2), 0).unwrap();
        assert_eq!(many.select(&[0.2, 0.1]).unwrap(), 0);
        let mut greedy = Policy::new(PolicyKind::Target { epsilon: 0.0 }, ctx(5, 2, 2), 0).unwrap();
        assert_eq!(greedy.select(&[0.2, 0.1]).unwrap(), 0);
    }

    #[test]
    fn optimistic_select_matches_exhaustive_index() {
        let mut env = gen_sequential_bandit_env(&SeqEnvParams {
            arms: 5,
            layers: 3,
            dim: 3,
            sigma: 1.0,
            sigma_x: 0.3,
            seed: 3,
        })
        .unwrap();
        let mut c = ctx(5, 3, 3);
        c.d_x = 1.5;
        let mut p = Policy::new(optimistic(3), c, 3).unwrap();
        let mut checked = 0;
        for _ in 0..150 {
            let s = env.step().unwrap();
            let keys: Vec<(f64, f64)> = (0..5).map(|a| p.optimistic_index(a, &s.context).unwrap()).collect();
            for k in &keys {
                assert!((0.0..=1.0).contains(&k.0));
            }
            let mut best = 0;
            for a in 1..5 {
                if keys[a].0 > keys[best].0 || (keys[a].0 == keys[best].0 && keys[a].1 > keys[best].1) {
                    best = a;
                }
            }
            let a = p.select(&s.context).unwrap();
            assert_eq!(a, best);
            let r = env.act(a).unwrap();
            p.update(a, &s.context, &r).unwrap();
            checked += 1;
        }
        assert_eq!(checked, 150);
    }

    #[test]
    fn zero_penalty_is_independent_fits() {
        let mut env = gen_sequential_bandit_env(&SeqEnvParams {
            arms: 1,
            layers: 3,
            dim: 2,
            sigma: 1.0,
            sigma_x: 0.5,
            seed: 9,
        })
        .unwrap();
        let mut c = ctx(1, 3, 2);
        c.cadence = RefitCadence::every_step();
        let mut p = Policy::new(
            PolicyKind::PracticalSequential {
                lambda_pen: 0.0,
                epsilon: 0.0,
            },
            c,
            1,
        )
        .unwrap();
        let mut ds = LayeredDataset::new(3, 2);
        for _ in 0..100 {
            let s = env.step().unwrap();
            let r = env.act(0).unwrap();
            p.update(0, &s.context, &r).unwrap();
            ds.push(&s.context, &r);
        }
        let mean = c.mean();
        for j in 1..=3 {
            let fit = fit_unconstrained(&mean, ds.layer(j), &LayerParams::zeros(2), &c.opts).unwrap();
            let got = &p.estimates(0).layers[j - 1];
            let loss_got = crate::glm::layer_loss(&mean, got, ds.layer(j));
            assert!(loss_got <= fit.loss + 1e-6, "layer {j}: {loss_got} vs {}", fit.loss);
        }
    }

    #[test]
    fn huge_penalty_collapses_chain() {
        let mut c = ctx(1, 3, 2);
        c.cadence = RefitCadence::every_step();
        let mut p = Policy::new(
            PolicyKind::PracticalSequential {
                lambda_pen: 1e4,
                epsilon: 0.0,
            },
            c,
            1,
        )
        .unwrap();
        for k in 0..40 {
            let x = [1.0, (k as f64 * 0.37).sin()];
            let r = if k % 3 == 0 { bits(&[1, 1, 0]) } else { bits(&[1, 0, 0]) };
            p.update(0, &x, &r).unwrap();
        }
        let th = p.estimates(0);
        assert!(norm(&th.layers[0]) < 1e-6);
        assert!(crate::linalg::dist(&th.layers[1], &th.layers[0]) < 1e-6);
        assert!(crate::linalg::dist(&th.layers[2], &th.layers[1]) < 1e-6);
    }

    #[test]
    fn single_layer_target_equals_mix() {
        let mut c = ctx(2, 1, 2);
        c.cadence = RefitCadence::every_step();
        let mut t = Policy::new(PolicyKind::Target { epsilon: 0.2 }, c, 4).unwrap();
        let mut m = Policy::new(PolicyKind::Mix { epsilon: 0.2 }, c, 4).unwrap();
        for k in 0..60 {
            let x = [1.0, (k as f64).cos()];
            let (at, am) = (t.select(&x).unwrap(), m.select(&x).unwrap());
            assert_eq!(at, am);
            let r = bits(&[(k % 4 == 0) as u8]);
            t.update(at, &x, &r).unwrap();
            m.update(am, &x, &r).unwrap();
        }
        assert_eq!(t.estimates(0), m.estimates(0));
    }

    #[test]
    fn mix_label_is_mean_reward() {
        let r = bits(&[1, 1, 0, 0]);
        assert_eq!(r.depth() as f64 / 4.0, 0.5);
    }

    #[test]
    fn zero_alpha_curriculum_is_target() {
        let mut c = ctx(3, 3, 2);
        c.cadence = RefitCadence::every_step();
        let mut t = Policy::new(PolicyKind::Target { epsilon: 0.1 }, c, 8).unwrap();
        let mut s = Policy::new(
            PolicyKind::SequentialCurriculum {
                alpha: 0.0,
                epsilon: 0.1,
            },
            c,
            8,
        )
        .unwrap();
        for k in 0..90 {
            let x = [1.0, (k as f64 * 0.7).sin()];
            let (a1, a2) = (t.select(&x).unwrap(), s.select(&x).unwrap());
            assert_eq!(a1, a2);
            let r = if k % 5 == 0 { bits(&[1, 1, 1]) } else { bits(&[1, 0, 0]) };
            t.update(a1, &x, &r).unwrap();
            s.update(a2, &x, &r).unwrap();
        }
        for a in 0..3 {
            assert_eq!(t.estimates(a), s.estimates(a));
        }
    }

    #[test]
    fn epsilon_extremes() {
        let mut rng = rng::stream(1, rng::POLICY);
        for _ in 0..1000 {
            assert_eq!(epsilon_greedy(0.0, 5, &mut rng, || 3), (3, false));
        }
        let a = 7usize;
        let n = 100_000;
        let mut freq = vec![0usize; a];
        for _ in 0..n {
            let (arm, explored) = epsilon_greedy(1.0, a, &mut rng, || unreachable!());
            assert!(explored);
            freq[arm] += 1;
        }
        let p = 1.0 / a as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for f in freq {
            assert!((f as f64 - n as f64 * p).abs() <= 4.0 * sd);
        }
        let mut explored = 0usize;
        for _ in 0..n {
            explored += epsilon_greedy(0.1, a, &mut rng, || 0).1 as usize;
        }
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((explored as f64 - 0.1 * n as f64).abs() <= 4.0 * sd);
    }
}

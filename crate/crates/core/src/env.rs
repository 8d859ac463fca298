//! Funnel environments.
//!
//! A [`Funnel`] turns a context into a monotone binary reward vector by
//! drawing independent layer conversions `z_j ~ Bernoulli(μ(xᵀθ_j))` and
//! exposing their running products `r_j = z_1 ⋯ z_j`. [`BanditEnv`] attaches
//! one funnel per arm to a context distribution; [`ReplayEnv`] resamples
//! rewards from a logged-interaction file instead.
//!
//! Both environments follow a strict step/act protocol: `step` draws a
//! context, `act` consumes it exactly once.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::glm::{predict_funnel, LayerParams, MeanFunction, ThetaStack};
use crate::linalg::{dot, norm};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("protocol violation: {0}")]
    Protocol(&'static str),
    #[error("arm {arm} out of range (environment has {arms} arms)")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error("invalid reward vector {0:?}: entries must be 0/1 and non-increasing")]
    InvalidRewards(Vec<u8>),
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("log line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("log is empty")]
    EmptyLog,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Observed rewards `r_1 ≥ r_2 ≥ … ≥ r_J` of one interaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct RewardVector(Vec<u8>);

impl RewardVector {
    pub fn from_bits(bits: &[u8]) -> Result<Self, EnvError> {
        let valid = bits.iter().all(|&b| b <= 1) && bits.windows(2).all(|w| w[1] <= w[0]);
        if !valid {
            return Err(EnvError::InvalidRewards(bits.to_vec()));
        }
        Ok(Self(bits.to_vec()))
    }

    /// Running products of per-layer conversion indicators.
    pub fn from_conversions(z: &[bool]) -> Self {
        let mut alive = true;
        Self(
            z.iter()
                .map(|&zj| {
                    alive &= zj;
                    alive as u8
                })
                .collect(),
        )
    }

    pub fn zeros(j: usize) -> Self {
        Self(vec![0; j])
    }

    /// Reward of 0-based layer `j`.
    pub fn get(&self, j: usize) -> bool {
        self.0[j] == 1
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Number of layers converted, i.e. the count of leading ones.
    pub fn depth(&self) -> usize {
        self.0.iter().take_while(|&&b| b == 1).count()
    }

    pub fn last(&self) -> bool {
        self.0.last() == Some(&1)
    }

    pub fn is_monotone(&self) -> bool {
        self.0.windows(2).all(|w| w[1] <= w[0])
    }
}

impl TryFrom<Vec<u8>> for RewardVector {
    type Error = EnvError;
    fn try_from(v: Vec<u8>) -> Result<Self, EnvError> {
        Self::from_bits(&v)
    }
}

impl From<RewardVector> for Vec<u8> {
    fn from(r: RewardVector) -> Self {
        r.0
    }
}

/// Ground truth of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Funnel {
    pub stack: ThetaStack,
    pub mean: MeanFunction,
}

impl Funnel {
    pub fn new(stack: ThetaStack, mean: MeanFunction) -> Self {
        Self { stack, mean }
    }

    pub fn layers(&self) -> usize {
        self.stack.len()
    }

    pub fn dim(&self) -> usize {
        self.stack.dim()
    }

    /// `P_J(x, θ*)`, the probability of converting through every layer.
    pub fn value(&self, x: &[f64]) -> f64 {
        predict_funnel(&self.mean, &self.stack, x, self.layers()).expect("non-empty stack")
    }

    /// Draws one reward vector. All `J` conversions are drawn even after the
    /// chain breaks so the arm's random stream advances by a fixed amount.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> RewardVector {
        let z: Vec<bool> = self
            .stack
            .layers
            .iter()
            .map(|th| {
                let p = self.mean.mu(dot(x, th));
                rng.random::<f64>() < p
            })
            .collect();
        RewardVector::from_conversions(&z)
    }
}

/// Where contexts come from.
#[derive(Debug, Clone)]
pub enum ContextDistribution {
    /// `N(0, σ_x² I)` rescaled onto the ball `‖x‖ ≤ clip_norm` when outside.
    /// With `intercept`, coordinate 0 is a constant 1 and the Gaussian part
    /// is rescaled so the full vector respects the clip.
    Gaussian {
        dim: usize,
        sigma_x: f64,
        clip_norm: f64,
        intercept: bool,
    },
    /// Uniform draws from a fixed list of contexts.
    Empirical { contexts: Arc<Vec<Vec<f64>>> },
}

/// 99.9% quantile of `‖x‖` under `N(0, σ_x² I_d)`.
pub fn default_clip_norm(dim: usize, sigma_x: f64) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let chi = ChiSquared::new(dim as f64).expect("positive degrees of freedom");
    sigma_x * chi.inverse_cdf(0.999).sqrt()
}

impl ContextDistribution {
    pub fn gaussian(dim: usize, sigma_x: f64) -> Self {
        Self::Gaussian {
            dim,
            sigma_x,
            clip_norm: default_clip_norm(dim, sigma_x),
            intercept: false,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { dim, .. } => *dim,
            Self::Empirical { contexts } => contexts.first().map(|c| c.len()).unwrap_or(0),
        }
    }

    /// Upper bound `d_x` on context norms.
    pub fn norm_bound(&self) -> f64 {
        match self {
            Self::Gaussian { clip_norm, .. } => *clip_norm,
            Self::Empirical { contexts } => contexts.iter().map(|c| norm(c)).fold(0.0, f64::max),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Gaussian {
                dim,
                sigma_x,
                clip_norm,
                intercept,
            } => {
                let offset = usize::from(*intercept);
                let mut x = vec![0.0; *dim];
                for v in x.iter_mut().skip(offset) {
                    let g: f64 = StandardNormal.sample(rng);
                    *v = sigma_x * g;
                }
                let cap = if *intercept {
                    x[0] = 1.0;
                    (clip_norm * clip_norm - 1.0).max(0.0).sqrt()
                } else {
                    *clip_norm
                };
                let r = norm(&x[offset..]);
                if r > cap {
                    let s = cap / r;
                    x[offset..].iter_mut().for_each(|v| *v *= s);
                }
                x
            }
            Self::Empirical { contexts } => contexts[rng.random_range(0..contexts.len())].clone(),
        }
    }
}

/// Context of one step plus, for simulated environments, every arm's true
/// `P_J` at that context. The oracle is for regret accounting only.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub t: usize,
    pub context: Vec<f64>,
    pub oracle: Option<Vec<f64>>,
}

pub trait Environment {
    fn arms(&self) -> usize;
    fn layers(&self) -> usize;
    fn dim(&self) -> usize;
    fn step(&mut self) -> Result<Step, EnvError>;
    fn act(&mut self, arm: usize) -> Result<RewardVector, EnvError>;
}

/// Contextual bandit whose arms are funnels sharing `J`, `d` and the link.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    funnels: Vec<Funnel>,
    contexts: ContextDistribution,
    seed: u64,
    context_rng: StreamRng,
    arm_rngs: Vec<StreamRng>,
    pending: Option<Vec<f64>>,
    t: usize,
}

impl BanditEnv {
    pub fn new(funnels: Vec<Funnel>, contexts: ContextDistribution, seed: u64) -> Result<Self, EnvError> {
        let first = funnels
            .first()
            .ok_or_else(|| EnvError::Config("at least one arm required".into()))?;
        let (j, d, mean) = (first.layers(), first.dim(), first.mean);
        if funnels
            .iter()
            .any(|f| f.layers() != j || f.dim() != d || f.mean.kind != mean.kind)
        {
            return Err(EnvError::Config(
                "all funnels must share J, d and the mean function".into(),
            ));
        }
        if contexts.dim() != d {
            return Err(EnvError::Config(format!(
                "context dimension {} does not match parameter dimension {d}",
                contexts.dim()
            )));
        }
        let arm_rngs = (0..funnels.len()).map(|a| rng::arm_stream(seed, a)).collect();
        Ok(Self {
            funnels,
            contexts,
            seed,
            context_rng: rng::stream(seed, rng::CONTEXTS),
            arm_rngs,
            pending: None,
            t: 0,
        })
    }

    pub fn funnels(&self) -> &[Funnel] {
        &self.funnels
    }

    pub fn context_distribution(&self) -> &ContextDistribution {
        &self.contexts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True `P_J(x, θ*_a)` for every arm.
    pub fn oracle(&self, x: &[f64]) -> Vec<f64> {
        self.funnels.iter().map(|f| f.value(x)).collect()
    }
}

impl Environment for BanditEnv {
    fn arms(&self) -> usize {
        self.funnels.len()
    }

    fn layers(&self) -> usize {
        self.funnels[0].layers()
    }

    fn dim(&self) -> usize {
        self.funnels[0].dim()
    }

    fn step(&mut self) -> Result<Step, EnvError> {
        if self.pending.is_some() {
            return Err(EnvError::Protocol("step called before acting on the previous context"));
        }
        self.t += 1;
        let context = self.contexts.sample(&mut self.context_rng);
        let oracle = self.oracle(&context);
        self.pending = Some(context.clone());
        Ok(Step {
            t: self.t,
            context,
            oracle: Some(oracle),
        })
    }

    fn act(&mut self, arm: usize) -> Result<RewardVector, EnvError> {
        if arm >= self.funnels.len() {
            return Err(EnvError::ArmOutOfRange {
                arm,
                arms: self.funnels.len(),
            });
        }
        let x = self
            .pending
            .take()
            .ok_or(EnvError::Protocol("act called without a pending context"))?;
        Ok(self.funnels[arm].sample(&x, &mut self.arm_rngs[arm]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqEnvParams {
    pub arms: usize,
    pub layers: usize,
    pub dim: usize,
    pub sigma: f64,
    pub sigma_x: f64,
    pub seed: u64,
}

/// Random-walk ground truth: `θ_{a,1} ~ N(0, σ² I)` and
/// `θ_{a,j} ~ N(θ_{a,j−1}, (σ²/j) I)`, with Gaussian contexts clipped at the
/// 99.9% norm quantile.
pub fn gen_sequential_bandit_env(p: &SeqEnvParams) -> Result<BanditEnv, EnvError> {
    if p.arms == 0 || p.layers == 0 || p.dim == 0 {
        return Err(EnvError::Config("arms, layers and dim must be positive".into()));
    }
    if !(p.sigma >= 0.0 && p.sigma_x > 0.0) {
        return Err(EnvError::Config("sigma must be >= 0 and sigma_x > 0".into()));
    }
    let contexts = ContextDistribution::gaussian(p.dim, p.sigma_x);
    let mut prng = rng::stream(p.seed, rng::PARAMS);
    let mut stacks = Vec::with_capacity(p.arms);
    for _ in 0..p.arms {
        let mut layers: Vec<LayerParams> = Vec::with_capacity(p.layers);
        for j in 1..=p.layers {
            let sd = if j == 1 { p.sigma } else { p.sigma / (j as f64).sqrt() };
            let prev = layers.last().map(|l| l.0.clone()).unwrap_or_else(|| vec![0.0; p.dim]);
            let th: Vec<f64> = prev
                .iter()
                .map(|m| {
                    let g: f64 = StandardNormal.sample(&mut prng);
                    m + sd * g
                })
                .collect();
            layers.push(LayerParams(th));
        }
        stacks.push(ThetaStack { layers });
    }
    let max_norm = stacks.iter().map(|s| s.max_norm()).fold(0.0, f64::max);
    let mean = MeanFunction::from_norms(contexts.norm_bound(), max_norm);
    let funnels = stacks.into_iter().map(|s| Funnel::new(s, mean)).collect();
    BanditEnv::new(funnels, contexts, p.seed)
}

/// One row of a logged-interaction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedInteraction {
    pub context: Vec<f64>,
    pub action: usize,
    pub rewards: RewardVector,
}

fn header(dim: usize, layers: usize) -> Vec<String> {
    (0..dim)
        .map(|i| format!("ctx_{i}"))
        .chain(std::iter::once("action".to_string()))
        .chain((1..=layers).map(|j| format!("r_{j}")))
        .collect()
}

/// Writes `ctx_0..ctx_{d−1},action,r_1..r_J` CSV.
pub fn write_log<W: Write>(records: &[LoggedInteraction], out: W) -> Result<(), EnvError> {
    let first = records.first().ok_or(EnvError::EmptyLog)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(first.context.len(), first.rewards.len()))
        .map_err(csv_err)?;
    for r in records {
        let row: Vec<String> = r
            .context
            .iter()
            .map(|v| format!("{v}"))
            .chain(std::iter::once(r.action.to_string()))
            .chain(r.rewards.bits().iter().map(|b| b.to_string()))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> EnvError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    EnvError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Parses a logged-interaction CSV. Rows are rejected with their 1-based
/// line number when a field is non-numeric, an action is not a non-negative
/// integer, or the rewards are not a monotone 0/1 vector.
pub fn read_log<R: Read>(input: R) -> Result<Vec<LoggedInteraction>, EnvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let hdr = rdr.headers().map_err(csv_err)?.clone();
    let action_col = hdr.iter().position(|h| h.trim() == "action").ok_or(EnvError::Parse {
        line: 1,
        message: "header has no `action` column".into(),
    })?;
    let dim = action_col;
    let layers = hdr.len() - action_col - 1;
    let expected = header(dim, layers);
    if hdr.iter().map(str::trim).ne(expected.iter().map(String::as_str)) || layers == 0 {
        return Err(EnvError::Parse {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| EnvError::Parse { line, message };
        let context = (0..dim)
            .map(|i| {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("ctx_{i} is not a finite number: {:?}", &rec[i])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let action = rec[dim]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(format!("action is not a non-negative integer: {:?}", &rec[dim])))?;
        let bits = (0..layers)
            .map(|j| match rec[dim + 1 + j].trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(bad(format!("r_{} must be 0 or 1, got {other:?}", j + 1))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rewards =
            RewardVector::from_bits(&bits).map_err(|_| bad(format!("rewards {bits:?} are not non-increasing")))?;
        out.push(LoggedInteraction {
            context,
            action,
            rewards,
        });
    }
    if out.is_empty() {
        return Err(EnvError::EmptyLog);
    }
    Ok(out)
}

pub fn read_log_file(path: &Path) -> Result<Vec<LoggedInteraction>, EnvError> {
    read_log(std::fs::File::open(path)?)
}

pub fn write_log_file(records: &[LoggedInteraction], path: &Path) -> Result<(), EnvError> {
    write_log(records, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Per-coordinate quantile binning of replay contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub bins_per_coord: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self { bins_per_coord: 5 }
    }
}

/// What a replay step returns when no log record shares its (bin, action).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReplayFallback {
    #[default]
    AllZero,
    /// Borrow the closest populated bin of the same action (L1 distance on
    /// bin indices, first in key order on ties).
    NearestBin,
}

type CellKey = Vec<u16>;

/// Environment that replays a logged-interaction file.
#[derive(Debug, Clone)]
pub struct ReplayEnv {
    records: Arc<Vec<LoggedInteraction>>,
    arms: usize,
    layers: usize,
    dim: usize,
    edges: Vec<Vec<f64>>,
    cells: BTreeMap<(usize, CellKey), Vec<usize>>,
    fallback: ReplayFallback,
    fallback_events: usize,
    context_rng: StreamRng,
    reward_rng: StreamRng,
    pending: Option<usize>,
    t: usize,
}

impl ReplayEnv {
    /// `arms` defaults to one past the largest logged action.
    pub fn new(
        records: Arc<Vec<LoggedInteraction>>,
        bins: BinSpec,
        fallback: ReplayFallback,
        arms: Option<usize>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        let first = records.first().ok_or(EnvError::EmptyLog)?;
        let (dim, layers) = (first.context.len(), first.rewards.len());
        if records
            .iter()
            .any(|r| r.context.len() != dim || r.rewards.len() != layers)
        {
            return Err(EnvError::Config("log rows disagree on context or reward width".into()));
        }
        let max_action = records.iter().map(|r| r.action).max().unwrap_or(0);
        let arms = arms.unwrap_or(max_action + 1);
        if max_action >= arms {
            return Err(EnvError::ArmOutOfRange { arm: max_action, arms });
        }
        if bins.bins_per_coord == 0 {
            return Err(EnvError::Config("bins_per_coord must be positive".into()));
        }
        let edges = (0..dim)
            .map(|i| {
                let mut col: Vec<f64> = records.iter().map(|r| r.context[i]).collect();
                col.sort_by(f64::total_cmp);
                (1..bins.bins_per_coord)
                    .map(|k| col[(k * col.len() / bins.bins_per_coord).saturating_sub(1)])
                    .collect()
            })
            .collect();
        let mut env = Self {
            records: records.clone(),
            arms,
            layers,
            dim,
            edges,
            cells: BTreeMap::new(),
            fallback,
            fallback_events: 0,
            context_rng: rng::stream(seed, rng::CONTEXTS),
            reward_rng: rng::arm_stream(seed, 0),
            pending: None,
            t: 0,
        };
        for (i, r) in records.iter().enumerate() {
            let key = env.cell_of(&r.context);
            env.cells.entry((r.action, key)).or_default().push(i);
        }
        Ok(env)
    }

    pub fn cell_of(&self, x: &[f64]) -> CellKey {
        self.edges
            .iter()
            .zip(x)
            .map(|(e, v)| e.partition_point(|edge| edge < v) as u16)
            .collect()
    }

    pub fn fallback_events(&self) -> usize {
        self.fallback_events
    }

    pub fn records(&self) -> &[LoggedInteraction] {
        &self.records
    }

    fn candidates(&self, x: &[f64], arm: usize) -> Option<&Vec<usize>> {
        let key = self.cell_of(x);
        if let Some(c) = self.cells.get(&(arm, key.clone())) {
            return Some(c);
        }
        match self.fallback {
            ReplayFallback::AllZero => None,
            ReplayFallback::NearestBin => self
                .cells
                .range((arm, CellKey::new())..(arm + 1, CellKey::new()))
                .min_by_key(|((_, k), _)| {
                    k.iter()
                        .zip(&key)
                        .map(|(a, b)| (*a as i64 - *b as i64).unsigned_abs())
                        .sum::<u64>()
                })
                .map(|(_, v)| v),
        }
    }

    /// Mean logged reward vector of the cell `(bin(x), arm)`; the expected
    /// reward this environment pays for that pair.
    pub fn cell_mean(&self, x: &[f64], arm: usize) -> Vec<f64> {
        match self.candidates(x, arm) {
            Some(idx) => {
                let mut m = vec![0.0; self.layers];
                for &i in idx {
                    for (j, b) in self.records[i].rewards.bits().iter().enumerate() {
                        m[j] += *b as f64;
                    }
                }
                m.iter_mut().for_each(|v| *v /= idx.len() as f64);
                m
            }
            None => vec![0.0; self.layers],
        }
    }

    /// Context of the pending step, if any.
    pub fn pending_context(&self) -> Option<&[f64]> {
        self.pending.map(|i| self.records[i].context.as_slice())
    }
}

impl Environment for ReplayEnv {
    fn arms(&self) -> usize {
        self.arms
    }

    fn layers(&self) -> usize {
        self.layers
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&mut self) -> Result<Step, EnvError> {
        if self.pending.is_some() {
            return Err(EnvError::Protocol("step called before acting on the previous context"));
        }
        self.t += 1;
        let i = self.context_rng.random_range(0..self.records.len());
        self.pending = Some(i);
        Ok(Step {
            t: self.t,
            context: self.records[i].context.clone(),
            oracle: None,
        })
    }

    fn act(&mut self, arm: usize) -> Result<RewardVector, EnvError> {
        if arm >= self.arms {
            return Err(EnvError::ArmOutOfRange { arm, arms: self.arms });
        }
        let i = self
            .pending
            .take()
            .ok_or(EnvError::Protocol("act called without a pending context"))?;
        let x = self.records[i].context.clone();
        let exact = self.cells.contains_key(&(arm, self.cell_of(&x)));
        let size = self.candidates(&x, arm).map(Vec::len);
        let pick = size.map(|n| {
            let k = self.reward_rng.random_range(0..n);
            self.candidates(&x, arm).map_or(0, |c| c[k])
        });
        if !exact {
            self.fallback_events += 1;
            log::debug!("replay fallback for arm {arm} at step {}", self.t);
        }
        Ok(match pick {
            Some(k) => self.records[k].rewards.clone(),
            None => RewardVector::zeros(self.layers),
        })
    }
}

/// Synthetic stand-in for an email campaign log: an intercept plus
/// standardized profile features, one funnel per send-time action, with
/// per-layer intercepts calibrated so the conditional conversion rates under
/// uniformly random actions match `rates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmailProfile {
    /// Conditional rates `P(z_j = 1 | r_{j−1} = 1)`.
    pub rates: Vec<f64>,
    pub arms: usize,
    /// Number of profile features (context dimension is this plus one).
    pub features: usize,
    pub feature_scale: f64,
    pub action_spread: f64,
}

impl Default for EmailProfile {
    fn default() -> Self {
        Self {
            rates: vec![0.1, 0.04, 0.025],
            arms: 6,
            features: 3,
            feature_scale: 0.5,
            action_spread: 0.3,
        }
    }
}

const CALIBRATION_SAMPLES: usize = 200_000;

impl EmailProfile {
    pub fn context_distribution(&self) -> ContextDistribution {
        ContextDistribution::Gaussian {
            dim: self.features + 1,
            sigma_x: 1.0,
            clip_norm: (1.0 + default_clip_norm(self.features, 1.0).powi(2)).sqrt(),
            intercept: true,
        }
    }

    pub fn funnels(&self, seed: u64) -> Result<Vec<Funnel>, EnvError> {
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(EnvError::Config("rates must lie strictly inside (0, 1)".into()));
        }
        if self.arms == 0 {
            return Err(EnvError::Config("at least one arm required".into()));
        }
        let d = self.features + 1;
        let j_layers = self.rates.len();
        let mut prng = rng::stream(seed, rng::PARAMS);
        let mut normal = |sd: f64| -> f64 {
            let g: f64 = StandardNormal.sample(&mut prng);
            sd * g
        };
        // shared feature weights follow a random walk across layers
        let mut weights: Vec<Vec<f64>> = Vec::with_capacity(j_layers);
        for j in 0..j_layers {
            let prev = weights.last().cloned().unwrap_or_else(|| vec![0.0; self.features]);
            let sd = self.feature_scale / ((j + 1) as f64).sqrt();
            weights.push(prev.iter().map(|w| w + normal(sd)).collect());
        }
        let offsets: Vec<Vec<f64>> = (0..self.arms)
            .map(|_| (0..j_layers).map(|_| normal(self.action_spread)).collect())
            .collect();
        let mut ctx_rng = rng::stream(seed, rng::DATA);
        let dist = self.context_distribution();
        let sample: Vec<Vec<f64>> = (0..CALIBRATION_SAMPLES).map(|_| dist.sample(&mut ctx_rng)).collect();
        let mean = MeanFunction::logistic(0.0);

        // reach[k] = P_{j−1}(x_k, θ_{a_k}) with actions assigned round-robin
        let mut reach = vec![1.0; sample.len()];
        let mut intercepts = Vec::with_capacity(j_layers);
        for j in 0..j_layers {
            let lin: Vec<f64> = sample
                .iter()
                .enumerate()
                .map(|(k, x)| dot(&x[1..], &weights[j]) + offsets[k % self.arms][j])
                .collect();
            let total: f64 = reach.iter().sum();
            let rate_at =
                |b: f64| -> f64 { lin.iter().zip(&reach).map(|(l, w)| w * mean.mu(b + l)).sum::<f64>() / total };
            let (mut lo, mut hi) = (-30.0, 30.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if rate_at(mid) < self.rates[j] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let b = 0.5 * (lo + hi);
            for (w, l) in reach.iter_mut().zip(&lin) {
                *w *= mean.mu(b + l);
            }
            intercepts.push(b);
        }
        let stacks: Vec<ThetaStack> = (0..self.arms)
            .map(|a| ThetaStack {
                layers: (0..j_layers)
                    .map(|j| {
                        let mut th = vec![intercepts[j] + offsets[a][j]];
                        th.extend_from_slice(&weights[j]);
                        LayerParams(th)
                    })
                    .collect(),
            })
            .collect();
        let max_norm = stacks.iter().map(|s| s.max_norm()).fold(0.0, f64::max);
        let mean = MeanFunction::from_norms(dist.norm_bound(), max_norm);
        debug_assert_eq!(stacks[0].dim(), d);
        Ok(stacks.into_iter().map(|s| Funnel::new(s, mean)).collect())
    }

    /// Log of `n` interactions with uniformly random actions.
    pub fn generate_log(&self, n: usize, seed: u64) -> Result<Vec<LoggedInteraction>, EnvError> {
        let funnels = self.funnels(seed)?;
        let dist = self.context_distribution();
        let mut ctx_rng = rng::stream(seed, rng::CONTEXTS);
        let mut act_rng = rng::stream(seed, rng::POLICY);
        let mut reward_rng = rng::arm_stream(seed, 0);
        Ok((0..n)
            .map(|_| {
                let context = dist.sample(&mut ctx_rng);
                let action = act_rng.random_range(0..self.arms);
                let rewards = funnels[action].sample(&context, &mut reward_rng);
                LoggedInteraction {
                    context,
                    action,
                    rewards,
                }
            })
            .collect())
    }
}

//! Episode driver, per-step records and regret/lift accounting.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BanditError, Policy};
use crate::env::{Environment, RewardVector};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub context: Vec<f64>,
    pub action: usize,
    pub rewards: RewardVector,
    /// `max_a P_J(x_t, θ*_a)`; absent without an oracle.
    pub optimal: Option<f64>,
    /// `P_J(x_t, θ*_{a_t})`.
    pub chosen: Option<f64>,
    pub regret: Option<f64>,
    /// Policy's estimate for the chosen arm before it saw the outcome.
    pub prediction: f64,
    /// `n_{a,j}` snapshot, only on snapshot steps.
    pub counts: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
}

/// One line of the per-run NDJSON stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdjsonRow {
    pub t: usize,
    pub action: usize,
    pub rewards: Vec<u8>,
    pub regret: Option<f64>,
    pub cum_regret: Option<f64>,
}

impl RunRecord {
    pub fn ndjson_rows(&self) -> Vec<NdjsonRow> {
        let mut cum = Some(0.0);
        self.steps
            .iter()
            .map(|s| {
                cum = match (cum, s.regret) {
                    (Some(c), Some(r)) => Some(c + r),
                    _ => None,
                };
                NdjsonRow {
                    t: s.t,
                    action: s.action,
                    rewards: s.rewards.bits().to_vec(),
                    regret: s.regret,
                    cum_regret: cum,
                }
            })
            .collect()
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.ndjson_rows() {
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Running sum of per-step pseudo-regret.
pub fn cumulative_regret(record: &RunRecord) -> Result<Vec<f64>, BanditError> {
    let mut acc = 0.0;
    record
        .steps
        .iter()
        .map(|s| {
            acc += s.regret.ok_or(BanditError::MissingOracle(s.t))?;
            Ok(acc)
        })
        .collect()
}

/// `Σ_t r_{t,j}` per layer.
pub fn layer_totals(record: &RunRecord) -> Vec<f64> {
    let layers = record.steps.first().map_or(0, |s| s.rewards.len());
    let mut totals = vec![0.0; layers];
    for s in &record.steps {
        for (j, b) in s.rewards.bits().iter().enumerate() {
            totals[j] += *b as f64;
        }
    }
    totals
}

/// Per-layer difference of mean reward totals between `runs` and
/// `reference` (typically the uniform policy), averaged over the runs in
/// each group.
pub fn layer_lift(runs: &[RunRecord], reference: &[RunRecord]) -> Vec<f64> {
    let mean_totals = |group: &[RunRecord]| -> Vec<f64> {
        let per: Vec<Vec<f64>> = group.iter().map(layer_totals).collect();
        let layers = per.first().map_or(0, |v| v.len());
        (0..layers)
            .map(|j| per.iter().map(|v| v[j]).sum::<f64>() / per.len() as f64)
            .collect()
    };
    let (a, b) = (mean_totals(runs), mean_totals(reference));
    a.iter().zip(&b).map(|(x, y)| x - y).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub steps: usize,
    /// Store count snapshots every this many steps (0 disables them).
    pub snapshot_every: usize,
    /// Replace the policy's choice by a uniform action from a stream keyed
    /// on this seed; every policy given the same seed sees the same actions.
    pub uniform_actions: Option<u64>,
}

/// Runs `policy` against `env` for `opts.steps` steps.
///
/// The policy's prediction for the executed arm is recorded before the
/// update. With uniform actions the policy still observes every outcome.
pub fn run_episode<E: Environment + ?Sized>(
    env: &mut E,
    policy: &mut Policy,
    opts: &EpisodeOptions,
    seed: u64,
) -> Result<RunRecord, BanditError> {
    let mut action_rng = opts.uniform_actions.map(|s| rng::stream(s, rng::ACTIONS));
    let mut steps = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let step = env.step()?;
        let chosen_by_policy = policy.select(&step.context)?;
        let action = match action_rng.as_mut() {
            Some(r) => r.random_range(0..env.arms()),
            None => chosen_by_policy,
        };
        let prediction = policy.predict(action, &step.context);
        let rewards = env.act(action)?;
        policy.update(action, &step.context, &rewards)?;
        let (optimal, chosen, regret) = match &step.oracle {
            Some(values) => {
                let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (Some(best), Some(values[action]), Some(best - values[action]))
            }
            None => (None, None, None),
        };
        let counts = (opts.snapshot_every > 0 && step.t % opts.snapshot_every == 0).then(|| policy.counts());
        steps.push(StepRecord {
            t: step.t,
            context: step.context,
            action,
            rewards,
            optimal,
            chosen,
            regret,
            prediction,
            counts,
        });
    }
    Ok(RunRecord {
        policy: policy.name().to_string(),
        seed,
        steps,
    })
}

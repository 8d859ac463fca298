//! The four experiments: bound curves, supervised estimation, simulated
//! bandit regret and log replay.

use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BoundsConfig, ExperimentConfig, LearnerConfig, PolicyParams, SupervisedConfig};
use super::output::{mean_sd, ResultBundle};
use super::HarnessError;
use crate::bandit::{
    cumulative_regret, layer_totals, run_episode, EpisodeOptions, Policy, PolicyContext, PolicyKind, RunRecord,
};
use crate::env::{
    gen_sequential_bandit_env, read_log_file, BinSpec, ContextDistribution, Environment, Funnel, LoggedInteraction,
    ReplayEnv, SeqEnvParams,
};
use crate::glm::{LayerParams, LayeredDataset, MeanFunction, ThetaStack};
use crate::linalg::{dist, norm};
use crate::mtl::{mtl_estimate, theorem1_bound, threshold_j0, BoundInputs, ConstraintSet, MtlConfig};
use crate::rng;

// ---------------------------------------------------------------- bounds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: f64,
    pub layer: usize,
    pub n_layer: f64,
    pub bound_mtl: f64,
    pub bound_plain: f64,
    pub j0: usize,
    pub preconditions_met: bool,
}

/// Sequential bound at the threshold anchor and the plain parametric bound
/// for every sweep point and layer; `κ = ‖x‖ = d = 1` so the prefactor is
/// the only constant.
pub fn run_bound_curves(cfg: &BoundsConfig) -> Result<Vec<BoundRow>, HarnessError> {
    let q = cfg.slack();
    let mut rows = Vec::with_capacity(cfg.points * cfg.layers);
    let span = (cfg.n_max / cfg.n_min).ln();
    for k in 0..cfg.points {
        let n = cfg.n_min * (span * k as f64 / (cfg.points - 1) as f64).exp();
        let b = BoundInputs {
            q: q.clone(),
            n: (0..cfg.layers).map(|j| cfg.decay.powi(j as i32) * n).collect(),
            d: 1,
            d_x: 1.0,
            c_mu: 1.0,
            kappa: 1.0,
            lambda: 1.0,
            delta: 0.1,
            c_delta_scale: 1.0,
            coef_override: Some(cfg.prefactor),
        };
        let choice = threshold_j0(&b);
        for j in 1..=cfg.layers {
            rows.push(BoundRow {
                n,
                layer: j,
                n_layer: b.n[j - 1],
                bound_mtl: theorem1_bound(&b, 1.0, j, choice.j0)?,
                bound_plain: theorem1_bound(&b, 1.0, j, cfg.layers + 1)?,
                j0: choice.j0,
                preconditions_met: choice.preconditions_met,
            });
        }
    }
    Ok(rows)
}

// ------------------------------------------------------------ supervised

/// `θ_1 = q_1 u_1`, `θ_j = θ_{j−1} + q_j u_j` with `u_j` uniform on the
/// unit sphere, so the truth satisfies the chain constraint with slack `q`.
pub fn supervised_truth(dim: usize, q: &[f64], seed: u64) -> ThetaStack {
    let mut r = rng::stream(seed, rng::PARAMS);
    let mut layers: Vec<LayerParams> = Vec::with_capacity(q.len());
    let mut prev = vec![0.0; dim];
    for &qj in q {
        let mut u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let s = norm(&u);
        u.iter_mut().for_each(|v| *v /= s);
        let th: Vec<f64> = prev.iter().zip(&u).map(|(p, ui)| p + qj * ui).collect();
        prev.clone_from(&th);
        layers.push(LayerParams(th));
    }
    ThetaStack { layers }
}

/// One seed at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedTrial {
    pub n_layer: Vec<usize>,
    /// `‖θ̄_j − θ*_j‖`.
    pub err_bar: Vec<f64>,
    /// `‖θ̂_j − θ*_j‖`.
    pub err_hat: Vec<f64>,
    /// Every `θ*_j` lies in its relaxed `Θ₁[j]`.
    pub covered: bool,
    pub fallbacks: usize,
}

/// Draws `n` funnel rows from the seed's truth and runs the estimator.
pub fn supervised_trial(cfg: &SupervisedConfig, n: usize, seed: u64) -> Result<SupervisedTrial, HarnessError> {
    let q = cfg.slack();
    let truth = supervised_truth(cfg.dim, &q, seed);
    let contexts = ContextDistribution::gaussian(cfg.dim, cfg.sigma_x);
    let d_x = contexts.norm_bound();
    let mut mtl_cfg = MtlConfig::for_slack(&q, d_x, cfg.delta);
    mtl_cfg.c_delta_scale = cfg.c_delta_scale;
    mtl_cfg.radius_coef = cfg.radius_coef;
    let mean = MeanFunction::from_norms(d_x, mtl_cfg.norm_cap);
    let funnel = Funnel::new(truth.clone(), mean);
    let mut r = rng::stream(seed, rng::DATA);
    let mut data = LayeredDataset::new(q.len(), cfg.dim);
    for _ in 0..n {
        let x = contexts.sample(&mut r);
        let y = funnel.sample(&x, &mut r);
        data.push(&x, &y);
    }
    let est = mtl_estimate(&data, &ConstraintSet::SequentialChain { q }, &mean, &mtl_cfg, None)?;
    let errs = |s: &ThetaStack| -> Vec<f64> { s.layers.iter().zip(&truth.layers).map(|(a, b)| dist(a, b)).collect() };
    Ok(SupervisedTrial {
        n_layer: data.counts(),
        err_bar: errs(&est.theta_bar),
        err_hat: errs(&est.theta_hat),
        covered: est.covers(&truth, 1e-9),
        fallbacks: est.diagnostics.iter().filter(|d| d.fallback).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedRun {
    pub seed: u64,
    pub n: usize,
    pub layer: usize,
    pub n_layer: usize,
    pub err_bar: f64,
    pub err_hat: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedRow {
    pub n: usize,
    pub layer: usize,
    pub mean_n_layer: f64,
    pub err_bar_mean: f64,
    pub err_bar_sd: f64,
    pub err_hat_mean: f64,
    pub err_hat_sd: f64,
    /// Fraction of seeds with joint coverage.
    pub coverage: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedOutput {
    pub runs: Vec<SupervisedRun>,
    pub rows: Vec<SupervisedRow>,
}

pub fn run_supervised_sim(cfg: &SupervisedConfig, seeds: &[u64]) -> Result<SupervisedOutput, HarnessError> {
    let cells: Vec<(usize, u64)> = cfg.n.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let trials: Vec<SupervisedTrial> = cells
        .par_iter()
        .map(|&(n, s)| supervised_trial(cfg, n, s))
        .collect::<Result<_, _>>()?;
    let mut runs = Vec::with_capacity(trials.len() * cfg.layers);
    for (&(n, seed), t) in cells.iter().zip(&trials) {
        for j in 0..cfg.layers {
            runs.push(SupervisedRun {
                seed,
                n,
                layer: j + 1,
                n_layer: t.n_layer[j],
                err_bar: t.err_bar[j],
                err_hat: t.err_hat[j],
                covered: t.covered,
            });
        }
    }
    let mut rows = Vec::new();
    for &n in &cfg.n {
        for layer in 1..=cfg.layers {
            let group: Vec<&SupervisedRun> = runs.iter().filter(|r| r.n == n && r.layer == layer).collect();
            let col = |f: fn(&SupervisedRun) -> f64| -> Vec<f64> { group.iter().map(|r| f(r)).collect() };
            let (bm, bs) = mean_sd(&col(|r| r.err_bar));
            let (hm, hs) = mean_sd(&col(|r| r.err_hat));
            let k = group.len() as f64;
            rows.push(SupervisedRow {
                n,
                layer,
                mean_n_layer: group.iter().map(|r| r.n_layer as f64).sum::<f64>() / k,
                err_bar_mean: bm,
                err_bar_sd: bs,
                err_hat_mean: hm,
                err_hat_sd: hs,
                coverage: group.iter().filter(|r| r.covered).count() as f64 / k,
                seeds: group.len(),
            });
        }
    }
    Ok(SupervisedOutput { runs, rows })
}

// ---------------------------------------------------------------- bandit

/// Learner context for `env`; `d_x` is the context norm bound.
pub fn bandit_policy_context<E: Environment + ?Sized>(
    env: &E,
    horizon: usize,
    d_x: f64,
    learner: &LearnerConfig,
) -> PolicyContext {
    PolicyContext {
        arms: env.arms(),
        layers: env.layers(),
        dim: env.dim(),
        horizon,
        d_x,
        norm_cap: learner.norm_cap,
        opts: learner.opts(),
        cadence: learner.cadence(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub policy: String,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// One `(policy, seed)` line of the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub policy: String,
    pub horizon: usize,
    pub final_cum_regret: f64,
    /// Per-layer reward total minus the uniform policy's on the same seed.
    pub lift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BanditOutput {
    pub runs: Vec<RunRecord>,
    pub curves: Vec<RegretCurve>,
    pub summary: Vec<SummaryRow>,
}

fn kinds(params: &PolicyParams, names: &[String], layers: usize) -> Result<Vec<PolicyKind>, HarnessError> {
    names.iter().map(|n| params.kind(n, layers)).collect()
}

/// Runs every configured policy on every seed's environment. Lifts are
/// taken against a uniform run on the same seed, which is executed even when
/// `random` is not in the policy list.
pub fn run_bandit_sim(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<BanditOutput, HarnessError> {
    let b = &cfg.bandit;
    let mut all = kinds(&cfg.policy, &b.policies, b.layers)?;
    let reference_listed = all.iter().any(|k| matches!(k, PolicyKind::Random));
    if !reference_listed {
        all.push(PolicyKind::Random);
    }
    let cells: Vec<(usize, u64)> = (0..all.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let opts = EpisodeOptions {
        steps: b.horizon,
        snapshot_every: b.snapshot_every,
        uniform_actions: None,
    };
    let records: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(p, seed)| -> Result<RunRecord, HarnessError> {
            let mut env = gen_sequential_bandit_env(&SeqEnvParams {
                arms: b.arms,
                layers: b.layers,
                dim: b.dim,
                sigma: b.sigma,
                sigma_x: b.sigma_x,
                seed,
            })?;
            let d_x = env.context_distribution().norm_bound();
            let ctx = bandit_policy_context(&env, b.horizon, d_x, &cfg.learner);
            let mut policy = Policy::new(all[p].clone(), ctx, seed)?;
            Ok(run_episode(&mut env, &mut policy, &opts, seed)?)
        })
        .collect::<Result<_, _>>()?;

    let reference_idx = all
        .iter()
        .position(|k| matches!(k, PolicyKind::Random))
        .unwrap_or(all.len() - 1);
    let reference_totals: Vec<Vec<f64>> = cells
        .iter()
        .zip(&records)
        .filter(|((p, _), _)| *p == reference_idx)
        .map(|(_, r)| layer_totals(r))
        .collect();

    let listed = b.policies.len();
    let mut summary = Vec::new();
    let mut curves = Vec::new();
    let mut runs = Vec::new();
    for p in 0..listed {
        let mut cums = Vec::with_capacity(seeds.len());
        for (k, &seed) in seeds.iter().enumerate() {
            let rec = &records[p * seeds.len() + k];
            let cum = cumulative_regret(rec)?;
            let totals = layer_totals(rec);
            summary.push(SummaryRow {
                seed,
                policy: rec.policy.clone(),
                horizon: b.horizon,
                final_cum_regret: cum.last().copied().unwrap_or(0.0),
                lift: totals.iter().zip(&reference_totals[k]).map(|(a, r)| a - r).collect(),
            });
            cums.push(cum);
        }
        let (mean, sd) = (0..b.horizon)
            .map(|t| mean_sd(&cums.iter().map(|c| c[t]).collect::<Vec<_>>()))
            .unzip();
        curves.push(RegretCurve {
            policy: all[p].name().to_string(),
            mean,
            sd,
        });
        runs.extend(records[p * seeds.len()..(p + 1) * seeds.len()].iter().cloned());
    }
    Ok(BanditOutput { runs, curves, summary })
}

// ---------------------------------------------------------------- replay

/// The configured log, or a synthetic email-profile log.
pub fn load_replay_log(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Vec<LoggedInteraction>, HarnessError> {
    let r = &cfg.replay;
    match path.or(r.log.as_deref()) {
        Some(p) => Ok(read_log_file(p)?),
        None => Ok(r.profile().generate_log(r.records, r.log_seed)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftRow {
    pub policy: String,
    pub layer: usize,
    pub lift_mean: f64,
    pub lift_sd: f64,
    pub seeds: usize,
}

/// Cumulative squared prediction error at checkpoints, one row per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub policy: String,
    pub checkpoints: Vec<usize>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Vec<f64>>,
}

impl PredictionCurve {
    pub fn mean_sd_at(&self, k: usize) -> (f64, f64) {
        mean_sd(&self.per_seed.iter().map(|s| s[k]).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutput {
    /// `(policy, seed, per-layer lift)`.
    pub lift_runs: Vec<(String, u64, Vec<f64>)>,
    pub lift: Vec<LiftRow>,
    pub prediction: Vec<PredictionCurve>,
    pub fallback_events: usize,
}

/// Which parts of the replay experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayParts {
    pub lift: bool,
    pub prediction: bool,
}

impl Default for ReplayParts {
    fn default() -> Self {
        Self {
            lift: true,
            prediction: true,
        }
    }
}

/// Lift of each policy over the uniform policy on matched seeds, and the
/// cumulative squared error between each policy's `P_J` prediction and the
/// replay cell's mean final-layer reward under shared uniform actions.
pub fn run_replay_bandit(
    cfg: &ExperimentConfig,
    log: Arc<Vec<LoggedInteraction>>,
    seeds: &[u64],
    parts: ReplayParts,
) -> Result<ReplayOutput, HarnessError> {
    let r = &cfg.replay;
    let first = log.first().ok_or(crate::env::EnvError::EmptyLog)?;
    let layers = first.rewards.len();
    let arms = log.iter().map(|l| l.action).max().unwrap_or(0) + 1;
    let d_x = log.iter().map(|l| norm(&l.context)).fold(0.0, f64::max);
    let mut lift_kinds = kinds(&r.policy_params(&cfg.policy), &r.policies, layers)?;
    if !lift_kinds.iter().any(|k| matches!(k, PolicyKind::Random)) {
        lift_kinds.push(PolicyKind::Random);
    }
    let new_env = |seed: u64| {
        ReplayEnv::new(
            log.clone(),
            BinSpec { bins_per_coord: r.bins },
            r.fallback,
            Some(arms),
            seed,
        )
    };

    let mut lift_runs = Vec::new();
    let mut lift = Vec::new();
    let mut fallback_events = 0;
    if parts.lift {
        let cells: Vec<(usize, u64)> = (0..lift_kinds.len())
            .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
            .collect();
        let totals: Vec<(Vec<f64>, usize)> = cells
            .par_iter()
            .map(|&(p, seed)| -> Result<(Vec<f64>, usize), HarnessError> {
                let mut env = new_env(seed)?;
                let ctx = bandit_policy_context(&env, r.steps, d_x, &cfg.learner);
                let mut policy = Policy::new(lift_kinds[p].clone(), ctx, seed)?;
                let opts = EpisodeOptions {
                    steps: r.steps,
                    snapshot_every: 0,
                    uniform_actions: None,
                };
                let rec = run_episode(&mut env, &mut policy, &opts, seed)?;
                Ok((layer_totals(&rec), env.fallback_events()))
            })
            .collect::<Result<_, _>>()?;
        fallback_events += totals.iter().map(|t| t.1).sum::<usize>();
        let reference = lift_kinds
            .iter()
            .position(|k| matches!(k, PolicyKind::Random))
            .unwrap_or(0);
        for (p, kind) in lift_kinds.iter().enumerate() {
            if p >= r.policies.len() {
                break;
            }
            let mut per_seed = Vec::new();
            for (k, &seed) in seeds.iter().enumerate() {
                let own = &totals[p * seeds.len() + k].0;
                let base = &totals[reference * seeds.len() + k].0;
                let l: Vec<f64> = own.iter().zip(base).map(|(a, b)| a - b).collect();
                lift_runs.push((kind.name().to_string(), seed, l.clone()));
                per_seed.push(l);
            }
            for j in 0..layers {
                let (m, s) = mean_sd(&per_seed.iter().map(|l| l[j]).collect::<Vec<_>>());
                lift.push(LiftRow {
                    policy: kind.name().to_string(),
                    layer: j + 1,
                    lift_mean: m,
                    lift_sd: s,
                    seeds: seeds.len(),
                });
            }
        }
    }

    let mut prediction = Vec::new();
    if parts.prediction {
        let pred_kinds: Vec<PolicyKind> = kinds(&r.policy_params(&cfg.policy), &r.policies, layers)?
            .into_iter()
            .filter(|k| !matches!(k, PolicyKind::Random))
            .collect();
        let checkpoints: Vec<usize> = (1..=r.prediction_steps / r.checkpoint_every)
            .map(|k| k * r.checkpoint_every)
            .collect();
        let cells: Vec<(usize, u64)> = (0..pred_kinds.len())
            .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
            .collect();
        let curves: Vec<Vec<f64>> = cells
            .par_iter()
            .map(|&(p, seed)| -> Result<Vec<f64>, HarnessError> {
                let mut env = new_env(seed)?;
                let ctx = bandit_policy_context(&env, r.prediction_steps, d_x, &cfg.learner);
                let mut policy = Policy::new(pred_kinds[p].clone(), ctx, seed)?;
                let opts = EpisodeOptions {
                    steps: r.prediction_steps,
                    snapshot_every: 0,
                    uniform_actions: Some(seed),
                };
                let rec = run_episode(&mut env, &mut policy, &opts, seed)?;
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(checkpoints.len());
                for s in &rec.steps {
                    let target = env.cell_mean(&s.context, s.action)[layers - 1];
                    acc += (s.prediction - target).powi(2);
                    if s.t % r.checkpoint_every == 0 {
                        out.push(acc);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;
        for (p, kind) in pred_kinds.iter().enumerate() {
            prediction.push(PredictionCurve {
                policy: kind.name().to_string(),
                checkpoints: checkpoints.clone(),
                seeds: seeds.to_vec(),
                per_seed: curves[p * seeds.len()..(p + 1) * seeds.len()].to_vec(),
            });
        }
    }
    Ok(ReplayOutput {
        lift_runs,
        lift,
        prediction,
        fallback_events,
    })
}

// --------------------------------------------------------------- emission

pub(crate) fn emit_bounds(bundle: &mut ResultBundle, rows: &[BoundRow]) -> Result<(), HarnessError> {
    bundle.write_csv("bounds.csv", rows)
}

pub(crate) fn emit_supervised(bundle: &mut ResultBundle, out: &SupervisedOutput) -> Result<(), HarnessError> {
    bundle.write_csv("supervised_runs.csv", &out.runs)?;
    bundle.write_csv("supervised.csv", &out.rows)
}

pub(crate) fn emit_bandit(bundle: &mut ResultBundle, out: &BanditOutput, layers: usize) -> Result<(), HarnessError> {
    for rec in &out.runs {
        let mut buf = Vec::new();
        rec.write_ndjson(&mut buf)
            .map_err(|e| HarnessError::io(bundle.dir(), e))?;
        bundle.write_bytes(&format!("run_{}_{}.ndjson", rec.policy, rec.seed), &buf)?;
    }
    for c in &out.curves {
        let rows: Vec<Vec<String>> = c
            .mean
            .iter()
            .zip(&c.sd)
            .enumerate()
            .map(|(t, (m, s))| vec![(t + 1).to_string(), m.to_string(), s.to_string()])
            .collect();
        bundle.write_table(
            &format!("regret_{}.csv", c.policy),
            &["t".into(), "mean".into(), "sd".into()],
            &rows,
        )?;
    }
    let mut header: Vec<String> = ["seed", "policy", "T", "final_cum_regret"].map(String::from).to_vec();
    header.extend((1..=layers).map(|j| format!("lift_layer_{j}")));
    let rows: Vec<Vec<String>> = out
        .summary
        .iter()
        .map(|s| {
            let mut r = vec![
                s.seed.to_string(),
                s.policy.clone(),
                s.horizon.to_string(),
                s.final_cum_regret.to_string(),
            ];
            r.extend(s.lift.iter().map(f64::to_string));
            r
        })
        .collect();
    bundle.write_table("summary.csv", &header, &rows)
}

pub(crate) fn emit_replay(bundle: &mut ResultBundle, out: &ReplayOutput) -> Result<(), HarnessError> {
    if !out.lift.is_empty() {
        let rows: Vec<Vec<String>> = out
            .lift_runs
            .iter()
            .flat_map(|(p, seed, l)| {
                l.iter()
                    .enumerate()
                    .map(move |(j, v)| vec![seed.to_string(), p.clone(), (j + 1).to_string(), v.to_string()])
            })
            .collect();
        bundle.write_table(
            "lift_runs.csv",
            &["seed", "policy", "layer", "lift"].map(String::from),
            &rows,
        )?;
        bundle.write_csv("lift_table.csv", &out.lift)?;
    }
    if !out.prediction.is_empty() {
        let mut runs = Vec::new();
        let mut agg = Vec::new();
        for c in &out.prediction {
            for (k, &t) in c.checkpoints.iter().enumerate() {
                for (seed, s) in c.seeds.iter().zip(&c.per_seed) {
                    runs.push(vec![
                        seed.to_string(),
                        c.policy.clone(),
                        t.to_string(),
                        s[k].to_string(),
                    ]);
                }
                let (m, sd) = c.mean_sd_at(k);
                agg.push(vec![c.policy.clone(), t.to_string(), m.to_string(), sd.to_string()]);
            }
        }
        bundle.write_table(
            "prediction_runs.csv",
            &["seed", "policy", "t", "cum_sq_error"].map(String::from),
            &runs,
        )?;
        bundle.write_table(
            "prediction_error.csv",
            &["policy", "t", "mean", "sd"].map(String::from),
            &agg,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supervised_truth_respects_the_chain() {
        let q = [1.0, 0.8, 0.6, 0.4, 0.2];
        let th = supervised_truth(5, &q, 3);
        assert!((norm(&th.layers[0]) - 1.0).abs() < 1e-12);
        for (w, qj) in th.layers.windows(2).zip(&q[1..]) {
            assert!((dist(&w[1], &w[0]) - qj).abs() < 1e-12);
        }
        assert!(ConstraintSet::SequentialChain { q: q.to_vec() }
            .marginal_set(5, 5, 30.0)
            .unwrap()
            .contains(&th.layers[4], 1e-12)
            .unwrap());
    }

    #[test]
    fn bound_curves_defaults() {
        let rows = run_bound_curves(&BoundsConfig::default()).unwrap();
        assert_eq!(rows.len(), 81 * 5);
        assert!(rows.iter().all(|r| r.bound_mtl <= r.bound_plain && r.preconditions_met));
    }

    #[test]
    fn single_layer_bounds_coincide() {
        let cfg = BoundsConfig {
            layers: 1,
            q: Some(vec![0.3]),
            ..BoundsConfig::default()
        };
        for r in run_bound_curves(&cfg).unwrap() {
            assert_eq!(r.bound_mtl, r.bound_plain);
        }
    }

    #[test]
    fn huge_n_disables_transfer() {
        let cfg = BoundsConfig {
            n_min: 1e14,
            n_max: 1e16,
            points: 3,
            ..BoundsConfig::default()
        };
        for r in run_bound_curves(&cfg).unwrap() {
            assert_eq!(r.j0, 6);
            assert_eq!(r.bound_mtl, r.bound_plain);
        }
    }
}

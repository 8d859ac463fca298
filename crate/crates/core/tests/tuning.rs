//! Hyper-parameter selection and radius calibration. Both are ignored by
//! default; they print the tables the shipped defaults were chosen from.
//!
//! Tuning seeds (100..) and calibration seeds (1000..) are disjoint from
//! the evaluation seeds (0..10) used by the acceptance suite.

use funnel_core::harness::{run_bandit_sim, supervised_trial, ExperimentConfig, SupervisedConfig};

const TUNING_SEEDS: std::ops::Range<u64> = 100..105;

fn mean_regret(cfg: &ExperimentConfig, policy: &str) -> f64 {
    let mut cfg = cfg.clone();
    cfg.bandit.policies = vec![policy.to_string()];
    let seeds: Vec<u64> = TUNING_SEEDS.collect();
    let out = run_bandit_sim(&cfg, &seeds).unwrap();
    out.summary.iter().map(|s| s.final_cum_regret).sum::<f64>() / out.summary.len() as f64
}

#[test]
#[ignore]
fn bandit_hyper_parameter_grid() {
    let base = ExperimentConfig::default();
    for &eps in &base.grids.epsilon {
        let mut cfg = base.clone();
        cfg.policy.epsilon = eps;
        for &lam in &base.grids.lambda {
            cfg.policy.lambda_sequential = lam;
            cfg.policy.lambda_clustered = lam;
            println!(
                "eps {eps} lambda {lam}: sequential {:.2} clustered {:.2}",
                mean_regret(&cfg, "multi_layer_sequential"),
                mean_regret(&cfg, "multi_layer_clustered")
            );
        }
        for &alpha in &base.grids.alpha {
            cfg.policy.alpha = alpha;
            println!(
                "eps {eps} alpha {alpha}: curriculum {:.2}",
                mean_regret(&cfg, "sequential")
            );
        }
        println!(
            "eps {eps}: target {:.2} mix {:.2}",
            mean_regret(&cfg, "target"),
            mean_regret(&cfg, "mix")
        );
    }
}

/// Smallest coefficient on a 0.5 grid whose joint coverage is at least 90%
/// at every sample size.
#[test]
#[ignore]
fn supervised_radius_calibration() {
    for coef in [5.0, 5.5, 6.0, 6.5, 7.0] {
        let cfg = SupervisedConfig {
            radius_coef: Some(coef),
            ..SupervisedConfig::default()
        };
        let row: Vec<String> = [200usize, 500, 1000, 2000, 5000]
            .iter()
            .map(|&n| {
                let covered = (1000..1200)
                    .filter(|&s| supervised_trial(&cfg, n, s).unwrap().covered)
                    .count();
                format!("n={n}: {:.3}", covered as f64 / 200.0)
            })
            .collect();
        println!("coef {coef}: {}", row.join(", "));
    }
}

#[test]
#[ignore]
fn replay_lambda_grid() {
    use funnel_core::harness::{load_replay_log, run_replay_bandit, ReplayParts};
    let seeds: Vec<u64> = TUNING_SEEDS.collect();
    let base = ExperimentConfig::default();
    for &lam in &base.grids.lambda {
        let mut totals = [0.0; 3];
        // tuning logs come from ground truths other than the evaluation log's
        for log_seed in 1..=3 {
            let mut cfg = base.clone();
            cfg.replay.log_seed = log_seed;
            cfg.replay.prediction_steps = 5000;
            cfg.replay.lambda_sequential = lam;
            cfg.replay.lambda_clustered = lam;
            cfg.replay.policies = vec![
                "multi_layer_sequential".into(),
                "multi_layer_clustered".into(),
                "target".into(),
            ];
            let log = std::sync::Arc::new(load_replay_log(&cfg, None).unwrap());
            let parts = ReplayParts {
                lift: false,
                prediction: true,
            };
            let out = run_replay_bandit(&cfg, log, &seeds, parts).unwrap();
            for (k, c) in out.prediction.iter().enumerate() {
                totals[k] += c.mean_sd_at(c.checkpoints.len() - 1).0 / 3.0;
            }
        }
        println!(
            "lambda {lam}: sequential {:.4} clustered {:.4} target {:.4}",
            totals[0], totals[1], totals[2]
        );
    }
}

//! `funnel` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, ExperimentKind};
use super::experiments::{
    emit_bandit, emit_bounds, emit_replay, emit_supervised, load_replay_log, run_bandit_sim, run_bound_curves,
    run_replay_bandit, run_supervised_sim, ReplayParts,
};
use super::output::{audit_bundle, verify_manifest, ResultBundle};
use super::HarnessError;
use crate::env::write_log;

#[derive(Debug, Parser)]
#[command(name = "funnel", version, about = "Funnel-structured multi-task bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML config with dotted section keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seed list, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the full-size bandit setting instead of the desk-scale one.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prediction-error bound curves with and without transfer.
    Bounds(Common),
    /// Supervised estimation error of the stage-1 and stage-2 estimates.
    Supervised(Common),
    /// Cumulative regret on simulated sequential funnels.
    Bandit(Common),
    /// Lift and prediction error replaying a logged-interaction file.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Logged-interaction CSV; overrides the config's log.
        log: Option<PathBuf>,
    },
    /// Writes a synthetic email-profile log to `<out>/log.csv`.
    GenLog {
        #[command(flatten)]
        common: Common,
        /// Conditional conversion rates per layer.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
        /// Number of records.
        #[arg(long)]
        n: Option<usize>,
    },
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common, kind: Option<ExperimentKind>) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let (Some(pinned), Some(k)) = (cfg.experiment, kind) {
        if pinned != k {
            return Err(HarnessError::Config(format!(
                "config is pinned to `{}` but `{}` was requested",
                pinned.name(),
                k.name()
            )));
        }
    }
    if !common.seed.is_empty() {
        cfg.seeds.clone_from(&common.seed);
    }
    if common.paper_scale {
        cfg.bandit.paper_scale();
    }
    cfg.experiment = kind;
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    cfg.out_dir = None;
    Ok((cfg, out))
}

fn finish(bundle: ResultBundle, kind: &str, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let dir = bundle.dir().to_path_buf();
    let manifest = bundle.finish(kind, &cfg.to_toml_string(), &cfg.seeds)?;
    let checked = audit_bundle(&dir)?;
    verify_manifest(&dir)?;
    println!(
        "wrote {} files to {} (config {}, {} aggregate rows audited)",
        manifest.files.len(),
        dir.display(),
        &manifest.config_hash[..12],
        checked
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Bounds(common) => {
            let (cfg, out) = load_config(&common, Some(ExperimentKind::BoundCurves))?;
            let rows = run_bound_curves(&cfg.bounds)?;
            let mut bundle = ResultBundle::create(out)?;
            emit_bounds(&mut bundle, &rows)?;
            let jn = cfg.bounds.layers;
            println!("{:>12} {:>4} {:>14} {:>14}", "n", "j0", "mtl(J)", "plain(J)");
            let mut last_j0 = 0;
            for (k, chunk) in rows.chunks(jn).enumerate() {
                let deep = &chunk[jn - 1];
                if deep.j0 != last_j0 || k + 1 == cfg.bounds.points {
                    println!(
                        "{:>12.1} {:>4} {:>14.6e} {:>14.6e}",
                        deep.n, deep.j0, deep.bound_mtl, deep.bound_plain
                    );
                    last_j0 = deep.j0;
                }
            }
            finish(bundle, "bounds", &cfg)
        }
        Command::Supervised(common) => {
            let (cfg, out) = load_config(&common, Some(ExperimentKind::SupervisedSim))?;
            let res = run_supervised_sim(&cfg.supervised, &cfg.seeds)?;
            let mut bundle = ResultBundle::create(out)?;
            emit_supervised(&mut bundle, &res)?;
            println!(
                "{:>8} {:>5} {:>10} {:>12} {:>12} {:>8}",
                "n", "layer", "n_layer", "err_bar", "err_hat", "cover"
            );
            for r in &res.rows {
                println!(
                    "{:>8} {:>5} {:>10.1} {:>12.4} {:>12.4} {:>8.2}",
                    r.n, r.layer, r.mean_n_layer, r.err_bar_mean, r.err_hat_mean, r.coverage
                );
            }
            finish(bundle, "supervised", &cfg)
        }
        Command::Bandit(common) => {
            let (cfg, out) = load_config(&common, Some(ExperimentKind::BanditSim))?;
            let res = run_bandit_sim(&cfg, &cfg.seeds)?;
            let mut bundle = ResultBundle::create(out)?;
            emit_bandit(&mut bundle, &res, cfg.bandit.layers)?;
            println!("{:<24} {:>14} {:>10}", "policy", "cum_regret", "sd");
            for c in &res.curves {
                let t = c.mean.len() - 1;
                println!("{:<24} {:>14.3} {:>10.3}", c.policy, c.mean[t], c.sd[t]);
            }
            finish(bundle, "bandit", &cfg)
        }
        Command::Replay { common, log } => {
            let (cfg, out) = load_config(&common, Some(ExperimentKind::ReplayBandit))?;
            let records = Arc::new(load_replay_log(&cfg, log.as_deref())?);
            let res = run_replay_bandit(&cfg, records, &cfg.seeds, ReplayParts::default())?;
            let mut bundle = ResultBundle::create(out)?;
            emit_replay(&mut bundle, &res)?;
            println!("{:<24} {:>6} {:>12} {:>10}", "policy", "layer", "lift", "sd");
            for r in &res.lift {
                println!(
                    "{:<24} {:>6} {:>12.2} {:>10.2}",
                    r.policy, r.layer, r.lift_mean, r.lift_sd
                );
            }
            println!("{:<24} {:>8} {:>14} {:>12}", "policy", "t", "cum_sq_err", "sd");
            for c in &res.prediction {
                if let Some(k) = c.checkpoints.len().checked_sub(1) {
                    let (m, s) = c.mean_sd_at(k);
                    println!("{:<24} {:>8} {:>14.6e} {:>12.3e}", c.policy, c.checkpoints[k], m, s);
                }
            }
            if res.fallback_events > 0 {
                eprintln!("note: {} replay steps had no matching log cell", res.fallback_events);
            }
            finish(bundle, "replay", &cfg)
        }
        Command::GenLog { common, rates, n } => {
            let (mut cfg, out) = load_config(&common, None)?;
            if !rates.is_empty() {
                cfg.replay.rates = rates;
            }
            if let Some(n) = n {
                cfg.replay.records = n;
            }
            if !common.seed.is_empty() {
                cfg.replay.log_seed = common.seed[0];
            }
            gen_log(&cfg, &out)
        }
    }
}

fn gen_log(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    let r = &cfg.replay;
    let records = r.profile().generate_log(r.records, r.log_seed)?;
    let mut buf = Vec::new();
    write_log(&records, &mut buf)?;
    let mut bundle = ResultBundle::create(out)?;
    bundle.write_bytes("log.csv", &buf)?;
    println!("{:>6} {:>10} {:>10} {:>10}", "layer", "target", "observed", "reached");
    let mut reached = records.len();
    for (j, target) in r.rates.iter().enumerate() {
        let hits = records.iter().filter(|l| l.rewards.bits()[j] == 1).count();
        let rate = if reached == 0 {
            0.0
        } else {
            hits as f64 / reached as f64
        };
        println!("{:>6} {:>10.4} {:>10.4} {:>10}", j + 1, target, rate, reached);
        reached = hits;
    }
    finish(bundle, "gen-log", cfg)
}

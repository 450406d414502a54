//! Command-line front end. Every command writes under its `--out`
//! directory; exit codes are 0 on success, 1 on usage errors and 2 on
//! runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigFile, Scenario, SimConfig};
use crate::coop::{accuracy, generate_dataset, separable_dataset, train_coop, CoopDims, CoopNetParams, CoopSample, CoopTrainConfig};
use crate::gradcheck::{coop_suite, ppo_suite};
use crate::harness::{
    evaluate, fixed_horizon_sweep, render_sweep, render_trajectory, write_episode_csv, write_summary, EpisodeLog,
    PolicyStack, StackKind, SWEEP_HEADER,
};
use crate::pipeline::{CoopMode, Navigator};
use crate::policy::{train_policy, write_curve, NavEnv, PolicyParams, PolicyTrainConfig, H_MAX};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "horizon-nav", version, about = "Crowd navigation with a learned MPC prediction horizon")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file overriding simulator, planner and reward settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a cooperation-classification dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Simulated episodes to record.
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value = "mid")]
        scenario: String,
        /// Emit this many synthetic, behaviourally separable samples instead.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Train the cooperation classifier.
    TrainCoop {
        #[command(flatten)]
        common: Common,
        /// Dataset from `gen-data`; a synthetic one is generated if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Fraction held out for the accuracy report.
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
    },
    /// Train the horizon policy with PPO in the full navigation loop.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        /// Trained classifier; cooperation labels are zero without it.
        #[arg(long)]
        coop: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        updates: usize,
        #[arg(long, default_value_t = 8)]
        envs: usize,
        /// Steps per environment between updates.
        #[arg(long, default_value_t = 64)]
        steps: usize,
        /// Comma-separated scenarios cycled through by the episodes.
        #[arg(long, default_value = "low,mid,high")]
        scenarios: String,
    },
    /// Evaluate a stack over seeded episodes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stack: StackArgs,
        #[arg(long, default_value = "mid")]
        scenario: String,
        #[arg(long, default_value_t = 250)]
        episodes: usize,
        /// Write every episode as a JSON-lines log under `logs/`.
        #[arg(long)]
        logs: bool,
        /// Write per-step solver diagnostics under `mpc_debug/`.
        #[arg(long)]
        mpc_debug: bool,
    },
    /// Success rate of every fixed horizon on every scenario.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "low,mid,high")]
        scenarios: String,
        /// Horizons as a range `a-b` or a list `a,b,c`.
        #[arg(long, default_value = "1-10")]
        horizons: String,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long)]
        coop: Option<PathBuf>,
    },
    /// Render an episode log as SVG.
    Replay {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct StackArgs {
    /// full | fixed | nocoop | orca | sf
    #[arg(long, default_value = "full")]
    pub stack: String,
    /// Horizon of the `fixed` stack.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub coop: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (including the program name) and runs the command.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn scenario_arg(s: &str) -> CliResult<Scenario> {
    Scenario::parse(s).ok_or_else(|| CliError::Usage(format!("unknown scenario `{s}` (expected low, mid or high)")))
}

fn scenarios_arg(s: &str) -> CliResult<Vec<Scenario>> {
    s.split(',').map(|p| scenario_arg(p.trim())).collect()
}

fn horizons_arg(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("invalid horizons `{s}`"));
    let hs: Vec<usize> = if let Some((a, b)) = s.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if hs.is_empty() || hs.iter().any(|h| !(1..=H_MAX).contains(h)) {
        return Err(bad());
    }
    Ok(hs)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

fn load_coop(path: Option<&PathBuf>) -> Result<Option<Arc<CoopNetParams>>> {
    path.map(|p| CoopNetParams::load(p).map(Arc::new)).transpose()
}

fn build_stack(args: &StackArgs, cfg: &ConfigFile) -> CliResult<PolicyStack> {
    let kind = match args.stack.as_str() {
        "full" => StackKind::Full,
        "nocoop" => StackKind::NoCoop,
        "orca" => StackKind::OrcaBaseline,
        "sf" => StackKind::SfBaseline,
        "fixed" => StackKind::FixedHorizon(
            args.horizon
                .ok_or_else(|| CliError::Usage("--stack fixed needs --horizon".into()))?,
        ),
        other => {
            if let Some(h) = other.strip_prefix("fixed:").and_then(|h| h.parse().ok()) {
                StackKind::FixedHorizon(h)
            } else {
                return Err(CliError::Usage(format!("unknown stack `{other}`")));
            }
        }
    };
    if let StackKind::FixedHorizon(h) = kind {
        if !(1..=H_MAX).contains(&h) {
            return Err(CliError::Usage(format!("horizon must lie in 1..={H_MAX}")));
        }
    }
    let mut stack = PolicyStack::new(kind).with_mpc(cfg.mpc);
    stack.coeffs = cfg.reward;
    stack.coop = load_coop(args.coop.as_ref())?;
    stack.policy = args.policy.as_ref().map(|p| PolicyParams::load(p).map(Arc::new)).transpose()?;
    Ok(stack)
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenData {
            common,
            episodes,
            scenario,
            synthetic,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let scenario = scenario_arg(&scenario)?;
            create_dir(&common.out)?;
            let data = match synthetic {
                Some(n) => separable_dataset(n, CoopDims::default().history_len, common.seed),
                None => generate_dataset(&scenario.apply(&cfg.sim), episodes, common.seed)?,
            };
            let path = common.out.join("coop_dataset.json");
            write_file(&path, &serde_json::to_string(&data).map_err(Error::from)?)?;
            println!("{} samples -> {}", data.len(), path.display());
        }
        Command::TrainCoop {
            common,
            data,
            epochs,
            lr,
            holdout,
        } => {
            if !(0.0..1.0).contains(&holdout) {
                return Err(CliError::Usage("--holdout must lie in [0, 1)".into()));
            }
            create_dir(&common.out)?;
            let dataset: Vec<CoopSample> = match &data {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(Error::from)?
                }
                None => separable_dataset(5000, CoopDims::default().history_len, common.seed),
            };
            let n_test = (dataset.len() as f64 * holdout).round() as usize;
            let (test, train) = dataset.split_at(n_test);
            let config = CoopTrainConfig {
                epochs,
                lr,
                seed: common.seed,
                ..Default::default()
            };
            let trained = train_coop(train, CoopDims::default(), &config)?;
            trained.params.save(&common.out.join("coop.bin"))?;
            let mut curve = String::from("epoch,loss\n");
            for (i, l) in trained.loss_curve.iter().enumerate() {
                curve.push_str(&format!("{i},{l}\n"));
            }
            write_file(&common.out.join("coop_loss.csv"), &curve)?;
            let summary = serde_json::json!({
                "train_samples": train.len(),
                "test_samples": test.len(),
                "train_accuracy": accuracy(&trained.params, train),
                "test_accuracy": if test.is_empty() { None } else { Some(accuracy(&trained.params, test)) },
                "final_loss": trained.loss_curve.last(),
            });
            write_file(&common.out.join("coop_summary.json"), &format!("{summary:#}\n"))?;
            println!("{summary}");
        }
        Command::TrainPolicy {
            common,
            coop,
            updates,
            envs,
            steps,
            scenarios,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let scenarios = scenarios_arg(&scenarios)?;
            if envs == 0 || steps == 0 {
                return Err(CliError::Usage("--envs and --steps must be positive".into()));
            }
            create_dir(&common.out)?;
            let coop_mode = match load_coop(coop.as_ref())? {
                Some(p) => CoopMode::Learned(p),
                None => CoopMode::Disabled,
            };
            let configs: Vec<SimConfig> = scenarios.iter().map(|s| s.apply(&cfg.sim)).collect();
            let envs: Vec<NavEnv> = (0..envs)
                .map(|i| {
                    let nav = Navigator::new(configs[0].clone(), cfg.mpc, cfg.reward, coop_mode.clone());
                    NavEnv::new(nav, configs.clone(), crate::rng::mix(common.seed, i as u64))
                })
                .collect::<Result<_>>()?;
            let config = PolicyTrainConfig {
                n_envs: envs.len(),
                steps_per_env: steps,
                updates,
                seed: common.seed,
                ..Default::default()
            };
            let (params, curve) = train_policy(envs, &config, |row, _| {
                eprintln!(
                    "update {:4}  return {:8.3}  horizon {:5.2}  loss {:8.4}",
                    row.update, row.mean_return, row.mean_horizon, row.loss.total
                );
                true
            })?;
            params.save(&common.out.join("policy.bin"))?;
            write_curve(&common.out.join("learning_curve.csv"), &curve)?;
        }
        Command::Eval {
            common,
            stack,
            scenario,
            episodes,
            logs,
            mpc_debug,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let scenario = scenario_arg(&scenario)?;
            if episodes == 0 {
                return Err(CliError::Usage("--episodes must be positive".into()));
            }
            let stack = build_stack(&stack, &cfg)?;
            stack.validate()?;
            create_dir(&common.out)?;
            let log_dir = common.out.join("logs");
            let debug_dir = common.out.join("mpc_debug");
            if logs {
                create_dir(&log_dir)?;
            }
            if mpc_debug {
                create_dir(&debug_dir)?;
            }
            let config = scenario.apply(&cfg.sim);
            let summary = evaluate(&config, &stack, episodes, common.seed, scenario.name(), |i, log| {
                if logs {
                    log.write(&log_dir.join(format!("episode_{i:04}.jsonl")))?;
                }
                if mpc_debug {
                    write_file(&debug_dir.join(format!("episode_{i:04}.jsonl")), &mpc_debug_lines(log))?;
                }
                Ok(())
            })?;
            write_episode_csv(&common.out.join("episodes.csv"), &summary)?;
            let extra = serde_json::json!({
                "stack": stack.kind.name(),
                "scenario": scenario.name(),
                "base_seed": common.seed,
            });
            write_summary(&common.out.join("summary.json"), &summary, extra)?;
            println!(
                "{} on {}: SR {:.1}  CR {:.1}  OR {:.1}  ANT {}  AIR {:.2}",
                stack.kind.name(),
                scenario.name(),
                summary.sr,
                summary.cr,
                summary.or,
                summary.ant.map_or("-".into(), |a| format!("{a:.2}")),
                summary.air
            );
        }
        Command::Sweep {
            common,
            scenarios,
            horizons,
            episodes,
            coop,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let scenarios = scenarios_arg(&scenarios)?;
            let horizons = horizons_arg(&horizons)?;
            if episodes == 0 {
                return Err(CliError::Usage("--episodes must be positive".into()));
            }
            create_dir(&common.out)?;
            let mut template = PolicyStack::new(StackKind::FixedHorizon(1)).with_mpc(cfg.mpc);
            template.coeffs = cfg.reward;
            template.coop = load_coop(coop.as_ref())?;
            let rows = fixed_horizon_sweep(&cfg.sim, &scenarios, &horizons, episodes, common.seed, &template)?;
            let mut csv = format!("{SWEEP_HEADER}\n");
            for r in &rows {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            write_file(&common.out.join("sweep.csv"), &csv)?;
            write_file(&common.out.join("sweep.svg"), &render_sweep(&rows))?;
            print!("{csv}");
        }
        Command::Replay { out, log } => {
            let episode = EpisodeLog::read(&log)?;
            if episode.steps.is_empty() {
                return Err(CliError::Runtime(Error::Config("log has no steps".into())));
            }
            create_dir(&out)?;
            let stem = log.file_stem().map_or("episode".into(), |s| s.to_string_lossy().into_owned());
            let path = out.join(format!("{stem}.svg"));
            write_file(&path, &render_trajectory(&episode))?;
            println!("{}", path.display());
        }
        Command::Gradcheck { out, seed } => {
            let results = [coop_suite(seed, 5), ppo_suite(seed, 5)];
            for r in &results {
                println!(
                    "{:<14} instances {:2}  scalars {:6}  max rel error {:.3e}  {}",
                    r.name,
                    r.instances,
                    r.checked,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAILED" }
                );
            }
            if let Some(out) = out {
                create_dir(&out)?;
                write_file(
                    &out.join("gradcheck.json"),
                    &(serde_json::to_string_pretty(&results).map_err(Error::from)? + "\n"),
                )?;
            }
            if !results.iter().all(|r| r.passed()) {
                return Err(CliError::Runtime(Error::Config("gradient check failed".into())));
            }
        }
    }
    Ok(())
}

/// Per-step solver diagnostics of an episode, one JSON object per line.
fn mpc_debug_lines(log: &EpisodeLog) -> String {
    let mut out = String::new();
    for s in &log.steps {
        let line = serde_json::json!({
            "step": s.step,
            "horizon": s.horizon,
            "status": s.mpc_status,
            "min_barrier": s.min_barrier,
            "control": s.control,
            "visible": s.visible,
            "coop_probs": s.coop_probs,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

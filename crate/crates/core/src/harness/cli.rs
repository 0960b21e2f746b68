//! Command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::eval::{run_seed, run_test, TestEnv, TestSpec};
use super::{
    aggregate, load_agent, metrics_csv, run_training, ExperimentConfig, HarnessError, Result,
};
use crate::world::{replay_trajectory, TrajectoryRecord, WorldConfig};

/// Environment variable naming the default root for training output.
pub const OUT_ROOT_ENV: &str = "AGAR_LAB_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "agar-lab",
    version,
    about = "Train and evaluate agents in a pellet/cell-eating arena"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent and write metrics and checkpoints.
    Train(TrainArgs),
    /// Test a checkpoint with exploration turned off.
    Test(TestArgs),
    /// Print the manifest and network shapes of a checkpoint.
    InspectCheckpoint { path: PathBuf },
    /// Summarize a trajectory log and check that it replays exactly.
    ReplayStats {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `KEY=VALUE`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "pellet")]
    env: TestEnv,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the trajectory of run 0 to this file.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// status: 0 on success, 2 for usage and configuration errors, 1 otherwise.
pub fn cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match parsed.command {
        Command::Train(args) => train(args),
        Command::Test(args) => test(args),
        Command::InspectCheckpoint { path } => inspect(&path),
        Command::ReplayStats { log } => replay_stats(&log),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn train(args: TrainArgs) -> Result<String> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &args.config {
        config = ExperimentConfig::load(path)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    for spec in &args.overrides {
        config.apply_override(spec)?;
    }
    config.validate()?;
    let out = args.out.unwrap_or_else(|| {
        let root =
            std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!(
            "{}_{}_seed{}",
            config.agent.algorithm, config.environment, config.seed
        ))
    });
    let outcome = run_training(&config, &out)?;
    let mut report = format!(
        "trained {} steps ({} game steps) into {}\n",
        config.total_training_steps,
        outcome.game_steps,
        out.display()
    );
    let finals: Vec<_> = outcome
        .rows
        .iter()
        .filter(|r| r.phase.starts_with("final_"))
        .cloned()
        .collect();
    if !finals.is_empty() {
        let s = aggregate(&[finals])?;
        let _ = writeln!(
            report,
            "final mean mass {:.3}, final max mass {:.3}",
            s.mean_mass, s.max_mass
        );
    }
    Ok(report)
}

fn test(args: TestArgs) -> Result<String> {
    let ckpt = load_agent(&args.checkpoint)?;
    let runs = args.runs.unwrap_or(ckpt.config.final_test_runs);
    let mut spec = TestSpec::from_config(&ckpt.config, args.env, runs, args.seed);
    if let Some(steps) = args.steps {
        spec.steps = steps;
    }
    let mut log = args.trajectory.as_ref().map(|_| Vec::new());
    let rows = run_test(&ckpt.agent, ckpt.config.grids(), &spec, log.as_mut())?;
    if let (Some(path), Some(log)) = (&args.trajectory, log) {
        let mut text = format!(
            "# seed {} players {} side {:?}\n",
            run_seed(spec.seed, 0),
            match spec.env {
                TestEnv::Pellet => 1,
                TestEnv::Fight => 2,
            },
            spec.map_side
        );
        for r in &log {
            let _ = writeln!(text, "{r}");
        }
        fs::write(path, text)
            .map_err(|e| HarnessError::Io(format!("writing {}: {e}", path.display())))?;
    }
    let mut out = metrics_csv(&rows);
    if !rows.is_empty() {
        let s = aggregate(&[rows])?;
        let _ = writeln!(
            out,
            "# mean mass {:.3}, max mass {:.3}",
            s.mean_mass, s.max_mass
        );
    }
    Ok(out)
}

fn inspect(path: &Path) -> Result<String> {
    let ckpt = load_agent(path)?;
    let mut out = String::new();
    let _ = writeln!(out, "algorithm {}", ckpt.config.agent.algorithm);
    let _ = writeln!(out, "environment {}", ckpt.config.environment);
    let _ = writeln!(out, "train_steps {}", ckpt.agent.train_steps());
    let _ = writeln!(out, "horizon {}", ckpt.agent.horizon());
    for (name, net) in ckpt.agent.networks() {
        let shapes: Vec<String> = net
            .layers()
            .iter()
            .map(|l| format!("{}x{}", l.inputs, l.outputs))
            .collect();
        let inject = net.action_injection().map_or_else(
            || "none".to_string(),
            |i| format!("layer {} width {}", i.layer, i.width),
        );
        let _ = writeln!(
            out,
            "network {name}: layers [{}], inject {inject}, {} parameters",
            shapes.join(", "),
            net.parameter_count()
        );
    }
    Ok(out)
}

fn parse_log_header(line: &str) -> Option<(u64, usize, f64)> {
    let mut it = line.strip_prefix("# ")?.split_whitespace();
    let mut next = |key: &str| -> Option<String> {
        (it.next()? == key).then_some(())?;
        it.next().map(str::to_string)
    };
    let seed = next("seed")?.parse().ok()?;
    let players = next("players")?.parse().ok()?;
    let side = next("side")?.parse().ok()?;
    Some((seed, players, side))
}

fn replay_stats(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let bad = |msg: String| HarnessError::Format(format!("{}: {msg}", path.display()));
    let header = lines.next().unwrap_or("");
    let (seed, players, side) = parse_log_header(header).ok_or_else(|| {
        bad(format!(
            "expected `# seed S players P side X`, found {header:?}"
        ))
    })?;
    let log = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.parse::<TrajectoryRecord>()
                .map_err(|e| bad(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "records {} steps {}",
        log.len(),
        log.len() / players.max(1)
    );
    for id in 0..players {
        let masses: Vec<f64> = log
            .iter()
            .filter(|r| r.player == id)
            .map(|r| r.mass)
            .collect();
        if masses.is_empty() {
            continue;
        }
        let mean = masses.iter().sum::<f64>() / masses.len() as f64;
        let max = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(out, "player {id}: mean mass {mean:.3}, max mass {max:.3}");
    }
    let replay = replay_trajectory(WorldConfig::with_side(side), players, seed, &log);
    match replay.iter().zip(&log).position(|(a, b)| a != b) {
        None if replay.len() == log.len() => {
            let _ = writeln!(out, "replay exact");
            Ok(out)
        }
        Some(i) => Err(bad(format!("replay diverges at record {i}"))),
        None => Err(bad("replay length differs".into())),
    }
}

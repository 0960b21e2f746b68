//! Training loops for the pellet and self-play environments.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;

use super::eval::{run_test, TestEnv, TestSpec};
use super::{
    save_agent, EnvKind, ExperimentConfig, HarnessError, MetricsRow, Result, METRICS_HEADER,
};
use crate::agents::{Agent, Mode};
use crate::percept::encode_state;
use crate::replay::{ReplayBuffer, Transition};
use crate::world::World;
use crate::SeededRng;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug)]
pub struct TrainingOutcome {
    pub agent: Agent,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub rows: Vec<MetricsRow>,
    pub game_steps: u64,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:08}.ckpt")
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    out_dir: &'a Path,
    metrics: BufWriter<File>,
    rows: Vec<MetricsRow>,
    checkpoints: Vec<PathBuf>,
}

impl Run<'_> {
    fn checkpoint(&mut self, agent: &Agent, name: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        save_agent(&path, self.config, agent)?;
        self.checkpoints.push(path);
        Ok(())
    }

    /// Runs the test suite of the training environment and appends the rows.
    fn test(&mut self, agent: &Agent, fraction: f64, runs: usize, prefix: &str) -> Result<()> {
        let envs: &[TestEnv] = match self.config.environment {
            EnvKind::Pellet => &[TestEnv::Pellet],
            EnvKind::SelfPlay => &[TestEnv::Pellet, TestEnv::Fight],
        };
        for &env in envs {
            let mut spec = TestSpec::from_config(self.config, env, runs, self.config.seed);
            spec.phase = format!("{prefix}{env}");
            spec.train_fraction = fraction;
            for row in run_test(agent, self.config.grids(), &spec, None)? {
                writeln!(self.metrics, "{row}")?;
                self.rows.push(row);
            }
        }
        self.metrics.flush()?;
        Ok(())
    }
}

/// Trains one agent from scratch. Writes `metrics.csv`, an initial
/// checkpoint, one checkpoint per test point and `final.ckpt` to `out_dir`.
/// Every training step is one agent decision followed by one learning step
/// (skipped until the buffer holds a full batch). In self-play both players
/// are driven by the same agent and share its buffer.
pub fn run_training(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainingOutcome> {
    config.validate()?;
    let io = |what: &str, e: std::io::Error| {
        HarnessError::Io(format!("{what} {}: {e}", out_dir.display()))
    };
    fs::create_dir_all(out_dir).map_err(|e| io("creating", e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics =
        BufWriter::new(File::create(&metrics_path).map_err(|e| io("writing metrics in", e))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;

    let total = config.total_training_steps;
    let grids = config.grids();
    let players = config.environment.players();
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut agent = Agent::new(
        config.agent.clone(),
        grids.feature_len(),
        total.max(1),
        &mut rng,
    )?;
    let mut buffer = ReplayBuffer::new(config.per_capacity, config.per_alpha)
        .map_err(crate::agents::AgentError::from)?
        .with_literal_is_weights(config.per_literal_is_weights);
    let mut world = World::new(
        config.training_world(),
        players,
        config.seed.wrapping_add(0x5EED),
    );

    let mut run = Run {
        config,
        out_dir,
        metrics,
        rows: Vec::new(),
        checkpoints: Vec::new(),
    };
    run.checkpoint(&agent, &checkpoint_name(0))?;

    let test_every = if config.test_interval > 0.0 && total > 0 {
        ((total as f64 * config.test_interval).round() as u64).max(1)
    } else {
        u64::MAX
    };
    let mut since_reset = 0u64;
    let mut game_steps = 0u64;
    for t in 0..total {
        if since_reset >= config.reset_interval {
            world.reset();
            since_reset = 0;
        }
        world.respawn_dead();
        let before = world.step_count();

        let mut decisions = Vec::with_capacity(players);
        for id in 0..players {
            let obs = encode_state(&world, id, grids);
            let action = agent.act(&obs, t, Mode::Train, &mut rng)?;
            decisions.push((id, obs, action));
        }
        let controls: Vec<(usize, [f64; 2])> = decisions
            .iter()
            .map(|(id, _, a)| (*id, agent.mouse_position(*a)))
            .collect();
        let outcomes = world.frame_skip_step_multi(&controls, config.frame_skip, |_| {});
        for ((id, obs, action), outcome) in decisions.into_iter().zip(outcomes) {
            buffer.push(Transition {
                state: obs,
                action,
                reward: outcome.reward,
                next_state: encode_state(&world, id, grids),
                terminal: outcome.died,
            });
        }
        agent.train(
            &mut buffer,
            config.prioritized_replay,
            config.per_beta,
            &mut rng,
        )?;

        let elapsed = world.step_count() - before;
        since_reset += elapsed;
        game_steps += elapsed;
        let done = t + 1;
        if done % test_every == 0 && done < total {
            run.test(&agent, done as f64 / total as f64, config.test_runs, "")?;
            run.checkpoint(&agent, &checkpoint_name(done))?;
        }
    }
    if total > 0 {
        run.test(&agent, 1.0, config.final_test_runs, "final_")?;
        run.checkpoint(&agent, &checkpoint_name(total))?;
    }
    run.checkpoint(&agent, FINAL_CHECKPOINT)?;

    Ok(TrainingOutcome {
        agent,
        metrics_path,
        checkpoints: run.checkpoints,
        rows: run.rows,
        game_steps,
    })
}

//! Test protocol. Exploration noise is off and the agent is borrowed
//! immutably, so testing never changes parameters or the replay buffer.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;

use super::{AgentCheckpoint, ConfigError, ExperimentConfig, MetricsRow, Result};
use crate::agents::{Agent, Mode};
use crate::bots::{greedy_action, random_action};
use crate::percept::{encode_state, GridSet};
use crate::world::{TrajectoryRecord, World, WorldConfig};
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestEnv {
    /// Alone on the map with pellets.
    Pellet,
    /// Against one Greedy bot.
    Fight,
}

impl fmt::Display for TestEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestEnv::Pellet => "pellet",
            TestEnv::Fight => "fight",
        })
    }
}

impl FromStr for TestEnv {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pellet" => Ok(TestEnv::Pellet),
            "fight" => Ok(TestEnv::Fight),
            other => Err(format!("unknown test environment {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSpec {
    pub env: TestEnv,
    pub runs: usize,
    /// Game steps per run.
    pub steps: u64,
    pub seed: u64,
    pub map_side: f64,
    pub frame_skip: usize,
    /// Label written to the `phase` column.
    pub phase: String,
    pub train_fraction: f64,
}

impl TestSpec {
    /// The configured protocol for `env` on the config's maps.
    pub fn from_config(config: &ExperimentConfig, env: TestEnv, runs: usize, seed: u64) -> Self {
        let (steps, map_side) = match env {
            TestEnv::Pellet => (config.pellet_test_steps, config.map_side),
            TestEnv::Fight => (config.fight_test_steps, config.self_play_map_side),
        };
        Self {
            env,
            runs,
            steps,
            seed,
            map_side,
            frame_skip: config.frame_skip,
            phase: env.to_string(),
            train_fraction: 1.0,
        }
    }

    fn world_config(&self) -> WorldConfig {
        WorldConfig::with_side(self.map_side)
    }

    fn players(&self) -> usize {
        match self.env {
            TestEnv::Pellet => 1,
            TestEnv::Fight => 2,
        }
    }
}

/// World seed of one test run.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    seed ^ (run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn validate(spec: &TestSpec, grids: GridSet) -> Result<()> {
    if spec.steps == 0 {
        return Err(ConfigError::Invalid("a test run needs at least one game step".into()).into());
    }
    if spec.env == TestEnv::Fight && grids != GridSet::FULL {
        return Err(ConfigError::Invalid(
            "the fight test needs an agent trained with enemy and wall grids".into(),
        )
        .into());
    }
    Ok(())
}

/// Tracks per-step mass of the tested player. A dead player counts with the
/// spawn mass it will be respawned with.
struct MassLog {
    sum: f64,
    max: f64,
    steps: u64,
}

impl MassLog {
    fn new() -> Self {
        Self {
            sum: 0.0,
            max: f64::NEG_INFINITY,
            steps: 0,
        }
    }

    fn record(&mut self, world: &World, id: usize) {
        let p = world.player(id);
        let mass = if p.alive {
            p.mass
        } else {
            world.config().spawn_mass
        };
        self.sum += mass;
        self.max = self.max.max(mass);
        self.steps += 1;
    }

    fn row(&self, spec: &TestSpec, run: usize) -> MetricsRow {
        MetricsRow {
            phase: spec.phase.clone(),
            train_fraction: spec.train_fraction,
            seed: spec.seed,
            run,
            mean_mass: self.sum / self.steps as f64,
            max_mass: self.max,
        }
    }
}

/// Runs one episode of the agent. It decides every `frame_skip + 1` game
/// steps (sooner after dying) and re-aims at the same screen point each
/// step; the Greedy bot, if present, decides every step.
fn agent_episode(
    agent: &Agent,
    grids: GridSet,
    spec: &TestSpec,
    run: usize,
    mut log: Option<&mut Vec<TrajectoryRecord>>,
) -> Result<MetricsRow> {
    let mut world = World::new(
        spec.world_config(),
        spec.players(),
        run_seed(spec.seed, run),
    );
    let mut rng = SeededRng::seed_from_u64(run_seed(spec.seed, run).rotate_left(17));
    let mut masses = MassLog::new();
    while masses.steps < spec.steps {
        world.respawn_dead();
        let obs = encode_state(&world, 0, grids);
        let action = agent.act(&obs, agent.train_steps(), Mode::Test, &mut rng)?;
        let mouse = agent.mouse_position(action);
        for _ in 0..=spec.frame_skip {
            if masses.steps >= spec.steps {
                break;
            }
            if spec.env == TestEnv::Fight && world.player(1).alive {
                let target = greedy_action(&world, 1);
                world.set_target(1, target);
            }
            if world.player(0).alive {
                let target = world.fov(0).point_at(mouse);
                world.set_target(0, target);
            }
            world.step();
            masses.record(&world, 0);
            if let Some(log) = log.as_deref_mut() {
                log.extend(world.trajectory_records());
            }
            if !world.player(0).alive {
                break;
            }
        }
    }
    Ok(masses.row(spec, run))
}

/// Tests an agent whose observations use `grids`. If `log` is given, the
/// trajectory of run 0 is appended to it.
pub fn run_test(
    agent: &Agent,
    grids: GridSet,
    spec: &TestSpec,
    mut log: Option<&mut Vec<TrajectoryRecord>>,
) -> Result<Vec<MetricsRow>> {
    validate(spec, grids)?;
    (0..spec.runs)
        .map(|run| {
            let log = if run == 0 { log.as_deref_mut() } else { None };
            agent_episode(agent, grids, spec, run, log)
        })
        .collect()
}

/// Pellet collection test on the checkpoint's pellet map.
pub fn run_pellet_test(
    ckpt: &AgentCheckpoint,
    runs: usize,
    steps: u64,
    seed: u64,
) -> Result<Vec<MetricsRow>> {
    let mut spec = TestSpec::from_config(&ckpt.config, TestEnv::Pellet, runs, seed);
    spec.steps = steps;
    run_test(&ckpt.agent, ckpt.config.grids(), &spec, None)
}

/// Fight against a Greedy bot on the checkpoint's self-play map.
pub fn run_fight_test(
    ckpt: &AgentCheckpoint,
    runs: usize,
    steps: u64,
    seed: u64,
) -> Result<Vec<MetricsRow>> {
    let mut spec = TestSpec::from_config(&ckpt.config, TestEnv::Fight, runs, seed);
    spec.steps = steps;
    run_test(&ckpt.agent, ckpt.config.grids(), &spec, None)
}

/// The Random bot on the pellet map: a fresh uniform target inside its view
/// every game step.
pub fn random_baseline(spec: &TestSpec) -> Result<Vec<MetricsRow>> {
    validate(spec, GridSet::FULL)?;
    let mut rows = Vec::with_capacity(spec.runs);
    for run in 0..spec.runs {
        let mut world = World::new(
            spec.world_config(),
            spec.players(),
            run_seed(spec.seed, run),
        );
        let mut rng = SeededRng::seed_from_u64(run_seed(spec.seed, run).rotate_left(17));
        let mut masses = MassLog::new();
        while masses.steps < spec.steps {
            if spec.env == TestEnv::Fight && world.player(1).alive {
                let target = greedy_action(&world, 1);
                world.set_target(1, target);
            }
            let target = random_action(&world.fov(0), &mut rng);
            world.set_target(0, target);
            world.step();
            masses.record(&world, 0);
        }
        rows.push(masses.row(spec, run));
    }
    Ok(rows)
}

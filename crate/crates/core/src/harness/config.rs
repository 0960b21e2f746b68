//! Plain-text experiment configuration: one `key = value` per line, `#`
//! starts a comment. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::agents::{AgentHyperparams, Algorithm};
use crate::percept::GridSet;
use crate::world::WorldConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Pellet,
    SelfPlay,
}

impl EnvKind {
    pub fn grids(self) -> GridSet {
        match self {
            EnvKind::Pellet => GridSet::PELLETS,
            EnvKind::SelfPlay => GridSet::FULL,
        }
    }

    pub fn players(self) -> usize {
        match self {
            EnvKind::Pellet => 1,
            EnvKind::SelfPlay => 2,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Pellet => "pellet",
            EnvKind::SelfPlay => "self_play",
        })
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pellet" => Ok(EnvKind::Pellet),
            "self_play" | "self-play" => Ok(EnvKind::SelfPlay),
            other => Err(format!("unknown environment {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub agent: AgentHyperparams,
    pub environment: EnvKind,
    pub total_training_steps: u64,
    pub frame_skip: usize,
    /// Game steps between environment resets.
    pub reset_interval: u64,
    /// Fraction of training between test points; 0 disables them.
    pub test_interval: f64,
    pub test_runs: usize,
    pub final_test_runs: usize,
    pub pellet_test_steps: u64,
    pub fight_test_steps: u64,
    pub map_side: f64,
    pub self_play_map_side: f64,
    pub prioritized_replay: bool,
    pub per_alpha: f64,
    pub per_beta: f64,
    pub per_capacity: usize,
    pub per_literal_is_weights: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            agent: AgentHyperparams::default(),
            environment: EnvKind::Pellet,
            total_training_steps: 500_000,
            frame_skip: 10,
            reset_interval: 20_000,
            test_interval: 0.05,
            test_runs: 5,
            final_test_runs: 10,
            pellet_test_steps: 15_000,
            fight_test_steps: 30_000,
            map_side: 400.0,
            self_play_map_side: 600.0,
            prioritized_replay: true,
            per_alpha: 0.6,
            per_beta: 0.4,
            per_capacity: 75_000,
            per_literal_is_weights: false,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
}

impl ExperimentConfig {
    /// Every recognized key, in manifest order.
    pub const KEYS: &'static [&'static str] = &[
        "algorithm",
        "environment",
        "total_training_steps",
        "frame_skip",
        "reset_interval",
        "test_interval",
        "test_runs",
        "final_test_runs",
        "pellet_test_steps",
        "fight_test_steps",
        "map_side",
        "self_play_map_side",
        "prioritized_replay",
        "per_alpha",
        "per_beta",
        "per_capacity",
        "per_literal_is_weights",
        "seed",
        "discount",
        "batch_size",
        "noise_start",
        "noise_end",
        "q_learning_rate",
        "q_hidden_layers",
        "q_hidden_units",
        "q_target_update_steps",
        "q_action_grid",
        "actor_hidden_layers",
        "actor_hidden_units",
        "critic_hidden_layers",
        "critic_hidden_units",
        "cacla_tau",
        "cacla_actor_lr",
        "cacla_critic_lr",
        "cacla_var_start",
        "cacla_var_beta",
        "dpg_tau",
        "dpg_actor_lr",
        "dpg_critic_lr",
        "dpg_target_increase",
        "dpg_action_layer",
        "dpg_l2_decay",
        "spg_tau",
        "spg_actor_lr",
        "spg_critic_lr",
        "spg_offline_samples",
        "spg_offline_noise_end",
        "spg_online_samples",
        "spg_sba",
        "spg_onge",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let a = &mut self.agent;
        match key.trim() {
            "algorithm" => a.algorithm = parse(key, v)?,
            "environment" => self.environment = parse(key, v)?,
            "total_training_steps" => self.total_training_steps = parse(key, v)?,
            "frame_skip" => self.frame_skip = parse(key, v)?,
            "reset_interval" => self.reset_interval = parse(key, v)?,
            "test_interval" => self.test_interval = parse(key, v)?,
            "test_runs" => self.test_runs = parse(key, v)?,
            "final_test_runs" => self.final_test_runs = parse(key, v)?,
            "pellet_test_steps" => self.pellet_test_steps = parse(key, v)?,
            "fight_test_steps" => self.fight_test_steps = parse(key, v)?,
            "map_side" => self.map_side = parse(key, v)?,
            "self_play_map_side" => self.self_play_map_side = parse(key, v)?,
            "prioritized_replay" => self.prioritized_replay = parse(key, v)?,
            "per_alpha" => self.per_alpha = parse(key, v)?,
            "per_beta" => self.per_beta = parse(key, v)?,
            "per_capacity" => self.per_capacity = parse(key, v)?,
            "per_literal_is_weights" => self.per_literal_is_weights = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "discount" => a.discount = parse(key, v)?,
            "batch_size" => a.batch_size = parse(key, v)?,
            "noise_start" => a.noise_start = parse(key, v)?,
            "noise_end" => a.noise_end = parse(key, v)?,
            "q_learning_rate" => a.q_learning_rate = parse(key, v)?,
            "q_hidden_layers" => a.q_hidden_layers = parse(key, v)?,
            "q_hidden_units" => a.q_hidden_units = parse(key, v)?,
            "q_target_update_steps" => a.q_target_update_steps = parse(key, v)?,
            "q_action_grid" => a.q_action_grid = parse(key, v)?,
            "actor_hidden_layers" => a.actor_hidden_layers = parse(key, v)?,
            "actor_hidden_units" => a.actor_hidden_units = parse(key, v)?,
            "critic_hidden_layers" => a.critic_hidden_layers = parse(key, v)?,
            "critic_hidden_units" => a.critic_hidden_units = parse(key, v)?,
            "cacla_tau" => a.cacla_tau = parse(key, v)?,
            "cacla_actor_lr" => a.cacla_actor_lr = parse(key, v)?,
            "cacla_critic_lr" => a.cacla_critic_lr = parse(key, v)?,
            "cacla_var_start" => a.cacla_var_start = parse(key, v)?,
            "cacla_var_beta" => a.cacla_var_beta = parse(key, v)?,
            "dpg_tau" => a.dpg_tau = parse(key, v)?,
            "dpg_actor_lr" => a.dpg_actor_lr = parse(key, v)?,
            "dpg_critic_lr" => a.dpg_critic_lr = parse(key, v)?,
            "dpg_target_increase" => a.dpg_target_increase = parse(key, v)?,
            "dpg_action_layer" => a.dpg_action_layer = parse(key, v)?,
            "dpg_l2_decay" => a.dpg_l2_decay = parse(key, v)?,
            "spg_tau" => a.spg_tau = parse(key, v)?,
            "spg_actor_lr" => a.spg_actor_lr = parse(key, v)?,
            "spg_critic_lr" => a.spg_critic_lr = parse(key, v)?,
            "spg_offline_samples" => a.spg_offline_samples = parse(key, v)?,
            "spg_offline_noise_end" => a.spg_offline_noise_end = parse(key, v)?,
            "spg_online_samples" => a.spg_online_samples = parse(key, v)?,
            "spg_sba" => a.spg_sba = parse(key, v)?,
            "spg_onge" => a.spg_onge = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let a = &self.agent;
        Some(match key {
            "algorithm" => a.algorithm.to_string(),
            "environment" => self.environment.to_string(),
            "total_training_steps" => self.total_training_steps.to_string(),
            "frame_skip" => self.frame_skip.to_string(),
            "reset_interval" => self.reset_interval.to_string(),
            "test_interval" => format!("{:?}", self.test_interval),
            "test_runs" => self.test_runs.to_string(),
            "final_test_runs" => self.final_test_runs.to_string(),
            "pellet_test_steps" => self.pellet_test_steps.to_string(),
            "fight_test_steps" => self.fight_test_steps.to_string(),
            "map_side" => format!("{:?}", self.map_side),
            "self_play_map_side" => format!("{:?}", self.self_play_map_side),
            "prioritized_replay" => self.prioritized_replay.to_string(),
            "per_alpha" => format!("{:?}", self.per_alpha),
            "per_beta" => format!("{:?}", self.per_beta),
            "per_capacity" => self.per_capacity.to_string(),
            "per_literal_is_weights" => self.per_literal_is_weights.to_string(),
            "seed" => self.seed.to_string(),
            "discount" => format!("{:?}", a.discount),
            "batch_size" => a.batch_size.to_string(),
            "noise_start" => format!("{:?}", a.noise_start),
            "noise_end" => format!("{:?}", a.noise_end),
            "q_learning_rate" => format!("{:?}", a.q_learning_rate),
            "q_hidden_layers" => a.q_hidden_layers.to_string(),
            "q_hidden_units" => a.q_hidden_units.to_string(),
            "q_target_update_steps" => a.q_target_update_steps.to_string(),
            "q_action_grid" => a.q_action_grid.to_string(),
            "actor_hidden_layers" => a.actor_hidden_layers.to_string(),
            "actor_hidden_units" => a.actor_hidden_units.to_string(),
            "critic_hidden_layers" => a.critic_hidden_layers.to_string(),
            "critic_hidden_units" => a.critic_hidden_units.to_string(),
            "cacla_tau" => format!("{:?}", a.cacla_tau),
            "cacla_actor_lr" => format!("{:?}", a.cacla_actor_lr),
            "cacla_critic_lr" => format!("{:?}", a.cacla_critic_lr),
            "cacla_var_start" => format!("{:?}", a.cacla_var_start),
            "cacla_var_beta" => format!("{:?}", a.cacla_var_beta),
            "dpg_tau" => format!("{:?}", a.dpg_tau),
            "dpg_actor_lr" => format!("{:?}", a.dpg_actor_lr),
            "dpg_critic_lr" => format!("{:?}", a.dpg_critic_lr),
            "dpg_target_increase" => format!("{:?}", a.dpg_target_increase),
            "dpg_action_layer" => a.dpg_action_layer.to_string(),
            "dpg_l2_decay" => format!("{:?}", a.dpg_l2_decay),
            "spg_tau" => format!("{:?}", a.spg_tau),
            "spg_actor_lr" => format!("{:?}", a.spg_actor_lr),
            "spg_critic_lr" => format!("{:?}", a.spg_critic_lr),
            "spg_offline_samples" => a.spg_offline_samples.to_string(),
            "spg_offline_noise_end" => format!("{:?}", a.spg_offline_noise_end),
            "spg_online_samples" => a.spg_online_samples.to_string(),
            "spg_sba" => a.spg_sba.to_string(),
            "spg_onge" => a.spg_onge.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, super::HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| super::HarnessError::Io(format!("reading {}: {e}", path.display())))?;
        Ok(Self::parse(&text)?)
    }

    /// Applies one `KEY=VALUE` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: spec.to_string(),
        })?;
        self.set(key.trim(), value)
    }

    /// Serializes every key; parsing the result reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let value = self.get(key).expect("every listed key is readable");
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.reset_interval == 0 {
            return fail("reset_interval must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.test_interval) {
            return fail(format!(
                "test_interval {} must lie in [0, 1]",
                self.test_interval
            ));
        }
        for (name, side) in [
            ("map_side", self.map_side),
            ("self_play_map_side", self.self_play_map_side),
        ] {
            if !(side > 0.0 && side.is_finite()) {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.per_capacity == 0 {
            return fail("per_capacity must be positive".into());
        }
        if self.per_alpha < 0.0 || self.per_beta < 0.0 {
            return fail("per_alpha and per_beta must be non-negative".into());
        }
        Ok(())
    }

    pub fn grids(&self) -> GridSet {
        self.environment.grids()
    }

    pub fn training_world(&self) -> WorldConfig {
        match self.environment {
            EnvKind::Pellet => WorldConfig::with_side(self.map_side),
            EnvKind::SelfPlay => WorldConfig::with_side(self.self_play_map_side),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.agent.algorithm
    }
}

//! Learning agents: Q-learning over a discretized mouse grid and three
//! actor-critic methods (CACLA, DPG and sampled policy gradient) with
//! continuous mouse outputs.

mod cacla;
mod dpg;
mod q;
mod spg;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::neural::{Activation, Mlp, MlpShape, NeuralError};
use crate::percept::{clamp_action, discretize_actions, ActionGrid, Observation, PerceptError};
use crate::replay::{Action, Batch, ReplayBuffer, ReplayError};

pub use cacla::{cacla_train_step, CaclaLearner, VarianceTracker};
pub use dpg::{critic_train_step, dpg_actor_step, dpg_train_step, DpgLearner};
pub use q::{q_select, q_train_step, QLearner};
pub use spg::{
    onge_select, spg_actor_target, spg_actor_targets, spg_train_step, SpgLearner, SpgSearch,
    SpgStep,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// Exponential annealing from `start` to `end` over `horizon` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl Schedule {
    pub fn new(start: f64, end: f64, horizon: u64) -> Result<Self> {
        if !(end > 0.0 && start > 0.0) {
            return Err(AgentError::InvalidParameter(format!(
                "schedule endpoints must be positive, got {start} -> {end}"
            )));
        }
        Ok(Self {
            start,
            end,
            horizon,
        })
    }

    /// `start * (end / start)^(t / horizon)`, held at `end` past the horizon.
    pub fn value(&self, t: u64) -> f64 {
        if self.horizon == 0 || t >= self.horizon {
            return self.end;
        }
        self.start * (self.end / self.start).powf(t as f64 / self.horizon as f64)
    }
}

pub fn schedule_value(s: &Schedule, t: u64) -> f64 {
    s.value(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    QLearning,
    Cacla,
    CaclaVar,
    Dpg,
    Spg,
}

impl Algorithm {
    pub fn is_continuous(self) -> bool {
        !matches!(self, Algorithm::QLearning)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::QLearning => "q_learning",
            Algorithm::Cacla => "cacla",
            Algorithm::CaclaVar => "cacla_var",
            Algorithm::Dpg => "dpg",
            Algorithm::Spg => "spg",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "q_learning" | "q" => Algorithm::QLearning,
            "cacla" => Algorithm::Cacla,
            "cacla_var" => Algorithm::CaclaVar,
            "dpg" => Algorithm::Dpg,
            "spg" => Algorithm::Spg,
            other => return Err(format!("unknown algorithm {other:?}")),
        })
    }
}

/// Learner settings. Defaults are the published parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentHyperparams {
    pub algorithm: Algorithm,
    pub discount: f64,
    pub batch_size: usize,
    pub noise_start: f64,
    /// End of the exploration schedule (epsilon for Q-learning, Gaussian std
    /// for the actor-critics).
    pub noise_end: f64,

    pub q_learning_rate: f64,
    pub q_hidden_layers: usize,
    pub q_hidden_units: usize,
    pub q_target_update_steps: u64,
    pub q_action_grid: usize,

    pub actor_hidden_layers: usize,
    pub actor_hidden_units: usize,
    pub critic_hidden_layers: usize,
    pub critic_hidden_units: usize,

    pub cacla_tau: f64,
    pub cacla_actor_lr: f64,
    pub cacla_critic_lr: f64,
    pub cacla_var_start: f64,
    pub cacla_var_beta: f64,

    pub dpg_tau: f64,
    pub dpg_actor_lr: f64,
    pub dpg_critic_lr: f64,
    pub dpg_target_increase: f64,
    pub dpg_action_layer: usize,
    pub dpg_l2_decay: f64,

    pub spg_tau: f64,
    pub spg_actor_lr: f64,
    pub spg_critic_lr: f64,
    pub spg_offline_samples: usize,
    pub spg_offline_noise_end: f64,
    pub spg_online_samples: usize,
    pub spg_sba: bool,
    pub spg_onge: bool,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::QLearning,
            discount: 0.85,
            batch_size: 32,
            noise_start: 1.0,
            noise_end: 0.0004,
            q_learning_rate: 0.0001,
            q_hidden_layers: 3,
            q_hidden_units: 256,
            q_target_update_steps: 1500,
            q_action_grid: 5,
            actor_hidden_layers: 3,
            actor_hidden_units: 100,
            critic_hidden_layers: 3,
            critic_hidden_units: 250,
            cacla_tau: 0.02,
            cacla_actor_lr: 0.0005,
            cacla_critic_lr: 0.000075,
            cacla_var_start: 1.0,
            cacla_var_beta: 0.001,
            dpg_tau: 0.001,
            dpg_actor_lr: 0.00001,
            dpg_critic_lr: 0.0005,
            dpg_target_increase: 2.0,
            dpg_action_layer: 1,
            dpg_l2_decay: 0.001,
            spg_tau: 0.001,
            spg_actor_lr: 0.0005,
            spg_critic_lr: 0.0005,
            spg_offline_samples: 3,
            spg_offline_noise_end: 0.0004,
            spg_online_samples: 3,
            spg_sba: false,
            spg_onge: false,
        }
    }
}

impl AgentHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(AgentError::InvalidParameter(what));
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} must lie in [0, 1)", self.discount));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        let positive = [
            ("noise_start", self.noise_start),
            ("noise_end", self.noise_end),
            ("q_learning_rate", self.q_learning_rate),
            ("cacla_actor_lr", self.cacla_actor_lr),
            ("cacla_critic_lr", self.cacla_critic_lr),
            ("cacla_var_start", self.cacla_var_start),
            ("dpg_actor_lr", self.dpg_actor_lr),
            ("dpg_critic_lr", self.dpg_critic_lr),
            ("spg_actor_lr", self.spg_actor_lr),
            ("spg_critic_lr", self.spg_critic_lr),
            ("spg_offline_noise_end", self.spg_offline_noise_end),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("cacla_tau", self.cacla_tau),
            ("dpg_tau", self.dpg_tau),
            ("spg_tau", self.spg_tau),
            ("cacla_var_beta", self.cacla_var_beta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.dpg_l2_decay < 0.0 || self.dpg_target_increase < 0.0 {
            return bad("dpg_l2_decay and dpg_target_increase must be non-negative".into());
        }
        if self.q_action_grid == 0
            || self.q_hidden_units == 0
            || self.actor_hidden_units == 0
            || self.critic_hidden_units == 0
        {
            return bad("layer widths and the action grid must be positive".into());
        }
        if self.q_target_update_steps == 0 {
            return bad("q_target_update_steps must be positive".into());
        }
        if self.dpg_action_layer > self.critic_hidden_layers {
            return bad(format!(
                "dpg_action_layer {} exceeds the critic depth",
                self.dpg_action_layer
            ));
        }
        Ok(())
    }

    pub(crate) fn actor_shape(&self, input: usize) -> MlpShape {
        MlpShape::new(
            input,
            &vec![self.actor_hidden_units; self.actor_hidden_layers],
            2,
            Activation::Logistic,
        )
    }

    pub(crate) fn value_shape(&self, input: usize) -> MlpShape {
        MlpShape::new(
            input,
            &vec![self.critic_hidden_units; self.critic_hidden_layers],
            1,
            Activation::Linear,
        )
    }

    pub(crate) fn q_critic_shape(&self, input: usize) -> MlpShape {
        self.value_shape(input)
            .with_action(self.dpg_action_layer, 2)
    }
}

/// A critic that scores continuous actions: `Q(s, a)` and `dQ/da`.
///
/// Implemented by state-action networks; tests substitute analytic critics.
pub trait ActionCritic {
    /// Row-wise scores for a batch of states and actions.
    fn q_values(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>>;
    /// Row-wise gradients with respect to the action, `batch x 2`.
    fn action_gradients(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>>;
}

impl ActionCritic for Mlp {
    fn q_values(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(states, Some(actions))?)
    }

    fn action_gradients(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        Ok(self.action_gradient_batch(states, actions)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Exploration noise follows the schedule.
    Train,
    /// Greedy, noise-free behavior.
    Test,
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

pub(crate) fn perturb<R: Rng + ?Sized>(action: [f64; 2], sigma: f64, rng: &mut R) -> [f64; 2] {
    let dx = gaussian(rng, sigma);
    let dy = gaussian(rng, sigma);
    clamp_action([action[0] + dx, action[1] + dy])
}

/// Stacks the state features of a batch into one row-major matrix.
pub(crate) fn stack_states(batch: &Batch, next: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for t in &batch.transitions {
        let obs = if next { &t.next_state } else { &t.state };
        obs.write_network_input(&mut out);
    }
    out
}

pub(crate) fn continuous_action(action: Action) -> Result<[f64; 2]> {
    action.continuous().ok_or_else(|| {
        AgentError::InvalidParameter("actor-critic learners need continuous actions".into())
    })
}

#[derive(Debug, Clone)]
pub enum Learner {
    Q(QLearner),
    Cacla(CaclaLearner),
    Dpg(DpgLearner),
    Spg(SpgLearner),
}

/// A learner together with its hyperparameters and exploration schedules.
#[derive(Debug, Clone)]
pub struct Agent {
    params: AgentHyperparams,
    learner: Learner,
    horizon: u64,
    train_steps: u64,
}

impl Agent {
    /// Builds a freshly initialized agent for observations of `input_width`
    /// features; `horizon` is the number of training steps over which
    /// exploration anneals.
    pub fn new<R: Rng + ?Sized>(
        params: AgentHyperparams,
        input_width: usize,
        horizon: u64,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        let learner = match params.algorithm {
            Algorithm::QLearning => Learner::Q(QLearner::new(&params, input_width, rng)?),
            Algorithm::Cacla | Algorithm::CaclaVar => {
                Learner::Cacla(CaclaLearner::new(&params, input_width, rng)?)
            }
            Algorithm::Dpg => Learner::Dpg(DpgLearner::new(&params, input_width, rng)?),
            Algorithm::Spg => Learner::Spg(SpgLearner::new(&params, input_width, rng)?),
        };
        Ok(Self {
            params,
            learner,
            horizon,
            train_steps: 0,
        })
    }

    pub fn params(&self) -> &AgentHyperparams {
        &self.params
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn learner_mut(&mut self) -> &mut Learner {
        &mut self.learner
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn set_train_steps(&mut self, steps: u64) {
        self.train_steps = steps;
    }

    pub fn exploration(&self) -> Schedule {
        Schedule {
            start: self.params.noise_start,
            end: self.params.noise_end,
            horizon: self.horizon,
        }
    }

    pub fn offline_noise(&self) -> Schedule {
        Schedule {
            start: self.params.noise_start,
            end: self.params.spg_offline_noise_end,
            horizon: self.horizon,
        }
    }

    pub fn action_grid(&self) -> Option<&ActionGrid> {
        match &self.learner {
            Learner::Q(q) => Some(q.grid()),
            _ => None,
        }
    }

    /// Chooses an action for training step `t`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        t: u64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Action> {
        let sigma = match mode {
            Mode::Train => self.exploration().value(t),
            Mode::Test => 0.0,
        };
        let input = obs.network_input();
        let state = input.as_slice();
        match &self.learner {
            Learner::Q(q) => {
                let index = q_select(&q.net, state, sigma, q.grid().len(), rng)?;
                Ok(Action::Discrete(index))
            }
            Learner::Cacla(l) => Ok(Action::Continuous(noisy_policy(
                &l.actor, state, sigma, rng,
            )?)),
            Learner::Dpg(l) => Ok(Action::Continuous(noisy_policy(
                &l.actor, state, sigma, rng,
            )?)),
            Learner::Spg(l) => {
                if self.params.spg_onge && mode == Mode::Train {
                    let a = onge_select(
                        &l.actor,
                        &l.critic,
                        state,
                        self.params.spg_online_samples,
                        sigma,
                        sigma,
                        rng,
                    )?;
                    Ok(Action::Continuous(a))
                } else {
                    Ok(Action::Continuous(noisy_policy(
                        &l.actor, state, sigma, rng,
                    )?))
                }
            }
        }
    }

    /// Mouse position in the unit square for an action chosen by this agent.
    pub fn mouse_position(&self, action: Action) -> [f64; 2] {
        match (action, &self.learner) {
            (Action::Continuous(a), _) => a,
            (Action::Discrete(i), Learner::Q(q)) => q.grid().get(i).unwrap_or([0.5, 0.5]),
            (Action::Discrete(_), _) => [0.5, 0.5],
        }
    }

    /// Samples a batch, performs one learning step and refreshes the
    /// priorities of the sampled transitions. Returns the batch TDEs, or
    /// `None` while the buffer holds less than one batch.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut ReplayBuffer,
        prioritized: bool,
        per_beta: f64,
        rng: &mut R,
    ) -> Result<Option<Vec<f64>>> {
        if buffer.len() < self.params.batch_size {
            return Ok(None);
        }
        let batch = if prioritized {
            buffer.sample(self.params.batch_size, per_beta, rng)?
        } else {
            buffer.sample_uniform(self.params.batch_size, rng)?
        };
        let t = self.train_steps;
        let offline_sigma = self.offline_noise().value(t);
        let p = &self.params;
        let tdes = match &mut self.learner {
            Learner::Q(q) => q.train(&batch, p)?,
            Learner::Cacla(c) => c.train(&batch, p)?,
            Learner::Dpg(d) => d.train(&batch, p)?,
            Learner::Spg(s) => s.train(buffer, &batch, p, offline_sigma, rng)?,
        };
        if prioritized {
            buffer.update_priorities(&batch.indices, &tdes)?;
        }
        self.train_steps += 1;
        Ok(Some(tdes))
    }

    /// Named networks, in checkpoint order.
    pub fn networks(&self) -> Vec<(&'static str, &Mlp)> {
        match &self.learner {
            Learner::Q(q) => vec![("q", &q.net), ("q_target", &q.target)],
            Learner::Cacla(c) => vec![
                ("actor", &c.actor),
                ("actor_target", &c.actor_target),
                ("critic", &c.critic),
                ("critic_target", &c.critic_target),
            ],
            Learner::Dpg(d) => vec![
                ("actor", &d.actor),
                ("actor_target", &d.actor_target),
                ("critic", &d.critic),
                ("critic_target", &d.critic_target),
            ],
            Learner::Spg(s) => vec![
                ("actor", &s.actor),
                ("actor_target", &s.actor_target),
                ("critic", &s.critic),
                ("critic_target", &s.critic_target),
            ],
        }
    }

    pub fn networks_mut(&mut self) -> Vec<(&'static str, &mut Mlp)> {
        match &mut self.learner {
            Learner::Q(q) => vec![("q", &mut q.net), ("q_target", &mut q.target)],
            Learner::Cacla(c) => vec![
                ("actor", &mut c.actor),
                ("actor_target", &mut c.actor_target),
                ("critic", &mut c.critic),
                ("critic_target", &mut c.critic_target),
            ],
            Learner::Dpg(d) => vec![
                ("actor", &mut d.actor),
                ("actor_target", &mut d.actor_target),
                ("critic", &mut d.critic),
                ("critic_target", &mut d.critic_target),
            ],
            Learner::Spg(s) => vec![
                ("actor", &mut s.actor),
                ("actor_target", &mut s.actor_target),
                ("critic", &mut s.critic),
                ("critic_target", &mut s.critic_target),
            ],
        }
    }
}

fn noisy_policy<R: Rng + ?Sized>(
    actor: &Mlp,
    state: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<[f64; 2]> {
    let out = actor.predict(state, None)?;
    let mean = [out[0], out[1]];
    if sigma == 0.0 {
        Ok(mean)
    } else {
        Ok(perturb(mean, sigma, rng))
    }
}

/// Builds the discrete action grid configured for Q-learning.
pub(crate) fn q_action_grid(params: &AgentHyperparams) -> Result<ActionGrid> {
    Ok(discretize_actions(params.q_action_grid)?)
}

use rand::Rng;

use super::{continuous_action, stack_states, AgentHyperparams, Algorithm, Result};
use crate::neural::{soft_update, Adam, Mlp};
use crate::replay::Batch;

/// Running variance of the TDE used by CACLA+Var to decide how many times a
/// surprising action is reinforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceTracker {
    pub variance: f64,
    pub beta: f64,
}

impl VarianceTracker {
    pub fn new(start: f64, beta: f64) -> Self {
        Self {
            variance: start,
            beta,
        }
    }

    /// `ceil(tde / sqrt(var))` for positive TDEs, zero otherwise.
    pub fn updates_for(&self, tde: f64) -> usize {
        if tde > 0.0 {
            (tde / self.variance.sqrt()).ceil() as usize
        } else {
            0
        }
    }

    pub fn observe(&mut self, tde: f64) {
        self.variance = (1.0 - self.beta) * self.variance + self.beta * tde * tde;
    }
}

/// State-value critic and actor, each with a soft-updated target copy.
#[derive(Debug, Clone)]
pub struct CaclaLearner {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    actor_adam: Adam,
    critic_adam: Adam,
    pub variance: VarianceTracker,
}

impl CaclaLearner {
    pub fn new<R: Rng + ?Sized>(
        params: &AgentHyperparams,
        input: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = Mlp::new(&params.actor_shape(input), rng)?;
        let critic = Mlp::new(&params.value_shape(input), rng)?;
        Ok(Self {
            actor_adam: Adam::new(&actor, params.cacla_actor_lr),
            critic_adam: Adam::new(&critic, params.cacla_critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            variance: VarianceTracker::new(params.cacla_var_start, params.cacla_var_beta),
        })
    }

    pub(crate) fn train(&mut self, batch: &Batch, params: &AgentHyperparams) -> Result<Vec<f64>> {
        cacla_train_step(
            &mut self.critic,
            &mut self.critic_target,
            &mut self.critic_adam,
            &mut self.actor,
            &mut self.actor_target,
            &mut self.actor_adam,
            batch,
            params.discount,
            &mut self.variance,
            params.algorithm == Algorithm::CaclaVar,
            params.cacla_tau,
        )
    }
}

/// One CACLA step: the critic regresses `V(s)` toward `r + gamma * V'(s')`;
/// the actor regresses `pi(s)` toward `a_t` for every transition whose TDE is
/// positive, once per transition or `ceil(TDE / sqrt(var))` times with the
/// variance extension. Both targets then trail by `tau`.
#[allow(clippy::too_many_arguments)]
pub fn cacla_train_step(
    critic: &mut Mlp,
    critic_target: &mut Mlp,
    critic_adam: &mut Adam,
    actor: &mut Mlp,
    actor_target: &mut Mlp,
    actor_adam: &mut Adam,
    batch: &Batch,
    gamma: f64,
    variance: &mut VarianceTracker,
    use_variance: bool,
    tau: f64,
) -> Result<Vec<f64>> {
    let n = batch.len();
    let states = stack_states(batch, false);
    let next_v = critic_target.predict(&stack_states(batch, true), None)?;
    let trace = critic.forward_batch(&states, None)?;
    let v = trace.output();

    let mut tdes = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    for (i, t) in batch.transitions.iter().enumerate() {
        let target = if t.terminal {
            t.reward
        } else {
            t.reward + gamma * next_v[i]
        };
        tdes.push(target - v[i]);
        errors.push(v[i] - target);
    }
    let weights: Vec<f64> = batch.weights.iter().map(|w| w / n as f64).collect();
    let grads = critic.backward_weighted(&trace, &errors, &weights)?;
    critic_adam.step(critic, &grads.params)?;

    let width = actor.input_width();
    if use_variance {
        for (i, (t, &tde)) in batch.transitions.iter().zip(&tdes).enumerate() {
            let repeats = variance.updates_for(tde);
            variance.observe(tde);
            if repeats == 0 {
                continue;
            }
            let state = &states[i * width..(i + 1) * width];
            let taken = continuous_action(t.action)?;
            for _ in 0..repeats {
                regress_actor(actor, actor_adam, state, &taken, 1)?;
            }
        }
    } else {
        let mut chosen_states = Vec::new();
        let mut chosen_actions = Vec::new();
        for (i, (t, &tde)) in batch.transitions.iter().zip(&tdes).enumerate() {
            if tde > 0.0 {
                chosen_states.extend_from_slice(&states[i * width..(i + 1) * width]);
                chosen_actions.extend_from_slice(&continuous_action(t.action)?);
            }
        }
        let count = chosen_actions.len() / 2;
        if count > 0 {
            regress_actor(actor, actor_adam, &chosen_states, &chosen_actions, count)?;
        }
    }

    soft_update(critic_target, critic, tau)?;
    soft_update(actor_target, actor, tau)?;
    Ok(tdes)
}

/// One mean-squared-error Adam step of the actor toward `targets`.
pub(crate) fn regress_actor(
    actor: &mut Mlp,
    adam: &mut Adam,
    states: &[f64],
    targets: &[f64],
    count: usize,
) -> Result<()> {
    let trace = actor.forward_batch(states, None)?;
    let errors: Vec<f64> = trace
        .output()
        .iter()
        .zip(targets)
        .map(|(y, t)| y - t)
        .collect();
    let grads = actor.backward(&trace, &errors, 1.0 / count as f64)?;
    adam.step(actor, &grads.params)?;
    Ok(())
}

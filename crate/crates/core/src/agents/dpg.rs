use rand::Rng;

use super::{continuous_action, stack_states, ActionCritic, AgentHyperparams, Result};
use crate::neural::{soft_update, Adam, Mlp};
use crate::replay::Batch;

/// Deterministic policy gradient: a state-action critic and an actor trained
/// through the frozen critic.
#[derive(Debug, Clone)]
pub struct DpgLearner {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    actor_adam: Adam,
    critic_adam: Adam,
}

impl DpgLearner {
    pub fn new<R: Rng + ?Sized>(
        params: &AgentHyperparams,
        input: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = Mlp::new(&params.actor_shape(input), rng)?;
        let critic = Mlp::new(&params.q_critic_shape(input), rng)?;
        Ok(Self {
            actor_adam: Adam::new(&actor, params.dpg_actor_lr),
            critic_adam: Adam::new(&critic, params.dpg_critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }

    pub(crate) fn train(&mut self, batch: &Batch, params: &AgentHyperparams) -> Result<Vec<f64>> {
        dpg_train_step(
            &mut self.critic,
            &mut self.critic_target,
            &mut self.critic_adam,
            &mut self.actor,
            &mut self.actor_target,
            &mut self.actor_adam,
            batch,
            params,
        )
    }
}

/// Regresses `Q(s, a_t)` toward `r + gamma * Q'(s', pi'(s'))` (`r` when
/// terminal), optionally with L2 weight decay. Returns the TDEs.
pub fn critic_train_step(
    critic: &mut Mlp,
    critic_target: &Mlp,
    actor_target: &Mlp,
    adam: &mut Adam,
    batch: &Batch,
    gamma: f64,
    l2_decay: f64,
) -> Result<Vec<f64>> {
    let n = batch.len();
    let next_states = stack_states(batch, true);
    let next_actions = actor_target.predict(&next_states, None)?;
    let next_q = critic_target.predict(&next_states, Some(&next_actions))?;

    let mut actions = Vec::with_capacity(2 * n);
    for t in &batch.transitions {
        actions.extend_from_slice(&continuous_action(t.action)?);
    }
    let trace = critic.forward_batch(&stack_states(batch, false), Some(&actions))?;
    let q = trace.output();

    let mut tdes = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    for (i, t) in batch.transitions.iter().enumerate() {
        let target = if t.terminal {
            t.reward
        } else {
            t.reward + gamma * next_q[i]
        };
        tdes.push(target - q[i]);
        errors.push(q[i] - target);
    }
    let weights: Vec<f64> = batch.weights.iter().map(|w| w / n as f64).collect();
    let mut grads = critic.backward_weighted(&trace, &errors, &weights)?.params;
    if l2_decay > 0.0 {
        grads.add_l2(critic, l2_decay)?;
    }
    adam.step(critic, &grads)?;
    Ok(tdes)
}

/// Actor update through a frozen critic. Conceptually the actor output feeds
/// the critic and the merged network is regressed toward
/// `Q(s, pi(s)) + target_increase`; only actor parameters change.
pub fn dpg_actor_step<C: ActionCritic + ?Sized>(
    actor: &mut Mlp,
    adam: &mut Adam,
    critic: &C,
    states: &[f64],
    target_increase: f64,
) -> Result<()> {
    let trace = actor.forward_batch(states, None)?;
    let n = trace.batch();
    let dq_da = critic.action_gradients(states, trace.output())?;
    // d/da of 0.5 * (Q - (Q + beta))^2 / n, with the target held fixed
    let scale = -target_increase / n as f64;
    let action_errors: Vec<f64> = dq_da.iter().map(|g| scale * g).collect();
    let grads = actor.backward(&trace, &action_errors, 1.0)?;
    adam.step(actor, &grads.params)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn dpg_train_step(
    critic: &mut Mlp,
    critic_target: &mut Mlp,
    critic_adam: &mut Adam,
    actor: &mut Mlp,
    actor_target: &mut Mlp,
    actor_adam: &mut Adam,
    batch: &Batch,
    params: &AgentHyperparams,
) -> Result<Vec<f64>> {
    let tdes = critic_train_step(
        critic,
        critic_target,
        actor_target,
        critic_adam,
        batch,
        params.discount,
        params.dpg_l2_decay,
    )?;
    dpg_actor_step(
        actor,
        actor_adam,
        &*critic,
        &stack_states(batch, false),
        params.dpg_target_increase,
    )?;
    soft_update(critic_target, critic, params.dpg_tau)?;
    soft_update(actor_target, actor, params.dpg_tau)?;
    Ok(tdes)
}

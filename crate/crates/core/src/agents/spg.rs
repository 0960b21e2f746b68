//! Sampled policy gradient.
//!
//! The actor is regressed toward the best action found by probing the critic
//! around the current policy output. Extensions: offline Gaussian sampling
//! around the incumbent best action, storing that best action back into the
//! replayed transition, and sampling-based action selection online.

use rand::Rng;

use super::cacla::regress_actor;
use super::dpg::critic_train_step;
use super::{continuous_action, perturb, stack_states, ActionCritic, AgentHyperparams, Result};
use crate::neural::{soft_update, Adam, Mlp};
use crate::replay::{Batch, ReplayBuffer};

#[derive(Debug, Clone)]
pub struct SpgLearner {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    actor_adam: Adam,
    critic_adam: Adam,
}

impl SpgLearner {
    pub fn new<R: Rng + ?Sized>(
        params: &AgentHyperparams,
        input: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = Mlp::new(&params.actor_shape(input), rng)?;
        let critic = Mlp::new(&params.q_critic_shape(input), rng)?;
        Ok(Self {
            actor_adam: Adam::new(&actor, params.spg_actor_lr),
            critic_adam: Adam::new(&critic, params.spg_critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }

    pub(crate) fn train<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut ReplayBuffer,
        batch: &Batch,
        params: &AgentHyperparams,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let step = spg_train_step(
            &mut self.critic,
            &mut self.critic_target,
            &mut self.critic_adam,
            &mut self.actor,
            &mut self.actor_target,
            &mut self.actor_adam,
            buffer,
            batch,
            params,
            sigma,
            rng,
        )?;
        Ok(step.tdes)
    }
}

/// Result of the actor-target search for one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct SpgSearch {
    /// Regression target, present only if it beats the current policy.
    pub target: Option<[f64; 2]>,
    /// Best action found, whether or not it beats the policy.
    pub best: [f64; 2],
    pub best_q: f64,
    pub policy_q: f64,
    /// `Q(s, best)` after the initial comparison and after every sample.
    pub best_q_history: Vec<f64>,
}

/// Actor-target search for a single transition.
pub fn spg_actor_target<C, R>(
    critic: &C,
    state: &[f64],
    policy_action: [f64; 2],
    taken_action: [f64; 2],
    samples: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<SpgSearch>
where
    C: ActionCritic + ?Sized,
    R: Rng + ?Sized,
{
    let mut out = spg_actor_targets(
        critic,
        state,
        &[policy_action],
        &[taken_action],
        samples,
        sigma,
        rng,
    )?;
    Ok(out.pop().expect("one search per transition"))
}

/// Actor-target search for a batch. The incumbent starts at `pi(s)`, is
/// replaced by `a_t` if that scores strictly higher, and then by each
/// Gaussian perturbation of the incumbent that scores strictly higher. All
/// transitions advance through the sampling rounds in lockstep.
pub fn spg_actor_targets<C, R>(
    critic: &C,
    states: &[f64],
    policy_actions: &[[f64; 2]],
    taken_actions: &[[f64; 2]],
    samples: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<SpgSearch>>
where
    C: ActionCritic + ?Sized,
    R: Rng + ?Sized,
{
    let flat = |a: &[[f64; 2]]| a.iter().flatten().copied().collect::<Vec<f64>>();
    let policy_q = critic.q_values(states, &flat(policy_actions))?;
    let taken_q = critic.q_values(states, &flat(taken_actions))?;

    let mut searches: Vec<SpgSearch> = policy_actions
        .iter()
        .zip(taken_actions)
        .zip(policy_q.iter().zip(&taken_q))
        .map(|((&pi, &taken), (&qp, &qt))| {
            let (best, best_q) = if qt > qp { (taken, qt) } else { (pi, qp) };
            SpgSearch {
                target: None,
                best,
                best_q,
                policy_q: qp,
                best_q_history: vec![best_q],
            }
        })
        .collect();

    for _ in 0..samples {
        let sampled: Vec<[f64; 2]> = searches
            .iter()
            .map(|s| perturb(s.best, sigma, rng))
            .collect();
        let sampled_q = critic.q_values(states, &flat(&sampled))?;
        for ((s, a), q) in searches.iter_mut().zip(sampled).zip(sampled_q) {
            if q > s.best_q {
                s.best = a;
                s.best_q = q;
            }
            s.best_q_history.push(s.best_q);
        }
    }
    for s in &mut searches {
        if s.best_q > s.policy_q {
            s.target = Some(s.best);
        }
    }
    Ok(searches)
}

/// Online action selection: scores `pi(s)` and `samples` perturbations of
/// it, then adds exploration noise to the best one.
pub fn onge_select<C, R>(
    actor: &Mlp,
    critic: &C,
    state: &[f64],
    samples: usize,
    sample_sigma: f64,
    action_sigma: f64,
    rng: &mut R,
) -> Result<[f64; 2]>
where
    C: ActionCritic + ?Sized,
    R: Rng + ?Sized,
{
    let out = actor.predict(state, None)?;
    let policy = [out[0], out[1]];
    let mut candidates = vec![policy];
    for _ in 0..samples {
        candidates.push(perturb(policy, sample_sigma, rng));
    }
    let best = if samples == 0 {
        policy
    } else {
        let states: Vec<f64> = candidates
            .iter()
            .flat_map(|_| state.iter().copied())
            .collect();
        let actions: Vec<f64> = candidates.iter().flatten().copied().collect();
        let q = critic.q_values(&states, &actions)?;
        let mut best = 0;
        for i in 1..q.len() {
            if q[i] > q[best] {
                best = i;
            }
        }
        candidates[best]
    };
    if action_sigma == 0.0 {
        Ok(best)
    } else {
        Ok(perturb(best, action_sigma, rng))
    }
}

/// What one SPG training step did.
#[derive(Debug, Clone)]
pub struct SpgStep {
    pub tdes: Vec<f64>,
    pub searches: Vec<SpgSearch>,
}

/// Critic step as in DPG (without weight decay), then the actor regresses
/// toward every found target. With `spg_sba`, each sampled transition's
/// stored action is replaced by the best action found for it.
#[allow(clippy::too_many_arguments)]
pub fn spg_train_step<R: Rng + ?Sized>(
    critic: &mut Mlp,
    critic_target: &mut Mlp,
    critic_adam: &mut Adam,
    actor: &mut Mlp,
    actor_target: &mut Mlp,
    actor_adam: &mut Adam,
    buffer: &mut ReplayBuffer,
    batch: &Batch,
    params: &AgentHyperparams,
    sigma: f64,
    rng: &mut R,
) -> Result<SpgStep> {
    let tdes = critic_train_step(
        critic,
        critic_target,
        actor_target,
        critic_adam,
        batch,
        params.discount,
        0.0,
    )?;

    let states = stack_states(batch, false);
    let policy: Vec<[f64; 2]> = actor
        .predict(&states, None)?
        .chunks_exact(2)
        .map(|a| [a[0], a[1]])
        .collect();
    let taken = batch
        .transitions
        .iter()
        .map(|t| continuous_action(t.action))
        .collect::<Result<Vec<_>>>()?;
    let searches = spg_actor_targets(
        &*critic,
        &states,
        &policy,
        &taken,
        params.spg_offline_samples,
        sigma,
        rng,
    )?;

    if params.spg_sba {
        for (&index, s) in batch.indices.iter().zip(&searches) {
            buffer.overwrite_action(index, s.best)?;
        }
    }

    let width = actor.input_width();
    let mut chosen_states = Vec::new();
    let mut targets = Vec::new();
    for (i, s) in searches.iter().enumerate() {
        if let Some(t) = s.target {
            chosen_states.extend_from_slice(&states[i * width..(i + 1) * width]);
            targets.extend_from_slice(&t);
        }
    }
    let count = targets.len() / 2;
    if count > 0 {
        regress_actor(actor, actor_adam, &chosen_states, &targets, count)?;
    }

    soft_update(critic_target, critic, params.spg_tau)?;
    soft_update(actor_target, actor, params.spg_tau)?;
    Ok(SpgStep { tdes, searches })
}

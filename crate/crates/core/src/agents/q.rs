use rand::Rng;

use super::{q_action_grid, stack_states, AgentError, AgentHyperparams, Result};
use crate::neural::{Activation, Adam, Mlp, MlpShape};
use crate::percept::ActionGrid;
use crate::replay::Batch;

/// Q-network with one output per grid action, plus its periodically synced
/// target copy.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub net: Mlp,
    pub target: Mlp,
    adam: Adam,
    grid: ActionGrid,
    steps_since_sync: u64,
}

impl QLearner {
    pub fn new<R: Rng + ?Sized>(
        params: &AgentHyperparams,
        input: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let grid = q_action_grid(params)?;
        let shape = MlpShape::new(
            input,
            &vec![params.q_hidden_units; params.q_hidden_layers],
            grid.len(),
            Activation::Linear,
        );
        let net = Mlp::new(&shape, rng)?;
        Ok(Self {
            target: net.clone(),
            adam: Adam::new(&net, params.q_learning_rate),
            net,
            grid,
            steps_since_sync: 0,
        })
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub(crate) fn train(&mut self, batch: &Batch, params: &AgentHyperparams) -> Result<Vec<f64>> {
        let tdes = q_train_step(
            &mut self.net,
            &self.target,
            &mut self.adam,
            batch,
            params.discount,
        )?;
        self.steps_since_sync += 1;
        if self.steps_since_sync >= params.q_target_update_steps {
            self.target = self.net.clone();
            self.steps_since_sync = 0;
        }
        Ok(tdes)
    }
}

/// Epsilon-greedy choice over the network outputs; ties go to the lowest index.
pub fn q_select<R: Rng + ?Sized>(
    qnet: &Mlp,
    state: &[f64],
    epsilon: f64,
    n_actions: usize,
    rng: &mut R,
) -> Result<usize> {
    if qnet.output_width() != n_actions {
        return Err(AgentError::InvalidParameter(format!(
            "network has {} outputs for {n_actions} actions",
            qnet.output_width()
        )));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..n_actions));
    }
    let q = qnet.predict(state, None)?;
    Ok(argmax(&q))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One weighted regression step of `Q(s, a)` toward `r + gamma * max Q'(s', .)`
/// (`r` alone for terminal transitions). Returns `target - Q(s, a)` per
/// transition.
pub fn q_train_step(
    qnet: &mut Mlp,
    target_net: &Mlp,
    adam: &mut Adam,
    batch: &Batch,
    gamma: f64,
) -> Result<Vec<f64>> {
    let n = batch.len();
    let actions = qnet.output_width();
    let next_q = target_net.predict(&stack_states(batch, true), None)?;
    let trace = qnet.forward_batch(&stack_states(batch, false), None)?;
    let q = trace.output();

    let mut errors = vec![0.0; n * actions];
    let mut tdes = Vec::with_capacity(n);
    for (i, t) in batch.transitions.iter().enumerate() {
        let a = t
            .action
            .discrete()
            .filter(|&a| a < actions)
            .ok_or_else(|| {
                AgentError::InvalidParameter(format!("bad discrete action {:?}", t.action))
            })?;
        let target = if t.terminal {
            t.reward
        } else {
            let row = &next_q[i * actions..(i + 1) * actions];
            t.reward + gamma * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        let predicted = q[i * actions + a];
        errors[i * actions + a] = predicted - target;
        tdes.push(target - predicted);
    }
    let weights: Vec<f64> = batch.weights.iter().map(|w| w / n as f64).collect();
    let grads = qnet.backward_weighted(&trace, &errors, &weights)?;
    adam.step(qnet, &grads.params)?;
    Ok(tdes)
}

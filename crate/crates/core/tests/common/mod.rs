//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use agar_lab::neural::{Activation, Mlp, MlpShape};
use agar_lab::percept::{GridSet, Observation};
use rand::Rng;

/// Largest elementwise relative error between analytic and numeric values.
/// Pairs whose magnitudes are both below `floor` are compared absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Half squared error of the outputs against `targets`, summed over the batch.
pub fn half_sse(net: &Mlp, inputs: &[f64], actions: Option<&[f64]>, targets: &[f64]) -> f64 {
    let out = net.predict(inputs, actions).unwrap();
    out.iter()
        .zip(targets)
        .map(|(o, t)| 0.5 * (o - t).powi(2))
        .sum()
}

/// Central differences of `f` around `x` with step `h`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Random small network: up to three hidden layers of at most eight units,
/// optionally with a two-wide action injected at a random hidden layer.
pub fn random_net<R: Rng>(rng: &mut R, inject: bool) -> Mlp {
    let input = rng.gen_range(1..=6);
    let depth = rng.gen_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=8)).collect();
    let output = rng.gen_range(1..=3);
    let act = if rng.gen_bool(0.5) {
        Activation::Linear
    } else {
        Activation::Logistic
    };
    let mut shape = MlpShape::new(input, &hidden, output, act);
    if inject {
        shape = shape.with_action(rng.gen_range(1..=depth), 2);
    }
    let mut net = Mlp::new(&shape, rng).unwrap();
    // nonzero biases keep pre-activations off the ReLU kink at exactly zero
    for layer in net.layers_mut() {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    net
}

/// Smallest |pre-activation| over all hidden units of a batch.
fn kink_margin(net: &Mlp, inputs: &[f64], actions: Option<&[f64]>) -> f64 {
    let trace = net.forward_batch(inputs, actions).unwrap();
    (0..net.layers().len() - 1)
        .flat_map(|k| trace.pre_activations(k).to_vec())
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

/// Value iteration on a finite deterministic MDP: `next[s][a]`, `reward[s][a]`.
pub fn q_value_iteration(next: &[Vec<usize>], reward: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = reward.iter().map(|r| vec![0.0; r.len()]).collect();
    loop {
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta: f64 = 0.0;
        for s in 0..q.len() {
            for a in 0..q[s].len() {
                let new = reward[s][a] + gamma * v[next[s][a]];
                delta = delta.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        if delta < 1e-13 {
            return q;
        }
    }
}

/// Pellet-only observation whose pellet grid is one-hot at `cell`.
pub fn one_hot_observation(cell: usize) -> Observation {
    let mut f = vec![0.0; GridSet::PELLETS.feature_len()];
    f[cell] = 1.0;
    let n = f.len();
    f[n - 2] = 10.0;
    f[n - 1] = 1.0;
    Observation::from_features(GridSet::PELLETS, f).unwrap()
}

/// Pearson chi-square statistic and its upper-tail p-value for `counts`
/// against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    (stat, dist.sf(stat))
}

/// Compares every analytic gradient of `net` at a random batch with central
/// differences; returns the worst relative error over parameters, inputs
/// and (when injected) actions.
pub fn gradient_check<R: Rng>(net: &Mlp, rng: &mut R) -> f64 {
    let batch = 3;
    // finite differences are only meaningful away from ReLU kinks
    let (inputs, actions) = loop {
        let inputs: Vec<f64> = (0..batch * net.input_width())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let actions: Option<Vec<f64>> = (net.action_width() > 0).then(|| {
            (0..batch * net.action_width())
                .map(|_| rng.gen_range(0.0..1.0))
                .collect()
        });
        if kink_margin(net, &inputs, actions.as_deref()) > 1e-3 {
            break (inputs, actions);
        }
    };
    let targets: Vec<f64> = (0..batch * net.output_width())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();

    let trace = net.forward_batch(&inputs, actions.as_deref()).unwrap();
    let errors: Vec<f64> = trace
        .output()
        .iter()
        .zip(&targets)
        .map(|(o, t)| o - t)
        .collect();
    let grads = net.backward(&trace, &errors, 1.0).unwrap();

    let h = 1e-6;
    let floor = 1e-7;
    let params = net.flat_params();
    let mut probe = net.clone();
    let numeric_params = central_differences(&params, h, |p| {
        probe.set_flat_params(p).unwrap();
        half_sse(&probe, &inputs, actions.as_deref(), &targets)
    });
    let mut worst = max_relative_error(&grads.params.flat(), &numeric_params, floor);

    let numeric_inputs = central_differences(&inputs, h, |x| {
        half_sse(net, x, actions.as_deref(), &targets)
    });
    worst = worst.max(max_relative_error(&grads.input, &numeric_inputs, floor));

    if let Some(a) = &actions {
        let numeric_actions =
            central_differences(a, h, |x| half_sse(net, &inputs, Some(x), &targets));
        worst = worst.max(max_relative_error(
            grads.action.as_ref().unwrap(),
            &numeric_actions,
            floor,
        ));
    }
    worst
}

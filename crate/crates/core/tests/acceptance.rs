//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

mod common;

use std::time::{Duration, Instant};

use agar_lab::agents::{
    dpg_actor_step, q_train_step, spg_actor_target, spg_train_step, ActionCritic, AgentError,
    AgentHyperparams, Algorithm,
};
use agar_lab::harness::{
    aggregate, random_baseline, run_training, ExperimentConfig, TestEnv, TestSpec,
};
use agar_lab::neural::{Activation, Adam, Mlp, MlpShape};
use agar_lab::percept::{discretize_actions, GridSet, Observation};
use agar_lab::replay::{Action, Batch, ReplayBuffer, Transition, PRIORITY_EPSILON};
use agar_lab::world::{compute_reward, replay_trajectory, TrajectoryRecord, World, WorldConfig};
use agar_lab::SeededRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    out.detail = format!("{}; {:.1}s", out.detail, elapsed.as_secs_f64());
    if let Some(limit) = limit {
        if elapsed > limit {
            out.pass = false;
            out.detail = format!("{} exceeds {}s", out.detail, limit.as_secs());
        }
    }
    out
}

fn gradient_fidelity() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let net = common::random_net(&mut rng, i % 2 == 1);
        worst = worst.max(common::gradient_check(&net, &mut rng));
    }
    outcome(
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} (limit 1e-4)"),
    )
}

fn dummy_transition(tag: f64) -> Transition {
    let obs =
        Observation::from_features(GridSet::PELLETS, vec![tag; GridSet::PELLETS.feature_len()])
            .unwrap();
    Transition {
        state: obs.clone(),
        action: Action::Continuous([0.5, 0.5]),
        reward: tag,
        next_state: obs,
        terminal: false,
    }
}

fn per_distribution() -> Outcome {
    let draws = 100_000;
    let batch = 25;
    let mut rng = SeededRng::seed_from_u64(2);

    let mut buf = ReplayBuffer::new(10, 0.6).unwrap();
    for i in 0..10 {
        buf.push(dummy_transition(i as f64));
    }
    let tdes: Vec<f64> = (0..10).map(|i| 0.5 + i as f64).collect();
    buf.update_priorities(&(0..10).collect::<Vec<_>>(), &tdes)
        .unwrap();
    let powered: Vec<f64> = tdes
        .iter()
        .map(|t| (t + PRIORITY_EPSILON).powf(0.6))
        .collect();
    let total: f64 = powered.iter().sum();
    let mut counts = [0u64; 10];
    for _ in 0..draws / batch {
        for i in buf.sample(batch, 0.4, &mut rng).unwrap().indices {
            counts[i] += 1;
        }
    }
    let worst = counts
        .iter()
        .zip(&powered)
        .map(|(&c, p)| (c as f64 / draws as f64 - p / total).abs())
        .fold(0.0, f64::max);

    let mut flat = ReplayBuffer::new(10, 0.0).unwrap();
    for i in 0..10 {
        flat.push(dummy_transition(i as f64));
    }
    flat.update_priorities(&(0..10).collect::<Vec<_>>(), &tdes)
        .unwrap();
    let mut uniform = [0u64; 10];
    for _ in 0..draws / batch {
        for i in flat.sample(batch, 0.4, &mut rng).unwrap().indices {
            uniform[i] += 1;
        }
    }
    let (chi2, p) = common::chi_square_uniform(&uniform);
    outcome(
        worst <= 0.01 && p > 0.01,
        format!(
            "max |freq - P| {worst:.4} (limit 0.01); alpha=0 chi2 {chi2:.2}, p {p:.3} (> 0.01)"
        ),
    )
}

fn bellman_oracle() -> Outcome {
    // s0: stay -> r 0, switch -> r 1; s1: switch back -> r 2, stay -> r 0
    let next = vec![vec![0, 1], vec![0, 1]];
    let reward = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
    let gamma = 0.85;
    let exact = common::q_value_iteration(&next, &reward, gamma);

    let states = [
        common::one_hot_observation(0),
        common::one_hot_observation(1),
    ];
    let transitions: Vec<Transition> = (0..2)
        .flat_map(|s| (0..2).map(move |a| (s, a)))
        .map(|(s, a)| Transition {
            state: states[s].clone(),
            action: Action::Discrete(a),
            reward: reward[s][a],
            next_state: states[next[s][a]].clone(),
            terminal: false,
        })
        .collect();
    let batch = Batch {
        indices: (0..4).collect(),
        transitions,
        weights: vec![1.0; 4],
    };

    let mut rng = SeededRng::seed_from_u64(3);
    let shape = MlpShape::new(GridSet::PELLETS.feature_len(), &[32], 2, Activation::Linear);
    let mut net = Mlp::new(&shape, &mut rng).unwrap();
    let mut target = net.clone();
    let mut adam = Adam::new(&net, 1e-2);
    let error = |net: &Mlp| -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..2 {
            let q = net.predict(&states[s].network_input(), None).unwrap();
            for a in 0..2 {
                worst = worst.max((q[a] - exact[s][a]).abs());
            }
        }
        worst
    };
    let mut err = f64::INFINITY;
    let mut steps = 0;
    while steps < 100_000 && err > 1e-3 {
        for _ in 0..200 {
            q_train_step(&mut net, &target, &mut adam, &batch, gamma).unwrap();
        }
        steps += 200;
        target = net.clone();
        adam.learning_rate = (adam.learning_rate * 0.97).max(1e-4);
        err = error(&net);
    }
    outcome(
        err <= 1e-3,
        format!("max |Q - Q*| {err:.2e} after {steps} steps (limit 1e-3)"),
    )
}

/// Q(s, a) = -|a - a*|^2
struct Peak([f64; 2]);

impl ActionCritic for Peak {
    fn q_values(&self, _states: &[f64], actions: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(actions
            .chunks(2)
            .map(|a| -((a[0] - self.0[0]).powi(2) + (a[1] - self.0[1]).powi(2)))
            .collect())
    }

    fn action_gradients(&self, _states: &[f64], actions: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(actions
            .chunks(2)
            .flat_map(|a| [-2.0 * (a[0] - self.0[0]), -2.0 * (a[1] - self.0[1])])
            .collect())
    }
}

fn algorithm_one() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(4);
    let unit = |rng: &mut SeededRng| [rng.gen::<f64>(), rng.gen::<f64>()];
    let mut violations = 0;
    let mut targets = 0;
    for _ in 0..1000 {
        let peak = Peak(unit(&mut rng));
        let pi = unit(&mut rng);
        let taken = unit(&mut rng);
        let sigma = rng.gen_range(0.01..0.5);
        let s = spg_actor_target(&peak, &[0.0], pi, taken, 50, sigma, &mut rng).unwrap();
        let q = |a: [f64; 2]| peak.q_values(&[0.0], &a).unwrap()[0];
        if s.best_q_history.len() != 51 || s.best_q_history.windows(2).any(|w| w[1] < w[0]) {
            violations += 1;
        }
        if let Some(t) = s.target {
            targets += 1;
            if q(t) <= q(pi) {
                violations += 1;
            }
        } else if s.best_q > q(pi) {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over 1000 searches ({targets} produced targets)"),
    )
}

/// Q(s, a) = -(a0 - 0.7)^2 - (a1 - 0.3)^2
struct Bowl;

impl ActionCritic for Bowl {
    fn q_values(&self, _states: &[f64], actions: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(actions
            .chunks(2)
            .map(|a| -(a[0] - 0.7).powi(2) - (a[1] - 0.3).powi(2))
            .collect())
    }

    fn action_gradients(&self, _states: &[f64], actions: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(actions
            .chunks(2)
            .flat_map(|a| [-2.0 * (a[0] - 0.7), -2.0 * (a[1] - 0.3)])
            .collect())
    }
}

fn dpg_hill_climb() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = SeededRng::seed_from_u64(50 + seed);
        let mut actor = Mlp::new(
            &MlpShape::new(4, &[16, 16], 2, Activation::Logistic),
            &mut rng,
        )
        .unwrap();
        let state: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut adam = Adam::new(&actor, 1e-2);
        for _ in 0..500 {
            dpg_actor_step(&mut actor, &mut adam, &Bowl, &state, 2.0).unwrap();
        }
        let a = actor.predict(&state, None).unwrap();
        worst = worst.max(((a[0] - 0.7).powi(2) + (a[1] - 0.3).powi(2)).sqrt());
    }
    outcome(
        worst <= 0.05,
        format!("worst final distance {worst:.4} (limit 0.05)"),
    )
}

fn conservation() -> Outcome {
    let cfg = WorldConfig::with_side(150.0);
    let players = 2;
    let seed = 6;
    let mut world = World::new(cfg.clone(), players, seed);
    let mut rng = SeededRng::seed_from_u64(60);
    let mut log: Vec<TrajectoryRecord> = Vec::new();
    let mut worst_mass: f64 = 0.0;
    let mut worst_reward: f64 = 0.0;
    let mut pellet_faults = 0;
    let mut segment_start = vec![cfg.spawn_mass; players];
    let mut segment_reward = vec![0.0; players];
    for _ in 0..100_000 {
        world.respawn_dead();
        for id in 0..players {
            let view = world.fov(id);
            let target = view.point_at([rng.gen(), rng.gen()]);
            world.set_target(id, target);
        }
        let before: Vec<f64> = world.players().iter().map(|p| p.mass).collect();
        let ev = world.step();
        log.extend(world.trajectory_records());

        let pellets_gained: f64 = ev.players.iter().map(|e| e.pellet_mass).sum();
        if (pellets_gained - ev.pellets_eaten as f64 * cfg.pellet_mass).abs() > 1e-9
            || world.pellets().len() != cfg.pellet_count()
        {
            pellet_faults += 1;
        }
        let eaten_mass: f64 = world
            .players()
            .iter()
            .zip(&ev.players)
            .filter(|(_, e)| e.died)
            .map(|(p, _)| p.mass)
            .sum();
        let cell_gain: f64 = ev.players.iter().map(|e| e.cell_mass).sum();
        worst_mass = worst_mass.max((eaten_mass - cell_gain).abs());

        for (id, (p, e)) in world.players().iter().zip(&ev.players).enumerate() {
            let expected = before[id] - e.decay + e.pellet_mass + e.cell_mass;
            worst_mass = worst_mass.max((p.mass - expected).abs());
            segment_reward[id] += p.reward();
            if p.alive {
                let telescoped = p.mass - segment_start[id];
                worst_reward = worst_reward.max((segment_reward[id] - telescoped).abs());
            } else {
                let death = -1.4 * p.previous_mass - 40.0;
                let lived = segment_reward[id] - p.reward();
                worst_reward =
                    worst_reward.max((lived - (p.previous_mass - segment_start[id])).abs());
                worst_reward = worst_reward.max((p.reward() - death).abs());
                segment_start[id] = cfg.spawn_mass;
                segment_reward[id] = 0.0;
            }
        }
    }

    let text: Vec<String> = log.iter().map(|r| r.to_string()).collect();
    let parsed: Vec<TrajectoryRecord> = text.iter().map(|l| l.parse().unwrap()).collect();
    let replay = replay_trajectory(cfg, players, seed, &parsed);
    let exact = replay == log && parsed == log;
    outcome(
        worst_mass <= 1e-9 && worst_reward <= 1e-9 && pellet_faults == 0 && exact,
        format!(
            "mass residual {worst_mass:.1e}, reward residual {worst_reward:.1e} (limit 1e-9), \
             pellet faults {pellet_faults}, replay bit-exact {exact}"
        ),
    )
}

const DESK_SEEDS: [u64; 3] = [1, 2, 3];

fn desk_config(algorithm: Algorithm, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.agent.algorithm = algorithm;
    cfg.map_side = 200.0;
    cfg.total_training_steps = 20_000;
    cfg.frame_skip = 10;
    cfg.test_interval = 0.0;
    cfg.seed = seed;
    cfg
}

fn desk_random_mean() -> f64 {
    let runs: Vec<_> = DESK_SEEDS
        .iter()
        .map(|&seed| {
            let cfg = desk_config(Algorithm::QLearning, seed);
            let spec = TestSpec::from_config(&cfg, TestEnv::Pellet, cfg.final_test_runs, seed);
            random_baseline(&spec).unwrap()
        })
        .collect();
    aggregate(&runs).unwrap().mean_mass
}

fn desk_learning(algorithm: Algorithm, label: &str, factor: f64, random: f64) -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut per_seed = Vec::new();
    for seed in DESK_SEEDS {
        let cfg = desk_config(algorithm, seed);
        let out = run_training(&cfg, &root.path().join(format!("seed{seed}"))).unwrap();
        per_seed.push(
            out.rows
                .into_iter()
                .filter(|r| r.phase == "final_pellet")
                .collect::<Vec<_>>(),
        );
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let s = aggregate(&per_seed).unwrap();
    let ratio = s.mean_mass / random;
    outcome(
        ratio >= factor && minutes <= 20.0,
        format!(
            "{label}: mean mass {:.1} +- {:.1} vs random {random:.1}, ratio {ratio:.2} (gate {factor}x), {minutes:.1} min (limit 20)",
            s.mean_mass, s.mean_mass_stderr
        ),
    )
}

fn sba_plumbing() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(8);
    let params = AgentHyperparams {
        algorithm: Algorithm::Spg,
        spg_sba: true,
        spg_offline_samples: 5,
        batch_size: 8,
        ..AgentHyperparams::default()
    };
    let input = GridSet::PELLETS.feature_len();
    let actor_shape = MlpShape::new(input, &[8], 2, Activation::Logistic);
    let critic_shape = MlpShape::new(input, &[8, 8], 1, Activation::Linear).with_action(1, 2);
    let mut actor = Mlp::new(&actor_shape, &mut rng).unwrap();
    let mut critic = Mlp::new(&critic_shape, &mut rng).unwrap();
    let (mut actor_target, mut critic_target) = (actor.clone(), critic.clone());
    let mut actor_adam = Adam::new(&actor, 1e-3);
    let mut critic_adam = Adam::new(&critic, 1e-3);

    let mut buffer = ReplayBuffer::new(64, 0.6).unwrap();
    for i in 0..40 {
        let mut f = vec![0.0; input];
        f[i % 121] = 1.0;
        f[input - 2] = 10.0 + i as f64;
        f[input - 1] = 3000.0;
        let obs = Observation::from_features(GridSet::PELLETS, f).unwrap();
        buffer.push(Transition {
            state: obs.clone(),
            action: Action::Continuous([rng.gen(), rng.gen()]),
            reward: rng.gen_range(-1.0..1.0),
            next_state: obs,
            terminal: i % 7 == 0,
        });
    }
    let batch = buffer.sample(params.batch_size, 0.4, &mut rng).unwrap();
    let step = spg_train_step(
        &mut critic,
        &mut critic_target,
        &mut critic_adam,
        &mut actor,
        &mut actor_target,
        &mut actor_adam,
        &mut buffer,
        &batch,
        &params,
        0.3,
        &mut rng,
    )
    .unwrap();

    // the last search for a repeated index is the one that sticks
    let mut expected = std::collections::HashMap::new();
    for (&i, s) in batch.indices.iter().zip(&step.searches) {
        expected.insert(i, s.best);
    }
    let stored_ok = expected
        .iter()
        .all(|(&i, best)| buffer.get(i).map(|t| t.action) == Some(Action::Continuous(*best)));
    let mut resampled = 0;
    let mut resample_ok = true;
    for _ in 0..200 {
        let b = buffer.sample(8, 0.4, &mut rng).unwrap();
        for (i, t) in b.indices.iter().zip(&b.transitions) {
            if let Some(best) = expected.get(i) {
                resampled += 1;
                resample_ok &= t.action == Action::Continuous(*best);
            }
        }
    }
    outcome(
        stored_ok && resample_ok && resampled > 0,
        format!(
            "{} indices overwritten, stored exact {stored_ok}, {resampled} resampled exact {resample_ok}",
            expected.len()
        ),
    )
}

fn reward_cases() -> Outcome {
    let cases = [
        (compute_reward(true, 15.0, 10.0), 5.0),
        (compute_reward(false, 0.0, 100.0), -180.0),
        (compute_reward(false, 0.0, 10.0), -54.0),
    ];
    let ok = cases.iter().all(|(got, want)| got == want);
    outcome(ok, format!("got {:?}", cases.map(|c| c.0)))
}

fn discretization() -> Outcome {
    let two = discretize_actions(2).unwrap();
    let four_ok = two.positions() == [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]];
    let five = discretize_actions(5).unwrap();
    let closed: Vec<[f64; 2]> = (0..5)
        .flat_map(|j| (0..5).map(move |i| [(2 * i + 1) as f64 / 10.0, (2 * j + 1) as f64 / 10.0]))
        .collect();
    let five_ok = five.len() == 25 && five.positions() == closed.as_slice();
    outcome(
        four_ok && five_ok,
        format!("n=2 exact {four_ok}, n=5 exact {five_ok}"),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()));
    let secs = |s| Some(Duration::from_secs(s));

    let mut criteria: Vec<(String, Box<dyn FnOnce() -> Outcome>)> = vec![
        (
            "01 gradient fidelity".to_string(),
            Box::new(move || timed(secs(60), gradient_fidelity)),
        ),
        (
            "02 PER distribution".to_string(),
            Box::new(move || timed(secs(60), per_distribution)),
        ),
        (
            "03 Bellman oracle".to_string(),
            Box::new(move || timed(secs(10), bellman_oracle)),
        ),
        (
            "04 SPG target search fidelity".to_string(),
            Box::new(move || timed(secs(10), algorithm_one)),
        ),
        (
            "05 DPG hill-climb".to_string(),
            Box::new(move || timed(secs(30), dpg_hill_climb)),
        ),
        (
            "06 simulator conservation".to_string(),
            Box::new(move || timed(None, conservation)),
        ),
    ];
    if wanted("07") {
        let random = desk_random_mean();
        for (alg, label, factor) in [
            (Algorithm::QLearning, "Q-learning", 5.0),
            (Algorithm::CaclaVar, "CACLA+Var", 2.0),
            (Algorithm::Dpg, "DPG", 2.0),
            (Algorithm::Spg, "SPG-OffGE-3s", 2.0),
        ] {
            let name = format!("07 desk-scale learning {label}");
            criteria.push((
                name,
                Box::new(move || timed(None, || desk_learning(alg, label, factor, random))),
            ));
        }
    }
    criteria.push((
        "08 SBA plumbing".to_string(),
        Box::new(move || timed(None, sba_plumbing)),
    ));
    criteria.push((
        "09 reward function".to_string(),
        Box::new(move || timed(None, reward_cases)),
    ));
    criteria.push((
        "10 discretization".to_string(),
        Box::new(move || timed(None, discretization)),
    ));

    let mut failed = 0;
    for (name, run) in criteria {
        if !wanted(&name) {
            continue;
        }
        let out = run();
        let status = if out.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {name}: {}", out.detail);
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

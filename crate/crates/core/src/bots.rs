//! Scripted opponents and baselines. Both act every game step, without
//! frame skipping.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::world::{Vec2, View, World};

const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BotKind {
    Greedy,
    Random,
}

impl fmt::Display for BotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BotKind::Greedy => "greedy",
            BotKind::Random => "random",
        })
    }
}

impl FromStr for BotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(BotKind::Greedy),
            "random" => Ok(BotKind::Random),
            other => Err(format!("unknown bot {other:?}")),
        }
    }
}

/// Heads for the edible object with the best mass-to-distance ratio. Enemy
/// cells are edible when they are lighter than the bot's mass divided by the
/// absorption ratio; pellets always are. Holds position when nothing is
/// edible.
pub fn greedy_action(world: &World, bot: usize) -> Vec2 {
    let me = world.player(bot);
    let cfg = world.config();
    let limit = me.mass / cfg.absorb_ratio;
    let mut best: Option<(f64, Vec2)> = None;
    let mut consider = |mass: f64, at: Vec2| {
        let ratio = mass / at.distance(me.position).max(MIN_DISTANCE);
        if best.is_none_or(|(r, _)| ratio > r) {
            best = Some((ratio, at));
        }
    };
    for &p in world.pellets() {
        consider(cfg.pellet_mass, p);
    }
    for other in world.players() {
        if other.id != bot && other.alive && other.mass < limit {
            consider(other.mass, other.position);
        }
    }
    best.map_or(me.position, |(_, at)| at)
}

/// Uniform point inside `view`.
pub fn random_action<R: Rng + ?Sized>(view: &View, rng: &mut R) -> Vec2 {
    view.point_at([rng.gen::<f64>(), rng.gen::<f64>()])
}

/// Sets the next-step target of a scripted player.
pub fn steer<R: Rng + ?Sized>(kind: BotKind, world: &mut World, bot: usize, rng: &mut R) {
    let target = match kind {
        BotKind::Greedy => greedy_action(world, bot),
        BotKind::Random => random_action(&world.fov(bot), rng),
    };
    world.set_target(bot, target);
}

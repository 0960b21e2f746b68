//! A simplified Agar.io arena.
//!
//! Every player owns exactly one cell (no splitting, ejecting or viruses).
//! Cells move toward their player's mouse target at a mass-dependent speed,
//! lose a small fraction of their mass every step, and absorb pellets and
//! sufficiently smaller cells whose centers they cover.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use rand::{Rng, SeedableRng};

use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn length(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).length()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Game constants. The defaults describe the pellet-collection arena.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub side: f64,
    pub pellet_mass: f64,
    /// Pellets per square map unit.
    pub pellet_density: f64,
    /// Fraction of mass lost per game step above `spawn_mass`.
    pub decay_rate: f64,
    /// A cell can absorb another one at least this many times lighter.
    pub absorb_ratio: f64,
    pub spawn_mass: f64,
    pub max_speed: f64,
    pub speed_exponent: f64,
    pub fov_base: f64,
    pub fov_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            side: 400.0,
            pellet_mass: 1.0,
            pellet_density: 1.0 / 400.0,
            decay_rate: 0.0005,
            absorb_ratio: 1.25,
            spawn_mass: 10.0,
            max_speed: 4.0,
            speed_exponent: 0.4,
            fov_base: 30.0,
            fov_scale: 6.0,
        }
    }
}

impl WorldConfig {
    pub fn with_side(side: f64) -> Self {
        Self {
            side,
            ..Self::default()
        }
    }

    pub fn pellet_count(&self) -> usize {
        (self.pellet_density * self.side * self.side).round() as usize
    }

    pub fn radius(&self, mass: f64) -> f64 {
        mass.sqrt()
    }

    pub fn speed(&self, mass: f64) -> f64 {
        (self.max_speed * (mass / self.spawn_mass).powf(-self.speed_exponent)).min(self.max_speed)
    }

    pub fn view_half_width(&self, mass: f64) -> f64 {
        self.fov_base + self.fov_scale * mass.sqrt()
    }
}

/// Square field of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub center: Vec2,
    pub half_width: f64,
}

impl View {
    pub fn min(&self) -> Vec2 {
        Vec2::new(
            self.center.x - self.half_width,
            self.center.y - self.half_width,
        )
    }

    pub fn max(&self) -> Vec2 {
        Vec2::new(
            self.center.x + self.half_width,
            self.center.y + self.half_width,
        )
    }

    pub fn side(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn area(&self) -> f64 {
        self.side() * self.side()
    }

    /// Maps a point of the unit square onto the view; `(0.5, 0.5)` is the center.
    pub fn point_at(&self, rel: [f64; 2]) -> Vec2 {
        let min = self.min();
        Vec2::new(min.x + rel[0] * self.side(), min.y + rel[1] * self.side())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (min, max) = (self.min(), self.max());
        p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y
    }

    pub fn translated(&self, offset: Vec2) -> View {
        View {
            center: self.center + offset,
            half_width: self.half_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Player {
    pub id: usize,
    pub position: Vec2,
    pub mass: f64,
    pub target: Vec2,
    pub alive: bool,
    pub previous_mass: f64,
}

impl Player {
    /// Reward for the last game step: mass gained while alive, otherwise a
    /// death penalty scaled by the mass held one step earlier.
    pub fn reward(&self) -> f64 {
        compute_reward(self.alive, self.mass, self.previous_mass)
    }
}

pub fn compute_reward(alive: bool, mass: f64, previous_mass: f64) -> f64 {
    if alive {
        mass - previous_mass
    } else {
        previous_mass * -1.4 - 40.0
    }
}

/// What happened to one player during a game step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlayerEvents {
    pub pellet_mass: f64,
    pub cell_mass: f64,
    pub decay: f64,
    pub died: bool,
    pub eaten_by: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub players: Vec<PlayerEvents>,
    pub pellets_eaten: usize,
}

/// Outcome of one decision window under frame skipping.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipOutcome {
    pub reward: f64,
    pub died: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    players: Vec<Player>,
    pellets: Vec<Vec2>,
    step_count: u64,
    rng: SeededRng,
}

impl World {
    pub fn new(config: WorldConfig, player_count: usize, seed: u64) -> Self {
        let players = (0..player_count)
            .map(|id| Player {
                id,
                position: Vec2::default(),
                mass: config.spawn_mass,
                target: Vec2::default(),
                alive: true,
                previous_mass: config.spawn_mass,
            })
            .collect();
        let mut world = Self {
            config,
            players,
            pellets: Vec::new(),
            step_count: 0,
            rng: SeededRng::seed_from_u64(seed),
        };
        world.reset();
        world
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn player(&self, id: usize) -> &Player {
        &self.players[id]
    }

    pub fn player_mut(&mut self, id: usize) -> &mut Player {
        &mut self.players[id]
    }

    pub fn pellets(&self) -> &[Vec2] {
        &self.pellets
    }

    pub fn pellets_mut(&mut self) -> &mut Vec<Vec2> {
        &mut self.pellets
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn rng_mut(&mut self) -> &mut SeededRng {
        &mut self.rng
    }

    pub fn total_pellet_mass(&self) -> f64 {
        self.pellets.len() as f64 * self.config.pellet_mass
    }

    fn random_point(&mut self) -> Vec2 {
        let side = self.config.side;
        Vec2::new(self.rng.gen_range(0.0..side), self.rng.gen_range(0.0..side))
    }

    /// Respawns every player with the spawn mass at a random position and
    /// scatters a fresh set of pellets.
    pub fn reset(&mut self) {
        for id in 0..self.players.len() {
            self.spawn(id);
        }
        self.pellets.clear();
        self.restore_pellets();
    }

    fn spawn(&mut self, id: usize) {
        let position = self.random_point();
        let mass = self.config.spawn_mass;
        let p = &mut self.players[id];
        p.position = position;
        p.target = position;
        p.mass = mass;
        p.previous_mass = mass;
        p.alive = true;
    }

    /// Brings back players that died on an earlier step.
    pub fn respawn_dead(&mut self) {
        for id in 0..self.players.len() {
            if !self.players[id].alive {
                self.spawn(id);
            }
        }
    }

    fn restore_pellets(&mut self) {
        let wanted = self.config.pellet_count();
        while self.pellets.len() < wanted {
            let p = self.random_point();
            self.pellets.push(p);
        }
    }

    /// Field of view of a player.
    pub fn fov(&self, id: usize) -> View {
        let p = &self.players[id];
        View {
            center: p.position,
            half_width: self.config.view_half_width(p.mass),
        }
    }

    pub fn set_target(&mut self, id: usize, target: Vec2) {
        self.players[id].target = target;
    }

    /// Advances the game by one step using the players' current targets.
    pub fn step(&mut self) -> StepEvents {
        self.respawn_dead();
        let mut events = StepEvents {
            players: vec![PlayerEvents::default(); self.players.len()],
            pellets_eaten: 0,
        };
        let side = self.config.side;
        for (p, ev) in self.players.iter_mut().zip(&mut events.players) {
            p.previous_mass = p.mass;
            let offset = p.target - p.position;
            let distance = offset.length();
            if distance > 0.0 {
                let travel = self.config.speed(p.mass).min(distance);
                let moved = p.position + offset * (travel / distance);
                p.position = Vec2::new(moved.x.clamp(0.0, side), moved.y.clamp(0.0, side));
            }
            if p.mass > self.config.spawn_mass {
                let decayed = (p.mass * (1.0 - self.config.decay_rate)).max(self.config.spawn_mass);
                ev.decay = p.mass - decayed;
                p.mass = decayed;
            }
        }
        self.resolve_eating_into(&mut events);
        self.restore_pellets();
        self.step_count += 1;
        events
    }

    /// Resolves pellet and cell absorption at the current positions.
    pub fn resolve_eating(&mut self) -> StepEvents {
        let mut events = StepEvents {
            players: vec![PlayerEvents::default(); self.players.len()],
            pellets_eaten: 0,
        };
        self.resolve_eating_into(&mut events);
        events
    }

    fn resolve_eating_into(&mut self, events: &mut StepEvents) {
        let pellet_mass = self.config.pellet_mass;
        for (p, ev) in self.players.iter_mut().zip(&mut events.players) {
            if !p.alive {
                continue;
            }
            let r = self.config.radius(p.mass);
            let before = self.pellets.len();
            let center = p.position;
            self.pellets.retain(|q| q.distance(center) >= r);
            let eaten = before - self.pellets.len();
            let gained = eaten as f64 * pellet_mass;
            p.mass += gained;
            ev.pellet_mass += gained;
            events.pellets_eaten += eaten;
        }

        // Heaviest cells eat first; ties resolve by id.
        let mut order: Vec<usize> = (0..self.players.len()).collect();
        order.sort_by(|&a, &b| {
            self.players[b]
                .mass
                .total_cmp(&self.players[a].mass)
                .then(a.cmp(&b))
        });
        for &a in &order {
            for &b in &order {
                if a == b || !self.players[a].alive || !self.players[b].alive {
                    continue;
                }
                let (pa, pb) = (&self.players[a], &self.players[b]);
                let covers = pb.position.distance(pa.position) < self.config.radius(pa.mass);
                if pa.mass >= self.config.absorb_ratio * pb.mass && covers {
                    let gained = pb.mass;
                    self.players[a].mass += gained;
                    events.players[a].cell_mass += gained;
                    self.players[b].alive = false;
                    events.players[b].died = true;
                    events.players[b].eaten_by = Some(a);
                }
            }
        }
    }

    /// Applies a relative mouse position for `1 + skip` game steps, re-aiming
    /// at the same screen point every step, and sums the rewards. The window
    /// ends early if the player dies. `each_step` runs before every game step
    /// so scripted opponents can update their targets.
    pub fn frame_skip_step<F>(
        &mut self,
        id: usize,
        action: [f64; 2],
        skip: usize,
        each_step: F,
    ) -> SkipOutcome
    where
        F: FnMut(&mut World),
    {
        self.frame_skip_step_multi(&[(id, action)], skip, each_step)
            .pop()
            .expect("one controlled player")
    }

    /// As [`World::frame_skip_step`] for several controlled players acting in
    /// the same window; the window ends as soon as any of them dies.
    pub fn frame_skip_step_multi<F>(
        &mut self,
        actions: &[(usize, [f64; 2])],
        skip: usize,
        mut each_step: F,
    ) -> Vec<SkipOutcome>
    where
        F: FnMut(&mut World),
    {
        let mut outcomes = vec![
            SkipOutcome {
                reward: 0.0,
                died: false
            };
            actions.len()
        ];
        for _ in 0..=skip {
            each_step(self);
            for &(id, action) in actions {
                if self.players[id].alive {
                    let target = self.fov(id).point_at(action);
                    self.players[id].target = target;
                }
            }
            self.step();
            let mut any_died = false;
            for (out, &(id, _)) in outcomes.iter_mut().zip(actions) {
                let p = &self.players[id];
                out.reward += p.reward();
                if !p.alive {
                    out.died = true;
                    any_died = true;
                }
            }
            if any_died {
                break;
            }
        }
        outcomes
    }

    /// Log lines describing every player after the latest step.
    pub fn trajectory_records(&self) -> Vec<TrajectoryRecord> {
        self.players
            .iter()
            .map(|p| TrajectoryRecord {
                step: self.step_count,
                player: p.id,
                target: p.target,
                mass: p.mass,
            })
            .collect()
    }
}

/// One line of a trajectory log: `step, player_id, target_x, target_y, mass`.
/// Floats are written in shortest round-trip form so replays are bit-exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub player: usize,
    pub target: Vec2,
    pub mass: f64,
}

impl fmt::Display for TrajectoryRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {}, {:?}, {:?}, {:?}",
            self.step, self.player, self.target.x, self.target.y, self.mass
        )
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed trajectory line {0:?}")]
pub struct TrajectoryParseError(pub String);

impl FromStr for TrajectoryRecord {
    type Err = TrajectoryParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TrajectoryParseError(s.to_string());
        let fields: Vec<&str> = s.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err());
        }
        Ok(Self {
            step: fields[0].parse().map_err(|_| err())?,
            player: fields[1].parse().map_err(|_| err())?,
            target: Vec2::new(
                fields[2].parse().map_err(|_| err())?,
                fields[3].parse().map_err(|_| err())?,
            ),
            mass: fields[4].parse().map_err(|_| err())?,
        })
    }
}

/// Re-runs a logged game from its seed, feeding the logged targets back in.
/// Dead players are respawned before the logged targets are applied.
/// Returns the records produced by the replay, which match the log exactly
/// when the simulation is deterministic.
pub fn replay_trajectory(
    config: WorldConfig,
    player_count: usize,
    seed: u64,
    log: &[TrajectoryRecord],
) -> Vec<TrajectoryRecord> {
    let mut world = World::new(config, player_count, seed);
    let mut out = Vec::with_capacity(log.len());
    for step_records in log.chunks(player_count.max(1)) {
        world.respawn_dead();
        for r in step_records {
            world.set_target(r.player, r.target);
        }
        world.step();
        out.extend(world.trajectory_records());
    }
    out
}

//! State encoding and action-space handling.
//!
//! The agent sees its field of view through 11x11 semantic grids: summed
//! pellet mass, the heaviest enemy cell, and how much of each area lies
//! beyond the map walls. Two raw scalars follow the grids: the agent's mass
//! and the size of its view relative to a single pellet.

use thiserror::Error;

use crate::world::{Vec2, View, World};

pub const GRID_SIDE: usize = 11;
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;

#[derive(Debug, Error)]
pub enum PerceptError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Which optional grids are part of the observation. The pellet grid is
/// always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSet {
    pub enemy: bool,
    pub wall: bool,
}

impl GridSet {
    pub const PELLETS: GridSet = GridSet {
        enemy: false,
        wall: false,
    };
    pub const FULL: GridSet = GridSet {
        enemy: true,
        wall: true,
    };

    pub fn grid_count(self) -> usize {
        1 + usize::from(self.enemy) + usize::from(self.wall)
    }

    pub fn feature_len(self) -> usize {
        GRID_CELLS * self.grid_count() + 2
    }
}

pub type Grid = [f64; GRID_CELLS];

#[derive(Debug, Clone, PartialEq)]
pub struct VisionGrids {
    pub pellet: Grid,
    pub enemy: Grid,
    pub wall: Grid,
}

/// Flattened observation: pellet grid (row-major), then the enemy and wall
/// grids when enabled, then total mass and relative view size.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    grids: GridSet,
    features: Vec<f64>,
}

impl Observation {
    pub fn from_features(grids: GridSet, features: Vec<f64>) -> Option<Self> {
        (features.len() == grids.feature_len()).then_some(Self { grids, features })
    }

    pub fn grids(&self) -> GridSet {
        self.grids
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Appends the network input for this observation to `out`. Enemy masses
    /// and the two scalars are compressed with `sign(x) * ln(1 + |x|)`;
    /// pellet and wall grids pass through unchanged.
    pub fn write_network_input(&self, out: &mut Vec<f64>) {
        let squash = |x: f64| x.signum() * x.abs().ln_1p();
        let enemy = if self.grids.enemy {
            GRID_CELLS..2 * GRID_CELLS
        } else {
            0..0
        };
        let scalars = self.features.len() - 2;
        out.extend(self.features.iter().enumerate().map(|(i, &x)| {
            if enemy.contains(&i) || i >= scalars {
                squash(x)
            } else {
                x
            }
        }));
    }

    pub fn network_input(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.features.len());
        self.write_network_input(&mut out);
        out
    }

    pub fn pellet_grid(&self) -> &[f64] {
        &self.features[..GRID_CELLS]
    }

    pub fn enemy_grid(&self) -> Option<&[f64]> {
        self.grids
            .enemy
            .then(|| &self.features[GRID_CELLS..2 * GRID_CELLS])
    }

    pub fn wall_grid(&self) -> Option<&[f64]> {
        self.grids.wall.then(|| {
            let start = GRID_CELLS * (1 + usize::from(self.grids.enemy));
            &self.features[start..start + GRID_CELLS]
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.features[self.features.len() - 2]
    }

    pub fn relative_view_size(&self) -> f64 {
        self.features[self.features.len() - 1]
    }
}

/// Grid area index containing `p`, or `None` when `p` is outside the view.
/// A point exactly on an inner boundary belongs to the higher-index area.
fn area_index(view: &View, p: Vec2) -> Option<usize> {
    let min = view.min();
    let cell = view.side() / GRID_SIDE as f64;
    let col = ((p.x - min.x) / cell).floor();
    let row = ((p.y - min.y) / cell).floor();
    let n = GRID_SIDE as f64;
    if (0.0..n).contains(&col) && (0.0..n).contains(&row) {
        Some(row as usize * GRID_SIDE + col as usize)
    } else {
        None
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub fn build_vision_grids(world: &World, player: usize, view: &View) -> VisionGrids {
    let mut grids = VisionGrids {
        pellet: [0.0; GRID_CELLS],
        enemy: [0.0; GRID_CELLS],
        wall: [0.0; GRID_CELLS],
    };
    let pellet_mass = world.config().pellet_mass;
    for &p in world.pellets() {
        if let Some(i) = area_index(view, p) {
            grids.pellet[i] += pellet_mass;
        }
    }
    for other in world.players() {
        if other.id == player || !other.alive {
            continue;
        }
        if let Some(i) = area_index(view, other.position) {
            grids.enemy[i] = grids.enemy[i].max(other.mass);
        }
    }
    let side = world.config().side;
    let min = view.min();
    let cell = view.side() / GRID_SIDE as f64;
    // Fraction of an interval inside the map, exactly 1 when fully inside.
    let inside = |start: f64| {
        let end = start + cell;
        overlap(start, end, 0.0, side) / (end - start)
    };
    for row in 0..GRID_SIDE {
        let inside_y = inside(min.y + row as f64 * cell);
        for col in 0..GRID_SIDE {
            let inside_x = inside(min.x + col as f64 * cell);
            grids.wall[row * GRID_SIDE + col] = (1.0 - inside_x * inside_y).clamp(0.0, 1.0);
        }
    }
    grids
}

/// Area of a single pellet disc, the unit for the relative view size.
pub fn pellet_reference_area(world: &World) -> f64 {
    let r = world.config().radius(world.config().pellet_mass);
    std::f64::consts::PI * r * r
}

pub fn encode_state(world: &World, player: usize, grids: GridSet) -> Observation {
    let view = world.fov(player);
    let vision = build_vision_grids(world, player, &view);
    let mut features = Vec::with_capacity(grids.feature_len());
    features.extend_from_slice(&vision.pellet);
    if grids.enemy {
        features.extend_from_slice(&vision.enemy);
    }
    if grids.wall {
        features.extend_from_slice(&vision.wall);
    }
    features.push(world.player(player).mass);
    features.push(view.area() / pellet_reference_area(world));
    Observation { grids, features }
}

/// Discrete mouse positions for Q-learning: the centers of an `n x n` grid
/// over the screen, x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    side: usize,
    positions: Vec<[f64; 2]>,
}

impl ActionGrid {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn get(&self, index: usize) -> Option<[f64; 2]> {
        self.positions.get(index).copied()
    }
}

pub fn discretize_actions(n: usize) -> Result<ActionGrid, PerceptError> {
    if n < 1 {
        return Err(PerceptError::InvalidParameter(
            "action grid needs at least one area per side".into(),
        ));
    }
    let center = |i: usize| (2 * i + 1) as f64 / (2 * n) as f64;
    let positions = (0..n)
        .flat_map(|row| (0..n).map(move |col| [center(col), center(row)]))
        .collect();
    Ok(ActionGrid { side: n, positions })
}

pub fn clamp_action(action: [f64; 2]) -> [f64; 2] {
    [action[0].clamp(0.0, 1.0), action[1].clamp(0.0, 1.0)]
}

/// Maps a relative mouse position onto world coordinates inside `view`.
pub fn action_to_world(action: [f64; 2], view: &View) -> Vec2 {
    view.point_at(clamp_action(action))
}

//! Reinforcement-learning agents for a simplified Agar.io arena.
//!
//! The crate contains a small deterministic game simulator ([`world`]), the
//! state encoding used by the agents ([`percept`]), a dense-network engine
//! ([`neural`]), prioritized experience replay ([`replay`]), Q-learning and
//! three actor-critic learners ([`agents`]), scripted baselines ([`bots`]) and
//! the experiment harness with its CLI plumbing ([`harness`]).

pub mod agents;
pub mod bots;
pub mod harness;
pub mod neural;
pub mod percept;
pub mod replay;
pub mod world;

/// Seeded generator used everywhere reproducibility matters.
pub type SeededRng = rand_chacha::ChaCha8Rng;

//! Ground-truth plants, cost functions, initial-state distributions, and
//! exploration-input generators.
//!
//! Only the cart-pole is simulated as a full plant (its physical parameters
//! are known); the Furuta-pendulum and ball-and-plate systems contribute
//! their cost functions and observer configurations, which are exercised at
//! unit level.

pub mod cartpole;
pub mod costs;
pub mod explore;

pub use cartpole::{cartpole_encoder, cartpole_init_dist, cartpole_step, CartPole, CartPoleParams};
pub use costs::{BallPlateCost, CartPoleAngleCost, FurutaCost, TipCost};
pub use explore::{exploration_random, exploration_sum_of_sines, DEFAULT_FREQ_BAND};

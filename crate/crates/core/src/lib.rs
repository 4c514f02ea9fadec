//! Relative-wealth portfolio game among N investors who observe a stock price
//! but not the hidden process driving its expected return.
//!
//! The crate covers market simulation, filtering, the closed-form
//! linear-Gaussian equilibrium, the coupled FBSDE and its deep-learning
//! solver, and evaluation statistics.

pub mod agent;
pub mod analytic;
pub mod fbsde;
pub mod filtering;
pub mod learn;
pub mod market;
pub mod rng;
pub mod stats;

pub use agent::AgentProfile;
pub use filtering::PriorBelief;
pub use market::{HiddenDynamics, HiddenKind, MarketSpec, PathBundle, ReturnMap};
pub use rng::RngKey;

//! Benchmark environments behind a common trait.
//!
//! Environments are constructed by name through [`build_env`], so configs and
//! the CLI select them at runtime. All of them expose discrete actions; the
//! continuous-state ones ([`parking`], [`acrobot`]) are made tabular for
//! learning via [`discretize`].
//!
//! The convention throughout: `step` returns the raw environment reward
//! (the *true* task reward, used only for evaluation and for the `rl`
//! baseline), a `done` flag, and a `success` flag. Learned rewards are
//! supplied externally by the agents layer and never consulted here.

pub mod acrobot;
pub mod controller;
pub mod discretize;
pub mod grid;
pub mod parking;

use crate::trajectory::DemonstrationSet;
use crate::{Error, Result};

/// Standard-normal sample via Box-Muller, shared by the noisy environments.
/// Using the ChaCha stream directly keeps rollouts reproducible from the
/// seed alone, with no distribution-crate version in the picture.
pub(crate) fn sample_normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Vec<f64>,
    /// True task reward (success-based for all built-in environments).
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// A discrete-action environment.
///
/// One instance serves one episode at a time: `reset` starts a new episode
/// and `step` advances it; stepping a finished episode is an error.
pub trait Environment {
    fn name(&self) -> &str;
    fn num_actions(&self) -> usize;
    /// Hard episode length cap enforced by the environment itself.
    fn horizon(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Per-dimension `(low, high)` bounds on observations.
    fn obs_bounds(&self) -> Vec<(f64, f64)>;
    /// Size of the tabular index space, if the environment is tabular.
    fn num_states(&self) -> Option<u64>;
    /// Starts a new episode; the seed drives all in-episode randomness.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<Step>;
    /// Tabular index of the current state, if the environment is tabular.
    fn state_index(&self) -> Option<u64>;
    /// Teleports the environment to the state with the given observation
    /// (used for transition-model estimation). Episode bookkeeping (clock,
    /// done flag) is reset; hidden task flags are cleared.
    fn set_state(&mut self, obs: &[f64]) -> Result<()>;
    /// Sub-goal progress `(reached, total)` if this environment tracks it.
    fn progress(&self) -> Option<(usize, usize)> {
        None
    }
}

/// Environment names accepted by [`build_env`].
pub const ENV_NAMES: &[&str] = &[
    "gridworld-two-goals",
    "maze",
    "two-rooms",
    "corridor",
    "parking",
    "parking-po",
    "acrobot",
];

/// Constructs a built-in environment by name.
pub fn build_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "gridworld-two-goals" => Ok(Box::new(grid::GridEnv::two_goals()?)),
        "maze" => Ok(Box::new(grid::GridEnv::maze()?)),
        "two-rooms" => Ok(Box::new(grid::GridEnv::two_rooms()?)),
        "corridor" => Ok(Box::new(grid::GridEnv::corridor()?)),
        "parking" => Ok(Box::new(parking::ParkingEnv::new(parking::Observability::Full))),
        "parking-po" => Ok(Box::new(parking::ParkingEnv::new(parking::Observability::Partial))),
        "acrobot" => Ok(Box::new(acrobot::AcrobotEnv::new())),
        other => Err(Error::Config(format!(
            "unknown environment `{other}`; known: {}",
            ENV_NAMES.join(", ")
        ))),
    }
}

/// Generates scripted expert demonstrations for a built-in environment.
///
/// Every demonstration ends in task success; generation fails rather than
/// silently returning unsuccessful trajectories.
pub fn generate_demos(env_name: &str, n: usize, seed: u64) -> Result<DemonstrationSet> {
    if n == 0 {
        return Err(Error::Config("need at least one demonstration".into()));
    }
    match env_name {
        "gridworld-two-goals" | "maze" | "two-rooms" | "corridor" => {
            grid::generate_demos(env_name, n, seed)
        }
        "parking" | "parking-po" => parking::generate_demos(env_name, n, seed),
        "acrobot" => acrobot::generate_demos(n, seed),
        other => Err(Error::Config(format!("no demonstration expert for `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_every_listed_env() {
        for name in ENV_NAMES {
            let env = build_env(name).unwrap();
            assert_eq!(env.name(), *name);
            assert!(env.num_actions() > 0);
            assert!(env.horizon() > 0);
            assert_eq!(env.obs_bounds().len(), env.obs_dim());
        }
        assert!(build_env("mountain-car").is_err());
    }

    #[test]
    fn reset_obs_respects_bounds() {
        for name in ENV_NAMES {
            let mut env = build_env(name).unwrap();
            let obs = env.reset(0);
            assert_eq!(obs.len(), env.obs_dim());
            for (x, (lo, hi)) in obs.iter().zip(env.obs_bounds()) {
                assert!(*x >= lo && *x <= hi, "{name}: {x} outside [{lo}, {hi}]");
            }
        }
    }
}

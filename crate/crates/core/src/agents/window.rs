//! Sliding-window state augmentation: memory by stacking recent history.
//!
//! The alternative to learned progress bits: the wrapped environment
//! observes the concatenation of the last `w` raw observations (zero-padded
//! at episode start) and indexes states by the tuple of the last `w` base
//! indices. With `w` spanning the task's memory horizon this makes hidden
//! flags Markov again, at the cost of a state space exponential in `w`.

use std::collections::VecDeque;

use crate::envs::{Environment, Step};
use crate::{Error, Result};

pub struct SlidingWindowEnv {
    inner: Box<dyn Environment>,
    w: usize,
    /// Base state indices, most recent last; shorter than `w` right after
    /// reset (the missing slots are padding).
    history: VecDeque<u64>,
    /// Raw base observations matching `history`.
    window_obs: VecDeque<Vec<f64>>,
}

impl SlidingWindowEnv {
    pub fn new(inner: Box<dyn Environment>, w: usize) -> Result<Self> {
        if w == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if inner.num_states().is_none() {
            return Err(Error::Config(
                "sliding-window augmentation needs an indexed base environment".into(),
            ));
        }
        Ok(SlidingWindowEnv {
            inner,
            w,
            history: VecDeque::new(),
            window_obs: VecDeque::new(),
        })
    }

    fn push_obs(&mut self, obs: Vec<f64>) {
        if self.history.len() == self.w {
            self.history.pop_front();
            self.window_obs.pop_front();
        }
        self.history
            .push_back(self.inner.state_index().expect("checked in constructor"));
        self.window_obs.push_back(obs);
    }

    /// Concatenated window, oldest first, zero-padded on the left.
    fn stacked(&self) -> Vec<f64> {
        let d = self.inner.obs_dim();
        let mut out = vec![0.0; d * self.w];
        let pad = self.w - self.window_obs.len();
        for (slot, obs) in self.window_obs.iter().enumerate() {
            let base = (pad + slot) * d;
            out[base..base + d].copy_from_slice(obs);
        }
        out
    }
}

impl Environment for SlidingWindowEnv {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim() * self.w
    }
    fn obs_bounds(&self) -> Vec<(f64, f64)> {
        let base = self.inner.obs_bounds();
        let mut out = Vec::with_capacity(base.len() * self.w);
        for _ in 0..self.w {
            out.extend(base.iter().cloned());
        }
        out
    }
    fn num_states(&self) -> Option<u64> {
        let n = self.inner.num_states()? + 1;
        n.checked_pow(self.w as u32)
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let obs = self.inner.reset(seed);
        self.history.clear();
        self.window_obs.clear();
        self.push_obs(obs);
        self.stacked()
    }
    fn step(&mut self, action: usize) -> Result<Step> {
        let step = self.inner.step(action)?;
        self.push_obs(step.obs.clone());
        Ok(Step { obs: self.stacked(), ..step })
    }
    fn state_index(&self) -> Option<u64> {
        let n = self.inner.num_states()? + 1;
        let mut idx: u64 = 0;
        // Newest gets the lowest digit; padding digits are 0.
        for (i, h) in self.history.iter().rev().enumerate() {
            idx = idx.checked_add((h + 1).checked_mul(n.checked_pow(i as u32)?)?)?;
        }
        Some(idx)
    }
    fn set_state(&mut self, _obs: &[f64]) -> Result<()> {
        Err(Error::Env("history-augmented environments cannot teleport".into()))
    }
    fn progress(&self) -> Option<(usize, usize)> {
        self.inner.progress()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::build_env;

    #[test]
    fn window_of_one_matches_the_base_env() {
        let mut base = build_env("maze").unwrap();
        let mut wrapped = SlidingWindowEnv::new(build_env("maze").unwrap(), 1).unwrap();
        let o1 = base.reset(3);
        let o2 = wrapped.reset(3);
        assert_eq!(o1, o2);
        for a in [0, 1, 2, 3, 1] {
            let s1 = base.step(a).unwrap();
            let s2 = wrapped.step(a).unwrap();
            assert_eq!(s1.obs, s2.obs);
            assert_eq!(s1.done, s2.done);
        }
    }

    #[test]
    fn stacked_observation_contains_both_states() {
        let mut env = SlidingWindowEnv::new(build_env("maze").unwrap(), 2).unwrap();
        let first = env.reset(0);
        let d = 2;
        // At reset the oldest slot is zero padding.
        assert_eq!(first.len(), 2 * d);
        assert_eq!(&first[..d], &[0.0, 0.0]);
        let prev = first[d..].to_vec();
        let step = env.step(1).unwrap();
        // After one step the window holds [previous, current].
        assert_eq!(&step.obs[..d], prev.as_slice());
    }

    #[test]
    fn indices_distinguish_histories() {
        let mut env = SlidingWindowEnv::new(build_env("two-rooms").unwrap(), 3).unwrap();
        env.reset(0);
        let i0 = env.state_index().unwrap();
        env.step(3).unwrap();
        let i1 = env.state_index().unwrap();
        env.step(2).unwrap();
        // Back at the start cell, but the history differs from reset.
        let i2 = env.state_index().unwrap();
        assert_ne!(i0, i1);
        assert_ne!(i0, i2);
        let n = env.num_states().unwrap();
        for i in [i0, i1, i2] {
            assert!(i < n);
        }
    }

    #[test]
    fn teleport_is_refused() {
        let mut env = SlidingWindowEnv::new(build_env("maze").unwrap(), 2).unwrap();
        env.reset(0);
        assert!(env.set_state(&[1.0, 1.0, 1.0, 1.0]).is_err());
    }
}

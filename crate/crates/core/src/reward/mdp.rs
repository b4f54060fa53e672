//! Tabular MDP representation and the progress-augmented lift.

use crate::{Error, Result};

/// Finite-horizon tabular MDP with sparse transition rows.
///
/// Rewards are deliberately absent: they are supplied separately as a
/// function of state, so one model can be scored under many reward
/// hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Episode length in actions; a trajectory visits `horizon + 1` states.
    pub horizon: usize,
    /// `transitions[s * n_actions + a]` lists `(next_state, prob)` pairs.
    pub transitions: Vec<Vec<(usize, f64)>>,
    /// Initial state distribution as `(state, prob)` pairs.
    pub p0: Vec<(usize, f64)>,
}

impl TabularMdp {
    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    /// Structural checks: shapes, index ranges, and probability mass.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 || self.horizon == 0 {
            return Err(Error::Config("MDP needs states, actions, and a horizon".into()));
        }
        if self.transitions.len() != self.n_states * self.n_actions {
            return Err(Error::DimensionMismatch {
                what: "transition table".into(),
                expected: self.n_states * self.n_actions,
                got: self.transitions.len(),
            });
        }
        for (i, row) in self.transitions.iter().enumerate() {
            let mut mass = 0.0;
            for &(next, p) in row {
                if next >= self.n_states {
                    return Err(Error::Config(format!(
                        "row {i} points at state {next} out of {}",
                        self.n_states
                    )));
                }
                if !(0.0..=1.0 + 1e-9).contains(&p) {
                    return Err(Error::Config(format!("row {i} has probability {p}")));
                }
                mass += p;
            }
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("row {i} sums to {mass}")));
            }
        }
        let mass: f64 = self.p0.iter().map(|&(_, p)| p).sum();
        if self.p0.is_empty() || (mass - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("initial distribution sums to {mass}")));
        }
        if let Some(&(s, _)) = self.p0.iter().find(|&&(s, _)| s >= self.n_states) {
            return Err(Error::Config(format!("initial state {s} out of range")));
        }
        Ok(())
    }
}

/// Lifts a base MDP onto the product space `(base state, memory level)`.
///
/// `levels` is the size of the memory component and `advance(m, s_next)`
/// gives the memory after arriving in base state `s_next` with memory `m`.
/// Lifted ids are `base * levels + m`. The initial memory starts at 0 and is
/// advanced once on the initial state, mirroring how trajectories are
/// encoded point by point from their first observation.
pub fn lift_mdp(
    base: &TabularMdp,
    levels: usize,
    advance: &dyn Fn(usize, usize) -> usize,
) -> Result<TabularMdp> {
    base.validate()?;
    if levels == 0 {
        return Err(Error::Config("memory lift needs at least one level".into()));
    }
    let n = base.n_states * levels;
    let mut transitions = vec![Vec::new(); n * base.n_actions];
    for s in 0..base.n_states {
        for m in 0..levels {
            let id = s * levels + m;
            for a in 0..base.n_actions {
                let row: Vec<(usize, f64)> = base
                    .row(s, a)
                    .iter()
                    .map(|&(next, p)| {
                        let m2 = advance(m, next).min(levels - 1);
                        (next * levels + m2, p)
                    })
                    .collect();
                transitions[id * base.n_actions + a] = row;
            }
        }
    }
    let p0 = base
        .p0
        .iter()
        .map(|&(s, p)| (s * levels + advance(0, s).min(levels - 1), p))
        .collect();
    let lifted = TabularMdp {
        n_states: n,
        n_actions: base.n_actions,
        horizon: base.horizon,
        transitions,
        p0,
    };
    lifted.validate()?;
    Ok(lifted)
}

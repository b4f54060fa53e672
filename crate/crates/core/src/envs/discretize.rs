//! Uniform tilings over continuous observations and sampled tabular models.
//!
//! Policy learning and IRL both run over discrete state ids. For grid
//! environments the native index already serves; continuous environments
//! are wrapped in a [`Tiling`] that maps observations to cells, and a
//! tabular MDP is estimated by teleporting to each cell center and sampling
//! transitions.

use crate::envs::{Environment, Step};
use crate::reward::mdp::TabularMdp;
use crate::{derive_seed, Error, Result};

/// Axis-aligned uniform grid over a box. Cell ids are flattened with the
/// first dimension varying fastest, so a tiling aligned to an integer grid
/// reproduces the grid's own `y * w + x` indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tiling {
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
    pub bins: Vec<usize>,
}

impl Tiling {
    pub fn new(lows: Vec<f64>, highs: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        if lows.len() != highs.len() || lows.len() != bins.len() {
            return Err(Error::Config("tiling dimension lists disagree".into()));
        }
        if lows.is_empty() {
            return Err(Error::EmptyInput("tiling dimensions".into()));
        }
        for i in 0..lows.len() {
            if !(lows[i] < highs[i]) || bins[i] == 0 {
                return Err(Error::Config(format!(
                    "tiling dim {i}: need low < high and bins >= 1"
                )));
            }
        }
        Ok(Tiling { lows, highs, bins })
    }

    /// Tiling over an environment's observation bounds.
    pub fn from_env(env: &dyn Environment, bins: &[usize]) -> Result<Self> {
        let bounds = env.obs_bounds();
        if bins.len() != bounds.len() {
            return Err(Error::DimensionMismatch {
                what: "tiling bins".into(),
                expected: bounds.len(),
                got: bins.len(),
            });
        }
        let (lows, highs) = bounds.into_iter().unzip();
        Tiling::new(lows, highs, bins.to_vec())
    }

    /// Integer-aligned tiling for a grid environment with bounds
    /// `0..w-1` x `0..h-1`: cell centers sit exactly on integer coordinates.
    pub fn grid_aligned(env: &dyn Environment) -> Result<Self> {
        let bounds = env.obs_bounds();
        let mut lows = Vec::new();
        let mut highs = Vec::new();
        let mut bins = Vec::new();
        for (lo, hi) in bounds {
            let cells = (hi - lo).round() as usize + 1;
            lows.push(lo - 0.5);
            highs.push(hi + 0.5);
            bins.push(cells);
        }
        Tiling::new(lows, highs, bins)
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn n_cells(&self) -> usize {
        self.bins.iter().product()
    }

    /// Flat cell id of an observation; out-of-range coordinates clamp into
    /// the boundary cells.
    pub fn cell_of(&self, obs: &[f64]) -> usize {
        debug_assert_eq!(obs.len(), self.dim());
        let mut id = 0;
        let mut stride = 1;
        for d in 0..self.dim() {
            let width = (self.highs[d] - self.lows[d]) / self.bins[d] as f64;
            let raw = ((obs[d] - self.lows[d]) / width).floor();
            let idx = (raw.max(0.0) as usize).min(self.bins[d] - 1);
            id += idx * stride;
            stride *= self.bins[d];
        }
        id
    }

    /// Center coordinates of a cell.
    pub fn center(&self, cell: usize) -> Vec<f64> {
        debug_assert!(cell < self.n_cells());
        let mut rest = cell;
        let mut out = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let idx = rest % self.bins[d];
            rest /= self.bins[d];
            let width = (self.highs[d] - self.lows[d]) / self.bins[d] as f64;
            out.push(self.lows[d] + (idx as f64 + 0.5) * width);
        }
        out
    }
}

/// Estimates a tabular MDP by teleporting to each cell center and sampling
/// every action `samples_per_cell` times.
///
/// The returned model has `n_cells + 1` states; the extra final state is an
/// absorbing sink. Cells whose centers the environment rejects (walls,
/// colliding poses) route straight to the sink. Cells observed to end the
/// episode on arrival keep their incoming transitions (arrival is a real
/// visit) but route all outgoing mass to the sink: in the live environment
/// the episode is over, so a terminal state is never occupied twice.
pub fn mdp_from_env(
    env: &mut dyn Environment,
    tiling: &Tiling,
    samples_per_cell: usize,
    p0_samples: usize,
    seed: u64,
) -> Result<TabularMdp> {
    if samples_per_cell == 0 || p0_samples == 0 {
        return Err(Error::Config("need at least one sample per cell and start".into()));
    }
    if tiling.dim() != env.obs_dim() {
        return Err(Error::DimensionMismatch {
            what: "tiling".into(),
            expected: env.obs_dim(),
            got: tiling.dim(),
        });
    }
    let n = tiling.n_cells();
    let n_actions = env.num_actions();
    let sink = n;
    let mut transitions = vec![Vec::new(); (n + 1) * n_actions];
    let mut terminal = vec![false; n];
    let mut counter = 0u64;
    for c in 0..n {
        let center = tiling.center(c);
        // Probe validity once; rejected centers become sink rows.
        env.reset(derive_seed(seed, "mdp-probe", c as u64));
        let valid = env.set_state(&center).is_ok();
        for a in 0..n_actions {
            let row = &mut transitions[c * n_actions + a];
            if !valid {
                row.push((sink, 1.0));
                continue;
            }
            let mut counts = std::collections::BTreeMap::new();
            for _ in 0..samples_per_cell {
                env.reset(derive_seed(seed, "mdp-step", counter));
                counter += 1;
                env.set_state(&center)?;
                let Step { obs, done, .. } = env.step(a)?;
                let next = tiling.cell_of(&obs);
                if done {
                    terminal[next] = true;
                }
                *counts.entry(next).or_insert(0usize) += 1;
            }
            for (next, k) in counts {
                row.push((next, k as f64 / samples_per_cell as f64));
            }
        }
    }
    // Terminal cells exit to the sink: the live environment never steps out
    // of a terminal state, so keeping the mass on the cell would overcount
    // its visitation relative to real episodes.
    for (c, &t) in terminal.iter().enumerate() {
        if t {
            for a in 0..n_actions {
                transitions[c * n_actions + a] = vec![(sink, 1.0)];
            }
        }
    }
    for a in 0..n_actions {
        transitions[sink * n_actions + a] = vec![(sink, 1.0)];
    }

    let mut start_counts = std::collections::BTreeMap::new();
    for i in 0..p0_samples {
        let obs = env.reset(derive_seed(seed, "mdp-p0", i as u64));
        *start_counts.entry(tiling.cell_of(&obs)).or_insert(0usize) += 1;
    }
    let p0 = start_counts
        .into_iter()
        .map(|(s, k)| (s, k as f64 / p0_samples as f64))
        .collect();

    let mdp = TabularMdp {
        n_states: n + 1,
        n_actions,
        horizon: env.horizon(),
        transitions,
        p0,
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Wraps a continuous environment so `state_index` reports the tiling cell.
pub struct DiscretizedEnv {
    inner: Box<dyn Environment>,
    tiling: Tiling,
    last_obs: Vec<f64>,
}

impl DiscretizedEnv {
    pub fn new(inner: Box<dyn Environment>, tiling: Tiling) -> Result<Self> {
        if tiling.dim() != inner.obs_dim() {
            return Err(Error::DimensionMismatch {
                what: "tiling".into(),
                expected: inner.obs_dim(),
                got: tiling.dim(),
            });
        }
        Ok(DiscretizedEnv { inner, tiling, last_obs: Vec::new() })
    }

    pub fn tiling(&self) -> &Tiling {
        &self.tiling
    }
}

impl Environment for DiscretizedEnv {
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
        self.inner.obs_dim()
    }
    fn obs_bounds(&self) -> Vec<(f64, f64)> {
        self.inner.obs_bounds()
    }
    fn num_states(&self) -> Option<u64> {
        Some(self.tiling.n_cells() as u64 + 1)
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let obs = self.inner.reset(seed);
        self.last_obs = obs.clone();
        obs
    }
    fn step(&mut self, action: usize) -> Result<Step> {
        let step = self.inner.step(action)?;
        self.last_obs = step.obs.clone();
        Ok(step)
    }
    fn state_index(&self) -> Option<u64> {
        if self.last_obs.is_empty() {
            return None;
        }
        Some(self.tiling.cell_of(&self.last_obs) as u64)
    }
    fn set_state(&mut self, obs: &[f64]) -> Result<()> {
        self.inner.set_state(obs)?;
        self.last_obs = obs.to_vec();
        Ok(())
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
    fn cell_ids_and_centers_round_trip() {
        let t = Tiling::new(vec![0.0, 0.0], vec![10.0, 10.0], vec![5, 5]).unwrap();
        assert_eq!(t.n_cells(), 25);
        assert_eq!(t.cell_of(&[0.5, 9.9]), 0 + 4 * 5);
        assert_eq!(t.cell_of(&[9.9, 0.1]), 4);
        for c in 0..t.n_cells() {
            assert_eq!(t.cell_of(&t.center(c)), c);
        }
        // Clamping on both sides.
        assert_eq!(t.cell_of(&[-3.0, 12.0]), 0 + 4 * 5);
    }

    #[test]
    fn grid_aligned_tiling_matches_native_indices() {
        let mut env = build_env("maze").unwrap();
        let t = Tiling::grid_aligned(env.as_ref()).unwrap();
        let obs = env.reset(0);
        assert_eq!(t.cell_of(&obs) as u64, env.state_index().unwrap());
        // Centers land exactly on integer coordinates.
        let c = t.center(t.cell_of(&obs));
        assert_eq!(c, obs);
    }

    #[test]
    fn maze_mdp_is_deterministic_and_valid() {
        let mut env = build_env("maze").unwrap();
        let t = Tiling::grid_aligned(env.as_ref()).unwrap();
        let mdp = mdp_from_env(env.as_mut(), &t, 1, 8, 0).unwrap();
        assert_eq!(mdp.n_states, t.n_cells() + 1);
        // Every row is a point mass (deterministic grid).
        for row in &mdp.transitions {
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].1, 1.0);
        }
        // The start cell is the deterministic initial state.
        let obs = env.reset(3);
        assert_eq!(mdp.p0, vec![(t.cell_of(&obs), 1.0)]);
        // Wall centers are rejected and absorb into the sink.
        let wall = t.cell_of(&[0.0, 0.0]);
        assert_eq!(mdp.row(wall, 0), &[(t.n_cells(), 1.0)]);
    }

    #[test]
    fn goal_cells_exit_to_the_sink() {
        let mut env = build_env("maze").unwrap();
        let t = Tiling::grid_aligned(env.as_ref()).unwrap();
        let sink = t.n_cells();
        let mdp = mdp_from_env(env.as_mut(), &t, 1, 8, 0).unwrap();
        // Exactly one cell is both enterable (its center is accepted, so it
        // is not a wall) and terminal (all rows lead to the sink): the goal.
        let mut terminal = Vec::new();
        for c in 0..t.n_cells() {
            env.reset(0);
            if env.set_state(&t.center(c)).is_err() {
                continue;
            }
            if (0..mdp.n_actions).all(|a| mdp.row(c, a) == [(sink, 1.0)]) {
                terminal.push(c);
            }
        }
        assert_eq!(terminal.len(), 1, "exactly the goal cell should be terminal");
        // And something transitions into it (it is reachable in the model).
        let goal = terminal[0];
        let incoming = mdp
            .transitions
            .iter()
            .enumerate()
            .filter(|(row_id, row)| {
                row_id / mdp.n_actions != goal && row.iter().any(|&(n, _)| n == goal)
            })
            .count();
        assert!(incoming > 0);
    }

    #[test]
    fn discretized_env_reports_cells() {
        let inner = build_env("parking").unwrap();
        let t = Tiling::from_env(inner.as_ref(), &[10, 6, 8, 3]).unwrap();
        let mut env = DiscretizedEnv::new(inner, t).unwrap();
        assert_eq!(env.num_states(), Some(10 * 6 * 8 * 3 + 1));
        let obs = env.reset(5);
        let c0 = env.state_index().unwrap();
        assert_eq!(c0, env.tiling().cell_of(&obs) as u64);
        let step = env.step(7).unwrap();
        assert_eq!(env.state_index().unwrap(), env.tiling().cell_of(&step.obs) as u64);
    }
}

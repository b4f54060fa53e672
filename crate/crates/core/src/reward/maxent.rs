//! Maximum-entropy inverse reinforcement learning on tabular MDPs.
//!
//! The learner matches expected feature counts between the demonstrations
//! and the soft-optimal policy of the current reward hypothesis. Rewards are
//! linear in state features, `r(s) = theta . f(s)`; the soft backup uses a
//! log-sum-exp over actions with the terminal value set to the state reward
//! so that the induced path distribution weighs every visited state,
//! including the last one.

use crate::{Error, Result};

use super::mdp::TabularMdp;

/// State-feature map for a (possibly memory-lifted) MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// One-hot over base states concatenated with cumulative progress bits.
    /// State ids follow the lift convention `base * (k + 1) + m`; base ids
    /// at or beyond `n_real` (the absorbing sink and any padding) get
    /// all-zero features.
    AugmentedIndicator { n_real: usize, k: usize },
    /// One-hot over base states concatenated with unordered visit bits,
    /// for lifts whose memory is a bitmask over `k` flags.
    BitmaskIndicator { n_real: usize, k: usize },
    /// Explicit per-state feature rows (small hand-built models).
    Dense(Vec<Vec<f64>>),
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::AugmentedIndicator { n_real, k } => n_real + k,
            FeatureMap::BitmaskIndicator { n_real, k } => n_real + k,
            FeatureMap::Dense(rows) => rows.first().map_or(0, |r| r.len()),
        }
    }

    /// Number of lifted states the map covers.
    pub fn n_states(&self) -> usize {
        match self {
            // One extra base id for the sink, times the progress levels.
            FeatureMap::AugmentedIndicator { n_real, k } => (n_real + 1) * (k + 1),
            FeatureMap::BitmaskIndicator { n_real, k } => (n_real + 1) * (1 << k),
            FeatureMap::Dense(rows) => rows.len(),
        }
    }

    fn levels(&self) -> usize {
        match self {
            FeatureMap::AugmentedIndicator { k, .. } => k + 1,
            FeatureMap::BitmaskIndicator { k, .. } => 1 << k,
            FeatureMap::Dense(_) => 1,
        }
    }

    /// Dense feature vector of one state (allocates; prefer `rewards` /
    /// `project` in hot paths).
    pub fn feature(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.accumulate(s, 1.0, &mut out);
        out
    }

    /// Adds `weight * f(s)` into `acc`.
    pub fn accumulate(&self, s: usize, weight: f64, acc: &mut [f64]) {
        match self {
            FeatureMap::AugmentedIndicator { n_real, k } => {
                let base = s / (k + 1);
                let m = s % (k + 1);
                if base < *n_real {
                    acc[base] += weight;
                    for i in 0..m.min(*k) {
                        acc[n_real + i] += weight;
                    }
                }
            }
            FeatureMap::BitmaskIndicator { n_real, k } => {
                let levels = 1usize << k;
                let base = s / levels;
                let mask = s % levels;
                if base < *n_real {
                    acc[base] += weight;
                    for i in 0..*k {
                        if mask >> i & 1 == 1 {
                            acc[n_real + i] += weight;
                        }
                    }
                }
            }
            FeatureMap::Dense(rows) => {
                for (a, v) in acc.iter_mut().zip(&rows[s]) {
                    *a += weight * v;
                }
            }
        }
    }

    /// `r(s) = theta . f(s)` for every state.
    pub fn rewards(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "reward weights".into(),
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let n = self.n_states();
        let mut out = vec![0.0; n];
        match self {
            FeatureMap::Dense(rows) => {
                for (s, row) in rows.iter().enumerate() {
                    out[s] = row.iter().zip(theta).map(|(f, t)| f * t).sum();
                }
            }
            _ => {
                let levels = self.levels();
                let n_real = match self {
                    FeatureMap::AugmentedIndicator { n_real, .. }
                    | FeatureMap::BitmaskIndicator { n_real, .. } => *n_real,
                    FeatureMap::Dense(_) => unreachable!(),
                };
                for s in 0..n {
                    let base = s / levels;
                    if base >= n_real {
                        continue;
                    }
                    let mut r = theta[base];
                    match self {
                        FeatureMap::AugmentedIndicator { k, .. } => {
                            let m = s % levels;
                            for i in 0..m.min(*k) {
                                r += theta[n_real + i];
                            }
                        }
                        FeatureMap::BitmaskIndicator { k, .. } => {
                            let mask = s % levels;
                            for i in 0..*k {
                                if mask >> i & 1 == 1 {
                                    r += theta[n_real + i];
                                }
                            }
                        }
                        FeatureMap::Dense(_) => unreachable!(),
                    }
                    out[s] = r;
                }
            }
        }
        Ok(out)
    }

    /// Projects a state-visitation vector onto feature space.
    pub fn project(&self, svf: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (s, &w) in svf.iter().enumerate() {
            if w != 0.0 {
                self.accumulate(s, w, &mut out);
            }
        }
        out
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Soft (maximum-entropy) finite-horizon values: `v[t][s]` for
/// `t = 0..=horizon`, with `v[horizon][s] = r(s)`.
pub struct SoftValues {
    pub v: Vec<Vec<f64>>,
}

pub fn soft_value_iteration(mdp: &TabularMdp, rewards: &[f64]) -> Result<SoftValues> {
    if rewards.len() != mdp.n_states {
        return Err(Error::DimensionMismatch {
            what: "state rewards".into(),
            expected: mdp.n_states,
            got: rewards.len(),
        });
    }
    if rewards.iter().any(|r| r.is_nan()) {
        return Err(Error::Numeric("reward table contains NaN".into()));
    }
    let mut v = vec![vec![0.0; mdp.n_states]; mdp.horizon + 1];
    v[mdp.horizon].copy_from_slice(rewards);
    let mut q = vec![0.0; mdp.n_actions];
    for t in (0..mdp.horizon).rev() {
        let (lo, hi) = v.split_at_mut(t + 1);
        let vt = &mut lo[t];
        let vn = &hi[0];
        for s in 0..mdp.n_states {
            for (a, qa) in q.iter_mut().enumerate() {
                *qa = rewards[s]
                    + mdp
                        .row(s, a)
                        .iter()
                        .map(|&(next, p)| p * vn[next])
                        .sum::<f64>();
            }
            vt[s] = log_sum_exp(&q);
        }
    }
    Ok(SoftValues { v })
}

/// Expected state-visitation frequencies of the soft-optimal policy, summed
/// over `t = 0..=horizon` (so total mass is `horizon + 1`).
pub fn expected_svf(mdp: &TabularMdp, rewards: &[f64], values: &SoftValues) -> Vec<f64> {
    let mut d = vec![0.0; mdp.n_states];
    for &(s, p) in &mdp.p0 {
        d[s] += p;
    }
    let mut svf = d.clone();
    let mut q = vec![0.0; mdp.n_actions];
    for t in 0..mdp.horizon {
        let mut next_d = vec![0.0; mdp.n_states];
        let vn = &values.v[t + 1];
        for s in 0..mdp.n_states {
            if d[s] <= 0.0 {
                continue;
            }
            for (a, qa) in q.iter_mut().enumerate() {
                *qa = rewards[s]
                    + mdp
                        .row(s, a)
                        .iter()
                        .map(|&(next, p)| p * vn[next])
                        .sum::<f64>();
            }
            let norm = log_sum_exp(&q);
            for a in 0..mdp.n_actions {
                let pi = (q[a] - norm).exp();
                if pi <= 0.0 {
                    continue;
                }
                for &(next, p) in mdp.row(s, a) {
                    next_d[next] += d[s] * pi * p;
                }
            }
        }
        for (acc, x) in svf.iter_mut().zip(&next_d) {
            *acc += x;
        }
        d = next_d;
    }
    svf
}

/// Mean feature sum per demonstration path.
///
/// Demonstrations record a state only where an action was taken, so the
/// terminal arrival state never appears explicitly. The policy-side
/// expectation counts arrival states, though; to keep both sides on the
/// same scale, each path's final `(state, action)` contributes the
/// model-expected features of its successor.
pub fn demo_feature_expectation(
    mdp: &TabularMdp,
    features: &FeatureMap,
    paths: &[Vec<(usize, usize)>],
) -> Result<Vec<f64>> {
    if paths.is_empty() || paths.iter().any(|p| p.is_empty()) {
        return Err(Error::EmptyInput("demonstration paths".into()));
    }
    let mut acc = vec![0.0; features.dim()];
    let w = 1.0 / paths.len() as f64;
    for path in paths {
        for &(s, a) in path {
            if s >= mdp.n_states || a >= mdp.n_actions {
                return Err(Error::Config(format!(
                    "demonstration visits ({s}, {a}) outside the model"
                )));
            }
            features.accumulate(s, w, &mut acc);
        }
        let &(s, a) = path.last().expect("non-empty path");
        for &(next, p) in mdp.row(s, a) {
            features.accumulate(next, w * p, &mut acc);
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub decay: f64,
}

impl Default for IrlOptions {
    fn default() -> Self {
        IrlOptions { iterations: 200, learning_rate: 0.1, decay: 0.99 }
    }
}

#[derive(Debug, Clone)]
pub struct IrlResult {
    pub theta: Vec<f64>,
    /// L2 gradient norm per iteration, for convergence reporting.
    pub grad_norms: Vec<f64>,
}

/// Gradient-ascent feature matching. `expert_features` is the mean feature
/// sum per demonstration over all visited states (the same normalization as
/// `expected_svf` projected through the map: one unit of start mass).
pub fn maxent_irl(
    mdp: &TabularMdp,
    features: &FeatureMap,
    expert_features: &[f64],
    opts: &IrlOptions,
) -> Result<IrlResult> {
    mdp.validate()?;
    if features.n_states() != mdp.n_states {
        return Err(Error::DimensionMismatch {
            what: "feature map states".into(),
            expected: mdp.n_states,
            got: features.n_states(),
        });
    }
    if expert_features.len() != features.dim() {
        return Err(Error::DimensionMismatch {
            what: "expert features".into(),
            expected: features.dim(),
            got: expert_features.len(),
        });
    }
    let mut theta = vec![0.0; features.dim()];
    let mut grad_norms = Vec::with_capacity(opts.iterations);
    for it in 0..opts.iterations {
        let rewards = features.rewards(&theta)?;
        let values = soft_value_iteration(mdp, &rewards)?;
        let svf = expected_svf(mdp, &rewards, &values);
        let policy_features = features.project(&svf);
        let step = opts.learning_rate * opts.decay.powi(it as i32);
        let mut norm2 = 0.0;
        for ((t, e), p) in theta.iter_mut().zip(expert_features).zip(&policy_features) {
            let g = e - p;
            norm2 += g * g;
            *t += step * g;
        }
        grad_norms.push(norm2.sqrt());
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 1e4) {
            return Err(Error::Numeric(format!(
                "reward weights diverged at iteration {it}"
            )));
        }
    }
    Ok(IrlResult { theta, grad_norms })
}

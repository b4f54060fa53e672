//! Progress encoding against a sub-goal chain.
//!
//! Given the ordered chain discovered by segmentation, a trajectory (or a
//! live rollout) is summarized by which sub-goals it has reached so far. A
//! point counts as "reaching" sub-goal `i` when it falls inside the goal's
//! confidence ellipsoid *and* every earlier sub-goal has already been reached
//! — the sequential gate. The result is a binary progress vector that is
//! prefix-closed by construction (`v[i] = 1` implies `v[j] = 1` for `j < i`),
//! so only `k + 1` of the `2^k` bit patterns can occur and augmenting a state
//! space multiplies its size by `k + 1`, not `2^k`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::envs::{Environment, Step};
use crate::segmentation::{GoalChain, SubGoal};
use crate::trajectory::{FeatureTrajectory, FeaturizerSpec};
use crate::{Error, Result};

/// Relative slack on the chi-square threshold.
///
/// Membership is `d^2 <= z_alpha * (1 + BOUNDARY_SLACK)`: a point whose
/// squared Mahalanobis distance sits on the published (rounded) quantile,
/// e.g. 1.96^2 in one dimension at alpha = 0.95, is accepted even though the
/// exact quantile is marginally smaller. The slack is far below the
/// resolution at which confidence levels are meaningful.
pub const BOUNDARY_SLACK: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Membership test
// ---------------------------------------------------------------------------

/// Confidence level used to turn sub-goal Gaussians into regions.
#[derive(Debug, Clone, Copy)]
pub struct MembershipParams {
    pub alpha: f64,
}

impl Default for MembershipParams {
    fn default() -> Self {
        MembershipParams { alpha: 0.95 }
    }
}

impl MembershipParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Config(format!(
                "membership confidence must be in (0, 1), got {alpha}"
            )));
        }
        Ok(MembershipParams { alpha })
    }

    /// Chi-square quantile `z_alpha` for `dims` degrees of freedom.
    pub fn threshold(&self, dims: usize) -> Result<f64> {
        if dims == 0 {
            return Err(Error::Config("membership needs at least one dimension".into()));
        }
        let chi = ChiSquared::new(dims as f64)
            .map_err(|e| Error::Numeric(format!("chi-square({dims}): {e}")))?;
        Ok(chi.inverse_cdf(self.alpha))
    }
}

fn mahalanobis_sq(goal: &SubGoal, x: &DVector<f64>) -> Result<f64> {
    if x.len() != goal.mu.len() {
        return Err(Error::DimensionMismatch {
            what: "membership point".into(),
            expected: goal.mu.len(),
            got: x.len(),
        });
    }
    let chol = goal
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("sub-goal covariance not positive definite".into()))?;
    let d = x - &goal.mu;
    Ok(d.dot(&chol.solve(&d)))
}

/// Tests whether `x` lies in the sub-goal's confidence region.
///
/// `t_norm`, when given, additionally requires the normalized time to fall in
/// the goal's observed arrival interval `[t_lo, t_hi]` — used when encoding
/// demonstrations, where timing is meaningful, and skipped for live rollouts.
pub fn in_conf(
    goal: &SubGoal,
    x: &DVector<f64>,
    t_norm: Option<f64>,
    params: &MembershipParams,
) -> Result<bool> {
    if let Some(t) = t_norm {
        if t < goal.t_lo || t > goal.t_hi {
            return Ok(false);
        }
    }
    let z = params.threshold(goal.mu.len())?;
    Ok(mahalanobis_sq(goal, x)? <= z * (1.0 + BOUNDARY_SLACK))
}

// ---------------------------------------------------------------------------
// Progress vectors
// ---------------------------------------------------------------------------

/// Prefix-closed binary progress vector over a chain of `k` sub-goals.
///
/// Stored as the count of leading ones; the sequential gate means no other
/// bit pattern is reachable, so the count is a lossless representation and
/// doubles as the augmentation index in `0..=k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgressVector {
    k: usize,
    m: usize,
}

impl ProgressVector {
    /// All-zeros vector for a chain of `k` goals.
    pub fn new(k: usize) -> Self {
        ProgressVector { k, m: 0 }
    }

    /// Vector with the first `m` bits set.
    pub fn from_count(k: usize, m: usize) -> Result<Self> {
        if m > k {
            return Err(Error::Config(format!("progress count {m} exceeds chain length {k}")));
        }
        Ok(ProgressVector { k, m })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of sub-goals reached (= number of leading ones).
    pub fn count(&self) -> usize {
        self.m
    }

    pub fn bit(&self, i: usize) -> bool {
        i < self.m
    }

    /// Expansion to explicit bits, oldest sub-goal first.
    pub fn bits(&self) -> Vec<u8> {
        (0..self.k).map(|i| u8::from(i < self.m)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.m == self.k
    }
}

// ---------------------------------------------------------------------------
// Chain membership with cached inverses
// ---------------------------------------------------------------------------

/// A goal chain prepared for repeated membership queries.
///
/// Caches each goal's covariance Cholesky factor and the chi-square
/// threshold, so per-step progress updates inside rollouts cost one
/// triangular solve instead of a fresh factorization.
#[derive(Debug, Clone)]
pub struct GoalMembership {
    chain: GoalChain,
    params: MembershipParams,
    inverses: Vec<DMatrix<f64>>,
    threshold: f64,
}

impl GoalMembership {
    pub fn new(chain: GoalChain, params: MembershipParams) -> Result<Self> {
        let threshold = if chain.is_empty() {
            0.0
        } else {
            params.threshold(chain.dim())?
        };
        let mut inverses = Vec::with_capacity(chain.k());
        for goal in &chain.goals {
            let inv = goal
                .sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numeric("sub-goal covariance not positive definite".into()))?
                .inverse();
            inverses.push(inv);
        }
        Ok(GoalMembership {
            chain,
            params,
            inverses,
            threshold,
        })
    }

    pub fn k(&self) -> usize {
        self.chain.k()
    }

    pub fn chain(&self) -> &GoalChain {
        &self.chain
    }

    pub fn params(&self) -> &MembershipParams {
        &self.params
    }

    /// Membership of `x` in goal `i`'s confidence region (cached inverse).
    pub fn in_conf(&self, i: usize, x: &DVector<f64>, t_norm: Option<f64>) -> bool {
        let goal = &self.chain.goals[i];
        if let Some(t) = t_norm {
            if t < goal.t_lo || t > goal.t_hi {
                return false;
            }
        }
        let d = x - &goal.mu;
        let d2 = d.dot(&(&self.inverses[i] * &d));
        d2 <= self.threshold * (1.0 + BOUNDARY_SLACK)
    }

    /// One gated progress step: with `m` goals already reached, a point
    /// advances progress exactly when it lies in goal `m`'s region.
    ///
    /// This is the whole sequential-gate rule: goals behind `m` are already
    /// marked and goals past `m` are blocked by their unmet predecessors, so
    /// only membership in goal `m` can change anything. The result never
    /// decreases and increases by at most one per point, which keeps the
    /// vector prefix-closed.
    pub fn update(&self, m: usize, x: &DVector<f64>, t_norm: Option<f64>) -> usize {
        if m < self.k() && self.in_conf(m, x, t_norm) {
            m + 1
        } else {
            m
        }
    }

    /// Encodes a whole trajectory; `use_time` enables the arrival-interval
    /// gate (recommended for demonstrations, off for rollouts).
    pub fn encode(&self, traj: &FeatureTrajectory, use_time: bool) -> Result<ProgressVector> {
        self.check_dim(traj)?;
        let n = traj.len();
        let mut m = 0;
        for (t, x) in traj.points.iter().enumerate() {
            let t_norm = use_time.then(|| t as f64 / n as f64);
            m = self.update(m, x, t_norm);
        }
        ProgressVector::from_count(self.k(), m)
    }

    /// Counting variant: `counts[i]` is the number of steps spent inside
    /// goal `i`'s region while its gate was open (all earlier goals already
    /// reached). The binary vector is recoverable as `counts[i] > 0`.
    pub fn encode_counting(
        &self,
        traj: &FeatureTrajectory,
        use_time: bool,
    ) -> Result<(ProgressVector, Vec<usize>)> {
        self.check_dim(traj)?;
        let n = traj.len();
        let k = self.k();
        let mut counts = vec![0usize; k];
        let mut m = 0;
        for (t, x) in traj.points.iter().enumerate() {
            let t_norm = use_time.then(|| t as f64 / n as f64);
            // Gates computed against progress before this point.
            for i in 0..=m.min(k.saturating_sub(1)) {
                if i <= m && i < k && self.in_conf(i, x, t_norm) {
                    counts[i] += 1;
                }
            }
            m = self.update(m, x, t_norm);
        }
        Ok((ProgressVector::from_count(k, m)?, counts))
    }

    fn check_dim(&self, traj: &FeatureTrajectory) -> Result<()> {
        if !self.chain.is_empty() && traj.dim != self.chain.dim() {
            return Err(Error::DimensionMismatch {
                what: "encoding trajectory".into(),
                expected: self.chain.dim(),
                got: traj.dim,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// State augmentation
// ---------------------------------------------------------------------------

/// A base state paired with chain progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentedState {
    pub base: u64,
    pub progress: ProgressVector,
}

impl AugmentedState {
    /// Flat index: base states are blocked into `k + 1` progress slots.
    pub fn index(&self) -> u64 {
        self.base * (self.progress.k() as u64 + 1) + self.progress.count() as u64
    }
}

/// An environment whose observation and tabular index are augmented with
/// progress through a sub-goal chain.
///
/// Observations gain `k` trailing progress bits; the tabular state index
/// becomes `base * (k + 1) + m`. Progress updates on every arrival state
/// using the same gated rule as demonstration encoding, with time gating off
/// (rollouts are not required to match demonstration pacing). The wrapped
/// environment's reward and termination pass through untouched.
pub struct AugmentedEnv {
    inner: Box<dyn Environment>,
    membership: GoalMembership,
    featurizer: FeaturizerSpec,
    name: String,
    m: usize,
}

impl AugmentedEnv {
    /// Wraps `inner`. The featurizer must be state-only (it maps raw
    /// observations into the chain's feature space, where no action exists
    /// at reset time).
    pub fn new(
        inner: Box<dyn Environment>,
        membership: GoalMembership,
        featurizer: FeaturizerSpec,
    ) -> Result<Self> {
        if matches!(featurizer, FeaturizerSpec::IdentityOneHotAction { .. }) {
            return Err(Error::Config(
                "state augmentation needs a state-only featurizer".into(),
            ));
        }
        if !membership.chain().is_empty()
            && featurizer.output_dim(inner.obs_dim()) != membership.chain().dim()
        {
            return Err(Error::DimensionMismatch {
                what: "augmentation feature space".into(),
                expected: membership.chain().dim(),
                got: featurizer.output_dim(inner.obs_dim()),
            });
        }
        let name = format!("{}+chain{}", inner.name(), membership.k());
        Ok(AugmentedEnv {
            inner,
            membership,
            featurizer,
            name,
            m: 0,
        })
    }

    pub fn progress_count(&self) -> usize {
        self.m
    }

    fn k(&self) -> usize {
        self.membership.k()
    }

    fn feature_of(&self, obs: &[f64]) -> DVector<f64> {
        self.featurizer
            .apply(obs, &crate::trajectory::Action::Discrete(0))
            .expect("state-only featurizer checked in constructor")
    }

    fn augment_obs(&self, mut obs: Vec<f64>) -> Vec<f64> {
        let bits = ProgressVector::from_count(self.k(), self.m)
            .expect("progress bounded by k")
            .bits();
        obs.extend(bits.iter().map(|&b| b as f64));
        obs
    }
}

impl Environment for AugmentedEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn obs_dim(&self) -> usize {
        self.inner.obs_dim() + self.k()
    }

    fn obs_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = self.inner.obs_bounds();
        b.extend(std::iter::repeat((0.0, 1.0)).take(self.k()));
        b
    }

    fn num_states(&self) -> Option<u64> {
        self.inner.num_states().map(|n| n * (self.k() as u64 + 1))
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let obs = self.inner.reset(seed);
        self.m = self.membership.update(0, &self.feature_of(&obs), None);
        self.augment_obs(obs)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        let step = self.inner.step(action)?;
        self.m = self.membership.update(self.m, &self.feature_of(&step.obs), None);
        Ok(Step {
            obs: self.augment_obs(step.obs),
            ..step
        })
    }

    fn state_index(&self) -> Option<u64> {
        self.inner
            .state_index()
            .map(|s| s * (self.k() as u64 + 1) + self.m as u64)
    }

    fn set_state(&mut self, _obs: &[f64]) -> Result<()> {
        Err(Error::Env(
            "augmented environments do not support set_state; lift the base MDP instead".into(),
        ))
    }

    fn progress(&self) -> Option<(usize, usize)> {
        Some((self.m, self.k()))
    }
}

/// Wraps an environment with chain-progress augmentation (see
/// [`AugmentedEnv`]).
pub fn augment(
    env: Box<dyn Environment>,
    chain: GoalChain,
    params: MembershipParams,
    featurizer: FeaturizerSpec,
) -> Result<AugmentedEnv> {
    AugmentedEnv::new(env, GoalMembership::new(chain, params)?, featurizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{featurize, Action, Demonstration, StateActionPair};

    fn goal_1d(mu: f64, var: f64, t_lo: f64, t_hi: f64) -> SubGoal {
        SubGoal {
            mu: DVector::from_column_slice(&[mu]),
            sigma: DMatrix::from_row_slice(1, 1, &[var]),
            t_mean: 0.5 * (t_lo + t_hi),
            t_lo,
            t_hi,
            support: 1.0,
        }
    }

    fn chain_1d(mus: &[f64]) -> GoalChain {
        GoalChain {
            goals: mus
                .iter()
                .enumerate()
                .map(|(i, &mu)| goal_1d(mu, 0.25, i as f64 * 0.1, 1.0))
                .collect(),
        }
    }

    fn traj_1d(xs: &[f64]) -> FeatureTrajectory {
        let demo = Demonstration {
            id: 0,
            steps: xs
                .iter()
                .map(|&x| StateActionPair {
                    state: vec![x],
                    action: Action::Discrete(0),
                })
                .collect(),
        };
        featurize(&demo, &FeaturizerSpec::Identity).unwrap()
    }

    #[test]
    fn one_dimensional_boundary_at_1_96_sigma() {
        let goal = goal_1d(0.0, 1.0, 0.0, 1.0);
        let params = MembershipParams::default();
        let at = |x: f64| in_conf(&goal, &DVector::from_column_slice(&[x]), None, &params).unwrap();
        assert!(at(0.0));
        assert!(at(1.96), "the 95% boundary itself is inside");
        assert!(at(-1.96));
        assert!(!at(1.97));
        assert!(!at(5.0));
    }

    #[test]
    fn two_dimensional_threshold_is_chi_square() {
        let goal = SubGoal {
            mu: DVector::zeros(2),
            sigma: DMatrix::identity(2, 2),
            t_mean: 0.5,
            t_lo: 0.0,
            t_hi: 1.0,
            support: 1.0,
        };
        let params = MembershipParams::default();
        // z_0.95 for 2 dof is about 5.99: squared radius 5.9 is in, 6.1 out.
        let r_in = 5.9f64.sqrt();
        let r_out = 6.1f64.sqrt();
        assert!(in_conf(&goal, &DVector::from_column_slice(&[r_in, 0.0]), None, &params).unwrap());
        assert!(!in_conf(&goal, &DVector::from_column_slice(&[r_out, 0.0]), None, &params).unwrap());
    }

    #[test]
    fn time_gate_rejects_out_of_interval_points() {
        let goal = goal_1d(0.0, 1.0, 0.2, 0.4);
        let params = MembershipParams::default();
        let x = DVector::from_column_slice(&[0.0]);
        assert!(in_conf(&goal, &x, Some(0.3), &params).unwrap());
        assert!(!in_conf(&goal, &x, Some(0.5), &params).unwrap());
        assert!(!in_conf(&goal, &x, Some(0.1), &params).unwrap());
        assert!(in_conf(&goal, &x, None, &params).unwrap());
    }

    #[test]
    fn progress_vector_is_prefix_closed() {
        let v = ProgressVector::from_count(4, 2).unwrap();
        assert_eq!(v.bits(), vec![1, 1, 0, 0]);
        assert!(v.bit(0) && v.bit(1) && !v.bit(2));
        assert!(!v.is_complete());
        assert!(ProgressVector::from_count(2, 3).is_err());
    }

    #[test]
    fn encode_marks_goals_in_order() {
        let membership =
            GoalMembership::new(chain_1d(&[2.0, 5.0]), MembershipParams::default()).unwrap();
        // Passes through 2 then 5.
        let v = membership.encode(&traj_1d(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), false).unwrap();
        assert_eq!(v.count(), 2);
        // Stops before the second goal.
        let v = membership.encode(&traj_1d(&[0.0, 1.0, 2.0, 3.0]), false).unwrap();
        assert_eq!(v.count(), 1);
        // Never reaches the first.
        let v = membership.encode(&traj_1d(&[0.0, 0.5]), false).unwrap();
        assert_eq!(v.count(), 0);
    }

    #[test]
    fn gate_blocks_out_of_order_visits() {
        let membership =
            GoalMembership::new(chain_1d(&[2.0, 5.0]), MembershipParams::default()).unwrap();
        // Visits the second goal's region first: nothing marks until the
        // first goal is hit, then the second requires a revisit.
        let v = membership.encode(&traj_1d(&[5.0, 5.0, 5.0]), false).unwrap();
        assert_eq!(v.count(), 0);
        let v = membership.encode(&traj_1d(&[5.0, 2.0, 0.0]), false).unwrap();
        assert_eq!(v.count(), 1);
        let v = membership.encode(&traj_1d(&[5.0, 2.0, 5.0]), false).unwrap();
        assert_eq!(v.count(), 2);
    }

    #[test]
    fn counting_encoding_counts_gated_dwell_time() {
        let membership =
            GoalMembership::new(chain_1d(&[2.0, 5.0]), MembershipParams::default()).unwrap();
        let (v, counts) = membership
            .encode_counting(&traj_1d(&[2.0, 2.0, 5.0, 5.0, 5.0]), false)
            .unwrap();
        assert_eq!(v.count(), 2);
        assert_eq!(counts, vec![2, 3]);
        // Binary vector is recoverable from the counts.
        assert_eq!(v.bits(), counts.iter().map(|&c| u8::from(c > 0)).collect::<Vec<_>>());

        // Dwelling in goal 1 before goal 0 is never counted.
        let (v, counts) = membership
            .encode_counting(&traj_1d(&[5.0, 5.0, 2.0]), false)
            .unwrap();
        assert_eq!(v.count(), 1);
        assert_eq!(counts, vec![1, 0]);
    }

    #[test]
    fn time_gated_encoding_respects_intervals() {
        // Goal reachable only in the first third of the trajectory.
        let chain = GoalChain {
            goals: vec![goal_1d(2.0, 0.25, 0.0, 0.34)],
        };
        let membership = GoalMembership::new(chain, MembershipParams::default()).unwrap();
        // Reaches x=2 at t=2 of 6 (t_norm 0.33): marked.
        let v = membership.encode(&traj_1d(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), true).unwrap();
        assert_eq!(v.count(), 1);
        // Reaches x=2 only at t=4 of 6 (t_norm 0.67): gated out.
        let v = membership.encode(&traj_1d(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]), true).unwrap();
        assert_eq!(v.count(), 0);
    }

    #[test]
    fn encode_ignores_points_outside_all_regions() {
        let membership =
            GoalMembership::new(chain_1d(&[2.0, 5.0]), MembershipParams::default()).unwrap();
        // Interleave far-away excursions between the goal visits: the
        // encoding only reacts to confidence-region hits.
        let clean = membership.encode(&traj_1d(&[0.0, 2.0, 5.0]), false).unwrap();
        let noisy = membership
            .encode(&traj_1d(&[0.0, 40.0, 2.0, -30.0, 99.0, 5.0, 70.0]), false)
            .unwrap();
        assert_eq!(clean, noisy);
        assert_eq!(clean.count(), 2);
    }

    #[test]
    fn empty_chain_encodes_to_empty_vector() {
        let membership = GoalMembership::new(GoalChain::default(), MembershipParams::default())
            .unwrap();
        let v = membership.encode(&traj_1d(&[0.0, 1.0]), false).unwrap();
        assert_eq!(v.k(), 0);
        assert_eq!(v.count(), 0);
        assert!(v.is_complete());
    }

    #[test]
    fn augmented_state_index_blocks_by_progress() {
        let s = AugmentedState {
            base: 7,
            progress: ProgressVector::from_count(2, 1).unwrap(),
        };
        assert_eq!(s.index(), 7 * 3 + 1);
    }
}

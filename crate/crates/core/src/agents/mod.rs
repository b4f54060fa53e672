//! Tabular agents: epsilon-greedy Q-learning, policy evaluation, and the
//! direct-from-demos baseline.
//!
//! Training rewards come from a [`RewardModel`] (true, learned, or shaped);
//! evaluation always uses the environment's true reward, so learning curves
//! across methods are directly comparable.

pub mod bc;
pub mod window;

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::reward::{RewardModel, StepCtx};
use crate::{derive_seed, Error, Result};

/// Sparse action-value table; missing entries read as `q_init`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    q: HashMap<u64, Vec<f64>>,
    n_actions: usize,
    q_init: f64,
}

impl QTable {
    pub fn new(n_actions: usize, q_init: f64) -> Self {
        QTable { q: HashMap::new(), n_actions, q_init }
    }

    pub fn values(&self, s: u64) -> Vec<f64> {
        self.q
            .get(&s)
            .cloned()
            .unwrap_or_else(|| vec![self.q_init; self.n_actions])
    }

    fn entry(&mut self, s: u64) -> &mut Vec<f64> {
        let (n, init) = (self.n_actions, self.q_init);
        self.q.entry(s).or_insert_with(|| vec![init; n])
    }

    /// Greedy action; ties break toward the lowest index so rollouts are
    /// deterministic.
    pub fn best_action(&self, s: u64) -> usize {
        let vals = self.values(s);
        let mut best = 0;
        for (a, v) in vals.iter().enumerate().skip(1) {
            if *v > vals[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, s: u64) -> f64 {
        self.values(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// States in ascending order (stable output for serialization).
    pub fn sorted_entries(&self) -> Vec<(u64, Vec<f64>)> {
        let mut out: Vec<_> = self.q.iter().map(|(s, v)| (*s, v.clone())).collect();
        out.sort_by_key(|(s, _)| *s);
        out
    }
}

/// Q-learning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QHyper {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// Exploration anneals linearly `eps_start -> eps_end` over the first
    /// `eps_fraction` of episodes, then stays at `eps_end`.
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_fraction: f64,
    pub q_init: f64,
    pub eval_every: usize,
    pub eval_rollouts: usize,
}

impl Default for QHyper {
    fn default() -> Self {
        QHyper {
            episodes: 1000,
            alpha: 0.1,
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.5,
            q_init: 0.0,
            eval_every: 10,
            eval_rollouts: 50,
        }
    }
}

impl QHyper {
    fn epsilon(&self, episode: usize) -> f64 {
        let anneal = (self.episodes as f64 * self.eps_fraction).max(1.0);
        let frac = (episode as f64 / anneal).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha <= 1.0) || !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Config("alpha and gamma must lie in (0, 1]".into()));
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config("epsilon must lie in [0, 1]".into()));
            }
        }
        if self.episodes == 0 || self.eval_every == 0 || self.eval_rollouts == 0 {
            return Err(Error::Config("episodes, eval_every, eval_rollouts must be >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluation checkpoint of a learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    /// Training episodes completed when the evaluation ran.
    pub episode: usize,
    pub mean_true_reward: f64,
    pub stderr: f64,
    /// Fraction of evaluation rollouts that finished with goal `j` reached,
    /// one entry per goal. Empty when the environment tracks no progress.
    pub mean_progress: Vec<f64>,
}

/// Evaluation checkpoints in training order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub points: Vec<EvalPoint>,
}

impl LearningCurve {
    pub fn max_mean(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|p| p.mean_true_reward)
            .fold(None, |acc, x| Some(acc.map_or(x, |m: f64| m.max(x))))
    }
}

/// Anything that maps an observation (or tabular index) to an action.
pub trait Policy {
    fn act(&self, obs: &[f64], state_index: Option<u64>) -> usize;
}

impl Policy for QTable {
    fn act(&self, _obs: &[f64], state_index: Option<u64>) -> usize {
        self.best_action(state_index.expect("tabular policy needs an indexed environment"))
    }
}

/// Evaluation rollout statistics: mean true return, its standard error, and
/// the per-goal completion fractions (empty without progress tracking).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub stderr: f64,
    pub mean_progress: Vec<f64>,
}

/// Monte-Carlo estimate of a policy's expected true episode reward.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    rollouts: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let stats = evaluate_policy_detailed(env, policy, rollouts, seed)?;
    Ok((stats.mean, stats.stderr))
}

/// Like [`evaluate_policy`], but also reports how far along the goal chain
/// each rollout ended, averaged per goal.
pub fn evaluate_policy_detailed(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    rollouts: usize,
    seed: u64,
) -> Result<EvalStats> {
    if rollouts == 0 {
        return Err(Error::Config("need at least one evaluation rollout".into()));
    }
    let mut returns = Vec::with_capacity(rollouts);
    let mut reached: Vec<f64> = Vec::new();
    for i in 0..rollouts {
        let mut obs = env.reset(derive_seed(seed, "eval-rollout", i as u64));
        let mut total = 0.0;
        loop {
            let a = policy.act(&obs, env.state_index());
            let step = env.step(a)?;
            total += step.reward;
            obs = step.obs;
            if step.done {
                break;
            }
        }
        returns.push(total);
        if let Some((m, k)) = env.progress() {
            reached.resize(k, 0.0);
            for slot in reached.iter_mut().take(m) {
                *slot += 1.0;
            }
        }
    }
    let n = rollouts as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    for slot in reached.iter_mut() {
        *slot /= n;
    }
    Ok(EvalStats {
        mean,
        stderr: (var / n).sqrt(),
        mean_progress: reached,
    })
}

/// Epsilon-greedy tabular Q-learning against an arbitrary training reward.
///
/// Rewards are paid on arrival: the model sees the post-step state index and
/// progress, so reaching a rewarded state counts even when the step ends the
/// episode. Evaluation checkpoints run every `eval_every` episodes (and once
/// more at the end) with the greedy policy under the true reward.
pub fn q_learning(
    env: &mut dyn Environment,
    reward: &dyn RewardModel,
    hyper: &QHyper,
    seed: u64,
) -> Result<(QTable, LearningCurve)> {
    hyper.validate()?;
    let mut q = QTable::new(env.num_actions(), hyper.q_init);
    let mut curve = LearningCurve::default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "q-explore", 0));
    let n_states = env.num_states();
    let mut evals = 0u64;
    for episode in 0..hyper.episodes {
        let eps = hyper.epsilon(episode);
        env.reset(derive_seed(seed, "q-episode", episode as u64));
        let mut s = env
            .state_index()
            .ok_or_else(|| Error::Config("q_learning needs an indexed environment".into()))?;
        loop {
            if let Some(n) = n_states {
                debug_assert!(s < n, "state {s} outside declared range {n}");
            }
            let a = if rng.random_range(0.0..1.0) < eps {
                rng.random_range(0..env.num_actions())
            } else {
                q.best_action(s)
            };
            let step = env.step(a)?;
            let s2 = env
                .state_index()
                .ok_or_else(|| Error::Config("environment lost its state index".into()))?;
            let ctx = StepCtx {
                state_index: Some(s2),
                obs: &step.obs,
                progress: env.progress(),
                done: step.done,
                success: step.success,
                true_reward: step.reward,
            };
            let r = reward.reward(&ctx);
            let target = if step.done { r } else { r + hyper.gamma * q.max_value(s2) };
            let cell = &mut q.entry(s)[a];
            *cell += hyper.alpha * (target - *cell);
            s = s2;
            if step.done {
                break;
            }
        }

        let last = episode + 1 == hyper.episodes;
        if (episode + 1) % hyper.eval_every == 0 || last {
            let stats = evaluate_policy_detailed(
                env,
                &q,
                hyper.eval_rollouts,
                derive_seed(seed, "q-eval", evals),
            )?;
            evals += 1;
            // The final episode may coincide with a scheduled checkpoint;
            // don't record it twice.
            if curve.points.last().map(|p| p.episode) != Some(episode + 1) {
                curve.points.push(EvalPoint {
                    episode: episode + 1,
                    mean_true_reward: stats.mean,
                    stderr: stats.stderr,
                    mean_progress: stats.mean_progress,
                });
            }
        }
    }
    Ok((q, curve))
}

//! Reward models: ground-truth passthrough, learned linear rewards, and the
//! IRL machinery that produces the latter.

pub mod maxent;
pub mod mdp;

use std::fmt::Write as _;
use std::path::Path;

use crate::segmentation::GoalChain;
use crate::trajectory::{Action, FeaturizerSpec};
use crate::{Error, Result};
use maxent::FeatureMap;

/// Everything a reward model may look at after one environment step.
///
/// `state_index` and `progress` describe the post-step situation; rewards
/// are paid on arrival so that reaching a rewarded state counts even when
/// the step ends the episode.
#[derive(Debug, Clone)]
pub struct StepCtx<'a> {
    pub state_index: Option<u64>,
    pub obs: &'a [f64],
    pub progress: Option<(usize, usize)>,
    pub done: bool,
    pub success: bool,
    pub true_reward: f64,
}

pub trait RewardModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn reward(&self, ctx: &StepCtx<'_>) -> f64;
}

/// Ground-truth environment reward (the `rl` baseline and evaluation).
pub struct TrueReward;

impl RewardModel for TrueReward {
    fn name(&self) -> &'static str {
        "true"
    }
    fn reward(&self, ctx: &StepCtx<'_>) -> f64 {
        ctx.true_reward
    }
}

/// Shaped distance toward the current sub-goal: `-||x - mu_gamma||^2`,
/// where `gamma` is the first unreached goal (the last goal once all are
/// reached). Zero exactly at the sub-goal mean.
pub fn endpoint_reward(x: &[f64], chain: &GoalChain, completed: usize) -> f64 {
    let idx = completed.min(chain.k().saturating_sub(1));
    let mu = &chain.goals[idx].mu;
    -x.iter()
        .zip(mu.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
}

/// Endpoint-model reward: drives the agent toward successive sub-goal means
/// using the progress tracked by an augmented environment. With an empty
/// chain there is nothing to aim for and the model falls back to the
/// natural reward.
pub struct EndpointReward {
    pub chain: GoalChain,
    pub featurizer: FeaturizerSpec,
}

impl RewardModel for EndpointReward {
    fn name(&self) -> &'static str {
        "endpoint"
    }
    fn reward(&self, ctx: &StepCtx<'_>) -> f64 {
        if self.chain.k() == 0 {
            return ctx.true_reward;
        }
        let x = self
            .featurizer
            .apply(ctx.obs, &Action::Discrete(0))
            .expect("state-only featurizer");
        let completed = ctx.progress.map_or(0, |(m, _)| m);
        endpoint_reward(x.as_slice(), &self.chain, completed)
    }
}

/// Linear reward over tabular state features, as produced by IRL.
#[derive(Debug, Clone)]
pub struct LearnedReward {
    rewards: Vec<f64>,
    pub theta: Vec<f64>,
    pub features: FeatureMap,
}

impl LearnedReward {
    pub fn new(features: FeatureMap, theta: Vec<f64>) -> Result<Self> {
        let rewards = features.rewards(&theta)?;
        Ok(LearnedReward { rewards, theta, features })
    }

    pub fn state_reward(&self, s: usize) -> f64 {
        self.rewards.get(s).copied().unwrap_or(0.0)
    }
}

impl RewardModel for LearnedReward {
    fn name(&self) -> &'static str {
        "learned"
    }
    fn reward(&self, ctx: &StepCtx<'_>) -> f64 {
        match ctx.state_index {
            Some(s) => self.state_reward(s as usize),
            None => 0.0,
        }
    }
}

/// Serializes a learned reward to a small text file.
pub fn save_reward(model: &LearnedReward, path: &Path) -> Result<()> {
    let header = match &model.features {
        FeatureMap::AugmentedIndicator { n_real, k } => format!("augmented {n_real} {k}"),
        FeatureMap::BitmaskIndicator { n_real, k } => format!("bitmask {n_real} {k}"),
        FeatureMap::Dense(_) => {
            return Err(Error::Config("dense feature maps are not serializable".into()))
        }
    };
    let mut out = String::new();
    writeln!(out, "reward v1").unwrap();
    writeln!(out, "features {header}").unwrap();
    writeln!(out, "theta {}", model.theta.len()).unwrap();
    for v in &model.theta {
        writeln!(out, "{v}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_reward(path: &Path) -> Result<LearnedReward> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut expect = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {what}") })
    };
    let (ln, header) = expect("header")?;
    if header.trim() != "reward v1" {
        return Err(Error::Parse { line: ln, msg: format!("bad header {header:?}") });
    }
    let (ln, feat) = expect("feature map")?;
    let toks: Vec<&str> = feat.split_whitespace().collect();
    let features = match toks.as_slice() {
        ["features", kind, n_real, k] => {
            let n_real = n_real
                .parse()
                .map_err(|_| Error::Parse { line: ln, msg: format!("bad n_real {n_real:?}") })?;
            let k = k
                .parse()
                .map_err(|_| Error::Parse { line: ln, msg: format!("bad k {k:?}") })?;
            match *kind {
                "augmented" => FeatureMap::AugmentedIndicator { n_real, k },
                "bitmask" => FeatureMap::BitmaskIndicator { n_real, k },
                other => {
                    return Err(Error::Parse { line: ln, msg: format!("unknown map {other:?}") })
                }
            }
        }
        _ => return Err(Error::Parse { line: ln, msg: format!("bad feature line {feat:?}") }),
    };
    let (ln, theta_line) = expect("theta header")?;
    let dim: usize = theta_line
        .strip_prefix("theta ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse { line: ln, msg: format!("bad theta line {theta_line:?}") })?;
    let mut theta = Vec::with_capacity(dim);
    for _ in 0..dim {
        let (ln, v) = expect("theta value")?;
        theta.push(v.trim().parse().map_err(|_| Error::Parse {
            line: ln,
            msg: format!("bad weight {v:?}"),
        })?);
    }
    LearnedReward::new(features, theta)
}

//! Behavioral cloning: a multinomial logistic policy fit to demonstrations.
//!
//! This is the direct-policy baseline. Features are the raw observation
//! vectors (standardized), training is full-batch gradient descent on the
//! softmax cross-entropy, so the result is deterministic.

use nalgebra::{DMatrix, DVector};

use crate::agents::Policy;
use crate::trajectory::{Action, DemonstrationSet};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BcPolicy {
    /// `n_actions x (dim + 1)` weights, last column the bias.
    weights: DMatrix<f64>,
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl BcPolicy {
    fn logits(&self, obs: &[f64]) -> DVector<f64> {
        let d = self.mean.len();
        let mut x = DVector::zeros(d + 1);
        for i in 0..d {
            x[i] = (obs[i] - self.mean[i]) / self.scale[i];
        }
        x[d] = 1.0;
        &self.weights * x
    }

    /// Fraction of demo steps whose argmax action matches the label.
    pub fn training_accuracy(&self, demos: &DemonstrationSet) -> f64 {
        let mut hit = 0usize;
        let mut total = 0usize;
        for demo in &demos.demos {
            for pair in &demo.steps {
                if let Action::Discrete(a) = pair.action {
                    total += 1;
                    hit += usize::from(self.act(&pair.state, None) == a);
                }
            }
        }
        if total == 0 {
            return 0.0;
        }
        hit as f64 / total as f64
    }
}

impl Policy for BcPolicy {
    fn act(&self, obs: &[f64], _state_index: Option<u64>) -> usize {
        let l = self.logits(obs);
        let mut best = 0;
        for a in 1..l.len() {
            if l[a] > l[best] {
                best = a;
            }
        }
        best
    }
}

/// Options for [`behavior_cloning`]; the defaults train to convergence on
/// the small demo sets used here.
#[derive(Debug, Clone, PartialEq)]
pub struct BcOptions {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for BcOptions {
    fn default() -> Self {
        BcOptions { epochs: 1500, learning_rate: 0.5 }
    }
}

/// Fits the classifier. `n_actions` is the environment's action count (demo
/// labels must fall inside it).
pub fn behavior_cloning(
    demos: &DemonstrationSet,
    n_actions: usize,
    opts: &BcOptions,
) -> Result<BcPolicy> {
    let mut xs: Vec<&[f64]> = Vec::new();
    let mut ys: Vec<usize> = Vec::new();
    for demo in &demos.demos {
        for pair in &demo.steps {
            match pair.action {
                Action::Discrete(a) if a < n_actions => {
                    xs.push(&pair.state);
                    ys.push(a);
                }
                Action::Discrete(a) => {
                    return Err(Error::Config(format!(
                        "demo action {a} outside the environment's {n_actions} actions"
                    )))
                }
                Action::Continuous(_) => {
                    return Err(Error::Config(
                        "behavior cloning needs discrete actions".into(),
                    ))
                }
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput("behavior cloning demonstrations".into()));
    }
    let n = xs.len();
    let d = demos.state_dim;

    let mut mean: DVector<f64> = DVector::zeros(d);
    for x in &xs {
        for i in 0..d {
            mean[i] += x[i];
        }
    }
    mean /= n as f64;
    let mut scale: DVector<f64> = DVector::zeros(d);
    for x in &xs {
        for i in 0..d {
            scale[i] += (x[i] - mean[i]) * (x[i] - mean[i]);
        }
    }
    for i in 0..d {
        scale[i] = (scale[i] / n as f64).sqrt();
        if scale[i] < 1e-8 {
            scale[i] = 1.0;
        }
    }

    // Design matrix with bias column, standardized.
    let mut design = DMatrix::zeros(n, d + 1);
    for (r, x) in xs.iter().enumerate() {
        for c in 0..d {
            design[(r, c)] = (x[c] - mean[c]) / scale[c];
        }
        design[(r, d)] = 1.0;
    }

    let mut weights = DMatrix::zeros(n_actions, d + 1);
    for _ in 0..opts.epochs {
        // softmax(W xᵀ) per row minus the one-hot labels.
        let logits = &design * weights.transpose(); // n x A
        let mut grad = DMatrix::zeros(n_actions, d + 1);
        for r in 0..n {
            let row = logits.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for a in 0..n_actions {
                let p = (row[a] - m).exp() / z;
                let err = p - f64::from(a == ys[r]);
                for c in 0..=d {
                    grad[(a, c)] += err * design[(r, c)];
                }
            }
        }
        weights -= grad * (opts.learning_rate / n as f64);
    }
    Ok(BcPolicy { weights, mean, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Demonstration, StateActionPair};

    fn demo_from(pairs: &[(&[f64], usize)], id: usize) -> Demonstration {
        Demonstration {
            id,
            steps: pairs
                .iter()
                .map(|(x, a)| StateActionPair {
                    state: x.to_vec(),
                    action: Action::Discrete(*a),
                })
                .collect(),
        }
    }

    #[test]
    fn constant_demos_give_a_constant_policy() {
        let mut set = DemonstrationSet::new("toy", 2);
        set.push(demo_from(&[(&[0.0, 0.0], 2), (&[1.0, 3.0], 2), (&[-2.0, 5.0], 2)], 0))
            .unwrap();
        let policy = behavior_cloning(&set, 4, &BcOptions::default()).unwrap();
        for obs in [[0.0, 0.0], [9.0, -9.0], [100.0, 3.0]] {
            assert_eq!(policy.act(&obs, None), 2);
        }
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy() {
        let mut set = DemonstrationSet::new("toy", 1);
        let pairs: Vec<(Vec<f64>, usize)> = (0..20)
            .map(|i| {
                let x = i as f64 / 10.0 - 1.0;
                (vec![x], usize::from(x > 0.05))
            })
            .collect();
        let borrowed: Vec<(&[f64], usize)> =
            pairs.iter().map(|(x, a)| (x.as_slice(), *a)).collect();
        set.push(demo_from(&borrowed, 0)).unwrap();
        let policy = behavior_cloning(&set, 2, &BcOptions::default()).unwrap();
        assert_eq!(policy.training_accuracy(&set), 1.0);
    }

    #[test]
    fn continuous_actions_are_rejected() {
        let mut set = DemonstrationSet::new("toy", 1);
        set.push(Demonstration {
            id: 0,
            steps: vec![
                StateActionPair { state: vec![0.0], action: Action::Continuous(vec![1.0]) },
                StateActionPair { state: vec![1.0], action: Action::Continuous(vec![0.0]) },
            ],
        })
        .unwrap();
        match behavior_cloning(&set, 2, &BcOptions::default()) {
            Err(Error::Config(msg)) => assert!(msg.contains("discrete")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut set = DemonstrationSet::new("toy", 1);
        let pairs: Vec<(Vec<f64>, usize)> =
            (0..12).map(|i| (vec![i as f64], i % 3)).collect();
        let borrowed: Vec<(&[f64], usize)> =
            pairs.iter().map(|(x, a)| (x.as_slice(), *a)).collect();
        set.push(demo_from(&borrowed, 0)).unwrap();
        let a = behavior_cloning(&set, 3, &BcOptions::default()).unwrap();
        let b = behavior_cloning(&set, 3, &BcOptions::default()).unwrap();
        assert_eq!(a.weights, b.weights);
    }
}

//! Unsupervised segmentation of demonstrations into a chain of sub-goals.
//!
//! The stage runs in two passes over featurized demonstrations:
//!
//! 1. **Transition detection** ([`identify_transitions`]): all window
//!    vectors from all demonstrations are clustered together; wherever the
//!    cluster label changes between consecutive windows of one demonstration,
//!    the local dynamics switched and the step is recorded as a transition.
//! 2. **Sub-goal extraction** ([`cluster_transitions`]): the states at the
//!    recorded transitions, augmented with scaled normalized time, are
//!    clustered again. Each cluster supported by enough demonstrations
//!    becomes a [`SubGoal`] (a Gaussian region plus a time interval), and the
//!    goals ordered by mean time form the [`GoalChain`].
//!
//! The chain is the hand-off to the encoding stage: progress through it is
//! what augments the environment state.

pub mod cluster;
pub mod kernel;
pub mod linear;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::trajectory::FeatureTrajectory;
use crate::{derive_seed, Error, Result};
use cluster::{build_clusterer, cluster_stats, ClusteringResult};
use kernel::KernelSpec;

pub use cluster::{default_lambda, dp_means, Clusterer, DpMeans, EmGmm};
pub use kernel::{kernel_embed, median_pairwise_distance, KernelKind};
pub use linear::{fit_joint_gaussian, JointGaussianFit};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How window vectors are presented to the clustering backend.
///
/// Clustering with a spherical metric (DP-means) sees a long straight-line
/// motion as an elongated streak of window vectors and happily splits it into
/// arbitrary spatial segments, producing phantom transitions mid-path. The
/// `Diff` representation clusters the *differences* between consecutive
/// points of each window instead: a dynamic regime (constant motion,
/// regulation toward a fixed point, idling) then maps to a compact blob, and
/// label changes line up with genuine regime switches. `Raw` keeps the plain
/// concatenated window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowRepr {
    Raw,
    Diff,
}

impl WindowRepr {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "raw" => Ok(WindowRepr::Raw),
            "diff" => Ok(WindowRepr::Diff),
            other => Err(Error::Config(format!("unknown window representation `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WindowRepr::Raw => "raw",
            WindowRepr::Diff => "diff",
        }
    }
}

/// Tunables for the segmentation stage.
#[derive(Debug, Clone)]
pub struct SegmentationConfig {
    /// Window length `l` (consecutive feature vectors per window).
    pub window: usize,
    /// Representation handed to the clustering backend.
    pub window_repr: WindowRepr,
    /// Clustering backend name (`dp-means` or `em-gmm`).
    pub backend: String,
    /// DP-means penalty; `None` selects the data-driven default.
    pub lambda: Option<f64>,
    /// Component count for `em-gmm`; ignored by `dp-means`.
    pub em_k: usize,
    /// Optional kernel embedding applied to windows before transition
    /// detection.
    pub kernel: Option<KernelSpec>,
    /// Scale `beta` on normalized time when clustering transition states.
    pub time_beta: f64,
    /// Minimum fraction of demonstrations that must support a sub-goal.
    pub min_support: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            window: 2,
            window_repr: WindowRepr::Diff,
            backend: "dp-means".to_string(),
            lambda: None,
            em_k: 0,
            kernel: None,
            time_beta: 1.0,
            min_support: 0.8,
        }
    }
}

// ---------------------------------------------------------------------------
// Transition detection
// ---------------------------------------------------------------------------

/// Steps at which the windowed dynamics switch cluster.
///
/// Each entry is `(demo_id, t)` with `t` the index of the earlier window's
/// final step, so `0 <= t < T_i - 1`. Entries are sorted and unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionSet {
    pub entries: Vec<(usize, usize)>,
}

impl TransitionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Clusters all windows and records the steps where consecutive windows of a
/// demonstration land in different clusters.
///
/// Every trajectory must be long enough to produce at least two windows
/// (length `>= window + 1`). If `cfg.kernel` is set the window vectors are
/// kernel-embedded first and clustering runs on the embedded coordinates.
pub fn identify_transitions(
    trajs: &[FeatureTrajectory],
    cfg: &SegmentationConfig,
    seed: u64,
) -> Result<TransitionSet> {
    if trajs.is_empty() {
        return Err(Error::EmptyInput("transition detection trajectories".into()));
    }
    for traj in trajs {
        if traj.len() < cfg.window + 1 {
            return Err(Error::Config(format!(
                "demonstration {} has {} steps; transition detection with window {} needs at least {}",
                traj.demo_id,
                traj.len(),
                cfg.window,
                cfg.window + 1
            )));
        }
    }

    if cfg.window_repr == WindowRepr::Diff && cfg.window < 2 {
        return Err(Error::Config(
            "diff window representation needs a window length of at least 2".into(),
        ));
    }

    let p = trajs[0].dim;
    let mut owners: Vec<(usize, usize)> = Vec::new();
    let mut gammas: Vec<DVector<f64>> = Vec::new();
    for traj in trajs {
        for w in crate::trajectory::windows(traj, cfg.window)? {
            owners.push((w.demo_id, w.t));
            let repr = match cfg.window_repr {
                WindowRepr::Raw => w.gamma,
                WindowRepr::Diff => {
                    let slots = cfg.window - 1;
                    let mut d = DVector::zeros(slots * p);
                    for s in 0..slots {
                        let newer = w.gamma.rows((s + 1) * p, p);
                        let older = w.gamma.rows(s * p, p);
                        d.rows_mut(s * p, p).copy_from(&(newer - older));
                    }
                    d
                }
            };
            gammas.push(repr);
        }
    }

    let points = match &cfg.kernel {
        Some(spec) => kernel_embed(&gammas, spec)?.0,
        None => gammas,
    };

    let clusterer = build_clusterer(&cfg.backend, cfg.lambda, cfg.em_k)?;
    let result = clusterer.cluster(&points, seed)?;

    let mut entries = Vec::new();
    for i in 1..owners.len() {
        let (demo_a, t_a) = owners[i - 1];
        let (demo_b, t_b) = owners[i];
        if demo_a == demo_b && t_b == t_a + 1 && result.labels[i] != result.labels[i - 1] {
            entries.push((demo_a, t_a));
        }
    }
    entries.sort_unstable();
    entries.dedup();
    Ok(TransitionSet { entries })
}

// ---------------------------------------------------------------------------
// Sub-goal extraction
// ---------------------------------------------------------------------------

/// One discovered sub-goal: a Gaussian region in feature space plus the
/// normalized-time interval over which demonstrations reached it.
#[derive(Debug, Clone)]
pub struct SubGoal {
    pub mu: DVector<f64>,
    /// Positive-definite covariance (regularized at construction).
    pub sigma: DMatrix<f64>,
    /// Mean normalized arrival time in `[0, 1]`.
    pub t_mean: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Fraction of demonstrations that reached this sub-goal.
    pub support: f64,
}

/// Sub-goals ordered by mean normalized arrival time.
#[derive(Debug, Clone, Default)]
pub struct GoalChain {
    pub goals: Vec<SubGoal>,
}

impl GoalChain {
    /// Number of sub-goals `k`.
    pub fn k(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    /// Feature dimension of the sub-goal regions (0 for an empty chain).
    pub fn dim(&self) -> usize {
        self.goals.first().map_or(0, |g| g.mu.len())
    }
}

/// Clusters transition states into the ordered sub-goal chain.
///
/// Each transition `(i, t)` contributes the point `[x_t; beta * t / T_i]`
/// (feature vector plus scaled normalized time). Within each resulting
/// cluster, multiple transitions from the same demonstration count once (the
/// earliest is kept), support is measured against the *total* number of
/// demonstrations, and clusters below `cfg.min_support` are dropped. The
/// surviving clusters become sub-goals ordered by mean arrival time; mean and
/// covariance are computed over the kept members' feature vectors (time
/// excluded) with the covariance regularized to be positive definite.
///
/// An empty transition set yields an empty chain, which downstream stages
/// treat as "no structure found".
pub fn cluster_transitions(
    theta: &TransitionSet,
    trajs: &[FeatureTrajectory],
    cfg: &SegmentationConfig,
    seed: u64,
) -> Result<GoalChain> {
    if trajs.is_empty() {
        return Err(Error::EmptyInput("sub-goal extraction trajectories".into()));
    }
    if theta.is_empty() {
        return Ok(GoalChain::default());
    }
    let by_id = |id: usize| -> Result<&FeatureTrajectory> {
        trajs
            .iter()
            .find(|tr| tr.demo_id == id)
            .ok_or_else(|| Error::Config(format!("transition references unknown demo {id}")))
    };

    let mut points = Vec::with_capacity(theta.len());
    for &(demo_id, t) in &theta.entries {
        let traj = by_id(demo_id)?;
        if t + 1 >= traj.len() {
            return Err(Error::Config(format!(
                "transition (demo {demo_id}, t {t}) out of range for length {}",
                traj.len()
            )));
        }
        let x = &traj.points[t];
        let mut y = DVector::zeros(x.len() + 1);
        y.rows_mut(0, x.len()).copy_from(x);
        y[x.len()] = cfg.time_beta * t as f64 / traj.len() as f64;
        points.push(y);
    }

    let clusterer = build_clusterer(&cfg.backend, cfg.lambda, cfg.em_k)?;
    let result = clusterer.cluster(&points, seed)?;

    let n_total = trajs.len();
    let p = trajs[0].dim;
    let mut goals = Vec::new();
    for c in 0..result.k() {
        // Earliest transition per demonstration within this cluster.
        let mut kept: Vec<(usize, usize)> = Vec::new();
        for (idx, &z) in result.labels.iter().enumerate() {
            if z != c {
                continue;
            }
            let (demo_id, t) = theta.entries[idx];
            match kept.iter_mut().find(|(d, _)| *d == demo_id) {
                Some(slot) => slot.1 = slot.1.min(t),
                None => kept.push((demo_id, t)),
            }
        }
        let support = kept.len() as f64 / n_total as f64;
        if support < cfg.min_support {
            continue;
        }

        let members: Vec<DVector<f64>> = kept
            .iter()
            .map(|&(demo_id, t)| {
                let traj = by_id(demo_id).expect("validated above");
                traj.points[t].clone()
            })
            .collect();
        let single = ClusteringResult {
            labels: vec![0; members.len()],
            centroids: vec![DVector::zeros(p)],
        };
        let (mu, sigma) = cluster_stats(&members, &single).pop().expect("one cluster");

        let times: Vec<f64> = kept
            .iter()
            .map(|&(demo_id, t)| {
                let traj = by_id(demo_id).expect("validated above");
                t as f64 / traj.len() as f64
            })
            .collect();
        let t_mean = times.iter().sum::<f64>() / times.len() as f64;
        let t_lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
        let t_hi = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        goals.push(SubGoal {
            mu,
            sigma,
            t_mean,
            t_lo,
            t_hi,
            support,
        });
    }
    goals.sort_by(|a, b| a.t_mean.partial_cmp(&b.t_mean).expect("times are finite"));
    Ok(GoalChain { goals })
}

/// Runs both segmentation passes with stage-derived seeds.
pub fn discover_chain(
    trajs: &[FeatureTrajectory],
    cfg: &SegmentationConfig,
    seed: u64,
) -> Result<GoalChain> {
    let theta = identify_transitions(trajs, cfg, derive_seed(seed, "segment.windows", 0))?;
    if theta.is_empty() {
        log::warn!("no dynamics transitions detected; sub-goal chain is empty");
    }
    cluster_transitions(&theta, trajs, cfg, derive_seed(seed, "segment.transitions", 0))
}

// ---------------------------------------------------------------------------
// Chain file format
// ---------------------------------------------------------------------------
//
//   goalchain v1 <k> <dim>
//   goal <i> support <s> t <mean> <lo> <hi>
//   mu <v_0> ... <v_{p-1}>
//   sigma <row j values>          (p lines)
//
// Floats use shortest round-trip formatting, so save -> load -> save is
// byte-identical.

/// Serializes a goal chain to its versioned text format.
pub fn save_chain(chain: &GoalChain, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "goalchain v1 {} {}", chain.k(), chain.dim())
        .expect("writing to a String cannot fail");
    for (i, g) in chain.goals.iter().enumerate() {
        writeln!(
            out,
            "goal {i} support {} t {} {} {}",
            g.support, g.t_mean, g.t_lo, g.t_hi
        )
        .expect("writing to a String cannot fail");
        let mu: Vec<String> = g.mu.iter().map(|x| format!("{x}")).collect();
        writeln!(out, "mu {}", mu.join(" ")).expect("writing to a String cannot fail");
        for r in 0..g.sigma.nrows() {
            let row: Vec<String> = (0..g.sigma.ncols())
                .map(|c| format!("{}", g.sigma[(r, c)]))
                .collect();
            writeln!(out, "sigma {}", row.join(" ")).expect("writing to a String cannot fail");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_floats(parts: &[&str], line: usize) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|tok| {
            tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad float `{tok}`"),
            })
        })
        .collect()
}

/// Loads a goal chain from its versioned text format.
pub fn load_chain(path: &Path) -> Result<GoalChain> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let head: Vec<&str> = header.split(' ').collect();
    if head.len() != 4 || head[0] != "goalchain" || head[1] != "v1" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad header `{header}`; expected `goalchain v1 <k> <dim>`"),
        });
    }
    let k: usize = head[2].parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("bad goal count `{}`", head[2]),
    })?;
    let dim: usize = head[3].parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("bad dimension `{}`", head[3]),
    })?;

    let mut goals = Vec::with_capacity(k);
    for i in 0..k {
        let (ln, goal_line) = lines.next().ok_or(Error::Parse {
            line: text.lines().count(),
            msg: format!("missing goal {i}"),
        })?;
        let parts: Vec<&str> = goal_line.split(' ').collect();
        if parts.len() != 8 || parts[0] != "goal" || parts[2] != "support" || parts[4] != "t" {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("bad goal line `{goal_line}`"),
            });
        }
        let support: f64 = parts[3].parse().map_err(|_| Error::Parse {
            line: ln + 1,
            msg: format!("bad support `{}`", parts[3]),
        })?;
        let ts = parse_floats(&parts[5..8], ln + 1)?;

        let (ln, mu_line) = lines.next().ok_or(Error::Parse {
            line: ln + 2,
            msg: format!("missing mu for goal {i}"),
        })?;
        let mu_parts: Vec<&str> = mu_line.split(' ').collect();
        if mu_parts.first() != Some(&"mu") || mu_parts.len() != dim + 1 {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("bad mu line `{mu_line}`"),
            });
        }
        let mu = DVector::from_vec(parse_floats(&mu_parts[1..], ln + 1)?);

        let mut sigma = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            let (ln, row_line) = lines.next().ok_or(Error::Parse {
                line: ln + 2,
                msg: format!("missing sigma row {r} for goal {i}"),
            })?;
            let row_parts: Vec<&str> = row_line.split(' ').collect();
            if row_parts.first() != Some(&"sigma") || row_parts.len() != dim + 1 {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("bad sigma line `{row_line}`"),
                });
            }
            let vals = parse_floats(&row_parts[1..], ln + 1)?;
            for (c, v) in vals.into_iter().enumerate() {
                sigma[(r, c)] = v;
            }
        }

        goals.push(SubGoal {
            mu,
            sigma,
            t_mean: ts[0],
            t_lo: ts[1],
            t_hi: ts[2],
            support,
        });
    }
    Ok(GoalChain { goals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{featurize, Action, Demonstration, FeaturizerSpec, StateActionPair};

    fn traj_from(id: usize, states: Vec<Vec<f64>>) -> FeatureTrajectory {
        let demo = Demonstration {
            id,
            steps: states
                .into_iter()
                .map(|s| StateActionPair {
                    state: s,
                    action: Action::Discrete(0),
                })
                .collect(),
        };
        featurize(&demo, &FeaturizerSpec::Identity).unwrap()
    }

    /// A 1-D trajectory that moves right then reverses at `turn`.
    fn out_and_back(id: usize, turn: usize, len: usize) -> FeatureTrajectory {
        let states = (0..len)
            .map(|t| {
                let x = if t <= turn { t as f64 } else { (2 * turn) as f64 - t as f64 };
                vec![x]
            })
            .collect();
        traj_from(id, states)
    }

    #[test]
    fn reversal_produces_one_transition_cluster() {
        let trajs: Vec<FeatureTrajectory> = (0..4).map(|i| out_and_back(i, 5, 11)).collect();
        let cfg = SegmentationConfig::default();
        let theta = identify_transitions(&trajs, &cfg, 0).unwrap();
        // Velocity flips exactly between the windows ending at t=5 and t=6.
        assert_eq!(theta.entries, vec![(0, 5), (1, 5), (2, 5), (3, 5)]);

        let chain = cluster_transitions(&theta, &trajs, &cfg, 1).unwrap();
        assert_eq!(chain.k(), 1);
        let g = &chain.goals[0];
        assert!((g.mu[0] - 5.0).abs() < 1e-12, "mu = {}", g.mu[0]);
        assert!((g.support - 1.0).abs() < 1e-12);
        assert!(g.t_lo <= g.t_mean && g.t_mean <= g.t_hi);
    }

    #[test]
    fn linear_kernel_embedding_preserves_transitions() {
        // A full-rank linear embedding is an isometry of the window
        // representations, so the clustering walk and hence the transition
        // set are unchanged.
        let trajs: Vec<FeatureTrajectory> = (0..4).map(|i| out_and_back(i, 5, 11)).collect();
        let raw_cfg = SegmentationConfig::default();
        let kernel_cfg = SegmentationConfig {
            kernel: Some(KernelSpec::parse("linear", 1).unwrap()),
            ..SegmentationConfig::default()
        };
        let raw = identify_transitions(&trajs, &raw_cfg, 42).unwrap();
        let embedded = identify_transitions(&trajs, &kernel_cfg, 42).unwrap();
        assert_eq!(raw, embedded);
        assert!(!raw.is_empty());
    }

    #[test]
    fn constant_dynamics_produce_no_transitions() {
        // Straight lines: every window differences to the same velocity,
        // so there is a single cluster and no transitions.
        let trajs: Vec<FeatureTrajectory> = (0..3)
            .map(|i| traj_from(i, (0..10).map(|t| vec![t as f64]).collect()))
            .collect();
        let cfg = SegmentationConfig::default();
        let theta = identify_transitions(&trajs, &cfg, 0).unwrap();
        assert!(theta.is_empty());
        let chain = cluster_transitions(&theta, &trajs, &cfg, 0).unwrap();
        assert!(chain.is_empty());
    }

    #[test]
    fn raw_windows_are_available_by_name() {
        assert_eq!(WindowRepr::parse("raw").unwrap(), WindowRepr::Raw);
        assert_eq!(WindowRepr::parse("diff").unwrap(), WindowRepr::Diff);
        assert!(WindowRepr::parse("fft").is_err());
        // Raw representation still detects a hard reversal when the penalty
        // is tuned to the window scale.
        let trajs: Vec<FeatureTrajectory> = (0..2).map(|i| out_and_back(i, 5, 11)).collect();
        let cfg = SegmentationConfig {
            window_repr: WindowRepr::Raw,
            lambda: Some(1.5),
            ..SegmentationConfig::default()
        };
        let theta = identify_transitions(&trajs, &cfg, 0).unwrap();
        assert!(theta.entries.contains(&(0, 5)) || theta.entries.contains(&(0, 4)));
    }

    #[test]
    fn low_support_clusters_are_pruned() {
        // Five demos reverse at 5; one lone demo also reverses at 20.
        let mut trajs: Vec<FeatureTrajectory> = (0..5).map(|i| out_and_back(i, 5, 11)).collect();
        let outlier = (0..41)
            .map(|t| {
                let x = if t <= 20 { t as f64 } else { 40.0 - t as f64 };
                vec![x]
            })
            .collect();
        trajs.push(traj_from(5, outlier));

        let cfg = SegmentationConfig::default();
        let theta = identify_transitions(&trajs, &cfg, 0).unwrap();
        let chain = cluster_transitions(&theta, &trajs, &cfg, 1).unwrap();
        // The shared turn survives; the outlier's lone turn (support 1/6)
        // falls below min_support = 0.8.
        assert_eq!(chain.k(), 1);
        assert!((chain.goals[0].mu[0] - 5.0).abs() < 1.1);
    }

    #[test]
    fn duplicate_transitions_from_one_demo_count_once() {
        let trajs: Vec<FeatureTrajectory> = (0..2).map(|i| out_and_back(i, 5, 11)).collect();
        // Hand-build a transition set where demo 0 fires twice near the turn.
        let theta = TransitionSet {
            entries: vec![(0, 4), (0, 5), (1, 5)],
        };
        let cfg = SegmentationConfig {
            lambda: Some(100.0), // everything in one cluster
            ..SegmentationConfig::default()
        };
        let chain = cluster_transitions(&theta, &trajs, &cfg, 0).unwrap();
        assert_eq!(chain.k(), 1);
        // Demo 0 keeps its earliest entry (t=4, x=4); demo 1 keeps t=5 (x=5).
        assert!((chain.goals[0].mu[0] - 4.5).abs() < 1e-12);
        assert!((chain.goals[0].support - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_save_load_round_trip() {
        let trajs: Vec<FeatureTrajectory> = (0..4).map(|i| out_and_back(i, 5, 11)).collect();
        let chain = discover_chain(&trajs, &SegmentationConfig::default(), 3).unwrap();
        assert!(!chain.is_empty());

        let dir = std::env::temp_dir().join("hirl-segmentation-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("chain.goals");
        save_chain(&chain, &path).unwrap();
        let loaded = load_chain(&path).unwrap();
        assert_eq!(loaded.k(), chain.k());
        for (a, b) in chain.goals.iter().zip(&loaded.goals) {
            assert_eq!(a.mu, b.mu);
            assert_eq!(a.sigma, b.sigma);
            assert_eq!(a.t_mean, b.t_mean);
            assert_eq!(a.support, b.support);
        }
        // Byte-stable re-serialization.
        let bytes = std::fs::read(&path).unwrap();
        save_chain(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn empty_chain_round_trips() {
        let dir = std::env::temp_dir().join("hirl-segmentation-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.goals");
        save_chain(&GoalChain::default(), &path).unwrap();
        let loaded = load_chain(&path).unwrap();
        assert!(loaded.is_empty());
    }
}

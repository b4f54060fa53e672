//! Demonstration trajectories, feature maps, and window extraction.
//!
//! A demonstration is an ordered sequence of state/action pairs recorded from
//! an expert. Before segmentation the states are pushed through a featurizer
//! (selected by name) and the resulting feature trajectory is sliced into
//! overlapping windows `gamma(t) = [x_{t-l+1}; ...; x_t]` of `l` consecutive
//! feature vectors. Windows are what the segmentation stage clusters.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Core types
// ---------------------------------------------------------------------------

/// An action taken by the demonstrator.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Index into a finite action set.
    Discrete(usize),
    /// Raw control vector.
    Continuous(Vec<f64>),
}

/// One recorded step: the state observed and the action taken in it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionPair {
    pub state: Vec<f64>,
    pub action: Action,
}

/// A single demonstration trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    /// Identifier unique within its [`DemonstrationSet`].
    pub id: usize,
    pub steps: Vec<StateActionPair>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A collection of demonstrations recorded in one environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemonstrationSet {
    /// Environment the demonstrations were recorded in.
    pub env_name: String,
    /// Dimension of every recorded state vector.
    pub state_dim: usize,
    pub demos: Vec<Demonstration>,
}

impl DemonstrationSet {
    pub fn new(env_name: &str, state_dim: usize) -> Self {
        DemonstrationSet {
            env_name: env_name.to_string(),
            state_dim,
            demos: Vec::new(),
        }
    }

    /// Appends a demonstration, enforcing the set invariants: at least two
    /// steps, consistent state dimension, and a fresh id.
    pub fn push(&mut self, demo: Demonstration) -> Result<()> {
        if demo.len() < 2 {
            return Err(Error::Config(format!(
                "demonstration {} has {} steps; need at least 2",
                demo.id,
                demo.len()
            )));
        }
        for pair in &demo.steps {
            if pair.state.len() != self.state_dim {
                return Err(Error::DimensionMismatch {
                    what: format!("demonstration {} state", demo.id),
                    expected: self.state_dim,
                    got: pair.state.len(),
                });
            }
        }
        if self.demos.iter().any(|d| d.id == demo.id) {
            return Err(Error::Config(format!("duplicate demonstration id {}", demo.id)));
        }
        self.demos.push(demo);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }
}

/// A demonstration after featurization: one feature vector per step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrajectory {
    /// Id of the demonstration this trajectory came from.
    pub demo_id: usize,
    pub points: Vec<DVector<f64>>,
    /// Dimension of every feature vector.
    pub dim: usize,
}

impl FeatureTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A window of `l` consecutive feature vectors, flattened oldest-first.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowVector {
    pub demo_id: usize,
    /// Index (within the trajectory) of the *last* step in the window.
    pub t: usize,
    /// Flattened window `[x_{t-l+1}; ...; x_t]`.
    pub gamma: DVector<f64>,
}

// ---------------------------------------------------------------------------
// Featurizers
// ---------------------------------------------------------------------------

/// A named state(/action) feature map, selected at runtime.
///
/// Featurizers are registered by name so configuration files and the CLI can
/// pick them without code changes:
///
/// * `identity` - the raw state vector.
/// * `identity+action:<n>` - raw state concatenated with a one-hot encoding
///   of a discrete action from a set of size `n`.
/// * `project:<i,j,...>` - the listed state coordinates, in the given order.
/// * `polar` - `[r, phi]` of the first two state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum FeaturizerSpec {
    Identity,
    IdentityOneHotAction { num_actions: usize },
    Project(Vec<usize>),
    Polar,
}

impl FeaturizerSpec {
    /// Parses a featurizer name as used in config files.
    pub fn parse(name: &str) -> Result<Self> {
        if name == "identity" {
            return Ok(FeaturizerSpec::Identity);
        }
        if name == "polar" {
            return Ok(FeaturizerSpec::Polar);
        }
        if let Some(n) = name.strip_prefix("identity+action:") {
            let num_actions: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("bad action count in featurizer `{name}`")))?;
            if num_actions == 0 {
                return Err(Error::Config("featurizer action count must be positive".into()));
            }
            return Ok(FeaturizerSpec::IdentityOneHotAction { num_actions });
        }
        if let Some(list) = name.strip_prefix("project:") {
            let mut idx = Vec::new();
            for part in list.split(',') {
                let i: usize = part
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad index `{part}` in featurizer `{name}`")))?;
                idx.push(i);
            }
            if idx.is_empty() {
                return Err(Error::Config("project featurizer needs at least one index".into()));
            }
            return Ok(FeaturizerSpec::Project(idx));
        }
        Err(Error::Config(format!("unknown featurizer `{name}`")))
    }

    /// Canonical name, parseable by [`FeaturizerSpec::parse`].
    pub fn name(&self) -> String {
        match self {
            FeaturizerSpec::Identity => "identity".to_string(),
            FeaturizerSpec::IdentityOneHotAction { num_actions } => {
                format!("identity+action:{num_actions}")
            }
            FeaturizerSpec::Project(idx) => {
                let list: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                format!("project:{}", list.join(","))
            }
            FeaturizerSpec::Polar => "polar".to_string(),
        }
    }

    /// Output dimension for states of dimension `state_dim`.
    pub fn output_dim(&self, state_dim: usize) -> usize {
        match self {
            FeaturizerSpec::Identity => state_dim,
            FeaturizerSpec::IdentityOneHotAction { num_actions } => state_dim + num_actions,
            FeaturizerSpec::Project(idx) => idx.len(),
            FeaturizerSpec::Polar => 2,
        }
    }

    /// Applies the feature map to one state/action pair.
    pub fn apply(&self, state: &[f64], action: &Action) -> Result<DVector<f64>> {
        match self {
            FeaturizerSpec::Identity => Ok(DVector::from_column_slice(state)),
            FeaturizerSpec::IdentityOneHotAction { num_actions } => {
                let a = match action {
                    Action::Discrete(a) => *a,
                    Action::Continuous(_) => {
                        return Err(Error::Config(
                            "identity+action featurizer needs discrete actions".into(),
                        ))
                    }
                };
                if a >= *num_actions {
                    return Err(Error::Config(format!(
                        "action {a} out of range for {num_actions} actions"
                    )));
                }
                let mut v = DVector::zeros(state.len() + num_actions);
                for (i, x) in state.iter().enumerate() {
                    v[i] = *x;
                }
                v[state.len() + a] = 1.0;
                Ok(v)
            }
            FeaturizerSpec::Project(idx) => {
                let mut v = DVector::zeros(idx.len());
                for (j, &i) in idx.iter().enumerate() {
                    let x = state.get(i).ok_or_else(|| Error::DimensionMismatch {
                        what: "project featurizer index".into(),
                        expected: i + 1,
                        got: state.len(),
                    })?;
                    v[j] = *x;
                }
                Ok(v)
            }
            FeaturizerSpec::Polar => {
                if state.len() < 2 {
                    return Err(Error::DimensionMismatch {
                        what: "polar featurizer state".into(),
                        expected: 2,
                        got: state.len(),
                    });
                }
                let (x, y) = (state[0], state[1]);
                Ok(DVector::from_column_slice(&[x.hypot(y), y.atan2(x)]))
            }
        }
    }
}

/// Featurizes every step of a demonstration.
pub fn featurize(demo: &Demonstration, spec: &FeaturizerSpec) -> Result<FeatureTrajectory> {
    if demo.is_empty() {
        return Err(Error::EmptyInput(format!("demonstration {}", demo.id)));
    }
    let mut points = Vec::with_capacity(demo.len());
    for pair in &demo.steps {
        points.push(spec.apply(&pair.state, &pair.action)?);
    }
    let dim = points[0].len();
    Ok(FeatureTrajectory {
        demo_id: demo.id,
        points,
        dim,
    })
}

/// Slices a feature trajectory into overlapping windows of length `l`.
///
/// A trajectory of `T` points yields `T - l + 1` windows; window `t` covers
/// steps `t-l+1 ..= t` and is flattened oldest-first, so consecutive windows
/// overlap in `l - 1` points. Trajectories shorter than `l` are an error.
pub fn windows(traj: &FeatureTrajectory, l: usize) -> Result<Vec<WindowVector>> {
    if l == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    if traj.len() < l {
        return Err(Error::Config(format!(
            "demonstration {} has {} steps but the window length is {l}",
            traj.demo_id,
            traj.len()
        )));
    }
    let p = traj.dim;
    let mut out = Vec::with_capacity(traj.len() - l + 1);
    for t in (l - 1)..traj.len() {
        let mut gamma = DVector::zeros(l * p);
        for (slot, point) in traj.points[t + 1 - l..=t].iter().enumerate() {
            gamma.rows_mut(slot * p, p).copy_from(point);
        }
        out.push(WindowVector {
            demo_id: traj.demo_id,
            t,
            gamma,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------
//
// Demonstration sets are stored line-delimited:
//
//   demoset v1 <env_name> <state_dim>
//   <demo_id> <step> <x_0> ... <x_{p-1}> a:<index>       (discrete action)
//   <demo_id> <step> <x_0> ... <x_{p-1}> u:<f_0>,<f_1>   (continuous action)
//
// Fields are single-space separated; floats use Rust's shortest round-trip
// formatting so that load(save(s)) is bit-exact and save(load(f)) is
// byte-identical for canonically formatted files. A zero-byte file is read
// as the empty set, and saving a fully empty set writes a zero-byte file.

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Serializes a demonstration set to the line-delimited text format.
pub fn save_demonstrations(set: &DemonstrationSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    if !(set.demos.is_empty() && set.env_name.is_empty() && set.state_dim == 0) {
        writeln!(out, "demoset v1 {} {}", set.env_name, set.state_dim)
            .expect("writing to a String cannot fail");
        for demo in &set.demos {
            for (step, pair) in demo.steps.iter().enumerate() {
                write!(out, "{} {}", demo.id, step).expect("writing to a String cannot fail");
                for x in &pair.state {
                    write!(out, " {}", fmt_f64(*x)).expect("writing to a String cannot fail");
                }
                match &pair.action {
                    Action::Discrete(a) => write!(out, " a:{a}"),
                    Action::Continuous(u) => {
                        let parts: Vec<String> = u.iter().map(|x| fmt_f64(*x)).collect();
                        write!(out, " u:{}", parts.join(","))
                    }
                }
                .expect("writing to a String cannot fail");
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_action(token: &str, line: usize) -> Result<Action> {
    if let Some(a) = token.strip_prefix("a:") {
        let idx = a.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad discrete action `{token}`"),
        })?;
        return Ok(Action::Discrete(idx));
    }
    if let Some(u) = token.strip_prefix("u:") {
        let mut vals = Vec::new();
        for part in u.split(',') {
            let x: f64 = part.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad control value `{part}`"),
            })?;
            vals.push(x);
        }
        return Ok(Action::Continuous(vals));
    }
    Err(Error::Parse {
        line,
        msg: format!("expected action token `a:<n>` or `u:<...>`, got `{token}`"),
    })
}

/// Loads a demonstration set from the line-delimited text format.
///
/// Parse failures report the 1-based line number. Steps of one demonstration
/// must be contiguous and numbered from zero.
pub fn load_demonstrations(path: &Path) -> Result<DemonstrationSet> {
    let text = std::fs::read_to_string(path)?;
    if text.is_empty() {
        return Ok(DemonstrationSet::default());
    }
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let head: Vec<&str> = header.split(' ').collect();
    if head.len() != 4 || head[0] != "demoset" || head[1] != "v1" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad header `{header}`; expected `demoset v1 <env> <dim>`"),
        });
    }
    let env_name = head[2].to_string();
    let state_dim: usize = head[3].parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("bad state dimension `{}`", head[3]),
    })?;

    let mut set = DemonstrationSet::new(&env_name, state_dim);
    let mut current: Option<Demonstration> = None;
    for (i, raw) in lines {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = raw.split(' ').collect();
        if tokens.len() != state_dim + 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", state_dim + 3, tokens.len()),
            });
        }
        let demo_id: usize = tokens[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad demo id `{}`", tokens[0]),
        })?;
        let step: usize = tokens[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad step index `{}`", tokens[1]),
        })?;
        let mut state = Vec::with_capacity(state_dim);
        for tok in &tokens[2..2 + state_dim] {
            let x: f64 = tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad state value `{tok}`"),
            })?;
            state.push(x);
        }
        let action = parse_action(tokens[2 + state_dim], line)?;

        let start_new = match &current {
            None => true,
            Some(d) => d.id != demo_id,
        };
        if start_new {
            if let Some(done) = current.take() {
                set.push(done).map_err(|e| Error::Parse {
                    line,
                    msg: e.to_string(),
                })?;
            }
            if step != 0 {
                return Err(Error::Parse {
                    line,
                    msg: format!("demo {demo_id} starts at step {step}, expected 0"),
                });
            }
            current = Some(Demonstration {
                id: demo_id,
                steps: Vec::new(),
            });
        }
        let demo = current.as_mut().expect("demo was just created");
        if step != demo.steps.len() {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "demo {demo_id} step {step} out of order, expected {}",
                    demo.steps.len()
                ),
            });
        }
        demo.steps.push(StateActionPair { state, action });
    }
    if let Some(done) = current.take() {
        let line = text.lines().count();
        set.push(done).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(id: usize, states: &[&[f64]]) -> Demonstration {
        Demonstration {
            id,
            steps: states
                .iter()
                .map(|s| StateActionPair {
                    state: s.to_vec(),
                    action: Action::Discrete(0),
                })
                .collect(),
        }
    }

    #[test]
    fn identity_featurizer_copies_state() {
        let d = demo(0, &[&[1.0, 2.0], &[3.0, 4.0]]);
        let traj = featurize(&d, &FeaturizerSpec::Identity).unwrap();
        assert_eq!(traj.dim, 2);
        assert_eq!(traj.points[1].as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn one_hot_action_featurizer() {
        let d = Demonstration {
            id: 0,
            steps: vec![StateActionPair {
                state: vec![0.5],
                action: Action::Discrete(2),
            }],
        };
        let spec = FeaturizerSpec::parse("identity+action:4").unwrap();
        assert_eq!(spec.output_dim(1), 5);
        let traj = featurize(&d, &spec).unwrap();
        assert_eq!(traj.points[0].as_slice(), &[0.5, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn project_featurizer_reorders() {
        let spec = FeaturizerSpec::parse("project:2,0").unwrap();
        let v = spec.apply(&[10.0, 20.0, 30.0], &Action::Discrete(0)).unwrap();
        assert_eq!(v.as_slice(), &[30.0, 10.0]);
    }

    #[test]
    fn polar_featurizer_matches_hand_computation() {
        let spec = FeaturizerSpec::Polar;
        let v = spec.apply(&[3.0, 4.0], &Action::Discrete(0)).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-12);
        assert!((v[1] - (4.0f64).atan2(3.0)).abs() < 1e-12);
    }

    #[test]
    fn featurizer_names_round_trip() {
        for name in ["identity", "identity+action:6", "project:0,3,1", "polar"] {
            let spec = FeaturizerSpec::parse(name).unwrap();
            assert_eq!(spec.name(), name);
        }
        assert!(FeaturizerSpec::parse("rbf-net").is_err());
    }

    #[test]
    fn windows_overlap_and_flatten_oldest_first() {
        let d = demo(3, &[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let traj = featurize(&d, &FeaturizerSpec::Identity).unwrap();
        let w = windows(&traj, 2).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].t, 1);
        assert_eq!(w[0].gamma.as_slice(), &[0.0, 1.0]);
        assert_eq!(w[2].gamma.as_slice(), &[2.0, 3.0]);
        assert!(w.iter().all(|wv| wv.demo_id == 3));
    }

    #[test]
    fn window_length_one_reproduces_points() {
        let d = demo(0, &[&[5.0, 6.0], &[7.0, 8.0]]);
        let traj = featurize(&d, &FeaturizerSpec::Identity).unwrap();
        let w = windows(&traj, 1).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].t, 0);
        assert_eq!(w[1].gamma.as_slice(), &[7.0, 8.0]);
    }

    #[test]
    fn windows_reject_short_trajectories() {
        let d = demo(0, &[&[0.0], &[1.0]]);
        let traj = featurize(&d, &FeaturizerSpec::Identity).unwrap();
        assert!(windows(&traj, 3).is_err());
        assert!(windows(&traj, 0).is_err());
    }

    #[test]
    fn set_rejects_short_and_duplicate_demos() {
        let mut set = DemonstrationSet::new("test", 1);
        assert!(set.push(demo(0, &[&[0.0]])).is_err());
        set.push(demo(0, &[&[0.0], &[1.0]])).unwrap();
        assert!(set.push(demo(0, &[&[0.0], &[1.0]])).is_err());
        assert!(set.push(demo(1, &[&[0.0, 1.0], &[1.0, 2.0]])).is_err());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = std::env::temp_dir().join("hirl-trajectory-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.demos");

        let mut set = DemonstrationSet::new("parking-fo", 2);
        set.push(Demonstration {
            id: 0,
            steps: vec![
                StateActionPair {
                    state: vec![0.1, -2.5],
                    action: Action::Discrete(3),
                },
                StateActionPair {
                    state: vec![1.0 / 3.0, 7.25e-4],
                    action: Action::Continuous(vec![0.5, -0.125]),
                },
            ],
        })
        .unwrap();
        set.push(demo(1, &[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();

        save_demonstrations(&set, &path).unwrap();
        let loaded = load_demonstrations(&path).unwrap();
        assert_eq!(loaded, set);

        // A second save must be byte-identical.
        let bytes = std::fs::read(&path).unwrap();
        save_demonstrations(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn empty_file_loads_as_empty_set() {
        let dir = std::env::temp_dir().join("hirl-trajectory-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.demos");
        std::fs::write(&path, "").unwrap();
        let set = load_demonstrations(&path).unwrap();
        assert!(set.is_empty());
        save_demonstrations(&set, &path).unwrap();
        assert!(std::fs::read(&path).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = std::env::temp_dir().join("hirl-trajectory-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.demos");
        std::fs::write(&path, "demoset v1 grid 2\n0 0 1.0 2.0 a:0\n0 1 1.0 oops a:0\n").unwrap();
        match load_demonstrations(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

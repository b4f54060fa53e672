//! Grid environments: two-goal gridworld, corridor maze, and two-rooms.
//!
//! Maps are plain text: `#` wall, `.` free, `S` start, `0` and `1` goal
//! cells. What the goals mean depends on the task:
//!
//! * `gridworld-two-goals` - visit `0`, then reach `1`. Entering `1` always
//!   ends the episode; the reward is 1 only if `0` was visited first. The
//!   wall between the two halves has a single passage, and `0` and `1` lie on
//!   opposite sides of the start, so any successful route crosses the same
//!   cells in both directions — a stationary policy over raw positions
//!   cannot do that, which is exactly what progress augmentation fixes.
//! * `maze` - reach `1` through a corridor maze whose free cells form a
//!   tree, so the successful path is unique.
//! * `two-rooms` - visit `0` in the far room, then return to the start
//!   cell, which ends the episode with reward 1.
//!
//! Observations are `[x, y]` cell coordinates; the tabular index is
//! `y * width + x`. Moves into walls or off the map leave the agent in
//! place. The visited-`0` flag is internal to the environment (it shows up
//! in the true reward, never in the observation).

use crate::trajectory::{Action, Demonstration, DemonstrationSet, StateActionPair};
use crate::{Error, Result};

use super::{Environment, Step};

// ---------------------------------------------------------------------------
// Maps
// ---------------------------------------------------------------------------

pub const TWO_GOALS_MAP: &str = "\
###############
#......#......#
#......#......#
#......#......#
#......#......#
#......#......#
#......#......#
#1..S......0..#
#......#......#
#......#......#
#......#......#
#......#......#
#......#......#
#......#......#
###############
";

pub const MAZE_MAP: &str = "\
###########
#S........#
#########.#
#.........#
#.#########
#.........#
#########.#
#.........#
#1#########
###########
";

pub const TWO_ROOMS_MAP: &str = "\
#########
#...#...#
#...#...#
#...#...#
#..S.0..#
#...#...#
#...#...#
#...#...#
#########
";

/// Six free cells in a row; the smallest solvable task, handy for smoke
/// tests.
pub const CORRIDOR_MAP: &str = "\
########
#S....1#
########
";

/// A parsed grid map.
#[derive(Debug, Clone)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    free: Vec<bool>,
    pub start: (usize, usize),
    pub goal0: Option<(usize, usize)>,
    pub goal1: Option<(usize, usize)>,
}

impl GridMap {
    /// Parses a map, requiring a rectangular layout, exactly one `S`, and at
    /// most one each of `0` and `1`. Every free cell must be reachable from
    /// the start.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 1,
                msg: "empty map".into(),
            });
        }
        let width = rows[0].len();
        let height = rows.len();
        let mut free = vec![false; width * height];
        let mut start = None;
        let mut goal0 = None;
        let mut goal1 = None;
        for (y, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Parse {
                    line: y + 1,
                    msg: format!("row width {} differs from {}", row.len(), width),
                });
            }
            for (x, c) in row.chars().enumerate() {
                match c {
                    '#' => {}
                    '.' => free[y * width + x] = true,
                    'S' => {
                        if start.replace((x, y)).is_some() {
                            return Err(Error::Parse {
                                line: y + 1,
                                msg: "multiple start cells".into(),
                            });
                        }
                        free[y * width + x] = true;
                    }
                    '0' => {
                        if goal0.replace((x, y)).is_some() {
                            return Err(Error::Parse {
                                line: y + 1,
                                msg: "multiple `0` goals".into(),
                            });
                        }
                        free[y * width + x] = true;
                    }
                    '1' => {
                        if goal1.replace((x, y)).is_some() {
                            return Err(Error::Parse {
                                line: y + 1,
                                msg: "multiple `1` goals".into(),
                            });
                        }
                        free[y * width + x] = true;
                    }
                    other => {
                        return Err(Error::Parse {
                            line: y + 1,
                            msg: format!("unexpected map character `{other}`"),
                        })
                    }
                }
            }
        }
        let start = start.ok_or(Error::Parse {
            line: 1,
            msg: "map has no start cell".into(),
        })?;
        let map = GridMap {
            width,
            height,
            free,
            start,
            goal0,
            goal1,
        };
        map.check_connected()?;
        Ok(map)
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.free[y * self.width + x]
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(move |&(x, y)| self.is_free(x, y))
    }

    /// Flood fill from the start; errors if any free cell is unreachable.
    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.width * self.height];
        let mut stack = vec![self.start];
        seen[self.start.1 * self.width + self.start.0] = true;
        while let Some((x, y)) = stack.pop() {
            for (nx, ny) in neighbors(x, y) {
                if self.is_free(nx, ny) && !seen[ny * self.width + nx] {
                    seen[ny * self.width + nx] = true;
                    stack.push((nx, ny));
                }
            }
        }
        for (x, y) in self.free_cells() {
            if !seen[y * self.width + x] {
                return Err(Error::Env(format!("free cell ({x}, {y}) unreachable from start")));
            }
        }
        Ok(())
    }

    /// Shortest path between two free cells (breadth-first search), returned
    /// as the sequence of cells including both endpoints. Tie-breaking is
    /// fixed by the action order, so the path is deterministic.
    pub fn shortest_path(
        &self,
        from: (usize, usize),
        to: (usize, usize),
    ) -> Result<Vec<(usize, usize)>> {
        let idx = |(x, y): (usize, usize)| y * self.width + x;
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.width * self.height];
        let mut seen = vec![false; self.width * self.height];
        let mut queue = std::collections::VecDeque::new();
        seen[idx(from)] = true;
        queue.push_back(from);
        while let Some((x, y)) = queue.pop_front() {
            if (x, y) == to {
                let mut path = vec![to];
                let mut cur = to;
                while let Some(p) = prev[idx(cur)] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Ok(path);
            }
            for (nx, ny) in neighbors(x, y) {
                if self.is_free(nx, ny) && !seen[idx((nx, ny))] {
                    seen[idx((nx, ny))] = true;
                    prev[idx((nx, ny))] = Some((x, y));
                    queue.push_back((nx, ny));
                }
            }
        }
        Err(Error::Env(format!("no path from {from:?} to {to:?}")))
    }
}

/// Action order: up, down, left, right.
pub const GRID_ACTIONS: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

fn neighbors(x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> {
    GRID_ACTIONS.iter().filter_map(move |&(dx, dy)| {
        let nx = x.checked_add_signed(dx)?;
        let ny = y.checked_add_signed(dy)?;
        Some((nx, ny))
    })
}

fn action_between(from: (usize, usize), to: (usize, usize)) -> usize {
    let dx = to.0 as isize - from.0 as isize;
    let dy = to.1 as isize - from.1 as isize;
    GRID_ACTIONS
        .iter()
        .position(|&d| d == (dx, dy))
        .expect("path steps are unit moves")
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

/// Task semantics layered on a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridTask {
    /// Visit `0`, then enter `1` (terminal either way; reward needs order).
    TwoGoalsSequential,
    /// Enter `1` (terminal, reward 1).
    SingleGoal,
    /// Visit `0`, then return to the start cell (terminal, reward 1).
    OutAndBack,
}

pub struct GridEnv {
    map: GridMap,
    task: GridTask,
    horizon: usize,
    name: String,
    pos: (usize, usize),
    t: usize,
    done: bool,
    visited0: bool,
}

impl GridEnv {
    pub fn new(map: GridMap, task: GridTask, horizon: usize, name: &str) -> Result<Self> {
        match task {
            GridTask::TwoGoalsSequential => {
                if map.goal0.is_none() || map.goal1.is_none() {
                    return Err(Error::Env("two-goal task needs `0` and `1` cells".into()));
                }
            }
            GridTask::SingleGoal => {
                if map.goal1.is_none() {
                    return Err(Error::Env("single-goal task needs a `1` cell".into()));
                }
            }
            GridTask::OutAndBack => {
                if map.goal0.is_none() {
                    return Err(Error::Env("out-and-back task needs a `0` cell".into()));
                }
            }
        }
        let pos = map.start;
        Ok(GridEnv {
            map,
            task,
            horizon,
            name: name.to_string(),
            pos,
            t: 0,
            done: true,
            visited0: false,
        })
    }

    pub fn two_goals() -> Result<Self> {
        GridEnv::new(
            GridMap::parse(TWO_GOALS_MAP)?,
            GridTask::TwoGoalsSequential,
            60,
            "gridworld-two-goals",
        )
    }

    pub fn maze() -> Result<Self> {
        GridEnv::new(GridMap::parse(MAZE_MAP)?, GridTask::SingleGoal, 100, "maze")
    }

    pub fn two_rooms() -> Result<Self> {
        GridEnv::new(GridMap::parse(TWO_ROOMS_MAP)?, GridTask::OutAndBack, 50, "two-rooms")
    }

    pub fn corridor() -> Result<Self> {
        GridEnv::new(GridMap::parse(CORRIDOR_MAP)?, GridTask::SingleGoal, 20, "corridor")
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn task(&self) -> GridTask {
        self.task
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos.0 as f64, self.pos.1 as f64]
    }

    /// Applies task rules after arriving at `pos`; returns (reward, done,
    /// success).
    fn arrival(&mut self) -> (f64, bool, bool) {
        match self.task {
            GridTask::TwoGoalsSequential => {
                if Some(self.pos) == self.map.goal0 {
                    self.visited0 = true;
                }
                if Some(self.pos) == self.map.goal1 {
                    let ok = self.visited0;
                    return (f64::from(ok), true, ok);
                }
                (0.0, false, false)
            }
            GridTask::SingleGoal => {
                if Some(self.pos) == self.map.goal1 {
                    (1.0, true, true)
                } else {
                    (0.0, false, false)
                }
            }
            GridTask::OutAndBack => {
                if Some(self.pos) == self.map.goal0 {
                    self.visited0 = true;
                }
                if self.visited0 && self.pos == self.map.start {
                    (1.0, true, true)
                } else {
                    (0.0, false, false)
                }
            }
        }
    }
}

impl Environment for GridEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_actions(&self) -> usize {
        GRID_ACTIONS.len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn obs_bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (0.0, (self.map.width - 1) as f64),
            (0.0, (self.map.height - 1) as f64),
        ]
    }

    fn num_states(&self) -> Option<u64> {
        Some((self.map.width * self.map.height) as u64)
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = self.map.start;
        self.t = 0;
        self.done = false;
        self.visited0 = false;
        self.obs()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::Env("step on a finished episode".into()));
        }
        let (dx, dy) = *GRID_ACTIONS
            .get(action)
            .ok_or_else(|| Error::Env(format!("action {action} out of range")))?;
        let nx = self.pos.0.checked_add_signed(dx);
        let ny = self.pos.1.checked_add_signed(dy);
        if let (Some(nx), Some(ny)) = (nx, ny) {
            if self.map.is_free(nx, ny) {
                self.pos = (nx, ny);
            }
        }
        self.t += 1;
        let (reward, mut done, success) = self.arrival();
        if self.t >= self.horizon {
            done = true;
        }
        self.done = done;
        Ok(Step {
            obs: self.obs(),
            reward,
            done,
            success,
        })
    }

    fn state_index(&self) -> Option<u64> {
        Some((self.pos.1 * self.map.width + self.pos.0) as u64)
    }

    fn set_state(&mut self, obs: &[f64]) -> Result<()> {
        if obs.len() != 2 {
            return Err(Error::DimensionMismatch {
                what: "grid set_state".into(),
                expected: 2,
                got: obs.len(),
            });
        }
        let (x, y) = (obs[0].round() as isize, obs[1].round() as isize);
        if x < 0 || y < 0 || !self.map.is_free(x as usize, y as usize) {
            return Err(Error::Env(format!("({x}, {y}) is not a free cell")));
        }
        self.pos = (x as usize, y as usize);
        self.t = 0;
        self.done = false;
        self.visited0 = false;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scripted experts
// ---------------------------------------------------------------------------

fn path_to_demo(id: usize, legs: &[Vec<(usize, usize)>]) -> Demonstration {
    let mut steps = Vec::new();
    for leg in legs {
        for w in leg.windows(2) {
            steps.push(StateActionPair {
                state: vec![w[0].0 as f64, w[0].1 as f64],
                action: Action::Discrete(action_between(w[0], w[1])),
            });
        }
    }
    Demonstration { id, steps }
}

/// Scripted shortest-path demonstrations for the grid tasks.
///
/// The experts follow breadth-first shortest paths between the task's
/// waypoints; ties break on the fixed action order, so all demonstrations of
/// a task are identical (the environments are deterministic). The final
/// terminal arrival state is not recorded — steps exist only where an action
/// was taken.
pub fn generate_demos(env_name: &str, n: usize, _seed: u64) -> Result<DemonstrationSet> {
    let (map, legs): (GridMap, Vec<Vec<(usize, usize)>>) = match env_name {
        "gridworld-two-goals" => {
            let map = GridMap::parse(TWO_GOALS_MAP)?;
            let g0 = map.goal0.expect("map has `0`");
            let g1 = map.goal1.expect("map has `1`");
            let out = map.shortest_path(map.start, g0)?;
            let back = map.shortest_path(g0, g1)?;
            (map, vec![out, back])
        }
        "maze" => {
            let map = GridMap::parse(MAZE_MAP)?;
            let g1 = map.goal1.expect("map has `1`");
            let path = map.shortest_path(map.start, g1)?;
            (map, vec![path])
        }
        "corridor" => {
            let map = GridMap::parse(CORRIDOR_MAP)?;
            let g1 = map.goal1.expect("map has `1`");
            let path = map.shortest_path(map.start, g1)?;
            (map, vec![path])
        }
        "two-rooms" => {
            let map = GridMap::parse(TWO_ROOMS_MAP)?;
            let g0 = map.goal0.expect("map has `0`");
            let out = map.shortest_path(map.start, g0)?;
            let back = map.shortest_path(g0, map.start)?;
            (map, vec![out, back])
        }
        other => return Err(Error::Config(format!("no grid expert for `{other}`"))),
    };
    let _ = &map;
    let mut set = DemonstrationSet::new(env_name, 2);
    for id in 0..n {
        set.push(path_to_demo(id, &legs))?;
    }
    Ok(set)
}

/// Replays a demonstration in its environment, returning the final step.
#[cfg(test)]
fn replay(env: &mut dyn Environment, demo: &Demonstration) -> Step {
    env.reset(crate::derive_seed(0, "replay", demo.id as u64));
    let mut last = None;
    for pair in &demo.steps {
        let a = match pair.action {
            Action::Discrete(a) => a,
            Action::Continuous(_) => panic!("grid demos are discrete"),
        };
        last = Some(env.step(a).unwrap());
    }
    last.expect("demo has steps")
}

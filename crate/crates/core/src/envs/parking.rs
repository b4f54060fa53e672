//! Parallel-parking environment with full or partial observability.
//!
//! A car moves in a 20 x 10 world with two parked cars on the bottom curb
//! leaving a 3-unit slot between them. The agent must back into the slot and
//! come to rest roughly parallel to the curb. State is `(x, y, theta, v)`;
//! the nine discrete actions combine a speed command (reverse, stop,
//! forward — speed is set directly, not integrated) with a heading change
//! of -5, 0, or +5 degrees. Heading is additionally perturbed by +-5 degrees
//! with probability `noise_p` each step.
//!
//! Success requires the car centered in the slot, speed zero, and heading
//! within 15 degrees of parallel *in either direction* (a car parked
//! nose-left is as parked as nose-right, so the test is modulo pi).
//! Collisions with the walls or the parked cars end the episode without
//! reward.
//!
//! The partially observable variant hides the speed: observations are
//! `(x, y, theta)`. Forward and reverse phases then alias onto the same
//! observations, which is what makes memoryless policies struggle and
//! progress augmentation pay off.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::trajectory::{Action, Demonstration, DemonstrationSet, StateActionPair};
use crate::{derive_seed, Error, Result};

use super::{Environment, Step};

/// World geometry and dynamics constants.
pub const WORLD_W: f64 = 20.0;
pub const WORLD_H: f64 = 10.0;
/// Parked cars: `[x0, x1] x [0, 2]`.
const CAR_A: (f64, f64) = (6.0, 8.0);
const CAR_B: (f64, f64) = (11.0, 13.0);
const OBSTACLE_TOP: f64 = 2.0;
/// Slot center between the parked cars.
pub const SLOT_X: f64 = 9.5;
pub const SLOT_Y: f64 = 1.2;
/// Collision radius of the agent car.
const RADIUS: f64 = 0.6;
const DT: f64 = 0.1;
const SPEED: f64 = 2.5;
const STEER: f64 = 5.0 * std::f64::consts::PI / 180.0;
const HEADING_TOL: f64 = 15.0 * std::f64::consts::PI / 180.0;
const HORIZON: usize = 200;
/// Slot tolerance: `|x - SLOT_X| <= SLOT_DX`, `|y - SLOT_Y| <= SLOT_DY`.
const SLOT_DX: f64 = 0.5;
const SLOT_DY: f64 = 0.6;

/// Observation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observability {
    /// `(x, y, theta, v)`.
    Full,
    /// `(x, y, theta)` — speed hidden.
    Partial,
}

/// Full physical state of the car.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    } else if a < -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

fn dist_to_rect(x: f64, y: f64, rx: (f64, f64), ry: (f64, f64)) -> f64 {
    let dx = (rx.0 - x).max(0.0).max(x - rx.1);
    let dy = (ry.0 - y).max(0.0).max(y - ry.1);
    dx.hypot(dy)
}

impl CarState {
    fn collides(&self) -> bool {
        if self.x < RADIUS || self.x > WORLD_W - RADIUS {
            return true;
        }
        if self.y < RADIUS || self.y > WORLD_H - RADIUS {
            return true;
        }
        dist_to_rect(self.x, self.y, CAR_A, (0.0, OBSTACLE_TOP)) < RADIUS
            || dist_to_rect(self.x, self.y, CAR_B, (0.0, OBSTACLE_TOP)) < RADIUS
    }

    /// Heading distance to "parallel with the curb", modulo the car's
    /// front/back symmetry.
    pub fn heading_off_parallel(&self) -> f64 {
        let a = wrap_angle(self.theta).abs();
        a.min(std::f64::consts::PI - a)
    }

    fn parked(&self) -> bool {
        (self.x - SLOT_X).abs() <= SLOT_DX
            && (self.y - SLOT_Y).abs() <= SLOT_DY
            && self.v == 0.0
            && self.heading_off_parallel() <= HEADING_TOL
    }
}

/// Decomposes an action index into (speed command, heading change).
fn decode_action(action: usize) -> Result<(f64, f64)> {
    if action >= 9 {
        return Err(Error::Env(format!("parking action {action} out of range")));
    }
    let speed = [-SPEED, 0.0, SPEED][action / 3];
    let steer = [-STEER, 0.0, STEER][action % 3];
    Ok((speed, steer))
}

/// Composes an action index from command indices (0..3 each).
fn encode_action(speed_idx: usize, steer_idx: usize) -> usize {
    speed_idx * 3 + steer_idx
}

pub struct ParkingEnv {
    mode: Observability,
    noise_p: f64,
    state: CarState,
    rng: ChaCha8Rng,
    t: usize,
    done: bool,
    name: &'static str,
}

impl ParkingEnv {
    pub fn new(mode: Observability) -> Self {
        ParkingEnv {
            mode,
            noise_p: 0.1,
            state: CarState {
                x: 2.5,
                y: 3.2,
                theta: 0.0,
                v: 0.0,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            done: true,
            name: match mode {
                Observability::Full => "parking",
                Observability::Partial => "parking-po",
            },
        }
    }

    /// Overrides the steering-noise probability (default 0.1).
    pub fn with_noise(mut self, noise_p: f64) -> Self {
        self.noise_p = noise_p;
        self
    }

    pub fn car(&self) -> CarState {
        self.state
    }

    fn obs(&self) -> Vec<f64> {
        match self.mode {
            Observability::Full => vec![self.state.x, self.state.y, self.state.theta, self.state.v],
            Observability::Partial => vec![self.state.x, self.state.y, self.state.theta],
        }
    }
}

impl Environment for ParkingEnv {
    fn name(&self) -> &str {
        self.name
    }

    fn num_actions(&self) -> usize {
        9
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn obs_dim(&self) -> usize {
        match self.mode {
            Observability::Full => 4,
            Observability::Partial => 3,
        }
    }

    fn obs_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![
            (0.0, WORLD_W),
            (0.0, WORLD_H),
            (-std::f64::consts::PI, std::f64::consts::PI),
        ];
        if self.mode == Observability::Full {
            b.push((-SPEED, SPEED));
        }
        b
    }

    fn num_states(&self) -> Option<u64> {
        None
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = CarState {
            x: self.rng.random_range(2.0..3.0),
            y: self.rng.random_range(3.0..3.4),
            theta: 0.0,
            v: 0.0,
        };
        self.t = 0;
        self.done = false;
        self.obs()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::Env("step on a finished episode".into()));
        }
        let (speed, steer) = decode_action(action)?;
        let mut dtheta = steer;
        if self.rng.random_range(0.0..1.0) < self.noise_p {
            dtheta += if self.rng.random_range(0.0..1.0) < 0.5 {
                STEER
            } else {
                -STEER
            };
        }
        self.state.theta = wrap_angle(self.state.theta + dtheta);
        self.state.v = speed;
        self.state.x += self.state.v * DT * self.state.theta.cos();
        self.state.y += self.state.v * DT * self.state.theta.sin();
        self.t += 1;

        let collided = self.state.collides();
        let success = !collided && self.state.parked();
        let done = collided || success || self.t >= HORIZON;
        self.done = done;
        Ok(Step {
            obs: self.obs(),
            reward: f64::from(success),
            done,
            success,
        })
    }

    fn state_index(&self) -> Option<u64> {
        None
    }

    fn set_state(&mut self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim() {
            return Err(Error::DimensionMismatch {
                what: "parking set_state".into(),
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        let state = CarState {
            x: obs[0],
            y: obs[1],
            theta: wrap_angle(obs[2]),
            // Hidden speed defaults to stopped in the partial mode.
            v: if self.mode == Observability::Full { obs[3] } else { 0.0 },
        };
        if state.collides() {
            return Err(Error::Env(format!(
                "state ({}, {}) collides; cannot teleport there",
                state.x, state.y
            )));
        }
        self.state = state;
        self.t = 0;
        self.done = false;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scripted expert
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    PullUp,
    Pause(usize),
    BackAlong,
    TurnIn,
    BackDown,
    Straighten,
}

/// Height of the staging lane the expert drives along; clears the parked
/// cars (top 2.0) by a full unit.
const LANE_Y: f64 = 3.2;

/// Picks the steering command bringing `theta` closest to `theta_des`.
fn steer_toward(theta: f64, theta_des: f64) -> usize {
    let err = wrap_angle(theta_des - theta);
    if err > 0.5 * STEER {
        2
    } else if err < -0.5 * STEER {
        0
    } else {
        1
    }
}

/// One expert decision given the full car state.
///
/// The maneuver: drive forward along the staging lane past the slot, pause,
/// reverse back along the same lane until level with the slot center (the
/// forward and reverse passes cover the same poses — deliberately, that
/// overlap is what hides the phase from a memoryless observer), rotate in
/// place to point the nose at the curb's normal, back straight down into the
/// slot, and straighten out. Turning in place is legal here because speed is
/// commanded, not integrated.
fn expert_action(state: &CarState, phase: &mut Phase) -> usize {
    match *phase {
        Phase::PullUp => {
            if state.x >= SLOT_X + 3.2 {
                *phase = Phase::Pause(3);
                return expert_action(state, phase);
            }
            // Track the staging lane while driving forward.
            let theta_des = (0.6 * (LANE_Y - state.y)).clamp(-0.5, 0.5);
            encode_action(2, steer_toward(state.theta, theta_des))
        }
        Phase::Pause(left) => {
            if left == 0 {
                *phase = Phase::BackAlong;
                return expert_action(state, phase);
            }
            *phase = Phase::Pause(left - 1);
            encode_action(1, steer_toward(state.theta, 0.0))
        }
        Phase::BackAlong => {
            if state.x <= SLOT_X {
                *phase = Phase::TurnIn;
                return expert_action(state, phase);
            }
            // Reversing flips the tracking sign: nose down drifts the tail up.
            let theta_des = (-0.6 * (LANE_Y - state.y)).clamp(-0.5, 0.5);
            encode_action(0, steer_toward(state.theta, theta_des))
        }
        Phase::TurnIn => {
            let up = std::f64::consts::FRAC_PI_2;
            if wrap_angle(state.theta - up).abs() <= STEER {
                *phase = Phase::BackDown;
                return expert_action(state, phase);
            }
            encode_action(1, steer_toward(state.theta, up))
        }
        Phase::BackDown => {
            if state.y <= SLOT_Y + 0.25 {
                *phase = Phase::Straighten;
                return expert_action(state, phase);
            }
            // Nose up, reversing straight down; lean the nose off vertical
            // to cancel lateral drift.
            let theta_des = std::f64::consts::FRAC_PI_2 - (2.0 * (state.x - SLOT_X)).clamp(-0.4, 0.4);
            encode_action(0, steer_toward(state.theta, theta_des))
        }
        Phase::Straighten => encode_action(1, steer_toward(state.theta, 0.0)),
    }
}

/// Generates successful parking demonstrations with the scripted expert.
///
/// Steering noise makes individual attempts fallible, so seeds that fail are
/// skipped (with a warning) until `n` successes are collected; generation
/// errors out if the failure rate is pathological.
pub fn generate_demos(env_name: &str, n: usize, seed: u64) -> Result<DemonstrationSet> {
    let mode = match env_name {
        "parking" => Observability::Full,
        "parking-po" => Observability::Partial,
        other => return Err(Error::Config(format!("no parking expert for `{other}`"))),
    };
    let mut env = ParkingEnv::new(mode);
    let mut set = DemonstrationSet::new(env_name, env.obs_dim());
    let mut attempt = 0u64;
    while set.len() < n {
        if attempt >= 10 * n as u64 + 20 {
            return Err(Error::Generation(format!(
                "parking expert failed too often: {} successes in {attempt} attempts",
                set.len()
            )));
        }
        let episode_seed = derive_seed(seed, "parking-demo", attempt);
        attempt += 1;
        let mut obs = env.reset(episode_seed);
        let mut phase = Phase::PullUp;
        let mut steps = Vec::new();
        let success;
        loop {
            let action = expert_action(&env.car(), &mut phase);
            steps.push(StateActionPair {
                state: obs.clone(),
                action: Action::Discrete(action),
            });
            let s = env.step(action)?;
            obs = s.obs;
            if s.done {
                success = s.success;
                break;
            }
        }
        if success {
            set.push(Demonstration {
                id: set.len(),
                steps,
            })?;
        } else {
            log::warn!("discarding failed parking demo attempt {attempt}");
        }
    }
    Ok(set)
}

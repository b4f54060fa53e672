//! Acrobot swing-up.
//!
//! Two-link pendulum actuated only at the elbow, with the classic parameters
//! (unit masses and lengths, gravity 9.8). Angles follow the standard
//! convention: `theta1` is measured from the downward vertical and `theta2`
//! is the elbow angle *relative* to the first link, so the straight-down rest
//! pose is `(0, 0)` and straight-up is `(pi, 0)`. The tip height above the
//! pivot is `-cos(theta1) - cos(theta1 + theta2)`; the episode succeeds when
//! it reaches one link length (`>= 1`).
//!
//! Actions apply elbow torque `{-1, 0, +1}`. Each step integrates the
//! dynamics with four RK4 substeps of `dt = 0.05` (0.2 seconds per action).
//! Angular velocities are clamped to `[-4 pi, 4 pi]` and `[-9 pi, 9 pi]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::trajectory::{Action, Demonstration, DemonstrationSet, StateActionPair};
use crate::{derive_seed, Error, Result};

use super::{Environment, Step};

const M1: f64 = 1.0;
const M2: f64 = 1.0;
const L1: f64 = 1.0;
const LC1: f64 = 0.5;
const LC2: f64 = 0.5;
const I1: f64 = 1.0;
const I2: f64 = 1.0;
const G: f64 = 9.8;
const DT: f64 = 0.05;
const SUBSTEPS: usize = 4;
const MAX_W1: f64 = 4.0 * std::f64::consts::PI;
const MAX_W2: f64 = 9.0 * std::f64::consts::PI;
const HORIZON: usize = 1000;

/// Full acrobot state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcrobotState {
    pub theta1: f64,
    pub theta2: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl AcrobotState {
    /// Tip height above the pivot, in link lengths.
    pub fn tip_height(&self) -> f64 {
        -self.theta1.cos() - (self.theta1 + self.theta2).cos()
    }

    /// Total mechanical energy (kinetic + potential); conserved when no
    /// torque is applied and the velocity clamps are inactive.
    pub fn energy(&self) -> f64 {
        let (t1, t2, w1, w2) = (self.theta1, self.theta2, self.omega1, self.omega2);
        let d1 = M1 * LC1 * LC1 + M2 * (L1 * L1 + LC2 * LC2 + 2.0 * L1 * LC2 * t2.cos()) + I1 + I2;
        let d2 = M2 * (LC2 * LC2 + L1 * LC2 * t2.cos()) + I2;
        let d3 = M2 * LC2 * LC2 + I2;
        let kinetic = 0.5 * d1 * w1 * w1 + d2 * w1 * w2 + 0.5 * d3 * w2 * w2;
        let potential = -(M1 * LC1 + M2 * L1) * G * t1.cos() - M2 * LC2 * G * (t1 + t2).cos();
        kinetic + potential
    }
}

/// Equations of motion: returns the four time derivatives.
fn derivs(s: &AcrobotState, tau: f64) -> [f64; 4] {
    let (t1, t2, w1, w2) = (s.theta1, s.theta2, s.omega1, s.omega2);
    let d1 = M1 * LC1 * LC1 + M2 * (L1 * L1 + LC2 * LC2 + 2.0 * L1 * LC2 * t2.cos()) + I1 + I2;
    let d2 = M2 * (LC2 * LC2 + L1 * LC2 * t2.cos()) + I2;
    let phi2 = M2 * LC2 * G * (t1 + t2 - std::f64::consts::FRAC_PI_2).cos();
    let phi1 = -M2 * L1 * LC2 * w2 * w2 * t2.sin() - 2.0 * M2 * L1 * LC2 * w2 * w1 * t2.sin()
        + (M1 * LC1 + M2 * L1) * G * (t1 - std::f64::consts::FRAC_PI_2).cos()
        + phi2;
    let a2 = (tau + (d2 / d1) * phi1 - M2 * L1 * LC2 * w1 * w1 * t2.sin() - phi2)
        / (M2 * LC2 * LC2 + I2 - d2 * d2 / d1);
    let a1 = -(d2 * a2 + phi1) / d1;
    [w1, w2, a1, a2]
}

fn rk4(s: &AcrobotState, tau: f64, dt: f64) -> AcrobotState {
    let add = |s: &AcrobotState, k: &[f64; 4], h: f64| AcrobotState {
        theta1: s.theta1 + h * k[0],
        theta2: s.theta2 + h * k[1],
        omega1: s.omega1 + h * k[2],
        omega2: s.omega2 + h * k[3],
    };
    let k1 = derivs(s, tau);
    let k2 = derivs(&add(s, &k1, 0.5 * dt), tau);
    let k3 = derivs(&add(s, &k2, 0.5 * dt), tau);
    let k4 = derivs(&add(s, &k3, dt), tau);
    AcrobotState {
        theta1: s.theta1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        theta2: s.theta2 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        omega1: s.omega1 + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        omega2: s.omega2 + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    }
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

pub struct AcrobotEnv {
    state: AcrobotState,
    t: usize,
    done: bool,
    /// Additive torque noise: effective torque is `tau + noise_scale * N(0,1)`.
    noise_scale: f64,
    rng: ChaCha8Rng,
}

impl AcrobotEnv {
    pub fn new() -> Self {
        AcrobotEnv {
            state: AcrobotState {
                theta1: 0.0,
                theta2: 0.0,
                omega1: 0.0,
                omega2: 0.0,
            },
            t: 0,
            done: true,
            noise_scale: 0.1,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Overrides the torque-noise scale (default 0.1; 0 disables noise).
    pub fn with_noise(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn state(&self) -> AcrobotState {
        self.state
    }

    /// Advances one action step without episode bookkeeping (integration
    /// only); used by the energy-conservation checks.
    pub fn integrate(state: &AcrobotState, tau: f64) -> AcrobotState {
        let mut s = *state;
        for _ in 0..SUBSTEPS {
            s = rk4(&s, tau, DT);
        }
        s
    }

    fn obs(&self) -> Vec<f64> {
        vec![
            self.state.theta1,
            self.state.theta2,
            self.state.omega1,
            self.state.omega2,
        ]
    }
}

impl Default for AcrobotEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for AcrobotEnv {
    fn name(&self) -> &str {
        "acrobot"
    }

    fn num_actions(&self) -> usize {
        3
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn obs_bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (-std::f64::consts::PI, std::f64::consts::PI),
            (-std::f64::consts::PI, std::f64::consts::PI),
            (-MAX_W1, MAX_W1),
            (-MAX_W2, MAX_W2),
        ]
    }

    fn num_states(&self) -> Option<u64> {
        None
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = AcrobotState {
            theta1: self.rng.random_range(-0.1..0.1),
            theta2: self.rng.random_range(-0.1..0.1),
            omega1: self.rng.random_range(-0.1..0.1),
            omega2: self.rng.random_range(-0.1..0.1),
        };
        self.t = 0;
        self.done = false;
        self.obs()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::Env("step on a finished episode".into()));
        }
        let tau = match action {
            0 => -1.0,
            1 => 0.0,
            2 => 1.0,
            other => return Err(Error::Env(format!("acrobot action {other} out of range"))),
        };
        let tau = tau + self.noise_scale * super::sample_normal(&mut self.rng);
        let mut s = Self::integrate(&self.state, tau);
        s.theta1 = wrap_angle(s.theta1);
        s.theta2 = wrap_angle(s.theta2);
        s.omega1 = s.omega1.clamp(-MAX_W1, MAX_W1);
        s.omega2 = s.omega2.clamp(-MAX_W2, MAX_W2);
        self.state = s;
        self.t += 1;

        let success = self.state.tip_height() >= 1.0;
        let done = success || self.t >= HORIZON;
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
        if obs.len() != 4 {
            return Err(Error::DimensionMismatch {
                what: "acrobot set_state".into(),
                expected: 4,
                got: obs.len(),
            });
        }
        self.state = AcrobotState {
            theta1: wrap_angle(obs[0]),
            theta2: wrap_angle(obs[1]),
            omega1: obs[2].clamp(-MAX_W1, MAX_W1),
            omega2: obs[3].clamp(-MAX_W2, MAX_W2),
        };
        self.t = 0;
        self.done = false;
        Ok(())
    }
}

/// Energy-pumping expert. The elbow torque's power is exactly `tau * omega2`,
/// so torque in phase with the elbow velocity adds energy every step; near
/// the omega2 deadband it falls back to the first link's swing direction to
/// break symmetry at rest.
fn expert_action(s: &AcrobotState) -> usize {
    if s.omega2 > 0.05 {
        2
    } else if s.omega2 < -0.05 {
        0
    } else if s.omega1 >= 0.0 {
        2
    } else {
        0
    }
}

/// Generates successful swing-up demonstrations.
pub fn generate_demos(n: usize, seed: u64) -> Result<DemonstrationSet> {
    let mut env = AcrobotEnv::new();
    let mut set = DemonstrationSet::new("acrobot", 4);
    let mut attempt = 0u64;
    while set.len() < n {
        if attempt >= 10 * n as u64 + 20 {
            return Err(Error::Generation(format!(
                "acrobot expert failed too often: {} successes in {attempt} attempts",
                set.len()
            )));
        }
        let episode_seed = derive_seed(seed, "acrobot-demo", attempt);
        attempt += 1;
        let mut obs = env.reset(episode_seed);
        let mut steps = Vec::new();
        let success;
        loop {
            let action = expert_action(&env.state());
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
            log::warn!("discarding failed acrobot demo attempt {attempt}");
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_of_the_tip() {
        let down = AcrobotState {
            theta1: 0.0,
            theta2: 0.0,
            omega1: 0.0,
            omega2: 0.0,
        };
        assert!((down.tip_height() + 2.0).abs() < 1e-12, "hanging: height -2");
        let up = AcrobotState {
            theta1: std::f64::consts::PI,
            theta2: 0.0,
            omega1: 0.0,
            omega2: 0.0,
        };
        assert!((up.tip_height() - 2.0).abs() < 1e-12, "straight up: height 2");
        let bent = AcrobotState {
            theta1: std::f64::consts::PI / 2.0,
            theta2: std::f64::consts::PI / 2.0,
            omega1: 0.0,
            omega2: 0.0,
        };
        assert!((bent.tip_height() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn passive_swing_conserves_energy() {
        let mut s = AcrobotState {
            theta1: 1.0,
            theta2: -0.5,
            omega1: 0.3,
            omega2: -0.2,
        };
        let e0 = s.energy();
        for _ in 0..50 {
            s = AcrobotEnv::integrate(&s, 0.0);
        }
        // RK4 at dt = 0.05 drifts ~1e-5 over 200 substeps; anything wrong in
        // the dynamics shows up as drift of order one.
        let drift = (s.energy() - e0).abs() / e0.abs().max(1.0);
        assert!(drift < 1e-4, "energy drift {drift}");
    }

    #[test]
    fn torque_changes_energy() {
        let s0 = AcrobotState {
            theta1: 0.3,
            theta2: 0.0,
            omega1: 0.5,
            omega2: 0.0,
        };
        let passive = AcrobotEnv::integrate(&s0, 0.0);
        let driven = AcrobotEnv::integrate(&s0, 1.0);
        assert!(driven.energy() > passive.energy(), "in-phase torque pumps energy");
    }

    #[test]
    fn zero_torque_never_succeeds() {
        // Noise off: the passive system must stay below the line by energy
        // conservation alone.
        let mut env = AcrobotEnv::new().with_noise(0.0);
        env.reset(4);
        for _ in 0..HORIZON {
            let s = env.step(1).unwrap();
            assert!(!s.success, "passive acrobot cannot reach height 1");
            if s.done {
                break;
            }
        }
    }

    #[test]
    fn expert_swings_up() {
        let mut env = AcrobotEnv::new();
        let mut worst = 0usize;
        for seed in 0..5 {
            env.reset(seed);
            let mut steps = 0;
            let success = loop {
                let a = expert_action(&env.state());
                let s = env.step(a).unwrap();
                steps += 1;
                if s.done {
                    break s.success;
                }
            };
            assert!(success, "expert failed on seed {seed}");
            worst = worst.max(steps);
        }
        assert!(worst < HORIZON, "expert finished in {worst} steps");
    }

    #[test]
    fn episodes_are_reproducible() {
        let mut env = AcrobotEnv::new();
        let a = env.reset(11);
        let mut env2 = AcrobotEnv::new();
        let b = env2.reset(11);
        assert_eq!(a, b);
        let sa = env.step(2).unwrap();
        let sb = env2.step(2).unwrap();
        assert_eq!(sa.obs, sb.obs);
    }
}

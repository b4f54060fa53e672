//! Synthetic demonstrations from a chain of linear feedback controllers.
//!
//! The generator models an expert that works through a sequence of targets:
//! stage `i` runs a stabilizing linear controller toward target `g_i` under
//! Gaussian process noise; once the state enters the stage's tolerance
//! ellipsoid it holds there for `dwell_steps` regulation steps before handing
//! over to stage `i + 1`, so each stage's settled regime is observable in the
//! trajectory. With plant `x' = x + u` and feedback `u = C_i (g_i - x)`, the
//! deviation `e = x - g_i` contracts as `e' = A_i e + w` with closed-loop
//! matrix `A_i = I - C_i`, `w ~ N(0, sigma_w^2 I)`.
//!
//! These trajectories have known ground truth (the targets), which makes
//! them the reference workload for validating sub-goal discovery end to end.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::MembershipParams;
use crate::trajectory::{Action, Demonstration, DemonstrationSet, StateActionPair};
use crate::{derive_seed, Error, Result};

use super::sample_normal as normal;

/// One stage of the controller chain.
#[derive(Debug, Clone)]
pub struct ControllerStage {
    /// Closed-loop deviation dynamics `A_i` (spectral radius < 1).
    pub a_cl: DMatrix<f64>,
    /// Feedback gain `C_i` used to record the expert's control inputs.
    pub gain: DMatrix<f64>,
    /// Stage target `g_i`.
    pub target: DVector<f64>,
    /// Tolerance ellipsoid covariance; the stage ends when the deviation's
    /// squared Mahalanobis distance drops below the chi-square quantile.
    pub tolerance: DMatrix<f64>,
}

/// Full description of a controller-chain demonstration generator.
#[derive(Debug, Clone)]
pub struct ControllerChainSpec {
    pub start: DVector<f64>,
    pub stages: Vec<ControllerStage>,
    /// Process-noise standard deviation `sigma_w` (isotropic).
    pub noise_std: f64,
    /// Confidence level for the tolerance test.
    pub alpha: f64,
    /// Per-stage step budget, as a multiple of the estimated settling time.
    pub step_cap_factor: usize,
    /// Regulation steps held at each target after its tolerance is met,
    /// before the next stage takes over.
    pub dwell_steps: usize,
    /// Regulation steps appended after the last stage completes, so the
    /// final approach is followed by observable settled dynamics.
    pub tail_steps: usize,
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

impl ControllerChainSpec {
    /// Checks dimensions, stability, and tolerance validity.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("controller chain needs at least one stage".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        let dim = self.start.len();
        for (i, stage) in self.stages.iter().enumerate() {
            for (what, r, c) in [
                ("a_cl", stage.a_cl.nrows(), stage.a_cl.ncols()),
                ("gain", stage.gain.nrows(), stage.gain.ncols()),
                ("tolerance", stage.tolerance.nrows(), stage.tolerance.ncols()),
            ] {
                if r != dim || c != dim {
                    return Err(Error::DimensionMismatch {
                        what: format!("stage {i} {what}"),
                        expected: dim,
                        got: if r != dim { r } else { c },
                    });
                }
            }
            if stage.target.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: format!("stage {i} target"),
                    expected: dim,
                    got: stage.target.len(),
                });
            }
            let rho = spectral_radius(&stage.a_cl);
            if rho >= 1.0 {
                return Err(Error::Config(format!(
                    "stage {i} closed loop is unstable (spectral radius {rho:.3})"
                )));
            }
            if stage.tolerance.clone().cholesky().is_none() {
                return Err(Error::Config(format!(
                    "stage {i} tolerance is not positive definite"
                )));
            }
        }
        MembershipParams::new(self.alpha)?;
        Ok(())
    }

    /// Per-stage step cap: settling time for the closed loop to contract a
    /// unit deviation to 1e-4, scaled by `step_cap_factor`.
    fn step_cap(&self, stage: &ControllerStage) -> usize {
        let rho = spectral_radius(&stage.a_cl).max(1e-6);
        let settle = if rho < 1.0 {
            ((1e-4f64).ln() / rho.ln()).ceil() as usize
        } else {
            1
        };
        self.step_cap_factor.max(1) * settle.max(1) + 20
    }

    /// A random chain for testing and the demo CLI: targets spaced well
    /// apart relative to the noise, nearly-deadbeat closed loops (random
    /// rotation scaled by a small contraction), per-stage gains `I - A_i`,
    /// and tolerance `noise_std^2 * I`.
    pub fn random(dim: usize, n_stages: usize, noise_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eye = DMatrix::<f64>::identity(dim, dim);
        let mut stages = Vec::with_capacity(n_stages);
        let mut anchor = DVector::<f64>::zeros(dim);
        for _ in 0..n_stages {
            // Random direction, step length 12..18 noise sigmas.
            let dir = DVector::from_iterator(dim, (0..dim).map(|_| normal(&mut rng)));
            let dir = &dir / dir.norm().max(1e-12);
            let dist = rng.random_range(12.0..18.0) * noise_std;
            let target = &anchor + dir * dist;
            anchor = target.clone();

            let rho = rng.random_range(0.0..0.05);
            let a_cl = random_rotation(dim, &mut rng) * rho;
            let gain = &eye - &a_cl;
            stages.push(ControllerStage {
                a_cl,
                gain,
                target,
                tolerance: &eye * (noise_std * noise_std).max(1e-12),
            });
        }
        ControllerChainSpec {
            start: DVector::zeros(dim),
            stages,
            noise_std,
            alpha: 0.95,
            step_cap_factor: 10,
            dwell_steps: 3,
            tail_steps: 4,
        }
    }

    /// True stage targets, in order (ground truth for recovery tests).
    pub fn targets(&self) -> Vec<DVector<f64>> {
        self.stages.iter().map(|s| s.target.clone()).collect()
    }
}


/// Random orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix signs so the factorization is unique (positive R diagonal).
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Records one regulation step of `stage` and advances the state.
fn regulate_step(
    stage: &ControllerStage,
    noise_std: f64,
    x: &mut DVector<f64>,
    steps: &mut Vec<StateActionPair>,
    rng: &mut ChaCha8Rng,
) {
    let e = &*x - &stage.target;
    let u = &stage.gain * (-&e);
    steps.push(StateActionPair {
        state: x.as_slice().to_vec(),
        action: Action::Continuous(u.as_slice().to_vec()),
    });
    let dim = x.len();
    let w = DVector::from_iterator(dim, (0..dim).map(|_| noise_std * normal(rng)));
    *x = &stage.target + &stage.a_cl * e + w;
}

/// Simulates the controller chain `n` times and records the trajectories.
///
/// Actions are the continuous controls `u = C_i (g_i - x)`. Each stage runs
/// until its tolerance is met, then holds for `dwell_steps` more regulation
/// steps; after the final stage, `tail_steps` further steps of the last
/// controller are recorded. A stage that exceeds its step cap aborts
/// generation with an error (the chain is mis-specified, not unlucky).
pub fn generate_controller_demos(
    spec: &ControllerChainSpec,
    n: usize,
    seed: u64,
) -> Result<DemonstrationSet> {
    spec.validate()?;
    let dim = spec.start.len();
    let z = MembershipParams::new(spec.alpha)?.threshold(dim)?;
    let chols: Vec<_> = spec
        .stages
        .iter()
        .map(|s| s.tolerance.clone().cholesky().expect("validated"))
        .collect();

    let mut set = DemonstrationSet::new("controller-chain", dim);
    for id in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "controller-demo", id as u64));
        let mut x = spec.start.clone();
        let mut steps = Vec::new();
        for (i, stage) in spec.stages.iter().enumerate() {
            let cap = spec.step_cap(stage);
            let mut taken = 0;
            loop {
                let e = &x - &stage.target;
                if e.dot(&chols[i].solve(&e)) <= z {
                    break;
                }
                if taken >= cap {
                    return Err(Error::Generation(format!(
                        "stage {i} exceeded its step cap of {cap} in demo {id}"
                    )));
                }
                regulate_step(stage, spec.noise_std, &mut x, &mut steps, &mut rng);
                taken += 1;
            }
            for _ in 0..spec.dwell_steps {
                regulate_step(stage, spec.noise_std, &mut x, &mut steps, &mut rng);
            }
        }
        // Tail: keep regulating at the final target.
        let last = spec.stages.last().expect("validated non-empty");
        for _ in 0..spec.tail_steps {
            regulate_step(last, spec.noise_std, &mut x, &mut steps, &mut rng);
        }
        set.push(Demonstration { id, steps })?;
    }
    Ok(set)
}

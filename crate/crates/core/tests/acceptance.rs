//! Acceptance suite: one test per headline claim, end to end.
//!
//! Every test prints a single line of the form
//! `ACCEPTANCE nn PASS|FAIL: <measurements>` before asserting, so a plain
//! `cargo test --test acceptance -- --nocapture` gives a one-line verdict per
//! criterion. Runtime budgets are part of each pass condition.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hirl_core::derive_seed;
use hirl_core::encoding::{GoalMembership, MembershipParams};
use hirl_core::envs::controller::{generate_controller_demos, ControllerChainSpec};
use hirl_core::harness::{episodes_to, run_experiment, ExperimentConfig, RunOutput};
use hirl_core::reward::maxent::{expected_svf, soft_value_iteration, FeatureMap};
use hirl_core::reward::mdp::TabularMdp;
use hirl_core::segmentation::{discover_chain, fit_joint_gaussian, SegmentationConfig};
use hirl_core::segmentation::{GoalChain, SubGoal};
use hirl_core::trajectory::{featurize, FeatureTrajectory, FeaturizerSpec};

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "hirl-acceptance-{tag}-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(method: &str, env: &str) -> ExperimentConfig {
    ExperimentConfig {
        method: method.into(),
        env: env.into(),
        ..ExperimentConfig::default()
    }
}

/// Prints the one-line verdict, then asserts it.
fn verdict(n: usize, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {n:02} {tag}: {detail}");
    assert!(pass, "ACCEPTANCE {n:02} {tag}: {detail}");
}

/// Mean over seeds of the final evaluation point (success at the run budget).
fn final_success(out: &RunOutput) -> f64 {
    let total: f64 = out
        .curves
        .iter()
        .map(|(_, c)| c.points.last().map_or(0.0, |p| p.mean_true_reward))
        .sum();
    total / out.curves.len() as f64
}

#[test]
fn acceptance_01_sequential_gridworld() {
    let t0 = Instant::now();
    let dir = tempdir("01");
    let mut rl = config("rl", "gridworld-two-goals");
    rl.seeds = (0..5).collect();
    rl.q.episodes = 2000;
    rl.q.eval_every = 100;
    rl.q.eval_rollouts = 10;
    let mut hirl = rl.clone();
    hirl.method = "hirl".into();
    let rl_out = run_experiment(&rl, &dir).unwrap();
    let hirl_out = run_experiment(&hirl, &dir).unwrap();
    let el = t0.elapsed().as_secs_f64();
    let (r, h) = (rl_out.row.max_mean, hirl_out.row.max_mean);
    verdict(
        1,
        r <= 0.2 && h >= 0.9 && el < 60.0,
        &format!("two-goal grid: rl max {r:.2} (<= 0.2), hirl max {h:.2} (>= 0.9), {el:.1}s (< 60s)"),
    );
}

#[test]
fn acceptance_02_parking_partial_ordering() {
    let t0 = Instant::now();
    let dir = tempdir("02");
    let mut irl = config("irl", "parking-po");
    irl.seeds = (0..5).collect();
    irl.bins = Some(vec![20, 10, 8]);
    irl.membership_min_sigma = 0.5;
    irl.irl.iterations = 100;
    irl.q.episodes = 4000;
    irl.q.alpha = 0.2;
    irl.q.eval_every = 250;
    irl.q.eval_rollouts = 20;
    let mut hirl = irl.clone();
    hirl.method = "hirl".into();
    let irl_out = run_experiment(&irl, &dir).unwrap();
    let hirl_out = run_experiment(&hirl, &dir).unwrap();
    let el = t0.elapsed().as_secs_f64();
    let (i, h) = (final_success(&irl_out), final_success(&hirl_out));
    verdict(
        2,
        h - i >= 0.4 && el < 1200.0,
        &format!("parking-po at budget: hirl {h:.2} - irl {i:.2} = {:.2} (>= 0.4), {el:.0}s (< 1200s)", h - i),
    );
}

#[test]
fn acceptance_03_parking_convergence_speed() {
    let t0 = Instant::now();
    let dir = tempdir("03");
    let budget = 4000usize;
    let mut irl = config("irl", "parking");
    irl.seeds = (0..5).collect();
    irl.bins = Some(vec![20, 10, 8, 3]);
    irl.membership_min_sigma = 0.5;
    irl.irl.iterations = 100;
    irl.q.episodes = budget;
    irl.q.alpha = 0.2;
    irl.q.eval_every = 200;
    irl.q.eval_rollouts = 20;
    let mut hirl = irl.clone();
    hirl.method = "hirl".into();
    let irl_out = run_experiment(&irl, &dir).unwrap();
    let hirl_out = run_experiment(&hirl, &dir).unwrap();
    let el = t0.elapsed().as_secs_f64();
    // Episodes to 80% success per seed, censored at the training budget.
    let mean_e80 = |out: &RunOutput| {
        let total: usize = out
            .curves
            .iter()
            .map(|(_, c)| episodes_to(c, 0.8).unwrap_or(budget))
            .sum();
        total as f64 / out.curves.len() as f64
    };
    let (i, h) = (mean_e80(&irl_out), mean_e80(&hirl_out));
    verdict(
        3,
        h <= 0.8 * i && el < 1200.0,
        &format!("parking episodes-to-80%: hirl {h:.0} vs irl {i:.0} (ratio {:.2} <= 0.8), {el:.0}s (< 1200s)", h / i),
    );
}

#[test]
fn acceptance_04_maze_counter_example() {
    let t0 = Instant::now();
    let dir = tempdir("04");
    let mut irl = config("irl", "maze");
    irl.seeds = (0..5).collect();
    irl.q.episodes = 800;
    irl.q.eval_every = 25;
    irl.q.eval_rollouts = 10;
    irl.irl.iterations = 150;
    let mut hirl = irl.clone();
    hirl.method = "hirl".into();
    let irl_out = run_experiment(&irl, &dir).unwrap();
    let hirl_out = run_experiment(&hirl, &dir).unwrap();
    let el = t0.elapsed().as_secs_f64();
    let (i, h) = (irl_out.row.auc_mean, hirl_out.row.auc_mean);
    verdict(
        4,
        i >= h && el < 120.0,
        &format!("maze: irl auc {i:.3} >= hirl auc {h:.3}, {el:.1}s (< 120s)"),
    );
}

#[test]
fn acceptance_05_two_rooms_vs_sliding_window() {
    let t0 = Instant::now();
    let dir = tempdir("05");
    let mut hirl = config("hirl", "two-rooms");
    hirl.seeds = (0..5).collect();
    hirl.q.episodes = 1500;
    hirl.q.eval_every = 50;
    hirl.q.eval_rollouts = 10;
    let mut sliding = hirl.clone();
    sliding.method = "sliding_window".into();
    let hirl_out = run_experiment(&hirl, &dir).unwrap();
    let sliding_out = run_experiment(&sliding, &dir).unwrap();
    let el = t0.elapsed().as_secs_f64();
    let (h, s) = (hirl_out.row.max_mean, sliding_out.row.max_mean);
    verdict(
        5,
        (h - s).abs() <= 0.1 && el < 300.0,
        &format!("two-rooms: hirl max {h:.2} vs sliding-window max {s:.2} (|diff| {:.2} <= 0.1), {el:.1}s (< 300s)", (h - s).abs()),
    );
}

#[test]
fn acceptance_06_controller_chain_recovery() {
    let t0 = Instant::now();
    let sigma_w = 0.05;
    let n_demos = 10usize;
    let trials = 100u64;
    let mut recovered = 0usize;
    let mut separation_ok = true;
    let mut err_sum = 0.0;
    let mut err_n = 0usize;
    for trial in 0..trials {
        let spec = ControllerChainSpec::random(2, 3, sigma_w, derive_seed(600, "acceptance.spec", trial));
        let targets = spec.targets();
        // The generator promises stage separation well above 10x the noise.
        let mut prev = spec.start.clone();
        for g in &targets {
            separation_ok &= (g - &prev).norm() >= 10.0 * sigma_w;
            prev = g.clone();
        }
        let demos =
            generate_controller_demos(&spec, n_demos, derive_seed(601, "acceptance.demos", trial)).unwrap();
        let trajs: Vec<_> = demos
            .demos
            .iter()
            .map(|d| featurize(d, &FeaturizerSpec::Identity).unwrap())
            .collect();
        let chain =
            discover_chain(&trajs, &SegmentationConfig::default(), derive_seed(602, "acceptance.seg", trial))
                .unwrap();
        if chain.k() == 3 {
            recovered += 1;
            for (goal, target) in chain.goals.iter().zip(&targets) {
                err_sum += (&goal.mu - target).norm();
                err_n += 1;
            }
        }
    }
    let el = t0.elapsed().as_secs_f64();
    let mean_err = err_sum / err_n.max(1) as f64;
    let bound = 3.0 * sigma_w / (n_demos as f64).sqrt();
    verdict(
        6,
        separation_ok && recovered >= 95 && mean_err <= bound && el < 60.0,
        &format!(
            "controller chains: k=3 in {recovered}/{trials} (>= 95), mean |mu - target| {mean_err:.4} (<= {bound:.4}), {el:.1}s (< 60s)"
        ),
    );
}

#[test]
fn acceptance_07_joint_gaussian_equals_least_squares() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut regularized = 0usize;
    for sys in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(700, "acceptance.linear", sys));
        let p = 1 + (sys as usize % 3);
        // Symmetric contraction keeps 150-step rollouts bounded.
        let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let q = m.qr().q();
        let d = DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| rng.random_range(-0.85..0.85)));
        let a = &q * d * q.transpose();
        let mut x = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let mut pairs = Vec::with_capacity(150);
        for _ in 0..150 {
            let y = &a * &x + DVector::from_fn(p, |_, _| rng.random_range(-0.5..0.5));
            pairs.push((x.clone(), y.clone()));
            x = y;
        }
        let fit = fit_joint_gaussian(&pairs).unwrap();
        if fit.regularized {
            regularized += 1;
            continue;
        }
        // Least squares with intercept via the normal equations.
        let mut ztz = DMatrix::zeros(p + 1, p + 1);
        let mut zty = DMatrix::zeros(p + 1, p);
        for (xi, yi) in &pairs {
            let mut z = DVector::zeros(p + 1);
            z.rows_mut(0, p).copy_from(xi);
            z[p] = 1.0;
            ztz += &z * z.transpose();
            zty += &z * yi.transpose();
        }
        let b = ztz.lu().solve(&zty).unwrap();
        let ols_slope = b.rows(0, p).transpose();
        worst = worst.max((&fit.slope - ols_slope).abs().max());
    }
    let el = t0.elapsed().as_secs_f64();
    verdict(
        7,
        worst <= 1e-8 && regularized == 0 && el < 10.0,
        &format!("conditional slope vs least squares on 50 systems: max |diff| {worst:.2e} (<= 1e-8), {el:.1}s (< 10s)"),
    );
}

#[test]
fn acceptance_08_maxent_gradient_vs_enumeration() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for trial in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(800, "acceptance.maxent", trial));
        let n_states = 4 + trial as usize % 3;
        let n_actions = 2;
        let horizon = 7; // 2^7 = 128 <= 200 trajectories
        let transitions: Vec<Vec<(usize, f64)>> = (0..n_states * n_actions)
            .map(|_| vec![(rng.random_range(0..n_states), 1.0)])
            .collect();
        let mdp = TabularMdp { n_states, n_actions, horizon, transitions, p0: vec![(0, 1.0)] };
        let dim = 3;
        let rows: Vec<Vec<f64>> = (0..n_states)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let features = FeatureMap::Dense(rows.clone());
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expert: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..8.0)).collect();
        let rewards = features.rewards(&theta).unwrap();
        let values = soft_value_iteration(&mdp, &rewards).unwrap();
        let svf = expected_svf(&mdp, &rewards, &values);
        let model = features.project(&svf);
        // Brute force: enumerate every action sequence of the deterministic
        // MDP, weight by exp(return), and average the feature counts.
        let n_paths = n_actions.pow(horizon as u32);
        let mut log_w = Vec::with_capacity(n_paths);
        let mut counts = Vec::with_capacity(n_paths);
        for code in 0..n_paths {
            let mut s = 0usize;
            let mut ret = rewards[s];
            let mut f = rows[s].clone();
            let mut c = code;
            for _ in 0..horizon {
                let a = c % n_actions;
                c /= n_actions;
                s = mdp.row(s, a)[0].0;
                ret += rewards[s];
                for (fi, ri) in f.iter_mut().zip(&rows[s]) {
                    *fi += ri;
                }
            }
            log_w.push(ret);
            counts.push(f);
        }
        let mx = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = log_w.iter().map(|w| (w - mx).exp()).sum();
        let mut brute = vec![0.0; dim];
        for (w, f) in log_w.iter().zip(&counts) {
            let p = (w - mx).exp() / z;
            for (bi, fi) in brute.iter_mut().zip(f) {
                *bi += p * fi;
            }
        }
        // Gradients: expert counts minus model expectation on both sides.
        for j in 0..dim {
            let ga = expert[j] - model[j];
            let gb = expert[j] - brute[j];
            worst = worst.max((ga - gb).abs());
        }
    }
    let el = t0.elapsed().as_secs_f64();
    verdict(
        8,
        worst <= 1e-8 && el < 30.0,
        &format!("gradient vs enumeration on 25 MDPs (128 paths each): max |diff| {worst:.2e} (<= 1e-8), {el:.1}s (< 30s)"),
    );
}

#[test]
fn acceptance_09_encoding_laws() {
    let t0 = Instant::now();
    let mut rollouts = 0usize;
    let mut bad = 0usize;
    for chain_id in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(900, "acceptance.encoding", chain_id));
        let k = 1 + chain_id as usize % 3;
        let dim = 1 + (chain_id / 3) as usize % 3;
        let mut goals = Vec::with_capacity(k);
        let mut t_lo = 0.0f64;
        for _ in 0..k {
            let mu = DVector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
            let b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            let sigma = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.3;
            let lo = t_lo + rng.random_range(0.0..0.15);
            let hi = (lo + rng.random_range(0.2..0.5)).min(1.0);
            t_lo = lo;
            goals.push(SubGoal {
                mu,
                sigma,
                t_mean: (lo + hi) / 2.0,
                t_lo: lo,
                t_hi: hi,
                support: 1.0,
            });
        }
        let membership =
            GoalMembership::new(GoalChain { goals: goals.clone() }, MembershipParams::default()).unwrap();
        for r in 0..50u64 {
            rollouts += 1;
            let len = 1 + (derive_seed(chain_id, "acceptance.len", r) % 25) as usize;
            let mut x = DVector::from_fn(dim, |_, _| rng.random_range(-6.0..6.0));
            let mut points = Vec::with_capacity(len);
            for _ in 0..len {
                if rng.random::<f64>() < 0.35 {
                    // Jump near a random goal so regions actually trigger.
                    let g = &goals[rng.random_range(0..k)];
                    x = &g.mu + DVector::from_fn(dim, |_, _| rng.random_range(-0.3..0.3));
                } else {
                    x += DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
                }
                points.push(x.clone());
            }
            let traj = FeatureTrajectory { demo_id: 0, points, dim };
            // Ungated: incremental updates must agree with the batch encoding
            // of every prefix, never decrease, and stay prefix-closed.
            let mut m = 0usize;
            for t in 0..=traj.points.len() {
                let prefix = FeatureTrajectory {
                    demo_id: 0,
                    points: traj.points[..t].to_vec(),
                    dim,
                };
                let batch = membership.encode(&prefix, false).unwrap();
                let bits = batch.bits();
                let closed = bits.iter().enumerate().all(|(i, &b)| (b == 1) == (i < batch.count()));
                if batch.count() != m || !closed {
                    bad += 1;
                }
                if t < traj.points.len() {
                    let next = membership.update(m, &traj.points[t], None);
                    if next < m || next > m + 1 {
                        bad += 1;
                    }
                    m = next;
                }
            }
            // Gated full pass against the batch gated encoding.
            let gated = membership.encode(&traj, true).unwrap();
            let n = traj.points.len();
            let mut mg = 0usize;
            for (t, x) in traj.points.iter().enumerate() {
                let next = membership.update(mg, x, Some(t as f64 / n as f64));
                if next < mg || next > mg + 1 {
                    bad += 1;
                }
                mg = next;
            }
            if mg != gated.count() {
                bad += 1;
            }
        }
    }
    let el = t0.elapsed().as_secs_f64();
    verdict(
        9,
        rollouts == 10_000 && bad == 0 && el < 30.0,
        &format!("encoding laws on {rollouts} rollouts: {bad} violations, {el:.1}s (< 30s)"),
    );
}

#[test]
fn acceptance_10_reruns_are_byte_identical() {
    let t0 = Instant::now();
    let mut cells = Vec::new();
    let mut hirl = config("hirl", "gridworld-two-goals");
    hirl.seeds = vec![0, 1];
    hirl.q.episodes = 400;
    hirl.q.eval_every = 100;
    hirl.q.eval_rollouts = 5;
    hirl.irl.iterations = 60;
    cells.push(hirl);
    let mut rl = config("rl", "maze");
    rl.seeds = vec![3];
    rl.q.episodes = 200;
    rl.q.eval_every = 50;
    rl.q.eval_rollouts = 5;
    cells.push(rl);
    let mut identical = true;
    let mut compared = 0usize;
    for cfg in &cells {
        let dir_a = tempdir(&format!("10a-{}", cfg.method));
        let dir_b = tempdir(&format!("10b-{}", cfg.method));
        let out_a = run_experiment(cfg, &dir_a).unwrap();
        let out_b = run_experiment(cfg, &dir_b).unwrap();
        for file in ["curves.csv", "metrics.csv", "config.txt"] {
            let a = fs::read(out_a.dir.join(file)).unwrap();
            let b = fs::read(out_b.dir.join(file)).unwrap();
            identical &= a == b;
            compared += 1;
        }
    }
    let el = t0.elapsed().as_secs_f64();
    verdict(
        10,
        identical && el < 120.0,
        &format!("reruns byte-identical across {compared} csv artifacts in 2 cells, {el:.1}s"),
    );
}

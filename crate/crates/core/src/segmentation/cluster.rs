//! Clustering backends used by the segmentation stage.
//!
//! Both backends sit behind the [`Clusterer`] trait and are selected by name,
//! so the segmentation pipeline never hard-codes one:
//!
//! * `dp-means` - nonparametric; the number of clusters grows whenever a
//!   point is farther than the penalty `lambda` from every existing centroid.
//!   This is the default because the number of dynamic regimes in a set of
//!   demonstrations is not known up front.
//! * `em-gmm` - classic expectation-maximization for a Gaussian mixture with
//!   a fixed component count, for callers that do know it.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Hard clustering of a point set.
#[derive(Debug, Clone)]
pub struct ClusteringResult {
    /// `labels[i]` is the cluster of point `i`, in `0..k`.
    pub labels: Vec<usize>,
    /// Cluster means; every cluster has at least one member.
    pub centroids: Vec<DVector<f64>>,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

/// A clustering algorithm selected by name at runtime.
pub trait Clusterer {
    fn name(&self) -> &'static str;
    fn cluster(&self, points: &[DVector<f64>], seed: u64) -> Result<ClusteringResult>;
}

/// Builds a clustering backend from its config name.
///
/// * `lambda` only applies to `dp-means` (`None` selects the data-driven
///   default, see [`default_lambda`]).
/// * `k` only applies to `em-gmm`.
pub fn build_clusterer(name: &str, lambda: Option<f64>, k: usize) -> Result<Box<dyn Clusterer>> {
    match name {
        "dp-means" => Ok(Box::new(DpMeans { lambda })),
        "em-gmm" => {
            if k == 0 {
                return Err(Error::Config("em-gmm needs a positive component count".into()));
            }
            Ok(Box::new(EmGmm { k }))
        }
        other => Err(Error::Config(format!("unknown clustering backend `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// DP-means
// ---------------------------------------------------------------------------

/// Nonparametric hard clustering with a cluster-creation penalty.
#[derive(Debug, Clone)]
pub struct DpMeans {
    /// Squared-distance penalty for opening a new cluster; `None` picks
    /// [`default_lambda`] from the data.
    pub lambda: Option<f64>,
}

const DP_MEANS_MAX_SWEEPS: usize = 200;

/// Data-driven penalty: the 10th percentile of pairwise squared distances,
/// scaled by the data dimension. Small relative to the spread of the data, so
/// distinct regimes separate, but scaled up with dimension because squared
/// distances grow linearly in it.
pub fn default_lambda(points: &[DVector<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let mut d2: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push((&points[i] - &points[j]).norm_squared());
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let q10 = d2[(d2.len() - 1) / 10];
    let dim = points[0].len() as f64;
    (q10 * dim).max(1e-12)
}

/// Runs DP-means directly (the trait object calls through to this).
///
/// Points are visited in a seed-shuffled order that is fixed once up front;
/// each sweep reassigns every point to its nearest centroid, opening a new
/// cluster at the point whenever the nearest squared distance exceeds
/// `lambda`. Centroids are recomputed and empty clusters dropped after every
/// sweep, and the algorithm stops when a sweep changes no assignment. Each of
/// those moves is non-increasing in the DP-means objective
/// `sum_i ||x_i - mu_{z_i}||^2 + lambda * k`, so termination is guaranteed;
/// the sweep cap is a pure safety net.
pub fn dp_means(points: &[DVector<f64>], lambda: f64, seed: u64) -> Result<ClusteringResult> {
    if points.is_empty() {
        return Err(Error::EmptyInput("dp-means point set".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("dp-means lambda must be positive, got {lambda}")));
    }
    let n = points.len();
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "dp-means points".into(),
            expected: dim,
            got: points.iter().map(|p| p.len()).find(|&l| l != dim).unwrap_or(dim),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // Start from the global mean, per the standard initialization.
    let mut global = DVector::zeros(dim);
    for p in points {
        global += p;
    }
    global /= n as f64;
    let mut centroids = vec![global];
    let mut labels = vec![0usize; n];

    for _ in 0..DP_MEANS_MAX_SWEEPS {
        let mut changed = false;
        for &i in &order {
            let (best, best_d2) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, (&points[i] - c).norm_squared()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).expect("distances are finite"))
                .expect("at least one centroid");
            let new_label = if best_d2 > lambda {
                centroids.push(points[i].clone());
                centroids.len() - 1
            } else {
                best
            };
            if labels[i] != new_label {
                labels[i] = new_label;
                changed = true;
            }
        }

        // Recompute means; drop clusters that lost all members.
        let k = centroids.len();
        let mut sums = vec![DVector::<f64>::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (i, &z) in labels.iter().enumerate() {
            sums[z] += &points[i];
            counts[z] += 1;
        }
        let mut remap = vec![usize::MAX; k];
        let mut kept = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                remap[j] = kept.len();
                kept.push(&sums[j] / counts[j] as f64);
            }
        }
        if kept.len() != k {
            changed = true;
        }
        for z in labels.iter_mut() {
            *z = remap[*z];
        }
        centroids = kept;

        if !changed {
            break;
        }
    }

    Ok(ClusteringResult { labels, centroids })
}

impl Clusterer for DpMeans {
    fn name(&self) -> &'static str {
        "dp-means"
    }

    fn cluster(&self, points: &[DVector<f64>], seed: u64) -> Result<ClusteringResult> {
        let lambda = self.lambda.unwrap_or_else(|| default_lambda(points));
        dp_means(points, lambda, seed)
    }
}

// ---------------------------------------------------------------------------
// EM for a Gaussian mixture
// ---------------------------------------------------------------------------

/// Fixed-size Gaussian mixture fitted by EM; points get their most probable
/// component as a hard label.
#[derive(Debug, Clone)]
pub struct EmGmm {
    pub k: usize,
}

const EM_MAX_ITERS: usize = 200;
const EM_LL_TOL: f64 = 1e-8;

struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn log_gaussian(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let dim = x.len();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("gmm covariance not positive definite".into()))?;
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let maha = diff.dot(&solved);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + maha))
}

impl Clusterer for EmGmm {
    fn name(&self) -> &'static str {
        "em-gmm"
    }

    fn cluster(&self, points: &[DVector<f64>], seed: u64) -> Result<ClusteringResult> {
        if points.is_empty() {
            return Err(Error::EmptyInput("em-gmm point set".into()));
        }
        if points.len() < self.k {
            return Err(Error::Config(format!(
                "em-gmm asked for {} components but got {} points",
                self.k,
                points.len()
            )));
        }
        let n = points.len();
        let dim = points[0].len();
        let k = self.k;

        // Shared spherical covariance from the data scale for initialization
        // and regularization.
        let mut grand = DVector::zeros(dim);
        for p in points {
            grand += p;
        }
        grand /= n as f64;
        let scale: f64 =
            points.iter().map(|p| (p - &grand).norm_squared()).sum::<f64>() / (n * dim).max(1) as f64;
        let reg = (scale * 1e-6).max(1e-9);

        // Seeded draw of k distinct points as initial means.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut comps: Vec<Component> = idx[..k]
            .iter()
            .map(|&i| Component {
                weight: 1.0 / k as f64,
                mean: points[i].clone(),
                cov: DMatrix::identity(dim, dim) * scale.max(reg),
            })
            .collect();

        let mut resp = DMatrix::zeros(n, k);
        let mut prev_ll = f64::NEG_INFINITY;
        for _ in 0..EM_MAX_ITERS {
            // E-step.
            let mut ll = 0.0;
            for (i, x) in points.iter().enumerate() {
                let mut logs = Vec::with_capacity(k);
                for c in &comps {
                    logs.push(c.weight.ln() + log_gaussian(x, &c.mean, &c.cov)?);
                }
                let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logs.iter().map(|l| (l - m).exp()).sum();
                ll += m + z.ln();
                for j in 0..k {
                    resp[(i, j)] = (logs[j] - m).exp() / z;
                }
            }

            // M-step.
            for (j, comp) in comps.iter_mut().enumerate() {
                let nj: f64 = (0..n).map(|i| resp[(i, j)]).sum();
                if nj < 1e-12 {
                    return Err(Error::Numeric("em-gmm component collapsed to zero weight".into()));
                }
                let mut mean = DVector::zeros(dim);
                for (i, x) in points.iter().enumerate() {
                    mean += x * resp[(i, j)];
                }
                mean /= nj;
                let mut cov = DMatrix::zeros(dim, dim);
                for (i, x) in points.iter().enumerate() {
                    let d = x - &mean;
                    cov += (&d * d.transpose()) * resp[(i, j)];
                }
                cov /= nj;
                for d in 0..dim {
                    cov[(d, d)] += reg;
                }
                comp.weight = nj / n as f64;
                comp.mean = mean;
                comp.cov = cov;
            }

            if (ll - prev_ll).abs() < EM_LL_TOL * (1.0 + ll.abs()) {
                break;
            }
            prev_ll = ll;
        }

        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let best = (0..k)
                .max_by(|&a, &b| resp[(i, a)].partial_cmp(&resp[(i, b)]).expect("finite"))
                .expect("k > 0");
            labels.push(best);
        }

        // Re-index to drop components that own no points, mirroring dp-means.
        let mut remap = vec![usize::MAX; k];
        let mut centroids = Vec::new();
        for (i, &z) in labels.iter().enumerate() {
            if remap[z] == usize::MAX {
                remap[z] = centroids.len();
                centroids.push((DVector::<f64>::zeros(dim), 0usize));
            }
            let slot = &mut centroids[remap[z]];
            slot.0 += &points[i];
            slot.1 += 1;
        }
        let centroids: Vec<DVector<f64>> =
            centroids.into_iter().map(|(s, c)| s / c as f64).collect();
        let labels = labels.into_iter().map(|z| remap[z]).collect();
        Ok(ClusteringResult { labels, centroids })
    }
}

// ---------------------------------------------------------------------------
// Per-cluster Gaussian statistics
// ---------------------------------------------------------------------------

/// Mean and covariance of each cluster's members.
///
/// Covariances are maximum-likelihood (divide by the member count) and are
/// regularized with `eps * I`, `eps = 1e-6 * max(trace/p, 1e-3)`, so clusters
/// with few or identical members still yield an invertible matrix. Indices
/// follow the labels in `result`.
pub fn cluster_stats(
    points: &[DVector<f64>],
    result: &ClusteringResult,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let k = result.k();
    let dim = if points.is_empty() { 0 } else { points[0].len() };
    let mut sums = vec![DVector::<f64>::zeros(dim); k];
    let mut counts = vec![0usize; k];
    for (p, &z) in points.iter().zip(&result.labels) {
        sums[z] += p;
        counts[z] += 1;
    }
    let means: Vec<DVector<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s / c.max(1) as f64)
        .collect();

    let mut covs = vec![DMatrix::<f64>::zeros(dim, dim); k];
    for (p, &z) in points.iter().zip(&result.labels) {
        let d = p - &means[z];
        covs[z] += &d * d.transpose();
    }
    for (cov, &c) in covs.iter_mut().zip(&counts) {
        *cov /= c.max(1) as f64;
        let eps = 1e-6 * (cov.trace() / dim.max(1) as f64).max(1e-3);
        for d in 0..dim {
            cov[(d, d)] += eps;
        }
    }
    means.into_iter().zip(covs).collect()
}

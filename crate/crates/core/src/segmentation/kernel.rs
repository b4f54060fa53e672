//! Kernel embedding of window vectors.
//!
//! When the feature-space dynamics are nonlinear, windows are mapped into a
//! low-dimensional Euclidean space before clustering: build the (uncentered)
//! Gram matrix `M[i][j] = kappa(w_i, w_j)`, take its top eigenpairs, and use
//! `sqrt(lambda_j) * v_j[i]` as coordinate `j` of point `i`. Distances in the
//! embedded space then approximate distances between the kernel's implicit
//! feature maps.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Kernel function choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `kappa(a, b) = exp(-||a - b||^2 / (2 sigma))`.
    Rbf,
    /// `kappa(a, b) = <a, b>`.
    Linear,
}

/// Kernel embedding configuration.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// RBF bandwidth; `None` uses the median pairwise distance heuristic.
    pub sigma: Option<f64>,
    /// Requested embedding dimension; clamped to the Gram matrix rank.
    pub p_prime: usize,
}

impl KernelSpec {
    pub fn rbf(p_prime: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            sigma: None,
            p_prime,
        }
    }

    /// Parses `rbf`, `rbf:<sigma>`, or `linear`.
    pub fn parse(name: &str, p_prime: usize) -> Result<Self> {
        if name == "linear" {
            return Ok(KernelSpec {
                kind: KernelKind::Linear,
                sigma: None,
                p_prime,
            });
        }
        if name == "rbf" {
            return Ok(KernelSpec::rbf(p_prime));
        }
        if let Some(s) = name.strip_prefix("rbf:") {
            let sigma: f64 = s
                .parse()
                .map_err(|_| Error::Config(format!("bad rbf bandwidth `{s}`")))?;
            if !(sigma > 0.0) {
                return Err(Error::Config("rbf bandwidth must be positive".into()));
            }
            return Ok(KernelSpec {
                kind: KernelKind::Rbf,
                sigma: Some(sigma),
                p_prime,
            });
        }
        Err(Error::Config(format!("unknown kernel `{name}`")))
    }
}

/// Median pairwise Euclidean distance, the default RBF bandwidth.
pub fn median_pairwise_distance(points: &[DVector<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((&points[i] - &points[j]).norm());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Embeds points via the top eigenpairs of the kernel Gram matrix.
///
/// Returns the embedded points (dimension `min(p_prime, rank)`) and the full
/// eigenvalue list in descending order. If fewer than `p_prime` eigenvalues
/// are numerically positive the embedding is clamped to the rank and a
/// warning is logged.
pub fn kernel_embed(
    points: &[DVector<f64>],
    spec: &KernelSpec,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::EmptyInput("kernel embedding point set".into()));
    }
    if spec.p_prime == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let n = points.len();
    let sigma = match spec.kind {
        KernelKind::Rbf => spec.sigma.unwrap_or_else(|| median_pairwise_distance(points)),
        KernelKind::Linear => 1.0,
    };
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}")));
    }

    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = match spec.kind {
                KernelKind::Rbf => {
                    (-(&points[i] - &points[j]).norm_squared() / (2.0 * sigma)).exp()
                }
                KernelKind::Linear => points[i].dot(&points[j]),
            };
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
    }

    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    // Numerical rank cutoff relative to the largest eigenvalue.
    let tol = eigenvalues[0].max(0.0) * 1e-12 + 1e-300;
    let rank = eigenvalues.iter().take_while(|&&l| l > tol).count();
    if rank == 0 {
        return Err(Error::Numeric("kernel Gram matrix has no positive eigenvalues".into()));
    }
    let p_used = spec.p_prime.min(rank);
    if p_used < spec.p_prime {
        log::warn!(
            "kernel embedding clamped from {} to {} dimensions (Gram rank {})",
            spec.p_prime,
            p_used,
            rank
        );
    }

    let mut embedded = vec![DVector::zeros(p_used); n];
    for (j, &col) in order[..p_used].iter().enumerate() {
        let scale = eigenvalues[j].sqrt();
        for i in 0..n {
            embedded[i][j] = scale * eig.eigenvectors[(i, col)];
        }
    }
    Ok((embedded, eigenvalues))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_embeds_to_sqrt_of_self_similarity() {
        let points = vec![DVector::from_column_slice(&[1.0, 2.0])];
        let spec = KernelSpec::rbf(3);
        let (emb, eigs) = kernel_embed(&points, &spec).unwrap();
        // kappa(x, x) = 1 for RBF, so the 1x1 Gram matrix has eigenvalue 1
        // and the embedding is clamped to one dimension.
        assert_eq!(emb[0].len(), 1);
        assert!((eigs[0] - 1.0).abs() < 1e-12);
        assert!((emb[0][0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_reproduces_gram_inner_products() {
        let points = vec![
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[1.0, 0.5]),
            DVector::from_column_slice(&[-0.5, 2.0]),
            DVector::from_column_slice(&[3.0, -1.0]),
        ];
        let spec = KernelSpec {
            kind: KernelKind::Rbf,
            sigma: Some(2.0),
            p_prime: 4,
        };
        let (emb, _) = kernel_embed(&points, &spec).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let k = (-(&points[i] - &points[j]).norm_squared() / 4.0).exp();
                assert!((emb[i].dot(&emb[j]) - k).abs() < 1e-9, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn linear_kernel_recovers_euclidean_geometry() {
        let points = vec![
            DVector::from_column_slice(&[1.0, 0.0]),
            DVector::from_column_slice(&[0.0, 1.0]),
            DVector::from_column_slice(&[-1.0, 0.0]),
        ];
        let spec = KernelSpec::parse("linear", 2).unwrap();
        let (emb, _) = kernel_embed(&points, &spec).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = points[i].dot(&points[j]);
                assert!((emb[i].dot(&emb[j]) - expect).abs() < 1e-9);
            }
        }
        // Pairwise distances are preserved exactly for the linear kernel.
        let d_emb = (&emb[0] - &emb[2]).norm();
        assert!((d_emb - 2.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_points_clamp_rank() {
        let points = vec![DVector::from_column_slice(&[1.0]); 5];
        let spec = KernelSpec::rbf(5);
        let (emb, eigs) = kernel_embed(&points, &spec).unwrap();
        assert_eq!(emb[0].len(), 1);
        assert!((eigs[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(KernelSpec::parse("rbf", 2).unwrap().kind, KernelKind::Rbf);
        let s = KernelSpec::parse("rbf:0.7", 2).unwrap();
        assert_eq!(s.sigma, Some(0.7));
        assert!(KernelSpec::parse("rbf:-1", 2).is_err());
        assert!(KernelSpec::parse("poly", 2).is_err());
    }
}

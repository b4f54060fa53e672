//! Joint-Gaussian fit over successive state pairs.
//!
//! Fitting a Gaussian to stacked pairs `z = (x_t; x_{t+1})` gives a local
//! linear model of the dynamics: the conditional mean of `x_{t+1}` given
//! `x_t` is affine with slope `Sigma_21 * Sigma_11^{-1}`, which coincides
//! with the least-squares regression (with intercept) of `x_{t+1}` on `x_t`.
//! The slope is what segmentation compares across windows when a linear model
//! is wanted instead of raw window coordinates.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Joint Gaussian over `(x_t, x_{t+1})` pairs plus the induced linear model.
#[derive(Debug, Clone)]
pub struct JointGaussianFit {
    /// Mean of the stacked vector `(x_t; x_{t+1})`, length `2p`.
    pub mean: DVector<f64>,
    /// Covariance of the stacked vector, `2p x 2p`, maximum likelihood.
    pub cov: DMatrix<f64>,
    /// Conditional slope `Sigma_21 * Sigma_11^{-1}` (`p x p`).
    pub slope: DMatrix<f64>,
    /// True if `Sigma_11` needed diagonal regularization to invert.
    pub regularized: bool,
}

/// Fits the joint Gaussian and conditional slope to `(x_t, x_{t+1})` pairs.
///
/// Needs at least two pairs. If the marginal covariance `Sigma_11` is
/// singular (collinear inputs), `eps * I` with `eps = 1e-9 * max(trace/p, 1)`
/// is added until it factors, and `regularized` is set.
pub fn fit_joint_gaussian(pairs: &[(DVector<f64>, DVector<f64>)]) -> Result<JointGaussianFit> {
    if pairs.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "joint Gaussian fit needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let p = pairs[0].0.len();
    for (x, y) in pairs {
        if x.len() != p || y.len() != p {
            return Err(Error::DimensionMismatch {
                what: "joint Gaussian pair".into(),
                expected: p,
                got: if x.len() != p { x.len() } else { y.len() },
            });
        }
    }
    let n = pairs.len();
    let dim = 2 * p;

    let mut mean = DVector::zeros(dim);
    for (x, y) in pairs {
        for i in 0..p {
            mean[i] += x[i];
            mean[p + i] += y[i];
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(dim, dim);
    let mut z = DVector::zeros(dim);
    for (x, y) in pairs {
        for i in 0..p {
            z[i] = x[i] - mean[i];
            z[p + i] = y[i] - mean[p + i];
        }
        cov += &z * z.transpose();
    }
    cov /= n as f64;

    let sigma11 = cov.view((0, 0), (p, p)).into_owned();
    let sigma21 = cov.view((p, 0), (p, p)).into_owned();

    let mut regularized = false;
    let mut working = sigma11.clone();
    let chol = loop {
        match working.clone().cholesky() {
            Some(c) => break c,
            None => {
                if regularized {
                    return Err(Error::Numeric(
                        "Sigma_11 singular even after regularization".into(),
                    ));
                }
                regularized = true;
                let eps = 1e-9 * (sigma11.trace() / p as f64).max(1.0);
                for i in 0..p {
                    working[(i, i)] += eps;
                }
            }
        }
    };
    // slope = Sigma_21 * Sigma_11^{-1}, computed by solving
    // Sigma_11 * slope^T = Sigma_21^T.
    let slope = chol.solve(&sigma21.transpose()).transpose();

    Ok(JointGaussianFit {
        mean,
        cov,
        slope,
        regularized,
    })
}

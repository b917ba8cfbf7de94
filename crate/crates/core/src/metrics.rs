//! Accuracy and calibration scores of a latent-force posterior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurements::LinkFunction;

/// 5% and 95% quantiles of χ²(k) for k = 1..=10.
const CHI2_CI90: [(f64, f64); 10] = [
    (0.00393214, 3.84146),
    (0.102587, 5.99146),
    (0.351846, 7.81473),
    (0.710723, 9.48773),
    (1.145476, 11.0705),
    (1.635383, 12.5916),
    (2.167350, 14.0671),
    (2.732637, 15.5073),
    (3.325113, 16.9190),
    (3.940299, 18.3070),
];

pub fn chi2_ci90(dof: usize) -> Result<(f64, f64)> {
    if !(1..=CHI2_CI90.len()).contains(&dof) {
        return Err(Error::argument(format!("χ² interval tabulated for 1..=10 degrees of freedom, got {dof}")));
    }
    Ok(CHI2_CI90[dof - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSpace {
    /// Before the link (logit / log scale).
    Native,
    /// After the link.
    Linked,
}

fn check_grid(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::argument(format!("grid mismatch: {a} estimate points vs {b} truth points")));
    }
    if a == 0 {
        return Err(Error::argument("nothing to score"));
    }
    Ok(())
}

/// `√(mean over time and coordinates of squared error)`.
pub fn rmse(estimate: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    check_grid(estimate.len(), truth.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (e, t) in estimate.iter().zip(truth) {
        if e.len() != t.len() {
            return Err(Error::argument("estimate and truth differ in dimension"));
        }
        sum += (e - t).norm_squared();
        count += e.len();
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

/// RMSE of each coordinate separately.
pub fn rmse_per_coordinate(estimate: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<Vec<f64>> {
    check_grid(estimate.len(), truth.len())?;
    let d = truth[0].len();
    let n = truth.len() as f64;
    Ok((0..d)
        .map(|i| (estimate.iter().zip(truth).map(|(e, t)| (e[i] - t[i]).powi(2)).sum::<f64>() / n).sqrt())
        .collect())
}

pub fn apply_links(values: &[DVector<f64>], links: &[LinkFunction]) -> Vec<DVector<f64>> {
    values
        .iter()
        .map(|v| DVector::from_iterator(v.len(), v.iter().zip(links).map(|(x, l)| l.forward(*x))))
        .collect()
}

/// RMSE of latent posterior means in native space, or of their links
/// against the linked truth.
pub fn latent_rmse(
    means_native: &[DVector<f64>],
    truth_native: &[DVector<f64>],
    links: &[LinkFunction],
    space: LatentSpace,
) -> Result<f64> {
    match space {
        LatentSpace::Native => rmse(means_native, truth_native),
        LatentSpace::Linked => rmse(&apply_links(means_native, links), &apply_links(truth_native, links)),
    }
}

/// Time-averaged normalized estimation error squared
/// `mean_t (m_t − u_t)ᵀ P_t⁻¹ (m_t − u_t)`; returns `(χ², dof)`.
pub fn chi2_statistic(
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
    truth: &[DVector<f64>],
    times: &[f64],
) -> Result<(f64, usize)> {
    check_grid(means.len(), truth.len())?;
    check_grid(covs.len(), truth.len())?;
    check_grid(times.len(), truth.len())?;
    let dof = truth[0].len();
    let mut total = 0.0;
    for k in 0..truth.len() {
        let err = &means[k] - &truth[k];
        let chol = covs[k].clone().cholesky().ok_or_else(|| {
            Error::numerical(times[k], "latent marginal covariance is singular; χ² undefined")
        })?;
        let white = chol.l().solve_lower_triangular(&err).ok_or_else(|| {
            Error::numerical(times[k], "latent marginal covariance is singular; χ² undefined")
        })?;
        total += white.norm_squared();
    }
    Ok((total / truth.len() as f64, dof))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rmse_native: f64,
    pub rmse_linked: f64,
    pub rmse_native_per_channel: Vec<f64>,
    pub rmse_linked_per_channel: Vec<f64>,
    pub chi2: f64,
    pub chi2_dof: usize,
    pub chi2_ci90: (f64, f64),
    pub chi2_in_ci90: bool,
    pub n_eval_points: usize,
}

/// Scores native-space latent marginals against the native truth.
pub fn score(
    times: &[f64],
    means_native: &[DVector<f64>],
    covs_native: &[DMatrix<f64>],
    truth_native: &[DVector<f64>],
    links: &[LinkFunction],
) -> Result<ScoreReport> {
    let (chi2, dof) = chi2_statistic(means_native, covs_native, truth_native, times)?;
    let ci = chi2_ci90(dof)?;
    let linked_est = apply_links(means_native, links);
    let linked_truth = apply_links(truth_native, links);
    Ok(ScoreReport {
        rmse_native: rmse(means_native, truth_native)?,
        rmse_linked: rmse(&linked_est, &linked_truth)?,
        rmse_native_per_channel: rmse_per_coordinate(means_native, truth_native)?,
        rmse_linked_per_channel: rmse_per_coordinate(&linked_est, &linked_truth)?,
        chi2,
        chi2_dof: dof,
        chi2_ci90: ci,
        chi2_in_ci90: ci.0 < chi2 && chi2 < ci.1,
        n_eval_points: times.len(),
    })
}

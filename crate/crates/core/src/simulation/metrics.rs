use serde::{Deserialize, Serialize};

use crate::error::{BveError, Result};
use crate::geometry::Vec3;

/// Truth coordinates closer to zero than this are left out of the MAPE.
pub const MAPE_GUARD: f64 = 1e-3;

/// Error statistics over a batch of final estimates.
///
/// Per-axis metrics pool all `N·M` coordinate errors; `mean_eucl_mm` is the
/// mean of the per-run Euclidean errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: Option<String>,
    pub runs: usize,
    pub failed_runs: usize,
    /// `None` when every truth coordinate fell under the guard.
    pub mape_pct: Option<f64>,
    pub mae_mm: f64,
    pub mse_mm2: f64,
    pub rmse_mm: f64,
    pub mean_eucl_mm: f64,
    pub mean_initial_eucl_mm: Option<f64>,
    pub restoring_iterations: usize,
    pub infeasible_iterations: usize,
}

pub fn compute_metrics(true_values: &[Vec3], estimates: &[Vec3]) -> Result<MetricsReport> {
    if true_values.is_empty() || true_values.len() != estimates.len() {
        return Err(BveError::EmptyInput);
    }
    let terms = (true_values.len() * 3) as f64;
    let (mut abs_sum, mut sq_sum, mut eucl_sum) = (0.0, 0.0, 0.0);
    let (mut pct_sum, mut pct_terms) = (0.0, 0usize);
    for (truth, est) in true_values.iter().zip(estimates) {
        let err = truth - est;
        eucl_sum += err.norm();
        for j in 0..3 {
            abs_sum += err[j].abs();
            sq_sum += err[j] * err[j];
            if truth[j].abs() >= MAPE_GUARD {
                pct_sum += (err[j] / truth[j]).abs();
                pct_terms += 1;
            }
        }
    }
    let mse_m2 = sq_sum / terms;
    Ok(MetricsReport {
        experiment: None,
        runs: true_values.len(),
        failed_runs: 0,
        mape_pct: (pct_terms > 0).then(|| 100.0 * pct_sum / pct_terms as f64),
        mae_mm: 1e3 * abs_sum / terms,
        mse_mm2: 1e6 * mse_m2,
        rmse_mm: 1e3 * mse_m2.sqrt(),
        mean_eucl_mm: 1e3 * eucl_sum / true_values.len() as f64,
        mean_initial_eucl_mm: None,
        restoring_iterations: 0,
        infeasible_iterations: 0,
    })
}

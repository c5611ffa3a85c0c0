use serde::{Deserialize, Serialize};

use super::{run_single_with, summarize, InitialEstimate, ScenarioConfig};
use crate::error::{invalid, Result};

/// Averaged final errors for one initial-error level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: usize,
    pub initial_error_m: f64,
    pub sims: usize,
    pub mae_mm: f64,
    pub mse_mm2: f64,
    pub rmse_mm: f64,
    pub mean_eucl_mm: f64,
    pub mape_pct: Option<f64>,
    pub infeasible_iterations: usize,
}

/// Final error as a function of the initial estimation error.
///
/// Level `l` starts every simulation `l·step` meters from the truth along a
/// random direction. Simulation `s` of every level uses seed `base + s`, so
/// levels differ only in the size of the initial offset.
pub fn recoverability_sweep(
    config: &ScenarioConfig,
    max_error: f64,
    step: f64,
    sims_per_level: usize,
) -> Result<Vec<SweepRow>> {
    if !(step > 0.0) || !(max_error >= 0.0) {
        return Err(invalid(
            "sweep",
            "step must be positive and max_error non-negative",
        ));
    }
    if sims_per_level == 0 {
        return Err(invalid("sims_per_level", "must be at least 1"));
    }
    let levels = (max_error / step).round() as usize + 1;
    (0..levels)
        .map(|level| {
            let e = step * level as f64;
            let records = (0..sims_per_level)
                .map(|s| {
                    let seed = config.seed.wrapping_add(s as u64);
                    run_single_with(config, seed, s, InitialEstimate::Offset(e))
                })
                .collect::<Result<Vec<_>>>()?;
            let report = summarize(&records, None)?;
            Ok(SweepRow {
                level,
                initial_error_m: e,
                sims: sims_per_level,
                mae_mm: report.mae_mm,
                mse_mm2: report.mse_mm2,
                rmse_mm: report.rmse_mm,
                mean_eucl_mm: report.mean_eucl_mm,
                mape_pct: report.mape_pct,
                infeasible_iterations: report.infeasible_iterations,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ExperimentId;

    #[test]
    fn level_grid() {
        let cfg = ScenarioConfig {
            iterations: 2,
            ..ScenarioConfig::for_experiment(ExperimentId::E1)
        };
        let rows = recoverability_sweep(&cfg, 0.02, 0.01, 1).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].initial_error_m, 0.02);
        assert!(recoverability_sweep(&cfg, 0.5, 0.0, 1).is_err());
    }

    #[test]
    fn zero_level_without_noise_is_exact() {
        let cfg = ScenarioConfig {
            iterations: 3,
            measurement_noise: false,
            ..ScenarioConfig::for_experiment(ExperimentId::E1)
        };
        let rows = recoverability_sweep(&cfg, 0.0, 0.01, 2).unwrap();
        assert!(rows[0].mean_eucl_mm < 1e-6);
    }
}

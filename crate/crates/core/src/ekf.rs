//! Range-only extended Kalman filter for a static target.

use nalgebra::{Matrix3, RowVector3};
use serde::{Deserialize, Serialize};

use crate::belief::{spd_inverse, symmetrize, Covariance3};
use crate::error::{invalid, BveError, Result};
use crate::geometry::Vec3;

/// Target estimate and its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub x_hat: Vec3,
    pub p: Matrix3<f64>,
}

impl EkfState {
    pub fn new(x_hat: Vec3, p: &Covariance3) -> Self {
        Self {
            x_hat,
            p: *p.matrix(),
        }
    }

    pub fn covariance(&self) -> Result<Covariance3> {
        Covariance3::new(self.p)
    }

    /// Normalized estimation error squared against `truth`.
    pub fn nees(&self, truth: &Vec3) -> Result<f64> {
        let err = self.x_hat - truth;
        Ok((err.transpose() * spd_inverse(&self.p)? * err)[(0, 0)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    pub q: Matrix3<f64>,
}

impl ProcessNoise {
    pub fn isotropic(variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(invalid("q", "must be non-negative"));
        }
        Ok(Self {
            q: Matrix3::identity() * variance,
        })
    }

    pub fn zero() -> Self {
        Self {
            q: Matrix3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeMeasurementModel {
    /// Range variance (m²).
    pub sigma_xx: f64,
}

impl RangeMeasurementModel {
    pub fn new(sigma_xx: f64) -> Result<Self> {
        if !(sigma_xx > 0.0) || !sigma_xx.is_finite() {
            return Err(invalid("sigma_xx", "must be positive"));
        }
        Ok(Self { sigma_xx })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceForm {
    /// `(I − K H) P`
    #[default]
    Simple,
    /// `(I − K H) P (I − K H)ᵀ + K R Kᵀ`
    Joseph,
}

/// The target does not move: only the covariance grows.
pub fn predict(state: &EkfState, q: &ProcessNoise) -> EkfState {
    EkfState {
        x_hat: state.x_hat,
        p: symmetrize(&(state.p + q.q)),
    }
}

/// Simulated range reading; `noise_sample` is a standard-normal draw.
pub fn measure_range(
    true_k: &Vec3,
    c: &Vec3,
    model: &RangeMeasurementModel,
    noise_sample: f64,
) -> f64 {
    (true_k - c).norm() + noise_sample * model.sigma_xx.sqrt()
}

pub fn update(
    state: &EkfState,
    z: f64,
    c: &Vec3,
    model: &RangeMeasurementModel,
) -> Result<EkfState> {
    update_with(state, z, c, model, CovarianceForm::Simple)
}

pub fn update_with(
    state: &EkfState,
    z: f64,
    c: &Vec3,
    model: &RangeMeasurementModel,
    form: CovarianceForm,
) -> Result<EkfState> {
    let offset = state.x_hat - c;
    let predicted = offset.norm();
    if !(predicted > 1e-9) {
        return Err(BveError::DegenerateDirection(
            "camera coincides with the target estimate",
        ));
    }
    let h: RowVector3<f64> = (offset / predicted).transpose();
    let ph = state.p * h.transpose();
    let innovation_var = (h * ph)[(0, 0)] + model.sigma_xx;
    if !(innovation_var > 0.0) || !innovation_var.is_finite() {
        return Err(BveError::NumericalBreakdown(
            "innovation variance is not positive",
        ));
    }
    let gain = ph / innovation_var;
    let i_kh = Matrix3::identity() - gain * h;
    let p = match form {
        CovarianceForm::Simple => i_kh * state.p,
        CovarianceForm::Joseph => {
            i_kh * state.p * i_kh.transpose() + gain * gain.transpose() * model.sigma_xx
        }
    };
    Ok(EkfState {
        x_hat: state.x_hat + gain * (z - predicted),
        p: symmetrize(&p),
    })
}

/// Predict, take a simulated reading from `c`, correct.
pub fn step(
    state: &EkfState,
    true_k: &Vec3,
    c: &Vec3,
    q: &ProcessNoise,
    model: &RangeMeasurementModel,
    noise_sample: f64,
) -> Result<EkfState> {
    step_with(
        state,
        true_k,
        c,
        q,
        model,
        noise_sample,
        CovarianceForm::Simple,
    )
}

pub fn step_with(
    state: &EkfState,
    true_k: &Vec3,
    c: &Vec3,
    q: &ProcessNoise,
    model: &RangeMeasurementModel,
    noise_sample: f64,
    form: CovarianceForm,
) -> Result<EkfState> {
    let predicted = predict(state, q);
    let z = measure_range(true_k, c, model, noise_sample);
    update_with(&predicted, z, c, model, form)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(x: Vec3, var: f64) -> EkfState {
        EkfState::new(x, &Covariance3::isotropic(var).unwrap())
    }

    #[test]
    fn predict_examples() {
        let s = state(Vec3::new(0.1, 0.2, 0.3), 1e-4);
        assert_eq!(predict(&s, &ProcessNoise::zero()), s);
        let p = predict(&s, &ProcessNoise::isotropic(1e-6).unwrap());
        assert_abs_diff_eq!(p.p, Matrix3::identity() * 1.01e-4, epsilon = 1e-18);
        assert_eq!(p.x_hat, s.x_hat);
        assert!(p.p.trace() > s.p.trace());
    }

    #[test]
    fn measure_examples() {
        let model = RangeMeasurementModel::new(0.0025).unwrap();
        let k = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(measure_range(&k, &Vec3::zeros(), &model, 0.0), 1.0);
        assert_abs_diff_eq!(
            measure_range(&k, &Vec3::zeros(), &model, 2.0),
            1.1,
            epsilon = 1e-15
        );
    }

    #[test]
    fn scalar_update_worked_example() {
        let s = state(Vec3::new(1.0, 0.0, 0.0), 1e-2);
        let model = RangeMeasurementModel::new(1e-2).unwrap();
        let out = update(&s, 1.1, &Vec3::zeros(), &model).unwrap();
        assert_abs_diff_eq!(out.x_hat, Vec3::new(1.05, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(
            out.p,
            Matrix3::from_diagonal(&Vec3::new(0.005, 0.01, 0.01)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_innovation_keeps_estimate_and_shrinks_along_range() {
        let s = state(Vec3::new(0.3, 0.4, 0.0), 1e-2);
        let model = RangeMeasurementModel::new(1e-2).unwrap();
        let out = update(&s, 0.5, &Vec3::zeros(), &model).unwrap();
        assert_abs_diff_eq!(out.x_hat, s.x_hat, epsilon = 1e-15);
        let dir = Vec3::new(0.6, 0.8, 0.0);
        assert!(dir.dot(&(out.p * dir)) < dir.dot(&(s.p * dir)));
        let diff = s.p - out.p;
        assert!(diff.symmetric_eigenvalues().min() >= -1e-15);
    }

    #[test]
    fn joseph_matches_simple_for_optimal_gain() {
        let s = state(Vec3::new(0.3, -0.4, 0.7), 2e-3);
        let model = RangeMeasurementModel::new(1e-3).unwrap();
        let c = Vec3::new(-0.5, 0.2, 0.1);
        let a = update_with(&s, 1.3, &c, &model, CovarianceForm::Simple).unwrap();
        let b = update_with(&s, 1.3, &c, &model, CovarianceForm::Joseph).unwrap();
        assert_abs_diff_eq!(a.p, b.p, epsilon = 1e-15);
    }

    #[test]
    fn step_with_consistent_estimate_is_stationary() {
        let k = Vec3::new(0.2, 0.1, -0.3);
        let s = state(k, 1e-3);
        let model = RangeMeasurementModel::new(0.0025).unwrap();
        let out = step(
            &s,
            &k,
            &Vec3::new(1.0, 1.0, 1.0),
            &ProcessNoise::zero(),
            &model,
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(out.x_hat, k, epsilon = 1e-15);
    }

    #[test]
    fn fixed_viewpoint_leaves_lateral_error() {
        let k = Vec3::new(1.0, 0.0, 0.0);
        let mut s = state(k + Vec3::new(0.0, 0.05, 0.0), 1e-2);
        let model = RangeMeasurementModel::new(1e-4).unwrap();
        let far = Vec3::new(-20.0, 0.0, 0.0);
        for _ in 0..50 {
            s = step(&s, &k, &far, &ProcessNoise::zero(), &model, 0.0).unwrap();
        }
        // the lateral offset barely registers in the range from a distant pose
        assert!((s.x_hat - k).y.abs() > 0.04);
    }

    #[test]
    fn coincident_camera_is_degenerate() {
        let s = state(Vec3::new(0.1, 0.1, 0.1), 1e-2);
        let model = RangeMeasurementModel::new(1e-2).unwrap();
        assert!(matches!(
            update(&s, 0.0, &Vec3::new(0.1, 0.1, 0.1), &model),
            Err(BveError::DegenerateDirection(_))
        ));
    }
}

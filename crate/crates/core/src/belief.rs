//! Covariance algebra for 3D position beliefs.
//!
//! Fusing Gaussian observations of a fixed point reduces to summing
//! precision matrices, so everything here works through SPD inverses.

use nalgebra::{Cholesky, Matrix3, U3};

use crate::error::{BveError, Result};
use crate::geometry::{RotationMatrix, Vec3};

/// Largest condition number accepted when inverting a covariance.
pub const MAX_CONDITION: f64 = 1e12;

/// Symmetric positive-definite 3x3 covariance (m²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(Matrix3<f64>);

pub(crate) fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of an SPD matrix, rejecting ill-conditioned input.
pub(crate) fn spd_cholesky(m: &Matrix3<f64>) -> Result<Cholesky<f64, U3>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(BveError::SingularCovariance);
    }
    let chol = Cholesky::new(*m).ok_or(BveError::SingularCovariance)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    // squared pivot ratio is a lower bound on the condition number
    if !(lo > 0.0) || (hi / lo).powi(2) > MAX_CONDITION {
        return Err(BveError::SingularCovariance);
    }
    Ok(chol)
}

pub(crate) fn spd_inverse(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    Ok(symmetrize(&spd_cholesky(m)?.inverse()))
}

impl Covariance3 {
    /// Symmetrizes `m` and checks positive definiteness.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let s = symmetrize(&m);
        Cholesky::new(s).ok_or(BveError::SingularCovariance)?;
        Ok(Self(s))
    }

    pub fn from_diagonal(xx: f64, yy: f64, zz: f64) -> Result<Self> {
        Self::new(Matrix3::from_diagonal(&Vec3::new(xx, yy, zz)))
    }

    pub fn isotropic(variance: f64) -> Result<Self> {
        Self::from_diagonal(variance, variance, variance)
    }

    /// Wraps a matrix the caller already knows to be SPD and symmetric.
    pub(crate) fn from_trusted(m: Matrix3<f64>) -> Self {
        Self(symmetrize(&m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn diagonal(&self) -> Vec3 {
        self.0.diagonal()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec3 {
        let mut ev = self.0.symmetric_eigenvalues();
        ev.as_mut_slice()
            .sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        ev
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigenvalues().max()
    }

    /// Precision matrix.
    pub fn inverse(&self) -> Result<Matrix3<f64>> {
        spd_inverse(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0 * factor)
    }
}

/// Gaussian belief over a 3D position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vec3,
    pub cov: Covariance3,
}

/// Expresses the camera-frame covariance in the world frame: `R Σ Rᵀ`.
pub fn rotate_covariance(r: &RotationMatrix, sigma_c: &Covariance3) -> Covariance3 {
    let m = r.matrix();
    Covariance3::from_trusted(m * sigma_c.matrix() * m.transpose())
}

/// Intersection of two Gaussians on the same mean: `(A⁻¹ + B⁻¹)⁻¹`.
pub fn fuse(sigma_o: &Covariance3, sigma_n: &Covariance3) -> Result<Covariance3> {
    fuse_chain(&[*sigma_o, *sigma_n])
}

/// Intersection of any number of Gaussians on the same mean.
pub fn fuse_chain(priors: &[Covariance3]) -> Result<Covariance3> {
    let precision = priors
        .iter()
        .map(Covariance3::inverse)
        .try_fold(None::<Matrix3<f64>>, |acc, p| {
            let p = p?;
            Ok::<_, BveError>(Some(acc.map_or(p, |a| a + p)))
        })?
        .ok_or(BveError::EmptyInput)?;
    Ok(Covariance3(spd_inverse(&precision)?))
}

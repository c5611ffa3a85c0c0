//! Camera frames and the look-at rotation.
//!
//! The camera looks along its own x axis. Its y axis is kept parallel to the
//! world xy plane, which fixes the roll that the observation model does not
//! care about.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{BveError, Result};

pub type Vec3 = Vector3<f64>;

/// Directions shorter than this are treated as undefined.
pub const MIN_DIRECTION_NORM: f64 = 1e-12;

/// Below this horizontal extent the view is treated as vertical.
pub const VERTICAL_VIEW_EPS: f64 = 1e-9;

/// How the perpendicular used by the field-of-view restriction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerpMode {
    /// `(-e.y, e.x, e.z)`, normalized. Only truly perpendicular for horizontal `e`.
    #[default]
    Paper,
    /// Same seed vector with its component along `e` projected out.
    Orthogonal,
}

/// Camera-to-world rotation. Columns are the camera axes in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and orientation.
    pub fn try_from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if !ortho.is_finite() || ortho > tol || (m.determinant() - 1.0).abs() > tol {
            return Err(BveError::NumericalBreakdown(
                "matrix is not a proper rotation",
            ));
        }
        Ok(Self(m))
    }

    /// Rotation by `angle` radians about the world z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Viewing direction (camera x axis) in the world frame.
    pub fn view_axis(&self) -> Vec3 {
        self.0.column(0).into_owned()
    }
}

/// Unit vector along `v`.
pub fn unit(v: &Vec3) -> Result<Vec3> {
    let n = v.norm();
    if !(n > MIN_DIRECTION_NORM) {
        return Err(BveError::DegenerateDirection("vector norm is zero"));
    }
    Ok(v / n)
}

/// Horizontal axis of a camera looking along unit `e`.
///
/// For a vertical view the seed `(-e.y, e.x, 0)` vanishes and world y is used.
pub(crate) fn horizontal_axis(e: &Vec3) -> Vec3 {
    if e.x.abs() < VERTICAL_VIEW_EPS && e.y.abs() < VERTICAL_VIEW_EPS {
        return Vec3::y();
    }
    let seed = Vec3::new(-e.y, e.x, 0.0);
    seed / seed.norm()
}

/// Rotation of a camera at `c` looking at `k_hat`.
pub fn look_at_rotation(k_hat: &Vec3, c: &Vec3) -> Result<RotationMatrix> {
    let e_x = unit(&(k_hat - c))
        .map_err(|_| BveError::DegenerateDirection("camera coincides with the target estimate"))?;
    let e_y = horizontal_axis(&e_x);
    let z = e_x.cross(&e_y);
    let e_z = z / z.norm();
    Ok(RotationMatrix(Matrix3::from_columns(&[e_x, e_y, e_z])))
}

/// Perpendicular to the viewing direction used by the cone restriction.
pub fn fov_perpendicular(e_c: &Vec3) -> Result<Vec3> {
    perpendicular(e_c, PerpMode::Paper)
}

pub fn perpendicular(e_c: &Vec3, mode: PerpMode) -> Result<Vec3> {
    let seed = Vec3::new(-e_c.y, e_c.x, e_c.z);
    let v = match mode {
        PerpMode::Paper => seed,
        PerpMode::Orthogonal => seed - e_c * e_c.dot(&seed),
    };
    unit(&v).map_err(|_| BveError::DegenerateDirection("perpendicular vanishes"))
}

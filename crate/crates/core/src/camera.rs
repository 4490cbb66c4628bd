//! Calibrated pinhole camera: world-to-pixel projection and its point
//! Jacobian. No lens distortion; benchmark cameras are treated as ideal
//! pinholes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec2, Vec3};
use crate::scalar::Real;

/// Minimum camera-frame depth (meters) considered in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Extrinsics (world -> camera) plus intrinsics for one view.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation, row-major orthonormal.
    pub rotation: Mat3<f64>,
    /// World-to-camera translation (meters).
    pub translation: Vec3<f64>,
    /// Focal lengths in pixels (fx, fy).
    pub focal: Vec2<f64>,
    /// Principal point in pixels (cx, cy).
    pub principal_point: Vec2<f64>,
    /// Image width and height in pixels.
    pub image_size: (u32, u32),
}

impl Camera {
    /// Validate the type invariants: orthonormal rotation with det +1,
    /// positive focal lengths and a nonempty image.
    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose().mul_mat(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr.m[i][j] - expect).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "camera rotation is not orthonormal (RtR[{i}][{j}] = {})",
                        rtr.m[i][j]
                    )));
                }
            }
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "camera rotation must have determinant +1".into(),
            ));
        }
        if self.focal.x <= 0.0 || self.focal.y <= 0.0 {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<f64> {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    /// World-space ray direction through a pixel (unit length).
    pub fn pixel_ray(&self, px: Vec2<f64>) -> Vec3<f64> {
        let dir_cam = Vec3::new(
            (px.x - self.principal_point.x) / self.focal.x,
            (px.y - self.principal_point.y) / self.focal.y,
            1.0,
        );
        self.rotation.transpose().mul_vec(dir_cam).normalized()
    }

    /// Camera-frame coordinates of a world point.
    #[inline]
    pub fn to_camera<S: Real>(&self, p: Vec3<S>) -> Vec3<S> {
        Mat3::<S>::lift(&self.rotation).mul_vec(p) + Vec3::lift(self.translation)
    }

    /// Depth of a world point along the optical axis.
    pub fn depth<S: Real>(&self, p: Vec3<S>) -> S {
        self.to_camera(p).z
    }
}

/// Pinhole projection of a world point to pixel coordinates.
///
/// Errors with [`Error::BehindCamera`] when the camera-frame depth is not
/// strictly positive; energy layers convert that case into a bounded
/// residual so objectives stay finite.
pub fn project<S: Real>(cam: &Camera, point: Vec3<S>) -> Result<Vec2<S>> {
    let pc = cam.to_camera(point);
    if pc.z.primal() <= MIN_DEPTH {
        return Err(Error::BehindCamera {
            depth: pc.z.primal(),
        });
    }
    let inv_z = S::one() / pc.z;
    Ok(Vec2::new(
        S::constant(cam.focal.x) * pc.x * inv_z + S::constant(cam.principal_point.x),
        S::constant(cam.focal.y) * pc.y * inv_z + S::constant(cam.principal_point.y),
    ))
}

/// Analytic 2x3 Jacobian of [`project`] with respect to the world point.
pub fn project_jacobian(cam: &Camera, point: Vec3<f64>) -> Result<[[f64; 3]; 2]> {
    let pc = cam.to_camera(point);
    if pc.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    let inv_z = 1.0 / pc.z;
    // d(pixel)/d(camera point), then chain through the rotation.
    let du = [
        cam.focal.x * inv_z,
        0.0,
        -cam.focal.x * pc.x * inv_z * inv_z,
    ];
    let dv = [
        0.0,
        cam.focal.y * inv_z,
        -cam.focal.y * pc.y * inv_z * inv_z,
    ];
    let r = &cam.rotation.m;
    let mut out = [[0.0; 3]; 2];
    for col in 0..3 {
        out[0][col] = du[0] * r[0][col] + du[1] * r[1][col] + du[2] * r[2][col];
        out[1][col] = dv[0] * r[0][col] + dv[1] * r[1][col] + dv[2] * r[2][col];
    }
    Ok(out)
}

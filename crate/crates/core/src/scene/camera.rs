use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera axes follow the x-right, y-down, z-forward convention; a point is
/// in front of the camera when its camera-space z is positive. Pixel centers
/// sit at half-integer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Builds a camera from a row-major 4x4 world-to-camera matrix.
    pub fn from_w2c(intrinsics: [f64; 4], width: usize, height: usize, w2c: &[f64; 16]) -> Result<Self> {
        if (w2c[12], w2c[13], w2c[14], w2c[15]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(Error::Data(format!(
                "w2c bottom row must be [0, 0, 0, 1], got {:?}",
                &w2c[12..16]
            )));
        }
        let rotation = Matrix3::new(
            w2c[0], w2c[1], w2c[2], w2c[4], w2c[5], w2c[6], w2c[8], w2c[9], w2c[10],
        );
        let translation = Vector3::new(w2c[3], w2c[7], w2c[11]);
        Self::new(intrinsics, width, height, rotation, translation)
    }

    #[rustfmt::skip]
    pub fn w2c(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn intrinsics(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    /// Camera at `eye` looking at `target`, with `up` pointing roughly up in
    /// the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::param("up", "parallel to the viewing direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(intrinsics, width, height, rotation, translation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::param("intrinsics", "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("width", "image size must be nonzero"));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) || !(self.rotation.determinant() > 0.0) {
            return Err(Error::Data(format!(
                "rotation block is not orthonormal (max deviation {err:e})"
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite translation".into()));
        }
        Ok(())
    }

    /// The same pose seen at `1/factor` resolution.
    pub fn downscaled(&self, factor: usize) -> Camera {
        let f = factor as f64;
        Camera {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
            ..self.clone()
        }
    }

    pub fn upscaled(&self, factor: usize) -> Camera {
        let f = factor as f64;
        Camera {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            ..self.clone()
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a world point to `(u, v, z)`; `None` when not in front.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 1e-9 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// True when `p` is in front of the camera and lands inside the image.
    pub fn sees(&self, p: &Vector3<f64>) -> bool {
        self.project(p).is_some_and(|(u, v, _)| self.in_bounds(u, v))
    }

    /// World point at camera-space depth `z` behind pixel coordinate `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let c = Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z);
        self.rotation.transpose() * (c - self.translation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::look_at(
            Vector3::new(1.0, -2.0, 1.5),
            Vector3::zeros(),
            Vector3::z(),
            [40.0, 40.0, 16.0, 16.0],
            32,
            32,
        )
        .unwrap()
    }

    #[test]
    fn look_at_centers_target() {
        let c = cam();
        let (u, v, z) = c.project(&Vector3::zeros()).unwrap();
        assert!((u - 16.0).abs() < 1e-12 && (v - 16.0).abs() < 1e-12);
        assert!((z - c.center().norm()).abs() < 1e-12);
        // world up projects upward (smaller v)
        let (_, v_up, _) = c.project(&Vector3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(v_up < v);
    }

    #[test]
    fn unproject_inverts_project() {
        let c = cam();
        let p = Vector3::new(0.2, 0.1, -0.3);
        let (u, v, z) = c.project(&p).unwrap();
        assert!((c.unproject(u, v, z) - p).norm() < 1e-12);
    }

    #[test]
    fn w2c_round_trip_and_orthonormality() {
        let c = cam();
        let back = Camera::from_w2c(c.intrinsics(), 32, 32, &c.w2c()).unwrap();
        assert_eq!(back, c);
        let mut m = c.w2c();
        m[0] *= 1.01;
        assert!(matches!(
            Camera::from_w2c(c.intrinsics(), 32, 32, &m),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn downscale_keeps_pixel_centers_aligned() {
        let c = cam();
        let lr = c.downscaled(2);
        let p = Vector3::new(0.1, 0.2, 0.05);
        let (u, v, _) = c.project(&p).unwrap();
        let (ul, vl, _) = lr.project(&p).unwrap();
        assert!((u / 2.0 - ul).abs() < 1e-12 && (v / 2.0 - vl).abs() < 1e-12);
        assert_eq!(lr.upscaled(2), c);
    }
}

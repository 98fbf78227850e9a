use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use super::RigidTransform;
use crate::{Error, Result};

/// Camera-space depths at or below this are rejected by [`Camera::project`].
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole camera without distortion. `pose` maps world points into the
/// camera frame. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: RigidTransform,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: RigidTransform,
    ) -> Self {
        Self { fx, fy, cx, cy, width, height, pose }
    }

    /// Camera with square pixels and a centered principal point.
    pub fn centered(focal: f64, width: usize, height: usize, pose: RigidTransform) -> Self {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            pose,
        )
    }

    /// Checks the full set of camera invariants. Construction does not
    /// enforce them so that toy cameras with `cx = 0` remain usable.
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let qn = self.pose.rotation.quaternion().norm();
        if (qn - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera(format!("pose quaternion norm {qn}")));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn with_pose(&self, pose: RigidTransform) -> Self {
        Self { pose, ..*self }
    }

    pub fn long_side(&self) -> usize {
        self.width.max(self.height)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.pose.inverse().translation
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.pose.apply(world)
    }

    /// Projects a camera-space point; no depth check.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Jacobian of [`Camera::project_camera`] at a camera-space point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        )
    }

    /// World point to `(pixel, camera-space depth)`.
    pub fn project(&self, world: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let p = self.to_camera(world);
        if !(p.z > MIN_DEPTH) {
            return Err(Error::NonPositiveDepth(p.z));
        }
        Ok((self.project_camera(&p), p.z))
    }

    /// Pixel plus camera-space depth to a world point.
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(Error::InvalidDepth(depth));
        }
        let p = self.backproject_camera(pixel, depth);
        Ok(self.pose.inverse().apply(&p))
    }

    pub fn backproject_camera(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(f: f64, c: f64, pose: RigidTransform) -> Camera {
        Camera::new(f, f, c, c, 100, 100, pose)
    }

    #[test]
    fn projects_optical_axis_to_principal_point() {
        let cam = toy(1.0, 0.0, RigidTransform::identity());
        let (px, d) = cam.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
        assert_eq!(d, 2.0);
    }

    #[test]
    fn linear_pinhole() {
        let cam = toy(100.0, 50.0, RigidTransform::identity());
        let (px, d) = cam.project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert!((px - Vector2::new(100.0, 50.0)).norm() < 1e-12);
        assert_eq!(d, 2.0);
    }

    #[test]
    fn camera_moved_back_sees_deeper_point() {
        // Camera center at z = -1: world->camera adds +1 along z.
        let center = Vector3::new(0.0, 0.0, -1.0);
        let pose = RigidTransform::from_translation(-center);
        let cam = toy(100.0, 50.0, pose);
        let (px, d) = cam.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
        assert!((px - Vector2::new(50.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_points_behind_camera() {
        let cam = toy(1.0, 0.0, RigidTransform::identity());
        assert!(matches!(cam.project(&Vector3::new(0.0, 0.0, -1.0)), Err(Error::NonPositiveDepth(_))));
        assert!(matches!(cam.project(&Vector3::new(0.0, 0.0, 0.0)), Err(Error::NonPositiveDepth(_))));
    }

    #[test]
    fn backproject_inverts_examples() {
        let cam = toy(1.0, 0.0, RigidTransform::identity());
        let p = cam.backproject(&Vector2::new(0.0, 0.0), 2.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
        let cam = toy(100.0, 50.0, RigidTransform::identity());
        let p = cam.backproject(&Vector2::new(100.0, 50.0), 2.0).unwrap();
        assert!((p - Vector3::new(1.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn backproject_rejects_bad_depth() {
        let cam = toy(1.0, 0.0, RigidTransform::identity());
        for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(cam.backproject(&Vector2::zeros(), d), Err(Error::InvalidDepth(_))));
        }
    }

    #[test]
    fn round_trip_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let axis = nalgebra::Unit::new_normalize(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.1..1.0),
            ));
            let pose = RigidTransform::new(
                UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-3.0..3.0)),
                Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            );
            let cam = Camera::new(420.0, 380.0, 255.5, 191.5, 512, 384, pose);
            cam.validate().unwrap();
            for _ in 0..1000 {
                let px = Vector2::new(rng.gen_range(0.0..512.0), rng.gen_range(0.0..384.0));
                let d = rng.gen_range(0.05..50.0);
                let world = cam.backproject(&px, d).unwrap();
                let (back, depth) = cam.project(&world).unwrap();
                assert!((back - px).norm() < 1e-6);
                assert!((depth - d).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn validate_catches_invariant_violations() {
        let ok = Camera::centered(50.0, 64, 48, RigidTransform::identity());
        assert!(ok.validate().is_ok());
        assert!(Camera { fx: 0.0, ..ok }.validate().is_err());
        assert!(Camera { cx: 64.0, ..ok }.validate().is_err());
        assert!(Camera { cy: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cam = Camera::centered(80.0, 64, 64, RigidTransform::identity());
        let p = Vector3::new(0.3, -0.2, 2.5);
        let j = cam.projection_jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            let fd = (cam.project_camera(&a) - cam.project_camera(&b)) / (2.0 * h);
            assert!((fd - j.column(k)).norm() < 1e-6);
        }
    }
}

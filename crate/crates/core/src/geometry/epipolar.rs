use nalgebra::{Matrix3, Vector2, Vector3};

use super::Camera;
use crate::{Error, Result};

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Fundamental matrix mapping pixels of `cam_a` to epipolar lines in
/// `cam_b`, normalized to unit Frobenius norm: `x_bᵀ F x_a = 0`.
pub fn fundamental_matrix(cam_a: &Camera, cam_b: &Camera) -> Result<Matrix3<f64>> {
    // x_b = R x_a + t in camera coordinates.
    let rel = cam_b.pose.compose(&cam_a.pose.inverse());
    let t = rel.translation;
    let tn = t.norm();
    if tn < 1e-9 {
        return Err(Error::DegenerateBaseline(tn));
    }
    let essential = skew(&t) * rel.rotation_matrix();
    let ka_inv = cam_a.intrinsics().try_inverse().ok_or_else(|| Error::InvalidCamera("singular intrinsics".into()))?;
    let kb_inv = cam_b.intrinsics().try_inverse().ok_or_else(|| Error::InvalidCamera("singular intrinsics".into()))?;
    let f = kb_inv.transpose() * essential * ka_inv;
    Ok(f / f.norm())
}

/// Algebraic epipolar residual `x_bᵀ F x_a`.
pub fn epipolar_residual(f: &Matrix3<f64>, xa: &Vector2<f64>, xb: &Vector2<f64>) -> f64 {
    let a = Vector3::new(xa.x, xa.y, 1.0);
    let b = Vector3::new(xb.x, xb.y, 1.0);
    b.dot(&(f * a))
}

/// First-order geometric distance (pixels) of a correspondence to the
/// epipolar constraint. Invariant to the scale of `f`.
pub fn sampson_distance(f: &Matrix3<f64>, xa: &Vector2<f64>, xb: &Vector2<f64>) -> f64 {
    let a = Vector3::new(xa.x, xa.y, 1.0);
    let b = Vector3::new(xb.x, xb.y, 1.0);
    let fa = f * a;
    let ftb = f.transpose() * b;
    let num = b.dot(&fa);
    let den = fa.x * fa.x + fa.y * fa.y + ftb.x * ftb.x + ftb.y * ftb.y;
    if den <= 0.0 {
        return 0.0;
    }
    (num * num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam_at(center: Vector3<f64>, yaw: f64) -> Camera {
        let rot = UnitQuaternion::from_euler_angles(0.02, yaw, -0.01);
        // world->camera: R (x - c)
        let pose = RigidTransform::new(rot, -(rot * center));
        Camera::new(300.0, 310.0, 160.0, 120.0, 320, 240, pose)
    }

    fn scene_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0), rng.gen_range(3.0..8.0)))
            .collect()
    }

    #[test]
    fn static_points_satisfy_constraint() {
        let a = cam_at(Vector3::zeros(), 0.0);
        let b = cam_at(Vector3::new(0.3, 0.05, 0.1), 0.04);
        let f = fundamental_matrix(&a, &b).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-12);
        let mut residuals: Vec<f64> = scene_points(200, 3)
            .iter()
            .map(|p| {
                let (pa, _) = a.project(p).unwrap();
                let (pb, _) = b.project(p).unwrap();
                epipolar_residual(&f, &pa, &pb).abs()
            })
            .collect();
        assert!(residuals.iter().all(|r| *r < 1e-6));
        residuals.sort_by(f64::total_cmp);
        assert!(residuals[residuals.len() / 2] < 1e-8);
    }

    #[test]
    fn pure_rotation_is_degenerate() {
        let a = cam_at(Vector3::new(1.0, 2.0, 3.0), 0.0);
        let b = cam_at(Vector3::new(1.0, 2.0, 3.0), 0.3);
        assert!(matches!(fundamental_matrix(&a, &b), Err(Error::DegenerateBaseline(_))));
    }

    #[test]
    fn swapping_cameras_transposes() {
        let a = cam_at(Vector3::zeros(), 0.0);
        let b = cam_at(Vector3::new(-0.2, 0.1, 0.4), -0.1);
        let fab = fundamental_matrix(&a, &b).unwrap();
        let fba = fundamental_matrix(&b, &a).unwrap();
        let t = fba.transpose();
        // Equal up to sign after unit normalization.
        let d = (fab - t).norm().min((fab + t).norm());
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn sampson_is_scale_invariant() {
        let a = cam_at(Vector3::zeros(), 0.0);
        let b = cam_at(Vector3::new(0.3, 0.0, 0.0), 0.0);
        let f = fundamental_matrix(&a, &b).unwrap();
        let xa = Vector2::new(100.0, 80.0);
        let xb = Vector2::new(130.0, 85.0);
        let s1 = sampson_distance(&f, &xa, &xb);
        let s2 = sampson_distance(&(f * 37.5), &xa, &xb);
        assert!((s1 - s2).abs() < 1e-12);
    }
}

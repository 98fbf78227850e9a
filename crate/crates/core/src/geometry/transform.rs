use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};

/// Rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    /// Builds a transform from raw `(w, x, y, z)` quaternion components,
    /// normalizing them.
    pub fn from_parts(q: [f64; 4], t: [f64; 3]) -> Self {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        Self {
            rotation: UnitQuaternion::from_quaternion(quat),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }

    /// `(qw, qx, qy, qz, tx, ty, tz)`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform { rotation: inv, translation: -(inv * self.translation) }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn renormalize(&mut self) {
        self.rotation = UnitQuaternion::from_quaternion(*self.rotation.quaternion());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| RigidTransform::from_parts(q, t))
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(tf in arb_transform(), p in prop::array::uniform3(-3.0f64..3.0)) {
            let p = Vector3::from(p);
            let id = tf.compose(&tf.inverse());
            prop_assert!((id.apply(&p) - p).norm() < 1e-9);
            prop_assert!(id.translation.norm() < 1e-9);
            prop_assert!((id.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_applies_right_operand_first(a in arb_transform(), b in arb_transform(), p in prop::array::uniform3(-3.0f64..3.0)) {
            let p = Vector3::from(p);
            let lhs = a.compose(&b).apply(&p);
            let rhs = a.apply(&b.apply(&p));
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }
    }
}

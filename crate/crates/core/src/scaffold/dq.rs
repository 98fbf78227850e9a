use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::geometry::RigidTransform;

/// Unit dual quaternion `real + ε·dual` with `dual = ½ (0, t) ⊗ real`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuaternion {
    pub real: Quaternion<f64>,
    pub dual: Quaternion<f64>,
}

impl DualQuaternion {
    pub fn from_rigid(tr: &RigidTransform) -> Self {
        let real = *tr.rotation.quaternion();
        let dual = Quaternion::from_parts(0.0, tr.translation) * real * 0.5;
        Self { real, dual }
    }

    /// Normalizes and converts back; the dual part is first projected to be
    /// orthogonal to the real part.
    pub fn to_rigid(&self) -> RigidTransform {
        let n = self.real.norm();
        let r = self.real / n;
        let d = self.dual / n;
        let d = d - r * r.dot(&d);
        let t = (d * r.conjugate()).imag() * 2.0;
        RigidTransform::new(UnitQuaternion::new_unchecked(r), t)
    }

    /// `real·dual`, zero for a valid rigid transform.
    pub fn constraint(&self) -> f64 {
        self.real.dot(&self.dual)
    }
}

/// Blend of rigid transforms whose translation is linear in the inputs'
/// translations: `t = Σ_m coeffs[m] · t_m`, rotation fixed by the weights and
/// input rotations alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlend {
    pub rotation: UnitQuaternion<f64>,
    pub coeffs: Vec<Matrix3<f64>>,
}

impl LinearBlend {
    pub fn translation(&self, translations: impl IntoIterator<Item = Vector3<f64>>) -> Vector3<f64> {
        self.coeffs.iter().zip(translations).map(|(c, t)| c * t).sum()
    }
}

/// Weighted dual-quaternion blend. Summands are sign-aligned to the real part
/// of the largest-weight input.
pub fn blend(terms: &[(f64, RigidTransform)]) -> RigidTransform {
    let lin = blend_linear(terms.iter().map(|(w, t)| (*w, t.rotation)));
    let t = lin.translation(terms.iter().map(|(_, t)| t.translation));
    RigidTransform::new(lin.rotation, t)
}

/// Rotation and translation coefficients of [`blend`] for given weights and
/// rotations.
pub fn blend_linear(terms: impl IntoIterator<Item = (f64, UnitQuaternion<f64>)>) -> LinearBlend {
    let terms: Vec<(f64, Quaternion<f64>)> = terms.into_iter().map(|(w, q)| (w, *q.quaternion())).collect();
    if terms.is_empty() {
        return LinearBlend { rotation: UnitQuaternion::identity(), coeffs: Vec::new() };
    }
    let pivot = terms.iter().enumerate().fold(0, |best, (i, t)| if t.0 > terms[best].0 { i } else { best });
    let pivot_q = terms[pivot].1;
    let signed: Vec<f64> = terms.iter().map(|(w, q)| if q.dot(&pivot_q) < 0.0 { -w } else { *w }).collect();
    let br: Quaternion<f64> = terms.iter().zip(&signed).map(|((_, q), s)| q * *s).fold(Quaternion::new(0.0, 0.0, 0.0, 0.0), |a, b| a + b);
    let n = br.norm();
    let r = br / n;
    let coeffs = terms
        .iter()
        .zip(&signed)
        .map(|((_, q), s)| {
            // vec((0, v) ⊗ p) = (p0 I − [p_v]×) v with p = q ⊗ r*.
            let p = q * r.conjugate();
            let pv = p.imag();
            let skew = Matrix3::new(0.0, -pv.z, pv.y, pv.z, 0.0, -pv.x, -pv.y, pv.x, 0.0);
            (Matrix3::identity() * p.w - skew) * (*s / n)
        })
        .collect();
    LinearBlend { rotation: UnitQuaternion::new_unchecked(r), coeffs }
}

//! Virtual cameras near a training view and depth warping into them.

use log::warn;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{check_dims, nearest_pixel, Camera, DepthMap, RigidTransform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualViewConfig {
    /// Largest in-plane camera offset as a fraction of the median depth.
    pub max_offset_factor: f64,
    pub seed: u64,
    pub samples_per_step: usize,
}

impl Default for VirtualViewConfig {
    fn default() -> Self {
        Self { max_offset_factor: 0.18, seed: 0, samples_per_step: 1 }
    }
}

impl VirtualViewConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_offset_factor > 0.0 && self.max_offset_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!("max_offset_factor {} must be positive", self.max_offset_factor)));
        }
        Ok(())
    }
}

/// In-plane offset `δ` (camera coordinates, `δ.z = 0`) of a virtual view.
pub fn sample_offset(depth: &DepthMap, cfg: &VirtualViewConfig, seed: u64) -> Result<Vector3<f64>> {
    let median = depth.median_valid().ok_or(Error::NoValidDepth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let magnitude = rng.gen::<f64>() * cfg.max_offset_factor * median;
    Ok(Vector3::new(magnitude * angle.cos(), magnitude * angle.sin(), 0.0))
}

/// `cam` with its center moved by `δ` along its own image axes.
pub fn offset_camera(cam: &Camera, delta: &Vector3<f64>) -> Camera {
    cam.with_pose(RigidTransform::from_translation(-delta).compose(&cam.pose))
}

/// A camera translated within `cam`'s image plane by at most
/// `max_offset_factor × median(depth)`.
pub fn sample_virtual_view(cam: &Camera, depth: &DepthMap, cfg: &VirtualViewConfig, seed: u64) -> Result<Camera> {
    Ok(offset_camera(cam, &sample_offset(depth, cfg, seed)?))
}

/// Forward point-splat of `depth` seen from `from` into `to`. Each target
/// pixel keeps the nearest depth; ties go to the lower source index.
pub fn warp_depth_to_virtual(depth: &DepthMap, from: &Camera, to: &Camera) -> Result<DepthMap> {
    check_dims("warp depth", depth.dims(), (from.width, from.height))?;
    if from == to {
        return Ok(depth.clone());
    }
    let rel = to.pose.compose(&from.pose.inverse());
    let mut out = DepthMap::new(to.width, to.height);
    for (i, (&d, &ok)) in depth.values.iter().zip(&depth.valid).enumerate() {
        if !ok {
            continue;
        }
        let pixel = Vector2::new((i % depth.width) as f64, (i / depth.width) as f64);
        let q = rel.apply(&from.backproject_camera(&pixel, d));
        if !(q.z > crate::render::NEAR_PLANE) {
            continue;
        }
        let Some((x, y)) = nearest_pixel(to.width, to.height, &to.project_camera(&q)) else { continue };
        let j = y * to.width + x;
        if !out.valid[j] || q.z < out.values[j] {
            out.values[j] = q.z;
            out.valid[j] = true;
        }
    }
    Ok(out)
}

/// Mean absolute depth error with its gradient with respect to the
/// rendered depth values.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    /// Pixels in the shared support.
    pub count: usize,
    pub grad: Vec<f64>,
}

/// Mean `|rendered − target|` over pixels valid in both maps.
pub fn depth_l1(rendered: &DepthMap, target: &DepthMap) -> Result<DepthLoss> {
    check_dims("depth loss", rendered.dims(), target.dims())?;
    let n = rendered.values.len();
    let mut grad = vec![0.0; n];
    let mut value = 0.0;
    let mut count = 0;
    for i in 0..n {
        if rendered.valid[i] && target.valid[i] {
            let r = rendered.values[i] - target.values[i];
            value += r.abs();
            if r.abs() > crate::scaffold::KINK_TOLERANCE {
                grad[i] = r.signum();
            }
            count += 1;
        }
    }
    if count > 0 {
        let s = 1.0 / count as f64;
        value *= s;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    Ok(DepthLoss { value, count, grad })
}

/// Depth loss against a warped map; an empty support gives zero.
pub fn virtual_depth_loss(rendered: &DepthMap, warped: &DepthMap) -> Result<DepthLoss> {
    let out = depth_l1(rendered, warped)?;
    if out.count == 0 {
        warn!("virtual-view depth loss has an empty support");
    }
    Ok(out)
}

//! Deterministic CPU splatting of anisotropic 3-D Gaussians into RGB, depth,
//! alpha and flow images, with analytic gradients.

mod backward;
mod ssim;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{Camera, DepthMap, FlowField, RgbImage};
use crate::scaffold::{ScaffoldGraph, Skin};
use crate::{Error, Result};

pub use backward::{render_gradients, Adjoint, Gradients};
pub use ssim::{ssim, ssim_with_grad, SSIM_C1, SSIM_C2};

pub const OPACITY_MIN: f64 = 0.001;
pub const OPACITY_MAX: f64 = 0.999;
/// Added to every projected covariance (pixels²) to keep footprints at
/// least about a pixel wide.
pub const COV_DILATION: f64 = 0.3;
/// Squared Mahalanobis cutoff of a footprint (3σ).
pub const CUTOFF_SQ: f64 = 9.0;
/// Gaussians with camera depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Depth is reported only where accumulated alpha exceeds this.
pub const DEPTH_ALPHA_THRESHOLD: f64 = 0.5;
/// Rows per work unit. Fixed so that sums never depend on thread count.
const ROW_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations.
    pub scales: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// Blend weights for dynamic Gaussians; `mean` and `rotation` are then
    /// expressed at `skin.frame`.
    pub skin: Option<Skin>,
}

impl Gaussian {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self { mean, rotation: UnitQuaternion::identity(), scales: Vector3::repeat(scale), opacity, color, skin: None }
    }

    pub fn is_dynamic(&self) -> bool {
        self.skin.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scales.iter().all(|s| *s > 0.0)) {
            return Err(Error::InvalidSpec(format!("non-positive Gaussian scale {:?}", self.scales)));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(Error::InvalidSpec(format!("opacity {} outside (0, 1)", self.opacity)));
        }
        if !(self.mean.iter().chain(self.color.iter()).all(|v| v.is_finite())) {
            return Err(Error::InvalidSpec("non-finite Gaussian parameters".into()));
        }
        Ok(())
    }

    /// World mean and rotation at `frame`.
    pub fn posed(&self, graph: Option<&ScaffoldGraph>, frame: usize) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let rot = self.rotation.to_rotation_matrix().into_inner();
        match &self.skin {
            None => Ok((self.mean, rot)),
            Some(skin) => {
                let graph = graph.ok_or(Error::NoNodes)?;
                let b = graph.skin_transform(skin, frame);
                Ok((b.apply(&self.mean), b.rotation_matrix() * rot))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub background: Vector3<f64>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>, background: Vector3<f64>) -> Self {
        Self { gaussians, background }
    }

    pub fn validate(&self) -> Result<()> {
        self.gaussians.iter().try_for_each(Gaussian::validate)
    }
}

/// A camera at a frame index.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub camera: &'a Camera,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    /// `Σ T α z / Σ T α` where alpha exceeds the threshold.
    pub depth: DepthMap,
    pub alpha: Vec<f64>,
    /// Unnormalized composited depth `Σ T α z`.
    pub depth_sum: Vec<f64>,
    /// `Σ T α f / Σ T α` of projected displacements towards the flow
    /// target, valid where alpha exceeds the threshold. Zero without a
    /// target.
    pub flow: FlowField,
    /// Unnormalized composited displacement `Σ T α f`.
    pub flow_sum: Vec<Vector2<f64>>,
}

/// Screen-space data of one Gaussian.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub mean2d: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub cam_point: Vector3<f64>,
    pub jac: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub flow: Vector2<f64>,
    /// Camera-space mean at the flow target, when it projects.
    pub target_point: Option<Vector3<f64>>,
    pub x_range: (usize, usize),
    pub y_range: (usize, usize),
}

/// Everything the backward pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct RenderTrace {
    pub(crate) projected: Vec<Option<Projected>>,
    /// Per pixel, Gaussians in compositing order.
    pub(crate) lists: Vec<Vec<u32>>,
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) frame: usize,
    pub(crate) target: Option<(Camera, usize)>,
    pub(crate) camera: Camera,
}

const KERNEL_FLOOR: f64 = 0.011108996538242306; // exp(-4.5)

/// Gaussian falloff shifted to reach zero exactly at the cutoff.
#[inline]
pub(crate) fn kernel(d2: f64) -> f64 {
    ((-0.5 * d2).exp() - KERNEL_FLOOR) / (1.0 - KERNEL_FLOOR)
}

#[inline]
pub(crate) fn kernel_deriv(d2: f64) -> f64 {
    -0.5 * (-0.5 * d2).exp() / (1.0 - KERNEL_FLOOR)
}

fn project_one(g: &Gaussian, graph: Option<&ScaffoldGraph>, view: &View, target: Option<&View>) -> Result<Option<Projected>> {
    let cam = view.camera;
    let (mean, rot) = g.posed(graph, view.frame)?;
    let p = cam.to_camera(&mean);
    if !(p.z > NEAR_PLANE) {
        return Ok(None);
    }
    let w = cam.pose.rotation_matrix();
    let s2 = Matrix3::from_diagonal(&g.scales.component_mul(&g.scales));
    let cov_cam = w * rot * s2 * rot.transpose() * w.transpose();
    let jac = cam.projection_jacobian(&p);
    let cov2 = jac * cov_cam * jac.transpose() + Matrix2::identity() * COV_DILATION;
    let conic = cov2.try_inverse().ok_or_else(|| Error::DimensionMismatch("singular projected covariance".into()))?;
    let mean2d = cam.project_camera(&p);
    let (target_point, flow) = match target {
        Some(tv) => {
            let (m_to, _) = g.posed(graph, tv.frame)?;
            let q = tv.camera.to_camera(&m_to);
            if q.z > NEAR_PLANE {
                (Some(q), tv.camera.project_camera(&q) - mean2d)
            } else {
                (None, Vector2::zeros())
            }
        }
        None => (None, Vector2::zeros()),
    };
    // Footprint bound from the largest eigenvalue of the 2x2 covariance.
    let (a, b, c) = (cov2[(0, 0)], cov2[(0, 1)], cov2[(1, 1)]);
    let mid = 0.5 * (a + c);
    let lambda = mid + (mid * mid - (a * c - b * b)).max(0.0).sqrt();
    let r = CUTOFF_SQ.sqrt() * lambda.sqrt();
    let lo_x = (mean2d.x - r).ceil().max(0.0);
    let hi_x = (mean2d.x + r).floor().min(cam.width as f64 - 1.0);
    let lo_y = (mean2d.y - r).ceil().max(0.0);
    let hi_y = (mean2d.y + r).floor().min(cam.height as f64 - 1.0);
    if !(lo_x <= hi_x && lo_y <= hi_y) {
        return Ok(None);
    }
    Ok(Some(Projected {
        mean2d,
        conic,
        cam_point: p,
        jac,
        cov_cam,
        flow,
        target_point,
        x_range: (lo_x as usize, hi_x as usize + 1),
        y_range: (lo_y as usize, hi_y as usize + 1),
    }))
}

/// Mahalanobis distance² and offset of pixel `(x, y)` from a footprint.
#[inline]
pub(crate) fn footprint(pr: &Projected, x: usize, y: usize) -> (f64, Vector2<f64>) {
    let d = Vector2::new(x as f64, y as f64) - pr.mean2d;
    ((d.transpose() * pr.conic * d)[(0, 0)], d)
}

/// Renders `cloud` from `view`, optionally with flow towards `target`.
pub fn render(cloud: &GaussianCloud, graph: Option<&ScaffoldGraph>, view: View, target: Option<View>) -> Result<(RenderOutput, RenderTrace)> {
    let cam = view.camera;
    let (w, h) = (cam.width, cam.height);
    let projected: Vec<Option<Projected>> =
        cloud.gaussians.par_iter().map(|g| project_one(g, graph, &view, target.as_ref())).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..projected.len()).filter(|&i| projected[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let za = projected[a].as_ref().unwrap().cam_point.z;
        let zb = projected[b].as_ref().unwrap().cam_point.z;
        za.total_cmp(&zb).then(a.cmp(&b))
    });

    // Bin Gaussians into per-pixel lists, one chunk of rows at a time.
    let chunks: Vec<usize> = (0..h).step_by(ROW_CHUNK).collect();
    let lists: Vec<Vec<u32>> = chunks
        .par_iter()
        .flat_map_iter(|&y0| {
            let y1 = (y0 + ROW_CHUNK).min(h);
            let mut local: Vec<Vec<u32>> = vec![Vec::new(); (y1 - y0) * w];
            for &gi in &order {
                let pr = projected[gi].as_ref().unwrap();
                let (ya, yb) = (pr.y_range.0.max(y0), pr.y_range.1.min(y1));
                for y in ya..yb {
                    for x in pr.x_range.0..pr.x_range.1 {
                        if footprint(pr, x, y).0 <= CUTOFF_SQ {
                            local[(y - y0) * w + x].push(gi as u32);
                        }
                    }
                }
            }
            local
        })
        .collect();

    let bg = cloud.background;
    let pixels: Vec<(Vector3<f64>, f64, f64, Vector2<f64>)> = lists
        .par_iter()
        .enumerate()
        .map(|(i, list)| {
            let (x, y) = (i % w, i / w);
            let mut t = 1.0;
            let mut color = Vector3::zeros();
            let mut z = 0.0;
            let mut flow = Vector2::zeros();
            for &gi in list {
                let pr = projected[gi as usize].as_ref().unwrap();
                let g = &cloud.gaussians[gi as usize];
                let alpha = g.opacity * kernel(footprint(pr, x, y).0);
                let wgt = t * alpha;
                color += g.color * wgt;
                z += pr.cam_point.z * wgt;
                flow += pr.flow * wgt;
                t *= 1.0 - alpha;
            }
            (color + bg * t, z, 1.0 - t, flow)
        })
        .collect();

    let mut rgb = RgbImage::new(w, h);
    let mut depth = DepthMap::new(w, h);
    let mut flow = FlowField::new(w, h);
    let mut alpha = vec![0.0; w * h];
    let mut depth_sum = vec![0.0; w * h];
    let mut flow_sum = vec![Vector2::zeros(); w * h];
    for (i, (c, z, a, f)) in pixels.into_iter().enumerate() {
        rgb.data[i] = [c.x, c.y, c.z];
        alpha[i] = a;
        depth_sum[i] = z;
        flow_sum[i] = f;
        if a > DEPTH_ALPHA_THRESHOLD {
            depth.values[i] = z / a;
            depth.valid[i] = true;
            flow.values[i] = f / a;
            flow.valid[i] = true;
        }
    }
    let trace = RenderTrace {
        projected,
        lists,
        width: w,
        height: h,
        frame: view.frame,
        target: target.map(|t| (*t.camera, t.frame)),
        camera: *cam,
    };
    Ok((RenderOutput { rgb, depth, alpha, depth_sum, flow, flow_sum }, trace))
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let n = (a.data.len() * 3) as f64;
    let mse: f64 = a.data.iter().zip(&b.data).flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).powi(2))).sum::<f64>() / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    pub fn cam16() -> Camera {
        Camera::centered(20.0, 16, 16, RigidTransform::identity())
    }

    #[test]
    fn empty_cloud_is_background() {
        let cam = cam16();
        let cloud = GaussianCloud::new(vec![], Vector3::new(0.1, 0.2, 0.3));
        let (out, _) = render(&cloud, None, View { camera: &cam, frame: 0 }, None).unwrap();
        assert!(out.rgb.data.iter().all(|c| *c == [0.1, 0.2, 0.3]));
        assert!(out.alpha.iter().all(|a| *a == 0.0));
        assert_eq!(out.depth.valid_count(), 0);
    }

    #[test]
    fn opaque_gaussian_on_a_pixel_ray() {
        let cam = Camera::centered(20.0, 15, 15, RigidTransform::identity());
        let color = Vector3::new(0.9, 0.3, 0.1);
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.5), 0.2, 0.999, color);
        let (out, _) = render(&GaussianCloud::new(vec![g], Vector3::zeros()), None, View { camera: &cam, frame: 0 }, None).unwrap();
        let c = out.rgb.get(7, 7);
        for k in 0..3 {
            assert!((c[k] - color[k]).abs() < 1e-3);
        }
        assert!((out.depth.get(7, 7).unwrap() - 2.5).abs() < 1e-3);
        assert!(out.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn two_layer_compositing_by_hand() {
        let cam = Camera::centered(20.0, 15, 15, RigidTransform::identity());
        let c1 = Vector3::new(1.0, 0.0, 0.0);
        let c2 = Vector3::new(0.0, 0.0, 1.0);
        // Listed back first to check that order comes from depth.
        let back = Gaussian::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.3, 0.8, c2);
        let front = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.2, 0.6, c1);
        let (out, _) = render(&GaussianCloud::new(vec![back, front], Vector3::zeros()), None, View { camera: &cam, frame: 0 }, None).unwrap();
        let expect = c1 * 0.6 + c2 * (0.4 * 0.8);
        let got = out.rgb.get(7, 7);
        for k in 0..3 {
            assert!((got[k] - expect[k]).abs() < 1e-12);
        }
        assert!((out.alpha[7 * 15 + 7] - (0.6 + 0.4 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn zero_opacity_renders_background() {
        let cam = cam16();
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.3, 1e-300, Vector3::repeat(1.0));
        let (out, _) = render(&GaussianCloud::new(vec![g], Vector3::repeat(0.5)), None, View { camera: &cam, frame: 0 }, None).unwrap();
        assert!(out.rgb.data.iter().all(|c| c.iter().all(|v| (v - 0.5).abs() < 1e-12)));
    }

    #[test]
    fn static_scene_has_zero_flow_and_culls_behind() {
        let cam = cam16();
        let gs = vec![
            Gaussian::isotropic(Vector3::new(0.1, -0.1, 2.0), 0.2, 0.7, Vector3::repeat(0.4)),
            Gaussian::isotropic(Vector3::new(0.0, 0.0, -2.0), 0.2, 0.7, Vector3::repeat(0.4)),
        ];
        let view = View { camera: &cam, frame: 0 };
        let (out, trace) = render(&GaussianCloud::new(gs, Vector3::zeros()), None, view, Some(View { camera: &cam, frame: 1 })).unwrap();
        assert!(out.flow.values.iter().all(|f| f.norm() < 1e-6));
        assert!(trace.projected[1].is_none());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cam = cam16();
        let gs: Vec<Gaussian> = (0..40)
            .map(|i| {
                let f = i as f64;
                Gaussian::isotropic(Vector3::new((f * 0.37).sin() * 0.5, (f * 0.61).cos() * 0.5, 2.0 + (f * 0.13).sin()), 0.1, 0.6, Vector3::new(0.5, f / 40.0, 0.2))
            })
            .collect();
        let cloud = GaussianCloud::new(gs, Vector3::zeros());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| render(&cloud, None, View { camera: &cam, frame: 0 }, None).unwrap().0)
        };
        let (a, b) = (run(1), run(8));
        let bits = |o: &RenderOutput| o.rgb.data.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

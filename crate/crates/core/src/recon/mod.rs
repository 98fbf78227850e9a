//! Reconstruction losses and the optimization loop over Gaussian parameters
//! and scaffold node translations.

mod optimize;
mod view;

use log::debug;
use nalgebra::Vector2;

use crate::geometry::{bilinear_taps, check_dims, Camera, DepthMap, FlowField, RgbImage};
use crate::render::{render, render_gradients, ssim_with_grad, Adjoint, GaussianCloud, Gradients, RenderOutput, View};
use crate::scaffold::{arap_loss, KINK_TOLERANCE, scaffold_projection_loss, vel_acc_losses, ScaffoldGraph};
use crate::tracks::TrackSet;
use crate::{Error, Result};

pub use optimize::{loss_table, optimize, LossRecord, OptimizeReport, OptimizerConfig};
pub use view::{depth_l1, offset_camera, sample_offset, sample_virtual_view, virtual_depth_loss, warp_depth_to_virtual, DepthLoss, VirtualViewConfig};

/// Names of the loss terms, in breakdown order.
pub const TERM_NAMES: [&str; 9] = ["rgb", "ssim", "depth", "track_gaussian", "arap", "vel", "acc", "track_scaffold", "depth_virtual"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rgb: f64,
    pub ssim: f64,
    pub depth: f64,
    pub track_gaussian: f64,
    pub arap: f64,
    pub vel: f64,
    pub acc: f64,
    pub track_scaffold: f64,
    pub depth_virtual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rgb: 1.0, ssim: 0.1, depth: 1.0, track_gaussian: 1.0, arap: 1.0, vel: 0.1, acc: 0.1, track_scaffold: 1.0, depth_virtual: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self::from_array([0.0; 9])
    }

    pub fn as_array(&self) -> [f64; 9] {
        [self.rgb, self.ssim, self.depth, self.track_gaussian, self.arap, self.vel, self.acc, self.track_scaffold, self.depth_virtual]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        Self { rgb: a[0], ssim: a[1], depth: a[2], track_gaussian: a[3], arap: a[4], vel: a[5], acc: a[6], track_scaffold: a[7], depth_virtual: a[8] }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in TERM_NAMES.iter().zip(self.as_array()) {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("weight w_{name} = {w} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

/// Unweighted value of every loss term. `ssim` holds `1 − SSIM`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub rgb: f64,
    pub ssim: f64,
    pub depth: f64,
    pub track_gaussian: f64,
    pub arap: f64,
    pub vel: f64,
    pub acc: f64,
    pub track_scaffold: f64,
    pub depth_virtual: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 9] {
        [self.rgb, self.ssim, self.depth, self.track_gaussian, self.arap, self.vel, self.acc, self.track_scaffold, self.depth_virtual]
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        self.as_array().iter().zip(w.as_array()).map(|(t, w)| t * w).sum()
    }

    fn check_finite(&self) -> Result<()> {
        match TERM_NAMES.iter().zip(self.as_array()).find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFiniteLoss(name)),
            None => Ok(()),
        }
    }
}

/// Parameters being optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconState {
    pub cloud: GaussianCloud,
    pub graph: Option<ScaffoldGraph>,
}

/// Per-frame priors the losses compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub cams: Vec<Camera>,
    pub images: Vec<RgbImage>,
    pub depths: Vec<DepthMap>,
    /// Tracks in camera pixel coordinates.
    pub tracks: TrackSet,
}

impl Supervision {
    pub fn frames(&self) -> usize {
        self.cams.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.cams.len();
        if t == 0 {
            return Err(Error::DimensionMismatch("supervision has no frames".into()));
        }
        if self.images.len() != t || self.depths.len() != t {
            return Err(Error::DimensionMismatch(format!("{t} cameras, {} images, {} depth maps", self.images.len(), self.depths.len())));
        }
        for ((cam, img), d) in self.cams.iter().zip(&self.images).zip(&self.depths) {
            check_dims("supervision image", img.dims(), (cam.width, cam.height))?;
            check_dims("supervision depth", d.dims(), (cam.width, cam.height))?;
        }
        check_dims("supervision tracks", (self.tracks.width, self.tracks.height), (self.cams[0].width, self.cams[0].height))?;
        Ok(())
    }
}

/// Frame the rendered flow of frame `t` points to.
pub fn flow_target(t: usize, frames: usize) -> Option<usize> {
    if t + 1 < frames {
        Some(t + 1)
    } else if t > 0 {
        Some(t - 1)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackLoss {
    pub value: f64,
    /// Qualifying tracks; zero means the loss was vacuous.
    pub count: usize,
    /// With respect to the normalized flow values.
    pub grad: Vec<Vector2<f64>>,
}

/// Mean over tracks visible at `t` and `t_to` of
/// `‖u_t + F̂(u_t) − u_{t_to}‖`, with the flow sampled bilinearly. Tracks
/// whose taps touch invalid flow are skipped.
pub fn track_loss_gaussian(flow: &FlowField, tracks: &TrackSet, t: usize, t_to: usize) -> TrackLoss {
    let (w, h) = flow.dims();
    let mut grad = vec![Vector2::zeros(); w * h];
    let mut value = 0.0;
    let mut count = 0;
    for track in &tracks.tracks {
        if !(track.is_visible(t) && track.is_visible(t_to)) {
            continue;
        }
        let (u, v) = (track.position(t).expect("visible"), track.position(t_to).expect("visible"));
        if !(u.x >= -0.5 && u.y >= -0.5 && u.x <= w as f64 - 0.5 && u.y <= h as f64 - 0.5) {
            continue;
        }
        let taps = bilinear_taps(w, h, u.x, u.y);
        if taps.iter().any(|&(i, wt)| wt > 0.0 && !flow.valid[i]) {
            continue;
        }
        let f: Vector2<f64> = taps.iter().map(|&(i, wt)| flow.values[i] * wt).sum();
        let r = u + f - v;
        let n = r.norm();
        value += n;
        count += 1;
        if n > KINK_TOLERANCE {
            for &(i, wt) in &taps {
                grad[i] += r * (wt / n);
            }
        }
    }
    if count == 0 {
        debug!("no tracks qualify for the flow loss between frames {t} and {t_to}");
    } else {
        let s = 1.0 / count as f64;
        value *= s;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    TrackLoss { value, count, grad }
}

/// Result of a loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub total: f64,
    pub terms: LossTerms,
    pub grad: Option<Gradients>,
}

/// Seed for virtual view `sample` of `frame` at optimizer step `step`.
pub(crate) fn view_seed(base: u64, step: u64, frame: usize, sample: usize) -> u64 {
    let mut z = base ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (frame as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ (sample as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adds `scale · g` on a normalized depth to the depth-sum and alpha
/// adjoints, using `D = Z / A`.
fn chain_depth(adj: &mut Adjoint, out: &RenderOutput, grad: &[f64], scale: f64) {
    for (i, g) in grad.iter().enumerate() {
        if *g != 0.0 {
            let a = out.alpha[i];
            adj.depth_sum[i] += scale * g / a;
            adj.alpha[i] -= scale * g * out.depth.values[i] / a;
        }
    }
}

fn chain_flow(adj: &mut Adjoint, out: &RenderOutput, grad: &[Vector2<f64>], scale: f64) {
    for (i, g) in grad.iter().enumerate() {
        if *g != Vector2::zeros() {
            let a = out.alpha[i];
            adj.flow[i] += g * (scale / a);
            adj.alpha[i] -= scale * g.dot(&out.flow.values[i]) / a;
        }
    }
}

struct FrameEval {
    terms: LossTerms,
    grad: Option<Gradients>,
}

fn frame_loss(state: &ReconState, sup: &Supervision, t: usize, w: &LossWeights, vcfg: &VirtualViewConfig, step: u64, want_grad: bool) -> Result<FrameEval> {
    let graph = state.graph.as_ref();
    let cam = &sup.cams[t];
    let target = flow_target(t, sup.frames());
    let (out, trace) = render(&state.cloud, graph, View { camera: cam, frame: t }, target.map(|tt| View { camera: &sup.cams[tt], frame: tt }))?;
    let img = &sup.images[t];
    let n = img.data.len();
    let mut terms = LossTerms::default();
    let mut adj = Adjoint::zeros(n);

    let norm = 1.0 / (3 * n) as f64;
    for (i, (c, r)) in out.rgb.data.iter().zip(&img.data).enumerate() {
        for k in 0..3 {
            let d = c[k] - r[k];
            terms.rgb += d.abs() * norm;
            if d.abs() > KINK_TOLERANCE {
                adj.rgb[i][k] += w.rgb * d.signum() * norm;
            }
        }
    }

    let (s, g_ssim) = ssim_with_grad(&out.rgb, img)?;
    terms.ssim = 1.0 - s;
    for (a, g) in adj.rgb.iter_mut().zip(&g_ssim) {
        for k in 0..3 {
            a[k] -= w.ssim * g[k];
        }
    }

    let dl = depth_l1(&out.depth, &sup.depths[t])?;
    terms.depth = dl.value;
    chain_depth(&mut adj, &out, &dl.grad, w.depth);

    if let Some(tt) = target {
        let tl = track_loss_gaussian(&out.flow, &sup.tracks, t, tt);
        terms.track_gaussian = tl.value;
        chain_flow(&mut adj, &out, &tl.grad, w.track_gaussian);
    }

    let mut grad = want_grad.then(|| render_gradients(&state.cloud, graph, &trace, &adj));

    if w.depth_virtual > 0.0 {
        let samples = vcfg.samples_per_step.max(1);
        for k in 0..samples {
            let vcam = match sample_virtual_view(cam, &sup.depths[t], vcfg, view_seed(vcfg.seed, step, t, k)) {
                Ok(c) => c,
                Err(Error::NoValidDepth) => {
                    debug!("frame {t} has no valid depth; skipping its virtual view");
                    break;
                }
                Err(e) => return Err(e),
            };
            let warped = warp_depth_to_virtual(&sup.depths[t], cam, &vcam)?;
            let (vout, vtrace) = render(&state.cloud, graph, View { camera: &vcam, frame: t }, None)?;
            let vl = virtual_depth_loss(&vout.depth, &warped)?;
            terms.depth_virtual += vl.value / samples as f64;
            if let Some(g) = grad.as_mut() {
                let mut vadj = Adjoint::zeros(n);
                chain_depth(&mut vadj, &vout, &vl.grad, w.depth_virtual / samples as f64);
                g.add(&render_gradients(&state.cloud, graph, &vtrace, &vadj));
            }
        }
    }
    Ok(FrameEval { terms, grad })
}

/// Weighted sum of all loss terms over `frames`. Image terms are averaged
/// over the batch; scaffold terms are added once. `step` selects the
/// virtual views.
pub fn total_loss(state: &ReconState, sup: &Supervision, frames: &[usize], weights: &LossWeights, vcfg: &VirtualViewConfig, step: u64, want_grad: bool) -> Result<LossEval> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("empty frame batch".into()));
    }
    if let Some(&bad) = frames.iter().find(|&&t| t >= sup.frames()) {
        return Err(Error::DimensionMismatch(format!("frame {bad} outside {} supervised frames", sup.frames())));
    }
    let scale = 1.0 / frames.len() as f64;
    let mut terms = LossTerms::default();
    let mut grad = want_grad.then(|| Gradients::zeros(state.cloud.gaussians.len(), state.graph.as_ref()));
    for &t in frames {
        let fe = frame_loss(state, sup, t, weights, vcfg, step, want_grad)?;
        terms.rgb += scale * fe.terms.rgb;
        terms.ssim += scale * fe.terms.ssim;
        terms.depth += scale * fe.terms.depth;
        terms.track_gaussian += scale * fe.terms.track_gaussian;
        terms.depth_virtual += scale * fe.terms.depth_virtual;
        if let (Some(acc), Some(mut g)) = (grad.as_mut(), fe.grad) {
            g.means.iter_mut().chain(g.colors.iter_mut()).for_each(|v| *v *= scale);
            g.opacities.iter_mut().for_each(|v| *v *= scale);
            g.nodes.iter_mut().flatten().for_each(|v| *v *= scale);
            acc.add(&g);
        }
    }

    if let Some(graph) = state.graph.as_ref() {
        let arap = arap_loss(graph);
        let (vel, acc) = vel_acc_losses(graph);
        let proj = scaffold_projection_loss(graph, &sup.tracks, &sup.cams);
        terms.arap = arap.total;
        terms.vel = vel.value;
        terms.acc = acc.value;
        terms.track_scaffold = proj.value;
        if let Some(g) = grad.as_mut() {
            for (gw, ng) in [(weights.arap, &arap.grad), (weights.vel, &vel.grad), (weights.acc, &acc.grad), (weights.track_scaffold, &proj.grad)] {
                if gw != 0.0 {
                    for (a, b) in g.nodes.iter_mut().flatten().zip(ng.iter().flatten()) {
                        *a += b * gw;
                    }
                }
            }
        }
    }

    terms.check_finite()?;
    let total = terms.weighted(weights);
    debug!("loss {total:.6e} = {:?}", terms);
    Ok(LossEval { total, terms, grad })
}

//! Gaussian-cloud toy scenes whose supervision is rendered from a known
//! state, used to measure what the optimizer recovers.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::geometry::{Camera, DepthMap, RigidTransform};
use crate::recon::{flow_target, sample_virtual_view, ReconState, Supervision, VirtualViewConfig};
use crate::render::{render, Gaussian, GaussianCloud, View};
use crate::scaffold::{ScaffoldGraph, ScaffoldNode};
use crate::tracks::{Track, TrackSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Static backdrop Gaussians per side.
    pub backdrop_grid: usize,
    /// Moving-object Gaussians per side.
    pub object_grid: usize,
    /// Camera translation per frame along x.
    pub camera_speed: f64,
}

impl Default for ToyConfig {
    /// 64×64 over 24 frames with 40² + 20² = 2000 Gaussians.
    fn default() -> Self {
        Self { width: 64, height: 64, frames: 24, backdrop_grid: 40, object_grid: 20, camera_speed: 0.02 }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 || self.width < 8 || self.height < 8 || self.backdrop_grid < 2 || self.object_grid < 2 {
            return Err(Error::InvalidSpec(format!("toy scene {}x{}x{} with grids {}/{} is too small", self.width, self.height, self.frames, self.backdrop_grid, self.object_grid)));
        }
        Ok(())
    }
}

/// A known state and the supervision rendered from it.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub truth: ReconState,
    pub sup: Supervision,
}

const BACKDROP_DEPTH: f64 = 6.0;
const OBJECT_DEPTH: f64 = 4.0;
const OBJECT_VELOCITY: Vector3<f64> = Vector3::new(0.03, 0.015, 0.0);

/// Depth offset of grid cell `(i, j)`. Coplanar overlapping splats would
/// composite in an order decided by ties, so any depth step reorders them;
/// eight staggered levels keep equal depths about three cells apart.
fn stagger(i: usize, j: usize) -> f64 {
    0.005 * ((i + 3 * j) % 8) as f64
}

fn smooth_color(u: f64, v: f64, phase: f64) -> Vector3<f64> {
    Vector3::new(
        0.5 + 0.3 * (2.1 * u + phase).sin(),
        0.5 + 0.3 * (1.7 * v - 0.5 * phase).cos(),
        0.45 + 0.25 * (1.3 * (u + v) + phase).sin(),
    )
}

fn toy_cameras(cfg: &ToyConfig) -> Vec<Camera> {
    let focal = cfg.width.max(cfg.height) as f64;
    (0..cfg.frames).map(|t| Camera::centered(focal, cfg.width, cfg.height, RigidTransform::from_translation(Vector3::new(-cfg.camera_speed * t as f64, 0.0, 0.0)))).collect()
}

/// Renders images and depth for every camera, flow pointing at the next
/// frame.
pub fn render_supervision(state: &ReconState, cams: &[Camera], tracks: TrackSet) -> Result<Supervision> {
    let frames = cams.len();
    let outs: Vec<_> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let target = flow_target(t, frames).map(|tt| View { camera: &cams[tt], frame: tt });
            render(&state.cloud, state.graph.as_ref(), View { camera: &cams[t], frame: t }, target).map(|(o, _)| o)
        })
        .collect::<Result<_>>()?;
    let (images, depths) = outs.into_iter().map(|o| (o.rgb, o.depth)).unzip();
    Ok(Supervision { cams: cams.to_vec(), images, depths, tracks })
}

/// Node trajectories projected into every camera, all visible.
pub fn node_tracks(graph: &ScaffoldGraph, cams: &[Camera]) -> Result<TrackSet> {
    let (w, h) = (cams[0].width, cams[0].height);
    let tracks = graph
        .nodes
        .iter()
        .map(|n| {
            let pos = (0..graph.frames).map(|t| cams[t].project(&n.position(t)).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
            Ok(Track::new(n.track, Some(0), 0, 0, pos, vec![true; graph.frames]))
        })
        .collect::<Result<_>>()?;
    Ok(TrackSet { width: w, height: h, frames: graph.frames, tracks })
}

/// Textured backdrop plane plus a translating card of Gaussians skinned to
/// a 3×3 node grid.
pub fn dynamic_toy(cfg: &ToyConfig) -> Result<ToyScene> {
    cfg.validate()?;
    let cams = toy_cameras(cfg);
    let frames = cfg.frames;
    let mut nodes = Vec::new();
    for (id, (x, y)) in [-0.6, 0.0, 0.6].iter().flat_map(|y| [-0.6, 0.0, 0.6].map(|x| (x, *y))).enumerate() {
        let base = Vector3::new(x, y, OBJECT_DEPTH);
        nodes.push(ScaffoldNode {
            id,
            track: id as u64,
            radius: 0.6,
            transforms: (0..frames).map(|t| RigidTransform::from_translation(base + OBJECT_VELOCITY * t as f64)).collect(),
            observed: vec![true; frames],
        });
    }
    let mut graph = ScaffoldGraph { frames, k: 4, nodes, edges: vec![] };
    graph.rebuild_edges();

    let mut gs = Vec::with_capacity(cfg.backdrop_grid.pow(2) + cfg.object_grid.pow(2));
    // Backdrop wide enough to stay in view over the camera's travel.
    let half = 0.55 * BACKDROP_DEPTH + cfg.camera_speed * frames as f64;
    let step = 2.0 * half / (cfg.backdrop_grid - 1) as f64;
    for j in 0..cfg.backdrop_grid {
        for i in 0..cfg.backdrop_grid {
            let (x, y) = (-half + step * i as f64, -half + step * j as f64);
            gs.push(Gaussian::isotropic(Vector3::new(x, y, BACKDROP_DEPTH + stagger(i, j)), 0.8 * step, 0.9, smooth_color(x, y, 0.0)));
        }
    }
    let obj_half = 0.8;
    let obj_step = 2.0 * obj_half / (cfg.object_grid - 1) as f64;
    for j in 0..cfg.object_grid {
        for i in 0..cfg.object_grid {
            let (x, y) = (-obj_half + obj_step * i as f64, -obj_half + obj_step * j as f64);
            let mean = Vector3::new(x, y, OBJECT_DEPTH + stagger(i, j));
            let mut g = Gaussian::isotropic(mean, 0.8 * obj_step, 0.9, smooth_color(3.0 * x, 3.0 * y, 1.3));
            g.skin = Some(graph.skin(&mean, 0)?);
            gs.push(g);
        }
    }
    let truth = ReconState { cloud: GaussianCloud::new(gs, Vector3::new(0.1, 0.1, 0.12)), graph: Some(graph) };
    let tracks = node_tracks(truth.graph.as_ref().expect("built above"), &cams)?;
    let sup = render_supervision(&truth, &cams, tracks)?;
    Ok(ToyScene { truth, sup })
}

/// Moves every Gaussian mean within the image plane of `cams[0]` by a
/// Gaussian offset whose reprojected size has standard deviation `sigma_px`.
pub fn perturb_means(state: &ReconState, cams: &[Camera], sigma_px: f64, seed: u64) -> Result<ReconState> {
    let normal = Normal::new(0.0, sigma_px).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = state.clone();
    for g in out.cloud.gaussians.iter_mut() {
        let cam = &cams[g.skin.as_ref().map_or(0, |s| s.frame)];
        let z = cam.to_camera(&g.mean).z;
        let d_cam = Vector3::new(normal.sample(&mut rng) * z / cam.fx, normal.sample(&mut rng) * z / cam.fy, 0.0);
        g.mean += cam.pose.rotation.inverse() * d_cam;
    }
    Ok(out)
}

/// Disc, in pixels, where the floater toy's depth prior is missing.
pub fn depth_hole(width: usize, height: usize) -> (Vector2<f64>, f64) {
    (Vector2::new(0.5 * (width - 1) as f64, 0.5 * (height - 1) as f64), 0.15 * width.min(height) as f64)
}

/// Adds `count` floaters in front of the depth hole of frame 0, at 0.3 to
/// 0.5 of the surface depth, each colored like the surface it hides. The
/// training views barely change and their depth prior cannot see them.
/// Returns the state with floaters appended.
pub fn add_floaters(scene: &ToyScene, count: usize, seed: u64) -> Result<ReconState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = &scene.sup.cams[0];
    let (center, radius) = depth_hole(cam.width, cam.height);
    let surface = render(&scene.truth.cloud, scene.truth.graph.as_ref(), View { camera: cam, frame: 0 }, None)?.0.depth;
    let mut out = scene.truth.clone();
    for _ in 0..count {
        let (a, r) = (rng.gen_range(0.0..std::f64::consts::TAU), 0.6 * radius * rng.gen_range(0.0f64..1.0).sqrt());
        let px = center + r * Vector2::new(a.cos(), a.sin());
        let depth = surface.sample(&px).ok_or(Error::NoValidDepth)?;
        let z = depth * rng.gen_range(0.3..0.5);
        let color = scene.sup.images[0].sample(&px);
        let mean = cam.backproject(&px, z)?;
        out.cloud.gaussians.push(Gaussian::isotropic(mean, 2.0 * z / cam.fx, 0.8, Vector3::from(color)));
    }
    Ok(out)
}

/// Static narrow-baseline scene: the backdrop alone, no scaffold. The depth
/// prior is missing on a central disc, as where an estimator discards a
/// low-confidence region, so training depth cannot expose what hangs in
/// front of it.
pub fn floater_toy(cfg: &ToyConfig) -> Result<ToyScene> {
    cfg.validate()?;
    let scene = dynamic_toy(cfg)?;
    let cams = scene.sup.cams.clone();
    let backdrop: Vec<Gaussian> = scene.truth.cloud.gaussians.iter().filter(|g| !g.is_dynamic()).cloned().collect();
    let truth = ReconState { cloud: GaussianCloud::new(backdrop, scene.truth.cloud.background), graph: None };
    let tracks = TrackSet { width: cfg.width, height: cfg.height, frames: cfg.frames, tracks: vec![] };
    let mut sup = render_supervision(&truth, &cams, tracks)?;
    let (center, radius) = depth_hole(cfg.width, cfg.height);
    for d in &mut sup.depths {
        for y in 0..d.height {
            for x in 0..d.width {
                if (Vector2::new(x as f64, y as f64) - center).norm() <= radius {
                    d.valid[y * d.width + x] = false;
                    d.values[y * d.width + x] = 0.0;
                }
            }
        }
    }
    Ok(ToyScene { truth, sup })
}

/// Shifts every node by a constant per-node offset in the image plane of
/// the first camera, of reprojected length `px`. Relative motion between
/// frames is unchanged, so renders are too.
pub fn drift_nodes(state: &ReconState, cams: &[Camera], px: f64, seed: u64) -> ReconState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = state.clone();
    if let Some(graph) = out.graph.as_mut() {
        let cam = &cams[0];
        for node in graph.nodes.iter_mut() {
            let z = cam.to_camera(&node.position(0)).z;
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let d_cam = Vector3::new(a.cos() * px * z / cam.fx, a.sin() * px * z / cam.fy, 0.0);
            let d = cam.pose.rotation.inverse() * d_cam;
            for tr in node.transforms.iter_mut() {
                tr.translation += d;
            }
        }
    }
    out
}

/// Mean distance in pixels between projected nodes and their tracks over
/// every frame where the track is visible.
pub fn node_track_error(graph: &ScaffoldGraph, tracks: &TrackSet, cams: &[Camera]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for node in &graph.nodes {
        let Some(track) = tracks.tracks.iter().find(|t| t.id == node.track) else { continue };
        for t in 0..graph.frames {
            let (Some(u), true) = (track.position(t), track.is_visible(t)) else { continue };
            if let Ok((p, _)) = cams[t].project(&node.position(t)) {
                sum += (p - u).norm();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Depth MAE between `state` and `truth` on virtual views sampled with
/// seeds disjoint from training, one per frame, over pixels where both
/// renders have valid depth.
pub fn held_out_depth_mae(state: &ReconState, truth: &ReconState, sup: &Supervision, vcfg: &VirtualViewConfig, seed: u64) -> Result<f64> {
    let per_frame: Vec<(f64, usize)> = (0..sup.frames())
        .into_par_iter()
        .map(|t| {
            let cam = sample_virtual_view(&sup.cams[t], &sup.depths[t], vcfg, seed.wrapping_add(t as u64).rotate_left(17) ^ 0x5eed)?;
            let depth = |s: &ReconState| -> Result<DepthMap> { Ok(render(&s.cloud, s.graph.as_ref(), View { camera: &cam, frame: t }, None)?.0.depth) };
            let (a, b) = (depth(state)?, depth(truth)?);
            let mut sum = 0.0;
            let mut n = 0;
            for i in 0..a.values.len() {
                if a.valid[i] && b.valid[i] {
                    sum += (a.values[i] - b.values[i]).abs();
                    n += 1;
                }
            }
            Ok((sum, n))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = per_frame.iter().fold((0.0, 0), |(s, c), (a, b)| (s + a, c + b));
    if n == 0 {
        return Err(Error::NoValidDepth);
    }
    Ok(sum / n as f64)
}

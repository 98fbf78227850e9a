//! Procedural ground-truth scenes and every prior derived from them.
//!
//! Scenes are built from analytic primitives and rendered by ray casting, so
//! depth, flow, segmentation and visibility are exact. Degrading knobs touch
//! only the prior they name.

mod presets;
mod scene;
pub mod toy;
mod tracks;

use std::str::FromStr;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::depth::DepthStack;
use crate::geometry::{BinaryMask, Camera, DepthMap, FlowField, RgbImage};
use crate::masks::{DynamicObject, FlowPair, ObjectMaskStack, SegmentStack};
use crate::{Error, Result};

pub use scene::{Body, CameraPath, Hit, Motion, Part, Scene, Shadow, Shape, Texture};
pub use tracks::{GroundTruthTrack, Occlusion, OracleResampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Body with a thin swinging limb.
    Walker,
    /// Two legs crossing, the far one hidden for a stretch and re-emerging.
    Occlusion,
    /// An arm sweeping across its own torso.
    SelfOcclusion,
    /// Slanted moving slab with thin ridges whose video depth is blurred.
    BlurredDepth,
    /// Near-static camera with a narrow baseline.
    Floater,
    /// Moving ball plus a moving shadow on a large static segment.
    Shadow,
    /// Nothing moves but the camera.
    Static,
}

impl Preset {
    pub const ALL: [Preset; 7] = [Preset::Walker, Preset::Occlusion, Preset::SelfOcclusion, Preset::BlurredDepth, Preset::Floater, Preset::Shadow, Preset::Static];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Walker => "walker",
            Preset::Occlusion => "occlusion",
            Preset::SelfOcclusion => "self_occlusion",
            Preset::BlurredDepth => "blurred_depth",
            Preset::Floater => "floater",
            Preset::Shadow => "shadow",
            Preset::Static => "static",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::InvalidSpec(format!("unknown preset `{s}`")))
    }
}

/// Knobs that degrade individual priors.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseKnobs {
    /// Gaussian blur (pixels) applied to video depth inside dynamic objects.
    pub depth_blur_sigma: f64,
    /// Standard deviation (pixels) of additive flow-prior noise.
    pub flow_noise: f64,
    /// Number of stripes each static segment is split into.
    pub over_segments: usize,
    /// Monocular depth is `mono_scale · depth + mono_shift`.
    pub mono_scale: f64,
    pub mono_shift: f64,
}

impl Default for NoiseKnobs {
    fn default() -> Self {
        Self { depth_blur_sigma: 0.0, flow_noise: 0.0, over_segments: 1, mono_scale: 0.5, mono_shift: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub preset: Preset,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    pub noise: NoiseKnobs,
    /// Flow pairs are generated for these frame gaps.
    pub flow_gaps: Vec<usize>,
}

impl SceneSpec {
    /// The preset's own defaults at 64×64 over 24 frames.
    pub fn preset(preset: Preset) -> Self {
        let mut noise = NoiseKnobs::default();
        if preset == Preset::BlurredDepth {
            noise.depth_blur_sigma = 2.0;
        }
        Self { preset, width: 64, height: 64, frames: 24, seed: 0, noise, flow_gaps: vec![1, 4] }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.frames < 3 {
            problems.push(format!("frames = {} (need at least 3)", self.frames));
        }
        if self.width < 8 || self.height < 8 {
            problems.push(format!("size {}x{} (need at least 8x8)", self.width, self.height));
        }
        if !(self.noise.depth_blur_sigma >= 0.0 && self.noise.flow_noise >= 0.0) {
            problems.push("noise knobs must be non-negative".into());
        }
        if self.noise.over_segments == 0 {
            problems.push("over_segments must be at least 1".into());
        }
        if !(self.noise.mono_scale > 0.0) {
            problems.push(format!("mono_scale = {} (must be positive)", self.noise.mono_scale));
        }
        if self.flow_gaps.is_empty() || self.flow_gaps.contains(&0) {
            problems.push("flow_gaps must be non-empty and positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(problems.join("; ")))
        }
    }

    pub fn scene(&self) -> Scene {
        presets::build(self)
    }
}

/// Exact ground truth plus the priors the pipeline consumes.
#[derive(Debug, Clone)]
pub struct OracleBundle {
    pub spec: SceneSpec,
    pub scene: Scene,
    pub cams: Vec<Camera>,
    pub images: Vec<RgbImage>,
    pub depth: Vec<DepthMap>,
    /// `(body, part) + 1` packed as `body << 8 | part`, plus one; zero is sky.
    pub part_ids: Vec<Vec<u32>>,
    /// Exact flow for every generated pair.
    pub flows: Vec<FlowPair>,
    /// Flow prior: exact except where a knob or a shadow intervenes.
    pub prior_flows: Vec<FlowPair>,
    pub segments: SegmentStack,
    pub objects: ObjectMaskStack,
    /// Segments that belong to dynamic objects.
    pub dynamic_segments: Vec<u32>,
    pub video_depth: Vec<DepthMap>,
    pub mono_depth: Vec<DepthMap>,
}

fn pack(hit: &Hit) -> u32 {
    ((hit.body as u32) << 8 | hit.part as u32) + 1
}

impl OracleBundle {
    pub fn frames(&self) -> usize {
        self.cams.len()
    }

    /// Pixels showing `part` of `body` at frame `t`.
    pub fn part_mask(&self, t: usize, body: usize, part: usize) -> BinaryMask {
        let id = ((body as u32) << 8 | part as u32) + 1;
        BinaryMask { width: self.spec.width, height: self.spec.height, data: self.part_ids[t].iter().map(|&p| p == id).collect() }
    }

    pub fn depth_stack(&self) -> DepthStack {
        DepthStack { video: self.video_depth.clone(), mono: self.mono_depth.clone() }
    }
}

struct FrameRender {
    image: RgbImage,
    depth: DepthMap,
    part_ids: Vec<u32>,
    labels: Vec<u32>,
    hits: Vec<Option<Hit>>,
}

fn segment_label(scene: &Scene, hit: &Hit, stripes: usize) -> u32 {
    let body = &scene.bodies[hit.body];
    if body.dynamic || stripes <= 1 {
        return body.segment;
    }
    let k = (hit.rest.x.floor() as i64).rem_euclid(stripes as i64) as u32;
    if k == 0 {
        body.segment
    } else {
        body.segment + 1000 * k
    }
}

fn render_frame(scene: &Scene, cam: &Camera, t: usize, stripes: usize) -> FrameRender {
    let (w, h) = (scene.width, scene.height);
    let hits: Vec<Option<Hit>> = (0..w * h).map(|i| scene.cast(cam, t, &Vector2::new((i % w) as f64, (i / w) as f64))).collect();
    let mut image = RgbImage::filled(w, h, scene.sky);
    let mut depth = DepthMap::new(w, h);
    let mut part_ids = vec![0; w * h];
    let mut labels = vec![0; w * h];
    for (i, hit) in hits.iter().enumerate() {
        if let Some(hit) = hit {
            image.data[i] = scene.shade(hit, t);
            depth.values[i] = hit.depth;
            depth.valid[i] = true;
            part_ids[i] = pack(hit);
            labels[i] = segment_label(scene, hit, stripes);
        }
    }
    FrameRender { image, depth, part_ids, labels, hits }
}

/// Flow of every hit from frame `from` to `to`; shadowed pixels optionally
/// follow the shadow instead of the surface.
fn flow_between(scene: &Scene, cams: &[Camera], hits: &[Option<Hit>], from: usize, to: usize, follow_shadow: bool) -> FlowField {
    let (w, h) = (scene.width, scene.height);
    let mut flow = FlowField::new(w, h);
    for (i, hit) in hits.iter().enumerate() {
        let Some(hit) = hit else { continue };
        let p = if follow_shadow && scene.in_shadow(hit, from) {
            let sh = scene.shadow.as_ref().expect("in shadow");
            hit.world + sh.velocity * (to as f64 - from as f64)
        } else {
            scene.world_point(hit.body, hit.part, &hit.rest, to)
        };
        if let Ok((q, _)) = cams[to].project(&p) {
            let x = Vector2::new((i % w) as f64, (i / w) as f64);
            flow.values[i] = q - x;
            flow.valid[i] = true;
        }
    }
    flow
}

/// Normalized Gaussian blur of depth inside `mask`, averaging only over
/// valid pixels of the same mask so no background depth leaks in.
fn blur_depth(d: &DepthMap, mask: &[bool], sigma: f64) -> DepthMap {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|o| (-(o * o) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let (w, h) = (d.width as isize, d.height as isize);
    let mut out = d.clone();
    for y in 0..h {
        for x in 0..w {
            if !mask[(y * w + x) as usize] {
                continue;
            }
            let (mut acc, mut mass) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        continue;
                    }
                    let j = (yy * w + xx) as usize;
                    if d.valid[j] && mask[j] {
                        let wt = k[(dx + r) as usize] * k[(dy + r) as usize];
                        acc += wt * d.values[j];
                        mass += wt;
                    }
                }
            }
            if mass > 0.0 {
                out.values[(y * w + x) as usize] = acc / mass;
            }
        }
    }
    out
}

/// Target frame of the pair starting at `t` with gap `g`, if any.
pub fn pair_target(t: usize, g: usize, frames: usize) -> Option<usize> {
    if t + g < frames {
        Some(t + g)
    } else {
        t.checked_sub(g)
    }
}

/// Renders the scene described by `spec` with all of its priors.
pub fn generate(spec: &SceneSpec) -> Result<OracleBundle> {
    spec.validate()?;
    let scene = spec.scene();
    let cams = scene.cameras();
    for (t, cam) in cams.iter().enumerate() {
        for body in &scene.bodies {
            for part in &body.parts {
                let c = part.motion.at(t as f64).apply(&part.shape.center());
                let z = cam.to_camera(&c).z;
                if !(z > 0.0) {
                    return Err(Error::InvalidSpec(format!("body `{}` is at depth {z} in frame {t}", body.name)));
                }
            }
        }
    }
    let frames: Vec<FrameRender> = (0..spec.frames).into_par_iter().map(|t| render_frame(&scene, &cams[t], t, spec.noise.over_segments)).collect();

    let pairs: Vec<(usize, usize)> = (0..spec.frames).flat_map(|t| spec.flow_gaps.iter().filter_map(move |&g| pair_target(t, g, spec.frames).map(|to| (t, to)))).collect();
    let flows: Vec<FlowPair> = pairs.par_iter().map(|&(from, to)| FlowPair { from, to, flow: flow_between(&scene, &cams, &frames[from].hits, from, to, false) }).collect();
    let mut prior_flows: Vec<FlowPair> = pairs.par_iter().map(|&(from, to)| FlowPair { from, to, flow: flow_between(&scene, &cams, &frames[from].hits, from, to, true) }).collect();
    if spec.noise.flow_noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise.flow_noise).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x666c_6f77);
        for pair in prior_flows.iter_mut() {
            for (v, ok) in pair.flow.values.iter_mut().zip(&pair.flow.valid) {
                if *ok {
                    *v += Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
        }
    }

    let (w, h) = (spec.width, spec.height);
    let mut segments = SegmentStack::new(w, h, spec.frames);
    for (t, f) in frames.iter().enumerate() {
        segments.labels[t] = f.labels.clone();
    }
    let mut objects = ObjectMaskStack::empty(w, h, spec.frames);
    let mut dynamic_segments = Vec::new();
    for (bi, body) in scene.bodies.iter().enumerate().filter(|(_, b)| b.dynamic) {
        let masks = frames.iter().map(|f| BinaryMask { width: w, height: h, data: f.part_ids.iter().map(|&p| p != 0 && ((p - 1) >> 8) as usize == bi).collect() }).collect();
        objects.objects.push(DynamicObject { id: objects.objects.len(), segment: body.segment, masks });
        dynamic_segments.push(body.segment);
    }

    let depth: Vec<DepthMap> = frames.iter().map(|f| f.depth.clone()).collect();
    let video_depth = depth
        .iter()
        .enumerate()
        .map(|(t, d)| {
            if spec.noise.depth_blur_sigma <= 0.0 || objects.objects.is_empty() {
                return d.clone();
            }
            blur_depth(d, &objects.union(t).data, spec.noise.depth_blur_sigma)
        })
        .collect();
    let mono_depth = depth
        .iter()
        .map(|d| DepthMap { values: d.values.iter().map(|v| spec.noise.mono_scale * v + spec.noise.mono_shift).collect(), ..d.clone() })
        .collect();

    Ok(OracleBundle {
        spec: spec.clone(),
        cams,
        images: frames.iter().map(|f| f.image.clone()).collect(),
        depth,
        part_ids: frames.iter().map(|f| f.part_ids.clone()).collect(),
        flows,
        prior_flows,
        segments,
        objects,
        dynamic_segments,
        video_depth,
        mono_depth,
        scene,
    })
}

#[cfg(test)]
mod tests;

//! Pipeline stages as file-to-file commands.
//!
//! A prior directory holds the inputs (`synth` writes one). The remaining
//! stages read it plus the artifacts earlier stages left in a shared work
//! directory, and every command writes `manifest-<command>.txt` next to its
//! outputs.

mod config;
mod layout;
mod tracker;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{UnitQuaternion, Vector2, Vector3};

use crate::depth::{refine_depth, DepthStack};
use crate::geometry::{Camera, DepthMap, RgbImage, RigidTransform, ScalarMap};
use crate::io::{self, ini::IniDoc};
use crate::masks::{epi_masks, select_dynamic_masks, EpiMaskStack, ObjectMaskStack};
use crate::recon::{loss_table, optimize, ReconState, Supervision};
use crate::render::{psnr, render, ssim, Gaussian, GaussianCloud, View};
use crate::scaffold::{lift_tracks, spacetime_init, ScaffoldGraph};
use crate::synth::{generate, OracleResampler};
use crate::tracks::{reidentify, sample_track_seeds, track_coverage_report, TrackSet};
use crate::{Error, Result};

pub use config::{scene_spec_from_ini, scene_spec_to_ini, sub_seed, InitConfig, PipelineConfig};
pub use layout::*;
pub use tracker::FlowTracker;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const PRIOR: &str = "prior";
const WORK: &str = "work";

/// Generates the prior directory described by the scene file at `spec`.
pub fn cmd_synth(spec: &Path, out: &Path) -> Result<PathBuf> {
    let dir = spec.parent().unwrap_or(Path::new("."));
    let rel = spec.file_name().and_then(|n| n.to_str()).ok_or_else(|| Error::format("scene spec", "path has no file name"))?;
    let mut probe = Run::new("synth", "", out);
    let scene = scene_spec_from_ini(&probe.read_text("spec", dir, rel)?)?;
    let echo = scene_spec_to_ini(&scene);
    let mut run = Run::new("synth", &echo, out);
    run.read("spec", dir, rel)?;

    let b = generate(&scene)?;
    info!("synth: {} {}x{} over {} frames", scene.preset.name(), scene.width, scene.height, scene.frames);
    run.write(SPEC, echo.as_bytes())?;
    run.write(CAMERAS, io::write_cameras(&b.cams).as_bytes())?;
    run.write_images(&b.images)?;
    run.write_segments(&b.segments)?;
    for pair in &b.prior_flows {
        run.write(&flow_file(pair.from, pair.to), &io::flow_to_tensor(&pair.flow)?.encode())?;
    }
    run.write_depth(DEPTH_VIDEO, &b.video_depth)?;
    run.write_depth(DEPTH_MONO, &b.mono_depth)?;
    run.write_depth(DEPTH_TRUE, &b.depth)?;
    run.finish()
}

/// What [`cmd_masks`] decided.
#[derive(Debug, Clone, PartialEq)]
pub struct MasksSummary {
    pub selected_segments: Vec<u32>,
    pub report: String,
}

/// Epipolar motion masks and dynamic-object selection.
pub fn cmd_masks(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<MasksSummary> {
    cfg.validate()?;
    let mut run = Run::new("masks", &cfg.to_ini(), out);
    let cams = run.read_cameras(PRIOR, input)?;
    let flows = run.read_flows(PRIOR, input, &cams)?;
    let segs = run.read_segments(PRIOR, input, &cams)?;

    let epi = epi_masks(&flows, &cams, &cfg.masks)?;
    let sel = select_dynamic_masks(&segs, &epi, &cfg.masks)?;
    if sel.empty_motion {
        warn!("masks: no moving pixels in any frame, no objects selected");
    }
    let mut report = String::from("# segment overlap area salient_ratio appearance_ratio salient appearance verdict\n");
    for v in &sel.report {
        let _ = writeln!(
            report,
            "{} {} {} {:.6} {:.6} {} {} {}",
            v.segment,
            v.overlap,
            v.segment_area,
            v.salient_ratio,
            v.appearance_ratio,
            pass(v.passes_salient),
            pass(v.passes_appearance),
            if v.kept() { "dynamic" } else { "static" }
        );
    }
    run.write_objects(&sel.objects)?;
    run.write(SELECTION, report.as_bytes())?;
    run.write_masks_tensor(EPI_MASKS, &epi.masks)?;
    let usable = epi.usable.iter().map(|&u| u8::from(u)).collect();
    run.write(EPI_USABLE, &io::Tensor::u8(vec![epi.usable.len() as u64], usable)?.encode())?;
    run.finish()?;
    Ok(MasksSummary { selected_segments: sel.objects.objects.iter().map(|o| o.segment).collect(), report })
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn read_epi(run: &mut Run, work: &Path, cams: &[Camera], threshold: f64) -> Result<EpiMaskStack> {
    let masks = run.read_masks_tensor(WORK, work, EPI_MASKS, cams)?;
    let t = run.read_tensor(WORK, work, EPI_USABLE)?;
    if t.expect_rank(EPI_USABLE, 1)?[0] != cams.len() {
        return Err(Error::DimensionMismatch(format!("{EPI_USABLE} does not have one entry per frame")));
    }
    let usable = t.as_u8()?.iter().map(|&v| v != 0).collect();
    let errors = masks.iter().map(|m| ScalarMap::new(m.width, m.height)).collect();
    Ok(EpiMaskStack { masks, errors, usable, threshold })
}

/// Per-object depth alignment; returns the objective after every outer
/// iteration.
pub fn cmd_depth(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut run = Run::new("depth", &cfg.to_ini(), out);
    let cams = run.read_cameras(PRIOR, input)?;
    let video = run.read_depth(PRIOR, input, DEPTH_VIDEO, &cams)?;
    let mono = run.read_depth(PRIOR, input, DEPTH_MONO, &cams)?;
    let objects = run.read_objects(WORK, out, &cams)?;

    let refined = refine_depth(&DepthStack { video, mono }, &objects, &cfg.depth)?;
    let mut log = String::from("# iteration objective\n");
    for (i, v) in refined.objective.iter().enumerate() {
        let _ = writeln!(log, "{i} {v:.12e}");
    }
    run.write_depth(DEPTH_REFINED, &refined.stack.video)?;
    run.write(DEPTH_LOG, log.as_bytes())?;
    run.finish()?;
    Ok(refined.objective)
}

/// Track seeds and re-identification. With a scene file in the prior
/// directory points are traced through the scene exactly; otherwise the
/// gap-one flow prior is chained.
pub fn cmd_tracks(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<TrackSet> {
    cfg.validate()?;
    let mut run = Run::new("tracks", &cfg.to_ini(), out);
    let cams = run.read_cameras(PRIOR, input)?;
    let objects = run.read_objects(WORK, out, &cams)?;
    let epi = read_epi(&mut run, out, &cams, cfg.masks.epi_threshold_px)?;
    let seeds = sample_track_seeds(&epi, &objects, &cfg.sampler)?;

    let (tracks, report) = if input.join(SPEC).is_file() {
        let spec = scene_spec_from_ini(&run.read_text(PRIOR, input, SPEC)?)?;
        info!("tracks: tracing {} seeds through the scene", seeds.len());
        let bundle = generate(&spec)?;
        if bundle.cams.len() != cams.len() {
            return Err(Error::DimensionMismatch(format!("{SPEC} has {} frames, cameras have {}", bundle.cams.len(), cams.len())));
        }
        let lossy = bundle.lossy_tracks(&bundle.ground_truth_tracks(&seeds));
        reidentify(&lossy, &objects, &OracleResampler::new(&bundle), &cfg.reid)?
    } else {
        info!("tracks: chaining flow for {} seeds", seeds.len());
        let flows = run.read_flows(PRIOR, input, &cams)?;
        let tracker = FlowTracker::new(&flows, cams.len(), cams[0].width, cams[0].height);
        reidentify(&tracker.track_seeds(&seeds), &objects, &tracker, &cfg.reid)?
    };

    let mut cov = format!(
        "# tracks {} candidates {} reidentified {} self_occluded {} missing_masks {}\n# object frame coverage\n",
        tracks.tracks.len(),
        report.candidates,
        report.reidentified,
        report.self_occluded,
        report.missing_masks
    );
    for oc in track_coverage_report(&tracks, &objects) {
        for (t, c) in oc.coverage.iter().enumerate() {
            match c {
                Some(c) => writeln!(cov, "{} {t} {c:.6}", oc.object),
                None => writeln!(cov, "{} {t} -", oc.object),
            }
            .expect("writing to a string");
        }
    }
    run.write(TRACKS, io::write_tracks(&tracks).as_bytes())?;
    run.write(COVERAGE, cov.as_bytes())?;
    run.finish()?;
    Ok(tracks)
}

/// Backprojects every `stride`-th pixel of each keyframe through its depth.
/// Points on a dynamic object are skinned to the scaffold at that frame.
/// The background takes the mean colour of pixels without depth.
pub fn initial_cloud(cfg: &InitConfig, cams: &[Camera], images: &[RgbImage], depths: &[DepthMap], objects: &ObjectMaskStack, graph: Option<&ScaffoldGraph>) -> Result<GaussianCloud> {
    cfg.validate()?;
    let mut gaussians = Vec::new();
    let (mut sky, mut sky_n) = (Vector3::zeros(), 0usize);
    for &kf in &cfg.keyframes {
        if kf >= cams.len() {
            return Err(Error::InvalidConfig(format!("init keyframe {kf} outside {} frames", cams.len())));
        }
        let (cam, img, depth) = (&cams[kf], &images[kf], &depths[kf]);
        let dynamic = objects.union(kf);
        for y in (0..cam.height).step_by(cfg.stride) {
            for x in (0..cam.width).step_by(cfg.stride) {
                let color = Vector3::from(img.get(x, y));
                let Some(z) = depth.get(x, y).filter(|z| *z > 0.0) else {
                    sky += color;
                    sky_n += 1;
                    continue;
                };
                let mean = cam.pose.inverse().apply(&cam.backproject_camera(&Vector2::new(x as f64, y as f64), z));
                let scale = cfg.scale_factor * cfg.stride as f64 * z / cam.fx;
                let mut g = Gaussian::isotropic(mean, scale, cfg.opacity, color);
                if let Some(graph) = graph.filter(|_| dynamic.get(x, y)) {
                    g.skin = Some(graph.skin(&mean, kf)?);
                }
                gaussians.push(g);
            }
        }
    }
    let background = if sky_n > 0 { sky / sky_n as f64 } else { Vector3::zeros() };
    Ok(GaussianCloud::new(gaussians, background))
}

/// Lifting, spacetime initialization and optimization.
pub fn cmd_reconstruct(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<ReconState> {
    cfg.validate()?;
    let mut run = Run::new("reconstruct", &cfg.to_ini(), out);
    let cams = run.read_cameras(PRIOR, input)?;
    let images = run.read_images(PRIOR, input, &cams)?;
    let depths = run.read_depth(WORK, out, DEPTH_REFINED, &cams)?;
    let objects = run.read_objects(WORK, out, &cams)?;
    let tracks = io::read_tracks(&run.read_text(WORK, out, TRACKS)?)?;

    let (graph, lift) = lift_tracks(&tracks, &depths, &cams, &cfg.lift)?;
    info!("reconstruct: {} scaffold nodes ({} tracks lacked visibility)", graph.nodes.len(), lift.insufficient_visibility);
    let graph = if graph.nodes.is_empty() { None } else { Some(spacetime_init(&graph, &cfg.spacetime)?.0) };
    let cloud = initial_cloud(&cfg.init, &cams, &images, &depths, &objects, graph.as_ref())?;
    info!("reconstruct: {} Gaussians", cloud.gaussians.len());

    let mut state = ReconState { cloud, graph };
    let sup = Supervision { cams, images, depths, tracks };
    let report = optimize(&mut state, &sup, &cfg.weights, &cfg.virtual_view, &cfg.optimizer)?;
    info!("reconstruct: loss {:.6e} -> {:.6e} (best at iteration {})", report.initial, report.best, report.best_iteration);
    run.write(CHECKPOINT, io::write_checkpoint(&state).as_bytes())?;
    run.write(LOSS_LOG, loss_table(&report.history).as_bytes())?;
    run.finish()?;
    Ok(state)
}

/// Views circling a reference camera while looking at a point in front of
/// it, all at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSpec {
    /// Index of the reference camera in the camera file.
    pub reference: usize,
    /// Scene time the views are rendered at.
    pub frame: usize,
    pub views: usize,
    /// Circle radius in world units.
    pub radius: f64,
    /// Distance from the reference camera to the look-at point.
    pub distance: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self { reference: 0, frame: 0, views: 8, radius: 0.1, distance: 1.0 }
    }
}

impl OrbitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || !(self.radius >= 0.0 && self.radius.is_finite()) || !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::InvalidConfig("orbit needs at least one view, a finite radius and a positive distance".into()));
        }
        Ok(())
    }

    /// Defaults overridden by the `[orbit]` section of `text`.
    pub fn from_ini(text: &str) -> Result<Self> {
        let mut doc = IniDoc::parse(text)?;
        let mut spec = Self::default();
        doc.take("orbit", "reference", &mut spec.reference)?;
        doc.take("orbit", "frame", &mut spec.frame)?;
        doc.take("orbit", "views", &mut spec.views)?;
        doc.take("orbit", "radius", &mut spec.radius)?;
        doc.take("orbit", "distance", &mut spec.distance)?;
        doc.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_ini(&self) -> String {
        format!(
            "[orbit]\nreference = {}\nframe = {}\nviews = {}\nradius = {}\ndistance = {}\n",
            self.reference, self.frame, self.views, self.radius, self.distance
        )
    }

    /// Cameras and the frame each one is rendered at.
    pub fn cameras(&self, cams: &[Camera]) -> Result<Vec<(Camera, usize)>> {
        self.validate()?;
        let base = cams.get(self.reference).ok_or_else(|| Error::InvalidConfig(format!("orbit reference {} outside {} cameras", self.reference, cams.len())))?;
        let c2w = base.pose.inverse();
        let r = c2w.rotation_matrix();
        let center = c2w.translation;
        let target = center + r.column(2) * self.distance;
        let down = r.column(1).into_owned();
        Ok((0..self.views)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / self.views as f64;
                let c = center + r * Vector3::new(self.radius * a.cos(), self.radius * a.sin(), 0.0);
                let z = (target - c).normalize();
                let x = down.cross(&z).normalize();
                let y = z.cross(&x);
                let rot = nalgebra::Rotation3::from_basis_unchecked(&[x, y, z]);
                let pose = RigidTransform::new(UnitQuaternion::from_rotation_matrix(&rot), c).inverse();
                (base.with_pose(pose), self.frame)
            })
            .collect())
    }
}

/// Renders a checkpoint along a camera file (camera `t` at frame `t`) or an
/// orbit around one of its cameras.
pub fn cmd_render(checkpoint: &Path, cameras: &Path, orbit: Option<&OrbitSpec>, out: &Path) -> Result<Vec<RgbImage>> {
    let echo = orbit.map_or_else(|| "[trajectory]\nsource = cameras\n".to_owned(), OrbitSpec::to_ini);
    let mut run = Run::new("render", &echo, out);
    let split = |p: &Path| -> Result<(PathBuf, String)> {
        let name = p.file_name().and_then(|n| n.to_str()).ok_or_else(|| Error::format("path", format!("{} has no file name", p.display())))?;
        Ok((p.parent().unwrap_or(Path::new(".")).to_path_buf(), name.to_owned()))
    };
    let (ck_dir, ck_name) = split(checkpoint)?;
    let (cam_dir, cam_name) = split(cameras)?;
    let state = io::read_checkpoint(&run.read_text("checkpoint", &ck_dir, &ck_name)?)?;
    let cams = io::read_cameras(&run.read_text("cameras", &cam_dir, &cam_name)?)?;
    let views: Vec<(Camera, usize)> = match orbit {
        Some(o) => o.cameras(&cams)?,
        None => cams.iter().enumerate().map(|(t, c)| (*c, t)).collect(),
    };
    let last = state.graph.as_ref().map_or(usize::MAX, |g| g.frames.saturating_sub(1));

    use rayon::prelude::*;
    let outputs: Vec<(RgbImage, DepthMap)> = views
        .par_iter()
        .map(|(cam, frame)| {
            let (o, _) = render(&state.cloud, state.graph.as_ref(), View { camera: cam, frame: (*frame).min(last) }, None)?;
            Ok((o.rgb, o.depth))
        })
        .collect::<Result<_>>()?;
    let (images, depths): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    run.write_images(&images)?;
    run.write_depth(RENDER_DEPTH, &depths)?;
    run.write(CAMERAS, io::write_cameras(&views.iter().map(|v| v.0).collect::<Vec<_>>()).as_bytes())?;
    run.finish()?;
    Ok(images)
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when no pixel has depth in both maps.
    pub depth_mae: Option<f64>,
}

/// PSNR on 8-bit quantized colours, capped at [`PSNR_CAP_DB`].
pub fn psnr_8bit(a: &RgbImage, b: &RgbImage) -> f64 {
    let q = |img: &RgbImage| RgbImage::from_u8(img.width, img.height, &img.to_u8());
    psnr(&q(a), &q(b)).min(PSNR_CAP_DB)
}

/// Mean absolute difference over pixels valid in both maps.
pub fn depth_mae(a: &DepthMap, b: &DepthMap) -> Option<f64> {
    let (sum, n) = a
        .values
        .iter()
        .zip(&a.valid)
        .zip(b.values.iter().zip(&b.valid))
        .filter(|((_, va), (_, vb))| **va && **vb)
        .fold((0.0, 0usize), |(s, n), ((x, _), (y, _))| (s + (x - y).abs(), n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Compares rendered frames against a prior directory frame by frame and
/// writes `eval.txt` into the render directory.
pub fn cmd_eval(render_dir: &Path, oracle_dir: &Path) -> Result<Vec<FrameMetrics>> {
    let mut run = Run::new("eval", "[eval]\npsnr = 8-bit, capped\nlpips = omitted\n", render_dir);
    let cams = run.read_cameras(PRIOR, oracle_dir)?;
    let truth = run.read_images(PRIOR, oracle_dir, &cams)?;
    let truth_depth = run.read_depth(PRIOR, oracle_dir, DEPTH_TRUE, &cams)?;
    let rendered = run.read_images("render", render_dir, &cams)?;
    let depth = run.read_depth("render", render_dir, RENDER_DEPTH, &cams)?;

    let rows: Vec<FrameMetrics> = (0..cams.len())
        .map(|t| Ok(FrameMetrics { psnr: psnr_8bit(&rendered[t], &truth[t]), ssim: ssim(&rendered[t], &truth[t])?, depth_mae: depth_mae(&depth[t], &truth_depth[t]) }))
        .collect::<Result<_>>()?;
    let mut table = String::from("# LPIPS is not reported: it needs a learned network\n# frame psnr_db ssim depth_mae\n");
    let fmt_mae = |m: Option<f64>| m.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
    for (t, r) in rows.iter().enumerate() {
        let _ = writeln!(table, "{t} {:.4} {:.6} {}", r.psnr, r.ssim, fmt_mae(r.depth_mae));
    }
    let n = rows.len() as f64;
    let maes: Vec<f64> = rows.iter().filter_map(|r| r.depth_mae).collect();
    let mean_mae = (!maes.is_empty()).then(|| maes.iter().sum::<f64>() / maes.len() as f64);
    let _ = writeln!(
        table,
        "mean {:.4} {:.6} {}",
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        fmt_mae(mean_mae)
    );
    run.write(EVAL, table.as_bytes())?;
    run.finish()?;
    Ok(rows)
}

/// Runs every stage: priors into `root/prior`, stage artifacts into
/// `root/work`, training-view renders into `root/render`.
pub fn run_all(cfg: &PipelineConfig, spec: &Path, root: &Path) -> Result<Vec<FrameMetrics>> {
    let (prior, work, renders) = (root.join("prior"), root.join("work"), root.join("render"));
    cmd_synth(spec, &prior)?;
    cmd_masks(cfg, &prior, &work)?;
    cmd_depth(cfg, &prior, &work)?;
    cmd_tracks(cfg, &prior, &work)?;
    cmd_reconstruct(cfg, &prior, &work)?;
    cmd_render(&work.join(CHECKPOINT), &prior.join(CAMERAS), None, &renders)?;
    cmd_eval(&renders, &prior)
}

#[cfg(test)]
mod tests;

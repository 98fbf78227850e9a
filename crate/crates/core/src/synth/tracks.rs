//! Exact point trajectories with occlusion labels, the degraded tracks a
//! real tracker would produce from them, and a re-tracking oracle.

use std::ops::RangeInclusive;

use nalgebra::{Vector2, Vector3};

use super::scene::Scene;
use super::OracleBundle;
use crate::geometry::Camera;
use crate::tracks::{Resampler, Track, TrackSeed, TrackSet};

/// Rest points recovered from different rays agree to about this much.
const SAME_POINT: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occlusion {
    Visible,
    /// Hidden behind another part of its own body.
    SelfOccluded,
    /// Hidden behind a different body.
    ByOther,
    OutOfView,
}

/// A surface point followed through every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub id: u64,
    pub object: Option<usize>,
    pub origin_frame: usize,
    pub body: usize,
    pub part: usize,
    pub rest: Vector3<f64>,
    pub world: Vec<Vector3<f64>>,
    pub positions: Vec<Vector2<f64>>,
    pub depths: Vec<f64>,
    pub state: Vec<Occlusion>,
}

impl GroundTruthTrack {
    pub fn is_visible(&self, t: usize) -> bool {
        self.state[t] == Occlusion::Visible
    }

    /// The track as a perfect tracker would report it.
    pub fn to_track(&self) -> Track {
        let visible = self.state.iter().map(|s| *s == Occlusion::Visible).collect();
        Track::new(self.id, self.object, self.origin_frame, 0, self.positions.clone(), visible)
    }

    /// The track as a tracker that never recovers a lost point would report
    /// it: visibility ends at the first non-visible frame on either side of
    /// the origin.
    pub fn to_lossy_track(&self) -> Track {
        let n = self.state.len();
        let mut visible = vec![false; n];
        for t in (self.origin_frame..n).take_while(|&t| self.is_visible(t)) {
            visible[t] = true;
        }
        for t in (0..self.origin_frame).rev().take_while(|&t| self.is_visible(t)) {
            visible[t] = true;
        }
        Track::new(self.id, self.object, self.origin_frame, 0, self.positions.clone(), visible)
    }

    /// Frames visible in truth but lost by [`GroundTruthTrack::to_lossy_track`].
    pub fn reemergent_frames(&self) -> Vec<usize> {
        let lossy = self.to_lossy_track();
        (0..self.state.len()).filter(|&t| self.is_visible(t) && !lossy.visible[t]).collect()
    }
}

fn classify(scene: &Scene, cam: &Camera, t: usize, body: usize, part: usize, rest: &Vector3<f64>, pixel: &Vector2<f64>) -> Occlusion {
    if !cam.contains(pixel) {
        return Occlusion::OutOfView;
    }
    match scene.cast(cam, t, pixel) {
        Some(h) if h.body == body && h.part == part && (h.rest - rest).norm() <= SAME_POINT * (1.0 + rest.norm()) => Occlusion::Visible,
        Some(h) if h.body == body => Occlusion::SelfOccluded,
        Some(_) => Occlusion::ByOther,
        // The point lies on the ray, so a miss is rounding at a silhouette.
        None => Occlusion::Visible,
    }
}

impl OracleBundle {
    /// Follows the surface point seen at `pixel` in `frame`; `None` on sky.
    pub fn trace(&self, id: u64, object: Option<usize>, frame: usize, pixel: &Vector2<f64>) -> Option<GroundTruthTrack> {
        let hit = self.scene.cast(&self.cams[frame], frame, pixel)?;
        let frames = self.frames();
        let mut tr = GroundTruthTrack {
            id,
            object,
            origin_frame: frame,
            body: hit.body,
            part: hit.part,
            rest: hit.rest,
            world: Vec::with_capacity(frames),
            positions: Vec::with_capacity(frames),
            depths: Vec::with_capacity(frames),
            state: Vec::with_capacity(frames),
        };
        for (t, cam) in self.cams.iter().enumerate() {
            let w = self.scene.world_point(hit.body, hit.part, &hit.rest, t);
            let (p, z) = match cam.project(&w) {
                Ok(pz) => pz,
                Err(_) => (Vector2::new(f64::NAN, f64::NAN), f64::NAN),
            };
            let state = if z.is_nan() { Occlusion::OutOfView } else { classify(&self.scene, cam, t, hit.body, hit.part, &hit.rest, &p) };
            tr.world.push(w);
            // The origin pixel is reported as given rather than re-projected.
            tr.positions.push(if t == frame { *pixel } else { p });
            tr.depths.push(z);
            tr.state.push(if t == frame { Occlusion::Visible } else { state });
        }
        Some(tr)
    }

    /// One ground-truth track per seed that hits a surface, numbered by seed
    /// index.
    pub fn ground_truth_tracks(&self, seeds: &[TrackSeed]) -> Vec<GroundTruthTrack> {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .enumerate()
            .filter_map(|(i, s)| self.trace(i as u64, s.object, s.frame, &Vector2::new(s.x as f64, s.y as f64)))
            .collect()
    }

    /// Tracks as a tracker that loses points at their first occlusion would
    /// report them.
    pub fn lossy_tracks(&self, truth: &[GroundTruthTrack]) -> TrackSet {
        TrackSet { width: self.spec.width, height: self.spec.height, frames: self.frames(), tracks: truth.iter().map(|t| t.to_lossy_track()).collect() }
    }

    pub fn perfect_tracks(&self, truth: &[GroundTruthTrack]) -> TrackSet {
        TrackSet { width: self.spec.width, height: self.spec.height, frames: self.frames(), tracks: truth.iter().map(|t| t.to_track()).collect() }
    }
}

/// Re-tracks by casting a ray at the query position and following whatever
/// surface it hits, which is the right answer a short-window tracker
/// approximates.
#[derive(Debug, Clone)]
pub struct OracleResampler {
    scene: Scene,
    cams: Vec<Camera>,
}

impl OracleResampler {
    pub fn new(bundle: &OracleBundle) -> Self {
        Self { scene: bundle.scene.clone(), cams: bundle.cams.clone() }
    }
}

impl Resampler for OracleResampler {
    fn resample(&self, _track: u64, frame: usize, position: Vector2<f64>, frames: RangeInclusive<usize>) -> Vec<Option<Vector2<f64>>> {
        let hit = self.cams.get(frame).and_then(|cam| self.scene.cast(cam, frame, &position));
        frames
            .map(|t| {
                let hit = hit.as_ref()?;
                let w = self.scene.world_point(hit.body, hit.part, &hit.rest, t);
                self.cams.get(t)?.project(&w).ok().map(|(p, _)| p)
            })
            .collect()
    }
}

//! Motion scaffold: sparse 3-D nodes with per-frame rigid transforms, a K-NN
//! graph over them, and dual-quaternion blended deformation.

mod dq;
mod losses;
mod spacetime;

use log::{debug, warn};
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::geometry::{Camera, DepthMap, RigidTransform};
use crate::tracks::TrackSet;
use crate::{Error, Result};

pub use dq::{blend, blend_linear, DualQuaternion, LinearBlend};
pub(crate) use losses::KINK_TOLERANCE;
pub use losses::{arap_loss, scaffold_projection_loss, vel_acc_losses, ArapBreakdown, LossGrad, NodeGrad};
pub use spacetime::{spacetime_init, SpacetimeConfig, SpacetimeReport};

/// Blend radius used when a node has no neighbours to measure spacing from.
pub const ISOLATED_RADIUS: f64 = 0.1;
/// Points farther than this many radii from every node snap to the nearest.
pub const SUPPORT_RADII: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldNode {
    pub id: usize,
    pub track: u64,
    pub radius: f64,
    /// World transform per frame; translation is the node position.
    pub transforms: Vec<RigidTransform>,
    /// Frames where the position came from an observation rather than gap
    /// filling.
    pub observed: Vec<bool>,
}

impl ScaffoldNode {
    pub fn position(&self, t: usize) -> Vector3<f64> {
        self.transforms[t].translation
    }

    pub fn first_observed(&self) -> usize {
        self.observed.iter().position(|o| *o).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldGraph {
    pub frames: usize,
    pub k: usize,
    pub nodes: Vec<ScaffoldNode>,
    /// Undirected, stored once with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl ScaffoldGraph {
    pub fn validate(&self) -> Result<()> {
        for n in &self.nodes {
            if n.transforms.len() != self.frames || n.observed.len() != self.frames {
                return Err(Error::DimensionMismatch(format!("node {} has {} transforms for {} frames", n.id, n.transforms.len(), self.frames)));
            }
            if !(n.radius > 0.0) {
                return Err(Error::DimensionMismatch(format!("node {} radius {} is not positive", n.id, n.radius)));
            }
        }
        for &(i, j) in &self.edges {
            if i >= j || j >= self.nodes.len() {
                return Err(Error::DimensionMismatch(format!("bad edge ({i}, {j})")));
            }
        }
        Ok(())
    }

    /// Neighbour lists derived from the edge set.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Positions at frame `t`.
    pub fn positions(&self, t: usize) -> Vec<Vector3<f64>> {
        self.nodes.iter().map(|n| n.position(t)).collect()
    }

    /// Recomputes K-NN edges and blend radii, each node measured at its
    /// first observed frame.
    pub fn rebuild_edges(&mut self) {
        let n = self.nodes.len();
        let k = self.k.min(n.saturating_sub(1));
        let knn: Vec<Vec<(f64, usize)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let t = self.nodes[i].first_observed();
                let p = self.nodes[i].position(t);
                let mut d: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| ((self.nodes[j].position(t) - p).norm(), j)).collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.truncate(k);
                d
            })
            .collect();
        let mut edges: Vec<(usize, usize)> = knn
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().map(move |&(_, j)| (i.min(j), i.max(j))))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        self.edges = edges;
        for (node, nb) in self.nodes.iter_mut().zip(&knn) {
            let mut d: Vec<f64> = nb.iter().map(|x| x.0).collect();
            d.sort_by(f64::total_cmp);
            let median = match d.len() {
                0 => 0.0,
                m if m % 2 == 1 => d[m / 2],
                m => 0.5 * (d[m / 2 - 1] + d[m / 2]),
            };
            node.radius = if median > 1e-9 { median } else { ISOLATED_RADIUS };
        }
    }

    /// Nodes influencing `point` at frame `t` and their normalized blend
    /// weights. Falls back to the single nearest node (flagged) when no
    /// node is within `SUPPORT_RADII` radii.
    pub fn skin(&self, point: &Vector3<f64>, t: usize) -> Result<Skin> {
        if self.nodes.is_empty() {
            return Err(Error::NoNodes);
        }
        let mut d: Vec<(f64, usize)> = self.nodes.iter().enumerate().map(|(i, n)| ((n.position(t) - point).norm(), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(self.k.max(1));
        let supported = d.iter().any(|(dist, i)| *dist <= SUPPORT_RADII * self.nodes[*i].radius);
        let mut weights: Vec<(usize, f64)> = d
            .iter()
            .map(|&(dist, i)| {
                let r = self.nodes[i].radius;
                (i, (-dist * dist / (2.0 * r * r)).exp())
            })
            .collect();
        let total: f64 = weights.iter().map(|w| w.1).sum();
        if !supported || !(total > 0.0) {
            return Ok(Skin { frame: t, weights: vec![(d[0].1, 1.0)], fallback: true });
        }
        weights.retain(|w| w.1 > 0.0);
        for w in &mut weights {
            w.1 /= total;
        }
        Ok(Skin { frame: t, weights, fallback: false })
    }

    /// Blended motion from frame `from` to frame `to` for a fixed skin.
    pub fn skin_linear(&self, skin: &Skin, to: usize) -> LinearBlend {
        blend_linear(skin.weights.iter().map(|&(m, w)| (w, self.relative(m, skin.frame, to).rotation)))
    }

    /// `Q_to ∘ Q_from⁻¹` of node `m`.
    pub fn relative(&self, m: usize, from: usize, to: usize) -> RigidTransform {
        let n = &self.nodes[m];
        n.transforms[to].compose(&n.transforms[from].inverse())
    }

    /// Blended rigid motion of a skinned point from its frame to `to`.
    pub fn skin_transform(&self, skin: &Skin, to: usize) -> RigidTransform {
        let lin = self.skin_linear(skin, to);
        let t = lin.translation(skin.weights.iter().map(|&(m, _)| self.relative(m, skin.frame, to).translation));
        RigidTransform::new(lin.rotation, t)
    }
}

/// Frozen blend weights of a point bound at `frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct Skin {
    pub frame: usize,
    pub weights: Vec<(usize, f64)>,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deformed {
    pub point: Vector3<f64>,
    /// No node was within support range; the nearest node alone was used.
    pub fallback: bool,
}

/// Moves `point` observed at frame `t` to frame `t_to` by blending node
/// motions.
pub fn dqb_deform(graph: &ScaffoldGraph, point: &Vector3<f64>, t: usize, t_to: usize) -> Result<Deformed> {
    let skin = graph.skin(point, t)?;
    let tr = graph.skin_transform(&skin, t_to);
    Ok(Deformed { point: tr.apply(point), fallback: skin.fallback })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftConfig {
    pub k: usize,
    pub min_visible: usize,
    /// Only tracks that originate on a dynamic object become nodes.
    pub dynamic_only: bool,
    /// Keep at most this many nodes, taking an even stride over eligible
    /// tracks.
    pub max_nodes: Option<usize>,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self { k: 8, min_visible: 2, dynamic_only: true, max_nodes: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LiftReport {
    pub lifted: usize,
    pub insufficient_visibility: usize,
    pub invalid_depth_frames: usize,
}

/// Backprojects visible track samples through depth to start one node per
/// track, fills unobserved frames by interpolation (constant velocity past
/// the ends) and builds the K-NN graph. Rotations start at identity.
pub fn lift_tracks(tracks: &TrackSet, depths: &[DepthMap], cams: &[Camera], cfg: &LiftConfig) -> Result<(ScaffoldGraph, LiftReport)> {
    let frames = tracks.frames;
    if depths.len() != frames || cams.len() != frames {
        return Err(Error::DimensionMismatch(format!("{frames} track frames, {} depth maps, {} cameras", depths.len(), cams.len())));
    }
    let mut report = LiftReport::default();
    let mut lifted: Vec<(u64, Vec<Option<Vector3<f64>>>)> = Vec::new();
    for tr in &tracks.tracks {
        if cfg.dynamic_only && tr.object.is_none() {
            continue;
        }
        let mut samples = vec![None; frames];
        let mut count = 0;
        for t in tr.span() {
            if !tr.is_visible(t) {
                continue;
            }
            let u = tr.position(t).expect("inside span");
            match depths[t].sample(&u).and_then(|d| cams[t].backproject(&u, d).ok()) {
                Some(p) => {
                    samples[t] = Some(p);
                    count += 1;
                }
                None => {
                    debug!("{}", Error::InvalidDepthAtTrack { track: tr.id, frame: t });
                    report.invalid_depth_frames += 1;
                }
            }
        }
        if count < cfg.min_visible.max(2) {
            report.insufficient_visibility += 1;
            continue;
        }
        lifted.push((tr.id, samples));
    }
    if let Some(cap) = cfg.max_nodes {
        if lifted.len() > cap && cap > 0 {
            let stride = lifted.len() as f64 / cap as f64;
            lifted = (0..cap).map(|i| lifted[(i as f64 * stride) as usize].clone()).collect();
        }
    }
    if report.insufficient_visibility > 0 {
        warn!("{} tracks skipped: {}", report.insufficient_visibility, Error::InsufficientVisibility(cfg.min_visible.max(2) as u64));
    }
    let nodes: Vec<ScaffoldNode> = lifted
        .into_iter()
        .enumerate()
        .map(|(id, (track, samples))| {
            let observed: Vec<bool> = samples.iter().map(Option::is_some).collect();
            let filled = fill_linear(&samples);
            ScaffoldNode {
                id,
                track,
                radius: ISOLATED_RADIUS,
                transforms: filled.into_iter().map(RigidTransform::from_translation).collect(),
                observed,
            }
        })
        .collect();
    report.lifted = nodes.len();
    let mut graph = ScaffoldGraph { frames, k: cfg.k, nodes, edges: Vec::new() };
    graph.rebuild_edges();
    Ok((graph, report))
}

/// Linear interpolation between known samples; constant-velocity
/// extrapolation from the two nearest known samples past either end.
pub(crate) fn fill_linear(samples: &[Option<Vector3<f64>>]) -> Vec<Vector3<f64>> {
    let known: Vec<usize> = (0..samples.len()).filter(|&t| samples[t].is_some()).collect();
    let at = |t: usize| samples[t].unwrap();
    (0..samples.len())
        .map(|t| {
            if let Some(p) = samples[t] {
                return p;
            }
            match known.len() {
                0 => Vector3::zeros(),
                1 => at(known[0]),
                _ => {
                    let k = known.partition_point(|&s| s < t);
                    let (a, b) = if k == 0 {
                        (known[0], known[1])
                    } else if k == known.len() {
                        (known[k - 2], known[k - 1])
                    } else {
                        (known[k - 1], known[k])
                    };
                    let s = (t as f64 - a as f64) / (b as f64 - a as f64);
                    at(a) + (at(b) - at(a)) * s
                }
            }
        })
        .collect()
}

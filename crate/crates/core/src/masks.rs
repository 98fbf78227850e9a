//! Motion evidence from flow and poses, and selection of whole video
//! segments as dynamic objects.

use log::warn;
use rayon::prelude::*;

use crate::geometry::{check_dims, fundamental_matrix, sampson_distance, BinaryMask, Camera, FlowField, ScalarMap};
use crate::{Error, Result, WORKING_LONG_SIDE};

/// Spatio-temporal video segmentation: one label map per frame, `0` meaning
/// "no segment". Labels are stable across frames, so segments within a frame
/// are disjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStack {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Vec<u32>>,
}

impl SegmentStack {
    pub fn new(width: usize, height: usize, frames: usize) -> Self {
        Self { width, height, labels: vec![vec![0; width * height]; frames] }
    }

    pub fn frames(&self) -> usize {
        self.labels.len()
    }

    /// Sorted distinct non-zero labels.
    pub fn segment_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().flatten().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn mask(&self, frame: usize, id: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels[frame].iter().map(|&l| l == id).collect(),
        }
    }

    pub fn paint(&mut self, frame: usize, mask: &BinaryMask, id: u32) {
        for (l, m) in self.labels[frame].iter_mut().zip(&mask.data) {
            if *m {
                *l = id;
            }
        }
    }
}

/// Per-frame moving-pixel masks with the raw error they were thresholded
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct EpiMaskStack {
    pub masks: Vec<BinaryMask>,
    /// Max-over-pairs Sampson distance in working-resolution pixels.
    pub errors: Vec<ScalarMap>,
    /// `false` for frames where every flow pair was degenerate or missing.
    pub usable: Vec<bool>,
    pub threshold: f64,
}

impl EpiMaskStack {
    pub fn frames(&self) -> usize {
        self.masks.len()
    }

    pub fn total_area(&self) -> usize {
        self.masks.iter().map(BinaryMask::count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObject {
    pub id: usize,
    pub segment: u32,
    pub masks: Vec<BinaryMask>,
}

impl DynamicObject {
    pub fn area(&self) -> usize {
        self.masks.iter().map(BinaryMask::count).sum()
    }

    /// Frames where the object mask is non-empty.
    pub fn span(&self) -> Vec<usize> {
        self.masks.iter().enumerate().filter(|(_, m)| !m.is_empty()).map(|(t, _)| t).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMaskStack {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub objects: Vec<DynamicObject>,
}

impl ObjectMaskStack {
    pub fn empty(width: usize, height: usize, frames: usize) -> Self {
        Self { width, height, frames, objects: Vec::new() }
    }

    pub fn get(&self, object: usize) -> Option<&DynamicObject> {
        self.objects.iter().find(|o| o.id == object)
    }

    /// Union of all object masks at a frame.
    pub fn union(&self, frame: usize) -> BinaryMask {
        let mut out = BinaryMask::new(self.width, self.height);
        for o in &self.objects {
            out = out.or(&o.masks[frame]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSelectionConfig {
    pub tau_salient: f64,
    pub tau_appearance: f64,
    /// Threshold in pixels at the working resolution.
    pub epi_threshold_px: f64,
    pub flow_pair_gaps: Vec<usize>,
}

impl Default for MaskSelectionConfig {
    fn default() -> Self {
        Self { tau_salient: 0.05, tau_appearance: 0.2, epi_threshold_px: 2.0, flow_pair_gaps: vec![1, 4] }
    }
}

impl MaskSelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_salient > 0.0 && self.tau_salient < 1.0) {
            return Err(Error::InvalidConfig(format!("tau_salient {} not in (0,1)", self.tau_salient)));
        }
        if !(self.tau_appearance > 0.0 && self.tau_appearance < 1.0) {
            return Err(Error::InvalidConfig(format!("tau_appearance {} not in (0,1)", self.tau_appearance)));
        }
        if !(self.epi_threshold_px > 0.0) {
            return Err(Error::InvalidConfig(format!("epi_threshold_px {} must be positive", self.epi_threshold_px)));
        }
        if self.flow_pair_gaps.is_empty() || self.flow_pair_gaps.contains(&0) {
            return Err(Error::InvalidConfig("flow_pair_gaps must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// Dense flow from frame `from` to frame `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub from: usize,
    pub to: usize,
    pub flow: FlowField,
}

/// Per-pixel Sampson distance (native pixels) of `(p, p + flow(p))`.
pub fn epi_error_map(flow: &FlowField, cam_from: &Camera, cam_to: &Camera) -> Result<ScalarMap> {
    check_dims("flow vs camera", flow.dims(), (cam_from.width, cam_from.height))?;
    let f = fundamental_matrix(cam_from, cam_to)?;
    let (w, h) = flow.dims();
    let mut out = ScalarMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(d) = flow.get(x, y) {
                let a = nalgebra::Vector2::new(x as f64, y as f64);
                out.set(x, y, sampson_distance(&f, &a, &(a + d)));
            }
        }
    }
    Ok(out)
}

/// Thresholds the max-over-gaps Sampson error of every frame.
pub fn epi_masks(flows: &[FlowPair], cams: &[Camera], cfg: &MaskSelectionConfig) -> Result<EpiMaskStack> {
    cfg.validate()?;
    let frames = cams.len();
    let (w, h) = cams.first().map(|c| (c.width, c.height)).ok_or_else(|| Error::DimensionMismatch("no cameras".into()))?;
    let scale = WORKING_LONG_SIDE as f64 / w.max(h) as f64;
    let per_frame: Vec<(ScalarMap, bool)> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let mut acc = ScalarMap::new(w, h);
            let mut usable = false;
            for pair in flows.iter().filter(|p| p.from == t) {
                let gap = pair.to.abs_diff(pair.from);
                if !cfg.flow_pair_gaps.contains(&gap) || pair.to >= frames {
                    continue;
                }
                match epi_error_map(&pair.flow, &cams[t], &cams[pair.to]) {
                    Ok(map) => {
                        usable = true;
                        for i in 0..w * h {
                            if map.valid[i] {
                                let e = map.values[i] * scale;
                                if !acc.valid[i] || e > acc.values[i] {
                                    acc.values[i] = e;
                                    acc.valid[i] = true;
                                }
                            }
                        }
                    }
                    Err(Error::DegenerateBaseline(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok((acc, usable))
        })
        .collect::<Result<_>>()?;
    let mut masks = Vec::with_capacity(frames);
    let mut errors = Vec::with_capacity(frames);
    let mut usable = Vec::with_capacity(frames);
    for (t, (err, ok)) in per_frame.into_iter().enumerate() {
        if !ok {
            warn!("frame {t}: no usable flow pair, epipolar mask left empty");
        }
        let mut m = BinaryMask::new(w, h);
        if ok {
            for i in 0..w * h {
                m.data[i] = err.valid[i] && err.values[i] >= cfg.epi_threshold_px;
            }
        }
        masks.push(m);
        errors.push(err);
        usable.push(ok);
    }
    Ok(EpiMaskStack { masks, errors, usable, threshold: cfg.epi_threshold_px })
}

/// Both ratio tests for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentVerdict {
    pub segment: u32,
    pub overlap: usize,
    pub segment_area: usize,
    /// `overlap / total moving area`.
    pub salient_ratio: f64,
    /// `overlap / segment area`.
    pub appearance_ratio: f64,
    pub passes_salient: bool,
    pub passes_appearance: bool,
}

impl SegmentVerdict {
    pub fn kept(&self) -> bool {
        self.passes_salient && self.passes_appearance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSelection {
    pub objects: ObjectMaskStack,
    /// One entry per segment, ordered by segment id.
    pub report: Vec<SegmentVerdict>,
    /// Set when no frame had any moving pixel; no objects are selected.
    pub empty_motion: bool,
}

/// Promotes whole segments to dynamic objects when they cover enough of the
/// moving surface and enough of their own area moves. Counts are summed over
/// all usable frames.
pub fn select_dynamic_masks(segs: &SegmentStack, epi: &EpiMaskStack, cfg: &MaskSelectionConfig) -> Result<MaskSelection> {
    cfg.validate()?;
    if segs.frames() != epi.frames() {
        return Err(Error::DimensionMismatch(format!("{} segment frames vs {} epipolar frames", segs.frames(), epi.frames())));
    }
    for m in &epi.masks {
        check_dims("segments vs epipolar masks", (segs.width, segs.height), m.dims())?;
    }
    let ids = segs.segment_ids();
    let usable: Vec<usize> = (0..segs.frames()).filter(|&t| epi.usable[t]).collect();
    let total_motion: usize = usable.iter().map(|&t| epi.masks[t].count()).sum();

    let mut overlap = vec![0usize; ids.len()];
    let mut area = vec![0usize; ids.len()];
    for &t in &usable {
        let moving = &epi.masks[t];
        for (i, &label) in segs.labels[t].iter().enumerate() {
            if label == 0 {
                continue;
            }
            let k = ids.binary_search(&label).expect("label collected above");
            area[k] += 1;
            if moving.data[i] {
                overlap[k] += 1;
            }
        }
    }

    let report: Vec<SegmentVerdict> = ids
        .iter()
        .enumerate()
        .map(|(k, &segment)| {
            let salient_ratio = if total_motion > 0 { overlap[k] as f64 / total_motion as f64 } else { 0.0 };
            let appearance_ratio = if area[k] > 0 { overlap[k] as f64 / area[k] as f64 } else { 0.0 };
            SegmentVerdict {
                segment,
                overlap: overlap[k],
                segment_area: area[k],
                salient_ratio,
                appearance_ratio,
                passes_salient: total_motion > 0 && salient_ratio >= cfg.tau_salient,
                passes_appearance: area[k] > 0 && appearance_ratio >= cfg.tau_appearance,
            }
        })
        .collect();

    let mut objects = ObjectMaskStack::empty(segs.width, segs.height, segs.frames());
    if total_motion == 0 {
        warn!("no moving pixels in any frame; no dynamic objects selected");
        return Ok(MaskSelection { objects, report, empty_motion: true });
    }
    let mut kept: Vec<&SegmentVerdict> = report.iter().filter(|v| v.kept()).collect();
    kept.sort_by(|a, b| b.overlap.cmp(&a.overlap).then(a.segment.cmp(&b.segment)));
    for (id, v) in kept.into_iter().enumerate() {
        let masks = (0..segs.frames()).map(|t| segs.mask(t, v.segment)).collect();
        objects.objects.push(DynamicObject { id, segment: v.segment, masks });
    }
    Ok(MaskSelection { objects, report, empty_motion: false })
}

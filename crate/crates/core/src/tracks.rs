//! 2-D point tracks: seed sampling (uniform over motion evidence plus a
//! skeleton band that favors thin parts) and mask-guided re-identification
//! of occluded tracks.

use std::ops::RangeInclusive;

use log::{debug, warn};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{dilate, distance_transform, nearest_pixel, skeletonize, BinaryMask, RgbImage, ScalarMap};
use crate::masks::{EpiMaskStack, ObjectMaskStack};
use crate::{Error, Result, WORKING_LONG_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Observed,
    Reidentified,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Reidentified => "reidentified",
        }
    }
}

/// One track over the contiguous frame span `start..start + positions.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub object: Option<usize>,
    pub origin_frame: usize,
    pub start: usize,
    pub positions: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
    pub provenance: Vec<Provenance>,
}

impl Track {
    pub fn new(id: u64, object: Option<usize>, origin_frame: usize, start: usize, positions: Vec<Vector2<f64>>, visible: Vec<bool>) -> Self {
        let provenance = vec![Provenance::Observed; positions.len()];
        Self { id, object, origin_frame, start, positions, visible, provenance }
    }

    pub fn end(&self) -> usize {
        self.start + self.positions.len()
    }

    pub fn span(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }

    pub fn position(&self, t: usize) -> Option<Vector2<f64>> {
        self.span().contains(&t).then(|| self.positions[t - self.start])
    }

    /// False outside the span.
    pub fn is_visible(&self, t: usize) -> bool {
        self.span().contains(&t) && self.visible[t - self.start]
    }

    pub fn provenance_at(&self, t: usize) -> Option<Provenance> {
        self.span().contains(&t).then(|| self.provenance[t - self.start])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.visible.len() != n || self.provenance.len() != n {
            return Err(Error::DimensionMismatch(format!("track {} has ragged per-frame arrays", self.id)));
        }
        for (i, p) in self.provenance.iter().enumerate() {
            if *p == Provenance::Reidentified && !self.visible[i] {
                return Err(Error::DimensionMismatch(format!(
                    "track {} frame {} is re-identified but invisible",
                    self.id,
                    self.start + i
                )));
            }
        }
        Ok(())
    }
}

/// Tracks expressed in native image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn validate(&self) -> Result<()> {
        for tr in &self.tracks {
            tr.validate()?;
            if tr.end() > self.frames {
                return Err(Error::DimensionMismatch(format!("track {} ends at frame {} of {}", tr.id, tr.end(), self.frames)));
            }
        }
        Ok(())
    }

    pub fn reidentified_count(&self) -> usize {
        self.tracks.iter().flat_map(|t| &t.provenance).filter(|p| **p == Provenance::Reidentified).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_total: usize,
    pub n_skeleton: usize,
    pub skeleton_dilate_px: usize,
    pub working_long_side: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { n_total: 19384, n_skeleton: 3000, skeleton_dilate_px: 5, working_long_side: WORKING_LONG_SIDE, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_skeleton > self.n_total {
            return Err(Error::InvalidConfig(format!("n_skeleton {} exceeds n_total {}", self.n_skeleton, self.n_total)));
        }
        if self.working_long_side == 0 {
            return Err(Error::InvalidConfig("working_long_side must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReIdConfig {
    pub tau_self_occ: f64,
    pub window: usize,
}

impl Default for ReIdConfig {
    fn default() -> Self {
        Self { tau_self_occ: 10.0, window: 2 }
    }
}

impl ReIdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_self_occ > 0.0) || self.window == 0 {
            return Err(Error::InvalidConfig("tau_self_occ must be positive and window at least 1".into()));
        }
        Ok(())
    }
}

/// Output size and scale for bringing a `width × height` raster to a long
/// side of `long_side`. Multiply source coordinates by the scale to get
/// working coordinates.
pub fn working_dims(width: usize, height: usize, long_side: usize) -> (usize, usize, f64) {
    let long = width.max(height);
    if long == long_side {
        return (width, height, 1.0);
    }
    let scale = long_side as f64 / long as f64;
    let w = ((width as f64 * scale).round() as usize).max(1);
    let h = ((height as f64 * scale).round() as usize).max(1);
    if width >= height {
        (long_side, h, scale)
    } else {
        (w, long_side, scale)
    }
}

/// Nearest-neighbour resize of a mask to the working resolution.
pub fn resize_mask_to_working(mask: &BinaryMask, long_side: usize) -> (BinaryMask, f64) {
    let (w, h, scale) = working_dims(mask.width, mask.height, long_side);
    if scale == 1.0 {
        return (mask.clone(), 1.0);
    }
    let src = |v: usize, n: usize| ((v as f64 / scale).round() as usize).min(n - 1);
    let out = BinaryMask::from_fn(w, h, |x, y| mask.get(src(x, mask.width), src(y, mask.height)));
    (out, scale)
}

/// Bilinear resize of an image to the working resolution.
pub fn resize_image_to_working(img: &RgbImage, long_side: usize) -> (RgbImage, f64) {
    let (w, h, scale) = working_dims(img.width, img.height, long_side);
    if scale == 1.0 {
        return (img.clone(), 1.0);
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = img.sample(&Vector2::new(x as f64 / scale, y as f64 / scale));
        }
    }
    (out, scale)
}

/// Sampling weights on the band around the mask's medial axis: support is
/// `dilate(skeleton, dilate_px) ∩ mask`, weight `1 / max(dt, 1)`, normalized
/// to sum to one. Pixels off the support are marked invalid.
pub fn skeleton_band_distribution(mask: &BinaryMask, dilate_px: usize) -> Result<ScalarMap> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let support = dilate(&skeletonize(mask), dilate_px).and(mask);
    let dt = distance_transform(mask);
    let mut out = ScalarMap::new(mask.width, mask.height);
    let mut total = 0.0;
    for (x, y) in support.pixels() {
        let w = 1.0 / dt.get(x, y).unwrap_or(1.0).max(1.0);
        out.set(x, y, w);
        total += w;
    }
    for (v, ok) in out.values.iter_mut().zip(&out.valid) {
        if *ok {
            *v /= total;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedKind {
    Uniform,
    Skeleton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrackSeed {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub object: Option<usize>,
    pub kind: SeedKind,
}

/// Cumulative-weight table for inverse-CDF sampling.
struct Discrete<T> {
    items: Vec<T>,
    cumulative: Vec<f64>,
}

impl<T: Copy> Discrete<T> {
    fn new(entries: impl IntoIterator<Item = (T, f64)>) -> Option<Self> {
        let mut items = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (item, w) in entries {
            if w > 0.0 {
                acc += w;
                items.push(item);
                cumulative.push(acc);
            }
        }
        (!items.is_empty()).then_some(Self { items, cumulative })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> T {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|c| *c <= u).min(self.items.len() - 1);
        self.items[i]
    }
}

fn object_at(objects: &ObjectMaskStack, frame: usize, x: usize, y: usize) -> Option<usize> {
    objects.objects.iter().find(|o| o.masks.get(frame).is_some_and(|m| m.get(x, y))).map(|o| o.id)
}

/// Draws `n_total − n_skeleton` seeds uniformly over motion-evidence pixels
/// of all frames and `n_skeleton` from the skeleton bands of object masks.
/// If one source is empty its share goes to the other.
pub fn sample_track_seeds(epi: &EpiMaskStack, objects: &ObjectMaskStack, cfg: &SamplerConfig) -> Result<Vec<TrackSeed>> {
    cfg.validate()?;
    let epi_area = epi.total_area();
    let object_area: usize = objects.objects.iter().map(|o| o.area()).sum();
    if epi_area == 0 && object_area == 0 {
        return Err(Error::EmptyMotion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (mut n_uniform, mut n_skeleton) = (cfg.n_total - cfg.n_skeleton, cfg.n_skeleton);
    if object_area == 0 {
        warn!("no object masks; drawing all {} seeds uniformly", cfg.n_total);
        n_uniform += n_skeleton;
        n_skeleton = 0;
    }

    // Uniform part: over EPI pixels, or over object pixels when EPI is empty.
    let mut seeds = Vec::with_capacity(cfg.n_total);
    if n_uniform > 0 {
        let frame_masks: Vec<BinaryMask> = if epi_area > 0 {
            epi.masks.clone()
        } else {
            warn!("motion evidence is empty; uniform seeds fall back to object masks");
            (0..objects.frames).map(|t| objects.union(t)).collect()
        };
        let pixels: Vec<(usize, usize, usize)> =
            frame_masks.iter().enumerate().flat_map(|(t, m)| m.pixels().map(move |(x, y)| (t, x, y))).collect();
        for _ in 0..n_uniform {
            let (frame, x, y) = pixels[rng.gen_range(0..pixels.len())];
            seeds.push(TrackSeed { frame, x, y, object: object_at(objects, frame, x, y), kind: SeedKind::Uniform });
        }
    }

    if n_skeleton > 0 {
        // The band radius is given at the working resolution.
        let long = objects.width.max(objects.height).max(1) as f64;
        let dilate_native = (cfg.skeleton_dilate_px as f64 * long / cfg.working_long_side as f64).round() as usize;
        let per_object = Discrete::new(objects.objects.iter().enumerate().map(|(i, o)| (i, o.area() as f64))).ok_or(Error::EmptyMotion)?;
        // Band distributions for every (object, frame) in a span, computed up
        // front so the draw order never depends on scheduling.
        let bands: Vec<Vec<(usize, Discrete<(usize, usize)>)>> = objects
            .objects
            .par_iter()
            .map(|o| {
                o.span()
                    .into_iter()
                    .filter_map(|t| {
                        let dist = skeleton_band_distribution(&o.masks[t], dilate_native).ok()?;
                        let w = dist.width;
                        let table = Discrete::new(
                            dist.values.iter().zip(&dist.valid).enumerate().filter(|(_, (_, ok))| **ok).map(|(i, (v, _))| ((i % w, i / w), *v)),
                        )?;
                        Some((t, table))
                    })
                    .collect()
            })
            .collect();
        for _ in 0..n_skeleton {
            let o = per_object.sample(&mut rng);
            let frames = &bands[o];
            let (frame, table) = &frames[rng.gen_range(0..frames.len())];
            let (x, y) = table.sample(&mut rng);
            seeds.push(TrackSeed { frame: *frame, x, y, object: Some(objects.objects[o].id), kind: SeedKind::Skeleton });
        }
    }
    debug!("sampled {} track seeds", seeds.len());
    Ok(seeds)
}

/// Short-window re-tracking used as the re-identification oracle.
pub trait Resampler: Sync {
    /// Re-tracks the point seen at `position` in `frame` across `frames`,
    /// returning one entry per frame in order (`None` where it has no answer).
    fn resample(&self, track: u64, frame: usize, position: Vector2<f64>, frames: RangeInclusive<usize>) -> Vec<Option<Vector2<f64>>>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReIdReport {
    pub candidates: usize,
    pub reidentified: usize,
    pub self_occluded: usize,
    pub missing_masks: usize,
}

/// Flips occluded frames back to visible when the track's position lies in
/// its origin object's mask and a short re-track agrees with the stored path
/// to within `tau_self_occ` working-resolution pixels. Visible frames and
/// positions are never touched.
pub fn reidentify(tracks: &TrackSet, objects: &ObjectMaskStack, resampler: &dyn Resampler, cfg: &ReIdConfig) -> Result<(TrackSet, ReIdReport)> {
    cfg.validate()?;
    let results: Vec<(Track, ReIdReport)> = tracks
        .tracks
        .par_iter()
        .map(|track| reidentify_track(track, tracks.frames, objects, resampler, cfg))
        .collect();
    let mut report = ReIdReport::default();
    let mut out = Vec::with_capacity(results.len());
    for (t, r) in results {
        report.candidates += r.candidates;
        report.reidentified += r.reidentified;
        report.self_occluded += r.self_occluded;
        report.missing_masks += r.missing_masks;
        out.push(t);
    }
    if report.missing_masks > 0 {
        warn!("{} track frames skipped for missing origin masks", report.missing_masks);
    }
    Ok((TrackSet { width: tracks.width, height: tracks.height, frames: tracks.frames, tracks: out }, report))
}

fn reidentify_track(track: &Track, frames: usize, objects: &ObjectMaskStack, resampler: &dyn Resampler, cfg: &ReIdConfig) -> (Track, ReIdReport) {
    let mut out = track.clone();
    let mut report = ReIdReport::default();
    let Some(origin) = track.object else { return (out, report) };
    let object = objects.get(origin);
    for t in track.span() {
        let i = t - track.start;
        if track.visible[i] {
            continue;
        }
        let Some(mask) = object.and_then(|o| o.masks.get(t)) else {
            report.missing_masks += 1;
            continue;
        };
        let u = track.positions[i];
        match nearest_pixel(mask.width, mask.height, &u) {
            Some((x, y)) if mask.get(x, y) => {}
            _ => continue,
        }
        report.candidates += 1;
        let lo = t.saturating_sub(cfg.window);
        let hi = (t + cfg.window).min(frames.saturating_sub(1));
        let path = resampler.resample(track.id, t, u, lo..=hi);
        let scale = WORKING_LONG_SIDE as f64 / mask.width.max(mask.height) as f64;
        let divergence = (lo..=hi)
            .zip(path)
            .filter_map(|(tp, p)| Some((p? - track.position(tp)?).norm()))
            .fold(0.0, f64::max)
            * scale;
        if divergence > cfg.tau_self_occ {
            report.self_occluded += 1;
        } else {
            out.visible[i] = true;
            out.provenance[i] = Provenance::Reidentified;
            report.reidentified += 1;
        }
    }
    (out, report)
}

/// Fraction of mask pixels within `radius` of any of `points`.
pub fn coverage_fraction(mask: &BinaryMask, points: &[Vector2<f64>], radius: f64) -> f64 {
    let area = mask.count();
    if area == 0 {
        return 0.0;
    }
    let mut hit = BinaryMask::new(mask.width, mask.height);
    let r = radius.ceil() as isize + 1;
    for p in points {
        let (cx, cy) = (p.x.round() as isize, p.y.round() as isize);
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if x < 0 || y < 0 || x >= mask.width as isize || y >= mask.height as isize {
                    continue;
                }
                let d = Vector2::new(x as f64 - p.x, y as f64 - p.y).norm();
                if d <= radius {
                    hit.set(x as usize, y as usize, true);
                }
            }
        }
    }
    hit.intersection_count(mask) as f64 / area as f64
}

pub const COVERAGE_RADIUS_PX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCoverage {
    pub object: usize,
    /// Per frame; `None` where the mask is empty.
    pub coverage: Vec<Option<f64>>,
    pub reidentified_frames: usize,
}

/// Per object and frame, the share of mask pixels near a visible track.
pub fn track_coverage_report(tracks: &TrackSet, objects: &ObjectMaskStack) -> Vec<ObjectCoverage> {
    let visible_at: Vec<Vec<Vector2<f64>>> = (0..objects.frames)
        .map(|t| tracks.tracks.iter().filter(|tr| tr.is_visible(t)).filter_map(|tr| tr.position(t)).collect())
        .collect();
    objects
        .objects
        .iter()
        .map(|o| {
            let coverage = o
                .masks
                .iter()
                .enumerate()
                .map(|(t, m)| (!m.is_empty()).then(|| coverage_fraction(m, &visible_at[t], COVERAGE_RADIUS_PX)))
                .collect();
            let reidentified_frames = tracks
                .tracks
                .iter()
                .filter(|tr| tr.object == Some(o.id))
                .map(|tr| tr.provenance.iter().filter(|p| **p == Provenance::Reidentified).count())
                .sum();
            ObjectCoverage { object: o.id, coverage, reidentified_frames }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScalarMap;
    use crate::masks::DynamicObject;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, prop_assume, proptest, Strategy};

    #[test]
    fn working_dims_examples() {
        assert_eq!(working_dims(1024, 512, 512), (512, 256, 0.5));
        assert_eq!(working_dims(512, 256, 512), (512, 256, 1.0));
        assert_eq!(working_dims(300, 600, 512), (256, 512, 512.0 / 600.0));
        let full = BinaryMask::filled(1024, 512);
        let (m, s) = resize_mask_to_working(&full, 512);
        assert_eq!((m.width, m.height, s), (512, 256, 0.5));
        assert_eq!(m.count(), 512 * 256);
        let (e, _) = resize_mask_to_working(&BinaryMask::new(1000, 700), 512);
        assert!(e.is_empty());
        let img = RgbImage::filled(1024, 512, [0.2, 0.4, 0.6]);
        let (r, _) = resize_image_to_working(&img, 512);
        assert!(r.data.iter().all(|c| (c[1] - 0.4).abs() < 1e-12));
    }

    fn sum_valid(m: &ScalarMap) -> f64 {
        m.values.iter().zip(&m.valid).filter(|(_, ok)| **ok).map(|(v, _)| v).sum()
    }

    #[test]
    fn bar_weights_are_uniform_along_length() {
        let mask = BinaryMask::from_fn(60, 11, |x, y| (5..55).contains(&x) && (4..7).contains(&y));
        let w = skeleton_band_distribution(&mask, 5).unwrap();
        assert!((sum_valid(&w) - 1.0).abs() < 1e-9);
        for y in 4..7 {
            let row: Vec<f64> = (15..45).map(|x| w.get(x, y).expect("band covers the bar")).collect();
            assert!(row.iter().all(|v| (v - row[0]).abs() < 1e-9));
        }
        assert!(w.get(2, 5).is_none());
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(matches!(skeleton_band_distribution(&BinaryMask::new(8, 8), 5), Err(Error::EmptyMask)));
    }

    /// A disk body of radius 30 with a 2-px-wide limb attached on the right.
    fn blob_and_limb() -> (BinaryMask, BinaryMask) {
        let body = |x: usize, y: usize| (x as f64 - 40.0).powi(2) + (y as f64 - 40.0).powi(2) <= 900.0;
        let limb = |x: usize, y: usize| (71..111).contains(&x) && (40..42).contains(&y);
        (BinaryMask::from_fn(120, 80, |x, y| body(x, y) || limb(x, y)), BinaryMask::from_fn(120, 80, limb))
    }

    #[test]
    fn thin_limb_outweighs_blob_interior() {
        let (mask, limb) = blob_and_limb();
        let w = skeleton_band_distribution(&mask, 5).unwrap();
        let dt = distance_transform(&mask);
        let limb_min = limb.pixels().filter_map(|(x, y)| w.get(x, y)).fold(f64::INFINITY, f64::min);
        let interior_max = mask
            .pixels()
            .filter(|&(x, y)| dt.get(x, y).unwrap() >= 5.0)
            .filter_map(|(x, y)| w.get(x, y))
            .fold(0.0, f64::max);
        assert!(limb_min.is_finite() && interior_max > 0.0);
        // Independent evaluation of 1/d on the constructed mask: limb d ≤ 2,
        // interior d ≥ 5.
        assert!(limb_min >= 2.5 * interior_max, "{limb_min} vs {interior_max}");
    }

    fn objects_from(mask: BinaryMask, frames: usize) -> ObjectMaskStack {
        ObjectMaskStack {
            width: mask.width,
            height: mask.height,
            frames,
            objects: vec![DynamicObject { id: 0, segment: 1, masks: vec![mask; frames] }],
        }
    }

    fn epi_from(mask: BinaryMask, frames: usize) -> EpiMaskStack {
        let errors = vec![ScalarMap::new(mask.width, mask.height); frames];
        EpiMaskStack { masks: vec![mask; frames], errors, usable: vec![true; frames], threshold: 2.0 }
    }

    #[test]
    fn default_counts_and_determinism() {
        let (mask, _) = blob_and_limb();
        let objects = objects_from(mask.clone(), 3);
        let epi = epi_from(mask, 3);
        let cfg = SamplerConfig { seed: 9, ..Default::default() };
        let seeds = sample_track_seeds(&epi, &objects, &cfg).unwrap();
        assert_eq!(seeds.len(), 19384);
        assert_eq!(seeds.iter().filter(|s| s.kind == SeedKind::Uniform).count(), 16384);
        assert_eq!(seeds.iter().filter(|s| s.kind == SeedKind::Skeleton).count(), 3000);
        assert_eq!(seeds, sample_track_seeds(&epi, &objects, &cfg).unwrap());
        let plain = sample_track_seeds(&epi, &objects, &SamplerConfig { n_skeleton: 0, ..cfg }).unwrap();
        assert!(plain.iter().all(|s| s.kind == SeedKind::Uniform));
        assert_eq!(plain.len(), 19384);
    }

    #[test]
    fn empty_sources_are_rejected() {
        let empty = BinaryMask::new(16, 16);
        let objects = ObjectMaskStack::empty(16, 16, 2);
        assert!(matches!(sample_track_seeds(&epi_from(empty, 2), &objects, &SamplerConfig::default()), Err(Error::EmptyMotion)));
    }

    #[test]
    fn skeleton_seeds_cover_the_limb() {
        let (mask, limb) = blob_and_limb();
        let objects = objects_from(mask.clone(), 1);
        let epi = epi_from(mask, 1);
        let n = 10_000;
        let seeds = |n_skeleton| {
            let cfg = SamplerConfig { n_total: n, n_skeleton, seed: 4, ..Default::default() };
            sample_track_seeds(&epi, &objects, &cfg).unwrap()
        };
        // Mean coverage contributed by a single seed.
        let per_seed = |s: &[TrackSeed]| {
            s.iter().map(|s| coverage_fraction(&limb, &[Vector2::new(s.x as f64, s.y as f64)], 2.0)).sum::<f64>() / s.len() as f64
        };
        let skel = per_seed(&seeds(n));
        let uni = per_seed(&seeds(0));
        assert!(skel >= 10.0 * uni, "skeleton {skel} vs uniform {uni}");
    }

    struct PathOracle {
        paths: Vec<Vec<Vector2<f64>>>,
    }

    impl Resampler for PathOracle {
        fn resample(&self, track: u64, _frame: usize, _p: Vector2<f64>, frames: RangeInclusive<usize>) -> Vec<Option<Vector2<f64>>> {
            frames.map(|t| self.paths[track as usize].get(t).copied()).collect()
        }
    }

    fn occluded_track(positions: Vec<Vector2<f64>>, visible: Vec<bool>) -> TrackSet {
        let frames = positions.len();
        TrackSet { width: 32, height: 32, frames, tracks: vec![Track::new(0, Some(0), 0, 0, positions, visible)] }
    }

    fn square_objects(frames: usize) -> ObjectMaskStack {
        objects_from(BinaryMask::from_fn(32, 32, |x, y| (8..24).contains(&x) && (8..24).contains(&y)), frames)
    }

    #[test]
    fn reidentifies_with_zero_divergence() {
        let path: Vec<Vector2<f64>> = (0..6).map(|t| Vector2::new(10.0 + t as f64, 12.0)).collect();
        let tracks = occluded_track(path.clone(), vec![true, true, false, false, true, true]);
        let oracle = PathOracle { paths: vec![path] };
        let (out, rep) = reidentify(&tracks, &square_objects(6), &oracle, &ReIdConfig::default()).unwrap();
        assert!(out.tracks[0].visible.iter().all(|v| *v));
        assert_eq!(out.tracks[0].provenance_at(2), Some(Provenance::Reidentified));
        assert_eq!(out.tracks[0].provenance_at(0), Some(Provenance::Observed));
        assert_eq!(rep.reidentified, 2);
        out.validate().unwrap();
    }

    #[test]
    fn outside_the_mask_stays_invisible() {
        let path: Vec<Vector2<f64>> = (0..4).map(|t| Vector2::new(2.0, 2.0 + t as f64)).collect();
        let tracks = occluded_track(path.clone(), vec![true, false, false, true]);
        let oracle = PathOracle { paths: vec![path] };
        let (out, rep) = reidentify(&tracks, &square_objects(4), &oracle, &ReIdConfig::default()).unwrap();
        assert_eq!(out, tracks);
        assert_eq!(rep.candidates, 0);
    }

    #[test]
    fn self_occlusion_divergence_blocks_reidentification() {
        let path: Vec<Vector2<f64>> = (0..5).map(|_| Vector2::new(16.0, 16.0)).collect();
        let mut diverged = path.clone();
        diverged[3] += Vector2::new(12.0, 0.0);
        let tracks = occluded_track(path, vec![true, true, false, true, true]);
        let oracle = PathOracle { paths: vec![diverged] };
        let (out, rep) = reidentify(&tracks, &square_objects(5), &oracle, &ReIdConfig::default()).unwrap();
        assert!(!out.tracks[0].visible[2]);
        assert_eq!(rep.self_occluded, 1);
    }

    #[test]
    fn divergence_is_measured_in_working_pixels() {
        // 32 px masks scale by 16: 0.5 px native is 8 working px, 0.75 px is 12.
        let path: Vec<Vector2<f64>> = (0..3).map(|_| Vector2::new(16.0, 16.0)).collect();
        let tracks = occluded_track(path.clone(), vec![true, false, true]);
        for (shift, expect) in [(0.5, true), (0.75, false)] {
            let mut moved = path.clone();
            moved[2].x += shift;
            let (out, _) = reidentify(&tracks, &square_objects(3), &PathOracle { paths: vec![moved] }, &ReIdConfig::default()).unwrap();
            assert_eq!(out.tracks[0].visible[1], expect, "shift {shift}");
        }
    }

    #[test]
    fn window_is_clipped_at_sequence_ends() {
        let path: Vec<Vector2<f64>> = (0..3).map(|_| Vector2::new(16.0, 16.0)).collect();
        let tracks = occluded_track(path.clone(), vec![false, true, true]);
        let oracle = PathOracle { paths: vec![path] };
        let (out, _) = reidentify(&tracks, &square_objects(3), &oracle, &ReIdConfig::default()).unwrap();
        assert!(out.tracks[0].visible[0]);
    }

    #[test]
    fn missing_origin_mask_is_counted() {
        let path: Vec<Vector2<f64>> = (0..3).map(|_| Vector2::new(16.0, 16.0)).collect();
        let mut tracks = occluded_track(path.clone(), vec![true, false, true]);
        tracks.tracks[0].object = Some(7);
        let (out, rep) = reidentify(&tracks, &square_objects(3), &PathOracle { paths: vec![path] }, &ReIdConfig::default()).unwrap();
        assert_eq!(rep.missing_masks, 1);
        assert!(!out.tracks[0].visible[1]);
    }

    #[test]
    fn coverage_extremes() {
        let mask = BinaryMask::from_fn(20, 20, |x, y| x > 3 && y > 5 && x < 15);
        let objects = objects_from(mask.clone(), 1);
        let none = TrackSet { width: 20, height: 20, frames: 1, tracks: vec![] };
        assert_eq!(track_coverage_report(&none, &objects)[0].coverage, vec![Some(0.0)]);
        let every = TrackSet {
            width: 20,
            height: 20,
            frames: 1,
            tracks: mask
                .pixels()
                .enumerate()
                .map(|(i, (x, y))| Track::new(i as u64, Some(0), 0, 0, vec![Vector2::new(x as f64, y as f64)], vec![true]))
                .collect(),
        };
        assert_eq!(track_coverage_report(&every, &objects)[0].coverage, vec![Some(1.0)]);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<bool>, Vec<(f64, f64)>)> {
        (3usize..9).prop_flat_map(|n| {
            (
                prop::collection::vec((0.0..32.0f64, 0.0..32.0f64), n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec((-15.0..15.0f64, -15.0..15.0f64), n),
            )
        })
    }

    proptest! {
        #[test]
        fn reidentify_is_monotone_and_idempotent((pos, vis, noise) in arb_case()) {
            let path: Vec<Vector2<f64>> = pos.iter().map(|p| Vector2::new(p.0, p.1)).collect();
            let oracle_path: Vec<Vector2<f64>> = path.iter().zip(&noise).map(|(p, n)| p + Vector2::new(n.0, n.1)).collect();
            let tracks = occluded_track(path, vis);
            let objects = square_objects(pos.len());
            let oracle = PathOracle { paths: vec![oracle_path] };
            let cfg = ReIdConfig::default();
            let (once, _) = reidentify(&tracks, &objects, &oracle, &cfg).unwrap();
            let (twice, _) = reidentify(&once, &objects, &oracle, &cfg).unwrap();
            prop_assert_eq!(&once, &twice);
            let (a, b) = (&tracks.tracks[0], &once.tracks[0]);
            prop_assert_eq!(&a.positions, &b.positions);
            for i in 0..a.visible.len() {
                if a.visible[i] {
                    prop_assert!(b.visible[i]);
                    prop_assert_eq!(b.provenance[i], Provenance::Observed);
                }
            }
        }

        #[test]
        fn band_weights_are_positive_and_normalized(w in 3usize..24, h in 3usize..24, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(0.7));
            prop_assume!(!mask.is_empty());
            let d = skeleton_band_distribution(&mask, 5).unwrap();
            prop_assert!((sum_valid(&d) - 1.0).abs() < 1e-9);
            for i in 0..w * h {
                if d.valid[i] {
                    prop_assert!(d.values[i] > 0.0);
                    prop_assert!(mask.data[i]);
                }
            }
        }
    }
}

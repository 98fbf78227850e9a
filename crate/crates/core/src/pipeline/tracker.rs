//! Fallback point tracker that chains the gap-one flow prior, used when no
//! scene description is available to trace points exactly.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::Vector2;

use crate::geometry::{bilinear_taps, FlowField};
use crate::masks::FlowPair;
use crate::tracks::{Resampler, Track, TrackSeed, TrackSet};

/// Fixed-point iterations used to step against the direction of a flow.
const INVERT_ITERATIONS: usize = 20;

pub struct FlowTracker {
    flows: BTreeMap<(usize, usize), FlowField>,
    frames: usize,
    width: usize,
    height: usize,
}

/// Bilinear flow at `p`; `None` if `p` leaves the image or touches an
/// invalid pixel.
fn sample(flow: &FlowField, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let (w, h) = flow.dims();
    if !(p.x >= -0.5 && p.y >= -0.5 && p.x <= w as f64 - 0.5 && p.y <= h as f64 - 0.5) {
        return None;
    }
    let taps = bilinear_taps(w, h, p.x, p.y);
    if taps.iter().any(|&(i, wt)| wt > 0.0 && !flow.valid[i]) {
        return None;
    }
    Some(taps.iter().map(|&(i, wt)| flow.values[i] * wt).sum())
}

impl FlowTracker {
    /// Keeps the pairs whose frames are one apart.
    pub fn new(pairs: &[FlowPair], frames: usize, width: usize, height: usize) -> Self {
        let flows = pairs.iter().filter(|p| p.from.abs_diff(p.to) == 1).map(|p| ((p.from, p.to), p.flow.clone())).collect();
        Self { flows, frames, width, height }
    }

    fn inside(&self, p: &Vector2<f64>) -> bool {
        p.x >= -0.5 && p.y >= -0.5 && p.x <= self.width as f64 - 0.5 && p.y <= self.height as f64 - 0.5
    }

    /// Moves `p` from frame `from` to the adjacent frame `to`, inverting the
    /// opposite flow when only that one exists.
    fn step(&self, from: usize, to: usize, p: &Vector2<f64>) -> Option<Vector2<f64>> {
        let q = if let Some(f) = self.flows.get(&(from, to)) {
            p + sample(f, p)?
        } else {
            let f = self.flows.get(&(to, from))?;
            let mut q = *p;
            for _ in 0..INVERT_ITERATIONS {
                q = p - sample(f, &q)?;
            }
            // Reject non-converged inversions.
            if (q + sample(f, &q)? - p).norm() > 1e-3 {
                return None;
            }
            q
        };
        self.inside(&q).then_some(q)
    }

    /// Chains from `frame` to every frame in `frames`; `None` past the first
    /// failure in either direction.
    fn chain(&self, frame: usize, p: Vector2<f64>, frames: RangeInclusive<usize>) -> Vec<Option<Vector2<f64>>> {
        let (lo, hi) = (*frames.start(), (*frames.end()).min(self.frames.saturating_sub(1)));
        let mut out: BTreeMap<usize, Vector2<f64>> = BTreeMap::new();
        out.insert(frame, p);
        let mut cur = p;
        for t in frame..hi {
            match self.step(t, t + 1, &cur) {
                Some(q) => {
                    out.insert(t + 1, q);
                    cur = q;
                }
                None => break,
            }
        }
        cur = p;
        for t in (lo + 1..=frame).rev() {
            match self.step(t, t - 1, &cur) {
                Some(q) => {
                    out.insert(t - 1, q);
                    cur = q;
                }
                None => break,
            }
        }
        frames.map(|t| out.get(&t).copied()).collect()
    }

    /// One track per seed over the contiguous span the chain survives.
    pub fn track_seeds(&self, seeds: &[TrackSeed]) -> TrackSet {
        use rayon::prelude::*;
        let tracks = seeds
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let p = Vector2::new(s.x as f64, s.y as f64);
                let chain = self.chain(s.frame, p, 0..=self.frames - 1);
                let start = (0..=s.frame).rev().take_while(|&t| chain[t].is_some()).last().unwrap_or(s.frame);
                let positions: Vec<Vector2<f64>> = chain[start..].iter().map_while(|q| *q).collect();
                let n = positions.len();
                Track::new(i as u64, s.object, s.frame, start, positions, vec![true; n])
            })
            .collect();
        TrackSet { width: self.width, height: self.height, frames: self.frames, tracks }
    }
}

impl Resampler for FlowTracker {
    fn resample(&self, _track: u64, frame: usize, position: Vector2<f64>, frames: RangeInclusive<usize>) -> Vec<Option<Vector2<f64>>> {
        if frame >= self.frames {
            return frames.map(|_| None).collect();
        }
        self.chain(frame, position, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracks::SeedKind;

    fn constant_flow(w: usize, h: usize, v: Vector2<f64>) -> FlowField {
        let mut f = FlowField::new(w, h);
        f.values.iter_mut().for_each(|x| *x = v);
        f.valid.iter_mut().for_each(|x| *x = true);
        f
    }

    #[test]
    fn chains_forward_and_inverts_backward() {
        let v = Vector2::new(1.0, 0.5);
        let pairs: Vec<FlowPair> = (0..3).map(|t| FlowPair { from: t, to: t + 1, flow: constant_flow(20, 20, v) }).collect();
        let tracker = FlowTracker::new(&pairs, 4, 20, 20);
        let seed = TrackSeed { frame: 1, x: 5, y: 5, object: None, kind: SeedKind::Uniform };
        let set = tracker.track_seeds(&[seed]);
        let tr = &set.tracks[0];
        assert_eq!(tr.span(), 0..4);
        for t in 0..4 {
            let expected = Vector2::new(5.0, 5.0) + v * (t as f64 - 1.0);
            assert!((tr.position(t).unwrap() - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn tracks_stop_when_leaving_the_image() {
        let pairs: Vec<FlowPair> = (0..4).map(|t| FlowPair { from: t, to: t + 1, flow: constant_flow(10, 10, Vector2::new(3.0, 0.0)) }).collect();
        let tracker = FlowTracker::new(&pairs, 5, 10, 10);
        let set = tracker.track_seeds(&[TrackSeed { frame: 0, x: 2, y: 2, object: Some(0), kind: SeedKind::Skeleton }]);
        assert_eq!(set.tracks[0].span(), 0..3);
        assert_eq!(tracker.resample(0, 0, Vector2::new(2.0, 2.0), 0..=4)[3], None);
    }
}

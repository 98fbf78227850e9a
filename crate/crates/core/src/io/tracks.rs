//! Track file: one header line, then one line per track.
//!
//! ```text
//! dynsplat-tracks 1 <width> <height> <frames>
//! <id> <object|-> <origin_frame> | <t> <x> <y> <v> <p> | <t> <x> <y> <v> <p> ...
//! ```
//!
//! Samples cover consecutive frames; `v` is `1` (visible) or `0`, `p` is `o`
//! (observed) or `r` (re-identified). Coordinates are native pixels written
//! in shortest round-trip form, so files reload bit-exactly.

use std::fmt::Write as _;

use nalgebra::Vector2;

use super::text::{content_lines, opt_to_string, parse_opt, Fields};
use crate::tracks::{Provenance, Track, TrackSet};
use crate::{Error, Result};

const KIND: &str = "track file";
const HEADER: &str = "dynsplat-tracks";

pub fn write_tracks(set: &TrackSet) -> String {
    let mut out = format!("{HEADER} 1 {} {} {}\n", set.width, set.height, set.frames);
    for tr in &set.tracks {
        let _ = write!(out, "{} {} {}", tr.id, opt_to_string(tr.object), tr.origin_frame);
        for (i, p) in tr.positions.iter().enumerate() {
            let prov = match tr.provenance[i] {
                Provenance::Observed => 'o',
                Provenance::Reidentified => 'r',
            };
            let _ = write!(out, " | {} {} {} {} {prov}", tr.start + i, p.x, p.y, u8::from(tr.visible[i]));
        }
        out.push('\n');
    }
    out
}

pub fn read_tracks(text: &str) -> Result<TrackSet> {
    let mut lines = content_lines(text);
    let (n, header) = lines.next().ok_or_else(|| Error::format(KIND, "empty file"))?;
    let mut f = Fields::new(KIND, n, header);
    f.keyword(HEADER)?;
    f.keyword("1")?;
    let (width, height, frames) = (f.parse("width")?, f.parse("height")?, f.parse("frames")?);
    f.finish()?;
    let mut tracks = Vec::new();
    for (n, line) in lines {
        let mut parts = line.split('|');
        let mut head = Fields::new(KIND, n, parts.next().unwrap_or_default());
        let id = head.parse("track id")?;
        let object = parse_opt(&mut head, "object")?;
        let origin_frame: usize = head.parse("origin frame")?;
        head.finish()?;
        let (mut start, mut positions, mut visible, mut provenance) = (None, Vec::new(), Vec::new(), Vec::new());
        for sample in parts {
            let mut s = Fields::new(KIND, n, sample);
            let t: usize = s.parse("frame")?;
            let expected = start.map_or(t, |s0: usize| s0 + positions.len());
            if t != expected || t >= frames {
                return Err(s.err(format!("frame {t} breaks the consecutive span (expected {expected} < {frames})")));
            }
            start.get_or_insert(t);
            positions.push(Vector2::new(s.real("x")?, s.real("y")?));
            visible.push(match s.word("visibility")? {
                "1" => true,
                "0" => false,
                w => return Err(s.err(format!("visibility must be 0 or 1, found `{w}`"))),
            });
            provenance.push(match s.word("provenance")? {
                "o" => Provenance::Observed,
                "r" => Provenance::Reidentified,
                w => return Err(s.err(format!("provenance must be o or r, found `{w}`"))),
            });
            s.finish()?;
        }
        let track = Track { id, object, origin_frame, start: start.unwrap_or(0), positions, visible, provenance };
        track.validate().map_err(|e| Error::format(KIND, format!("line {n}: {e}")))?;
        tracks.push(track);
    }
    Ok(TrackSet { width, height, frames, tracks })
}

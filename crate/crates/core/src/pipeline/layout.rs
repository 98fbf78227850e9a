//! File names inside prior and work directories, and typed readers and
//! writers for each artifact. Every access goes through [`Run`], which
//! records the hashes that end up in the command's manifest.

use std::path::{Path, PathBuf};

use crate::geometry::{check_dims, BinaryMask, Camera, DepthMap, RgbImage};
use crate::io::{self, sha256_hex, Manifest, Tensor};
use crate::masks::{DynamicObject, FlowPair, ObjectMaskStack, SegmentStack};
use crate::{Error, Result};

pub const CAMERAS: &str = "cameras.txt";
pub const SPEC: &str = "spec.ini";
pub const SEGMENTS: &str = "segments.pten";
pub const DEPTH_VIDEO: &str = "depth_video.pten";
pub const DEPTH_MONO: &str = "depth_mono.pten";
pub const DEPTH_TRUE: &str = "depth_true.pten";
pub const FLOW_DIR: &str = "flows";
pub const IMAGE_DIR: &str = "images";
pub const MASK_DIR: &str = "masks";
pub const OBJECTS: &str = "objects.txt";
pub const SELECTION: &str = "selection.txt";
pub const EPI_MASKS: &str = "epi_masks.pten";
pub const EPI_USABLE: &str = "epi_usable.pten";
pub const DEPTH_REFINED: &str = "depth_refined.pten";
pub const DEPTH_LOG: &str = "depth_objective.txt";
pub const TRACKS: &str = "tracks.txt";
pub const COVERAGE: &str = "coverage.txt";
pub const CHECKPOINT: &str = "checkpoint.txt";
pub const LOSS_LOG: &str = "loss_log.txt";
pub const RENDER_DEPTH: &str = "depth.pten";
pub const EVAL: &str = "eval.txt";

pub fn frame_image(t: usize) -> String {
    format!("{IMAGE_DIR}/frame_{t:04}.ppm")
}

pub fn flow_file(from: usize, to: usize) -> String {
    format!("{FLOW_DIR}/flow_{from:04}_{to:04}.pten")
}

pub fn object_mask_file(object: usize, t: usize) -> String {
    format!("{MASK_DIR}/object_{object}_frame_{t:04}.pgm")
}

/// One command invocation: reads and writes files and collects their hashes
/// for the manifest written by [`Run::finish`].
pub struct Run {
    manifest: Manifest,
    out: PathBuf,
}

/// Manifest paths are `<role>/<relative path>` so that runs in different
/// directories produce identical manifests.
fn label(role: &str, rel: &str) -> String {
    format!("{role}/{rel}")
}

impl Run {
    pub fn new(command: &str, config: &str, out: &Path) -> Self {
        Self { manifest: Manifest::new(command, config), out: out.to_path_buf() }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn read(&mut self, role: &str, dir: &Path, rel: &str) -> Result<Vec<u8>> {
        let bytes = io::read_bytes(&dir.join(rel))?;
        self.manifest.inputs.push((sha256_hex(&bytes), label(role, rel)));
        Ok(bytes)
    }

    pub fn read_text(&mut self, role: &str, dir: &Path, rel: &str) -> Result<String> {
        let bytes = self.read(role, dir, rel)?;
        String::from_utf8(bytes).map_err(|_| Error::format("text file", format!("{rel} is not UTF-8")))
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        io::write_bytes(&self.out.join(rel), bytes)?;
        self.manifest.outputs.push((sha256_hex(bytes), label("out", rel)));
        Ok(())
    }

    /// Writes `manifest-<command>.txt` into the output directory.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.out.join(format!("manifest-{}.txt", self.manifest.command));
        io::write_bytes(&path, self.manifest.to_text().as_bytes())?;
        Ok(path)
    }

    pub fn read_cameras(&mut self, role: &str, dir: &Path) -> Result<Vec<Camera>> {
        let cams = io::read_cameras(&self.read_text(role, dir, CAMERAS)?)?;
        if cams.is_empty() {
            return Err(Error::format("camera file", "no cameras"));
        }
        Ok(cams)
    }

    pub fn read_tensor(&mut self, role: &str, dir: &Path, rel: &str) -> Result<Tensor> {
        Tensor::decode(&self.read(role, dir, rel)?)
    }

    pub fn read_depth(&mut self, role: &str, dir: &Path, rel: &str, cams: &[Camera]) -> Result<Vec<DepthMap>> {
        let maps = io::depth_from_tensor(&self.read_tensor(role, dir, rel)?)?;
        check_frames(rel, maps.len(), cams.len())?;
        for m in &maps {
            check_dims(rel, m.dims(), (cams[0].width, cams[0].height))?;
        }
        Ok(maps)
    }

    pub fn write_depth(&mut self, rel: &str, maps: &[DepthMap]) -> Result<()> {
        self.write(rel, &io::depth_to_tensor(maps)?.encode())
    }

    pub fn read_images(&mut self, role: &str, dir: &Path, cams: &[Camera]) -> Result<Vec<RgbImage>> {
        (0..cams.len())
            .map(|t| {
                let img = io::decode_ppm(&self.read(role, dir, &frame_image(t))?)?;
                check_dims("frame image", img.dims(), (cams[t].width, cams[t].height))?;
                Ok(img)
            })
            .collect()
    }

    pub fn write_images(&mut self, images: &[RgbImage]) -> Result<()> {
        for (t, img) in images.iter().enumerate() {
            self.write(&frame_image(t), &io::encode_ppm(img)?)?;
        }
        Ok(())
    }

    /// Flow pairs found in `dir/flows`, in file-name order.
    pub fn read_flows(&mut self, role: &str, dir: &Path, cams: &[Camera]) -> Result<Vec<FlowPair>> {
        let flow_dir = dir.join(FLOW_DIR);
        let entries = std::fs::read_dir(&flow_dir).map_err(|e| Error::io(&flow_dir, e))?;
        let mut pairs = Vec::new();
        for entry in entries {
            let name = entry.map_err(|e| Error::io(&flow_dir, e))?.file_name().to_string_lossy().into_owned();
            if let Some(pair) = parse_flow_name(&name) {
                pairs.push(pair);
            }
        }
        pairs.sort_unstable();
        pairs
            .into_iter()
            .map(|(from, to)| {
                if from >= cams.len() || to >= cams.len() {
                    return Err(Error::DimensionMismatch(format!("flow {from}->{to} outside {} frames", cams.len())));
                }
                let flow = io::flow_from_tensor(&self.read_tensor(role, dir, &flow_file(from, to))?)?;
                check_dims("flow", flow.dims(), (cams[from].width, cams[from].height))?;
                Ok(FlowPair { from, to, flow })
            })
            .collect()
    }

    pub fn read_segments(&mut self, role: &str, dir: &Path, cams: &[Camera]) -> Result<SegmentStack> {
        let t = self.read_tensor(role, dir, SEGMENTS)?;
        let d = t.expect_rank("segments", 3)?;
        check_frames(SEGMENTS, d[0], cams.len())?;
        check_dims(SEGMENTS, (d[2], d[1]), (cams[0].width, cams[0].height))?;
        let mut segs = SegmentStack::new(d[2], d[1], d[0]);
        for (i, &v) in t.as_f32()?.iter().enumerate() {
            if !(v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0) {
                return Err(Error::format("tensor", format!("segment label {v} is not a small non-negative integer")));
            }
            segs.labels[i / (d[1] * d[2])][i % (d[1] * d[2])] = v as u32;
        }
        Ok(segs)
    }

    pub fn write_segments(&mut self, segs: &SegmentStack) -> Result<()> {
        let values = segs.labels.iter().flatten().map(|&l| l as f32).collect();
        let t = Tensor::f32(vec![segs.frames() as u64, segs.height as u64, segs.width as u64], values)?;
        self.write(SEGMENTS, &t.encode())
    }

    pub fn write_masks_tensor(&mut self, rel: &str, masks: &[BinaryMask]) -> Result<()> {
        let (w, h) = masks.first().map_or((0, 0), BinaryMask::dims);
        let values = masks.iter().flat_map(|m| m.data.iter().map(|&b| u8::from(b))).collect();
        self.write(rel, &Tensor::u8(vec![masks.len() as u64, h as u64, w as u64], values)?.encode())
    }

    pub fn read_masks_tensor(&mut self, role: &str, dir: &Path, rel: &str, cams: &[Camera]) -> Result<Vec<BinaryMask>> {
        let t = self.read_tensor(role, dir, rel)?;
        let d = t.expect_rank(rel, 3)?;
        check_frames(rel, d[0], cams.len())?;
        check_dims(rel, (d[2], d[1]), (cams[0].width, cams[0].height))?;
        let n = d[1] * d[2];
        Ok(t.as_u8()?.chunks(n).map(|c| BinaryMask { width: d[2], height: d[1], data: c.iter().map(|&v| v != 0).collect() }).collect())
    }

    /// `objects.txt` (one `object segment` line each) and one mask image per
    /// object and frame.
    pub fn write_objects(&mut self, objects: &ObjectMaskStack) -> Result<()> {
        let mut text = String::from("# object segment\n");
        for o in &objects.objects {
            text.push_str(&format!("{} {}\n", o.id, o.segment));
            for (t, m) in o.masks.iter().enumerate() {
                self.write(&object_mask_file(o.id, t), &io::encode_mask(m)?)?;
            }
        }
        self.write(OBJECTS, text.as_bytes())
    }

    pub fn read_objects(&mut self, role: &str, dir: &Path, cams: &[Camera]) -> Result<ObjectMaskStack> {
        let text = self.read_text(role, dir, OBJECTS)?;
        let (w, h) = (cams[0].width, cams[0].height);
        let mut stack = ObjectMaskStack::empty(w, h, cams.len());
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::format("object list", format!("line {}: expected `<object> <segment>`", n + 1));
            let mut it = line.split_whitespace();
            let id: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let segment: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() || stack.get(id).is_some() {
                return Err(bad());
            }
            let masks = (0..cams.len())
                .map(|t| {
                    let m = io::decode_mask(&self.read(role, dir, &object_mask_file(id, t))?)?;
                    check_dims("object mask", m.dims(), (w, h))?;
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            stack.objects.push(DynamicObject { id, segment, masks });
        }
        Ok(stack)
    }
}

fn check_frames(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch(format!("{what} has {found} frames, cameras have {expected}")));
    }
    Ok(())
}

/// `flow_<from>_<to>.pten` → `(from, to)`.
fn parse_flow_name(name: &str) -> Option<(usize, usize)> {
    let (from, to) = name.strip_prefix("flow_")?.strip_suffix(".pten")?.split_once('_')?;
    Some((from.parse().ok()?, to.parse().ok()?))
}

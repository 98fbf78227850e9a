//! Text checkpoint of a reconstruction state, one record per line.
//!
//! ```text
//! dynsplat-checkpoint 1
//! background <r> <g> <b>
//! graph <frames> <k> <node count>          (or `graph none`)
//! node <id> <track> <radius> <observed as 0/1 string> | <qw qx qy qz tx ty tz> | ...
//! edge <a> <b>
//! gaussian <mean xyz> <rotation wxyz> <scales xyz> <opacity> <color rgb> <skin>
//! ```
//!
//! `skin` is `-` for static Gaussians, else `<frame> <fallback 0/1> <n>`
//! followed by `n` `(node, weight)` pairs. Numbers use shortest round-trip
//! form.

use std::fmt::Write as _;

use nalgebra::{UnitQuaternion, Vector3};

use super::text::{content_lines, unit_quaternion, Fields};
use crate::geometry::RigidTransform;
use crate::recon::ReconState;
use crate::render::{Gaussian, GaussianCloud};
use crate::scaffold::{ScaffoldGraph, ScaffoldNode, Skin};
use crate::{Error, Result};

const KIND: &str = "checkpoint";

fn write_quat(out: &mut String, q: &UnitQuaternion<f64>) {
    let q = q.quaternion();
    let _ = write!(out, " {} {} {} {}", q.w, q.i, q.j, q.k);
}

fn write_vec(out: &mut String, v: &Vector3<f64>) {
    let _ = write!(out, " {} {} {}", v.x, v.y, v.z);
}

pub fn write_checkpoint(state: &ReconState) -> String {
    let mut out = String::from("dynsplat-checkpoint 1\nbackground");
    write_vec(&mut out, &state.cloud.background);
    out.push('\n');
    match &state.graph {
        None => out.push_str("graph none\n"),
        Some(g) => {
            let _ = writeln!(out, "graph {} {} {}", g.frames, g.k, g.nodes.len());
            for n in &g.nodes {
                let observed: String = n.observed.iter().map(|&o| if o { '1' } else { '0' }).collect();
                let _ = write!(out, "node {} {} {} {observed}", n.id, n.track, n.radius);
                for tr in &n.transforms {
                    out.push_str(" |");
                    write_quat(&mut out, &tr.rotation);
                    write_vec(&mut out, &tr.translation);
                }
                out.push('\n');
            }
            for (a, b) in &g.edges {
                let _ = writeln!(out, "edge {a} {b}");
            }
        }
    }
    for g in &state.cloud.gaussians {
        out.push_str("gaussian");
        write_vec(&mut out, &g.mean);
        write_quat(&mut out, &g.rotation);
        write_vec(&mut out, &g.scales);
        let _ = write!(out, " {}", g.opacity);
        write_vec(&mut out, &g.color);
        match &g.skin {
            None => out.push_str(" -"),
            Some(s) => {
                let _ = write!(out, " {} {} {}", s.frame, u8::from(s.fallback), s.weights.len());
                for (m, w) in &s.weights {
                    let _ = write!(out, " {m} {w}");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn vec3(f: &mut Fields, what: &str) -> Result<Vector3<f64>> {
    Ok(Vector3::new(f.real(what)?, f.real(what)?, f.real(what)?))
}

pub fn read_checkpoint(text: &str) -> Result<ReconState> {
    let mut lines = content_lines(text).peekable();
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(KIND, format!("missing {what}")));
    let (n, l) = next("header")?;
    let mut f = Fields::new(KIND, n, l);
    f.keyword("dynsplat-checkpoint")?;
    f.keyword("1")?;
    f.finish()?;
    let (n, l) = next("background")?;
    let mut f = Fields::new(KIND, n, l);
    f.keyword("background")?;
    let background = vec3(&mut f, "background")?;
    f.finish()?;
    let (n, l) = next("graph")?;
    let mut f = Fields::new(KIND, n, l);
    f.keyword("graph")?;
    let mut graph = match f.word("frame count")? {
        "none" => None,
        w => {
            let frames: usize = w.parse().map_err(|_| f.err(format!("bad frame count `{w}`")))?;
            Some((ScaffoldGraph { frames, k: f.parse("k")?, nodes: Vec::new(), edges: Vec::new() }, f.parse::<usize>("node count")?))
        }
    };
    f.finish()?;

    let mut gaussians = Vec::new();
    for (n, line) in lines {
        let (tag, _) = line.split_once(' ').unwrap_or((line, ""));
        match tag {
            "node" => {
                let Some((g, _)) = graph.as_mut() else { return Err(Error::format(KIND, format!("line {n}: node without a graph"))) };
                let mut parts = line.split('|');
                let mut f = Fields::new(KIND, n, parts.next().unwrap_or_default());
                f.keyword("node")?;
                let (id, track, radius) = (f.parse("node id")?, f.parse("track id")?, f.real("radius")?);
                let observed = f.word("observed flags")?.chars().map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    _ => Err(Error::format(KIND, format!("line {n}: observed flags must be 0/1"))),
                });
                let observed = observed.collect::<Result<Vec<_>>>()?;
                f.finish()?;
                let transforms = parts
                    .map(|p| {
                        let mut f = Fields::new(KIND, n, p);
                        let r = unit_quaternion(&mut f)?;
                        let t = vec3(&mut f, "translation")?;
                        f.finish()?;
                        Ok(RigidTransform::new(r, t))
                    })
                    .collect::<Result<Vec<_>>>()?;
                g.nodes.push(ScaffoldNode { id, track, radius, transforms, observed });
            }
            "edge" => {
                let Some((g, _)) = graph.as_mut() else { return Err(Error::format(KIND, format!("line {n}: edge without a graph"))) };
                let mut f = Fields::new(KIND, n, line);
                f.keyword("edge")?;
                g.edges.push((f.parse("edge start")?, f.parse("edge end")?));
                f.finish()?;
            }
            "gaussian" => {
                let mut f = Fields::new(KIND, n, line);
                f.keyword("gaussian")?;
                let mean = vec3(&mut f, "mean")?;
                let rotation = unit_quaternion(&mut f)?;
                let scales = vec3(&mut f, "scale")?;
                let opacity = f.real("opacity")?;
                let color = vec3(&mut f, "color")?;
                let skin = match f.word("skin")? {
                    "-" => None,
                    w => {
                        let frame = w.parse().map_err(|_| f.err(format!("bad skin frame `{w}`")))?;
                        let fallback = match f.word("fallback flag")? {
                            "1" => true,
                            "0" => false,
                            w => return Err(f.err(format!("fallback flag must be 0 or 1, found `{w}`"))),
                        };
                        let count: usize = f.parse("weight count")?;
                        let mut weights = Vec::new();
                        for _ in 0..count {
                            weights.push((f.parse("node index")?, f.real("weight")?));
                        }
                        Some(Skin { frame, weights, fallback })
                    }
                };
                f.finish()?;
                let g = Gaussian { mean, rotation, scales, opacity, color, skin };
                g.validate().map_err(|e| Error::format(KIND, format!("line {n}: {e}")))?;
                gaussians.push(g);
            }
            t => return Err(Error::format(KIND, format!("line {n}: unknown record `{t}`"))),
        }
    }

    let graph = match graph {
        None => None,
        Some((g, count)) => {
            if g.nodes.len() != count {
                return Err(Error::format(KIND, format!("graph promises {count} nodes, found {}", g.nodes.len())));
            }
            g.validate().map_err(|e| Error::format(KIND, e.to_string()))?;
            Some(g)
        }
    };
    for g in &gaussians {
        if let Some(s) = &g.skin {
            let Some(graph) = &graph else { return Err(Error::format(KIND, "skinned Gaussian without a graph")) };
            if s.frame >= graph.frames || s.weights.iter().any(|&(m, _)| m >= graph.nodes.len()) {
                return Err(Error::format(KIND, "skin refers to a missing node or frame"));
            }
        }
    }
    Ok(ReconState { cloud: GaussianCloud::new(gaussians, background), graph })
}

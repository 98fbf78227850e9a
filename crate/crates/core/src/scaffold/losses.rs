use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use super::ScaffoldGraph;
use crate::geometry::Camera;
use crate::tracks::TrackSet;

/// Gradient with respect to node translations, indexed `[node][frame]`.
pub type NodeGrad = Vec<Vec<Vector3<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: NodeGrad,
    /// Number of summands the mean was taken over.
    pub terms: usize,
}

impl LossGrad {
    fn zero(graph: &ScaffoldGraph) -> Self {
        Self { value: 0.0, grad: zero_grad(graph), terms: 0 }
    }

    fn normalize(mut self) -> Self {
        if self.terms > 0 {
            let s = 1.0 / self.terms as f64;
            self.value *= s;
            self.grad.iter_mut().flatten().for_each(|g| *g *= s);
        }
        self
    }
}

pub(crate) fn zero_grad(graph: &ScaffoldGraph) -> NodeGrad {
    vec![vec![Vector3::zeros(); graph.frames]; graph.nodes.len()]
}

/// Residuals at or below this magnitude sit on the kink of a norm and get a
/// zero subgradient, so that rounding noise at an optimum does not push
/// parameters away from it.
pub(crate) const KINK_TOLERANCE: f64 = 1e-10;

fn unit(v: &Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > KINK_TOLERANCE {
        v / n
    } else {
        Vector3::zeros()
    }
}

fn sign(v: f64) -> f64 {
    if v > KINK_TOLERANCE {
        1.0
    } else if v < -KINK_TOLERANCE {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArapBreakdown {
    /// Mean edge-length change.
    pub length: f64,
    /// Mean residual of edges transported by their endpoints' rotations.
    pub rotation: f64,
    pub total: f64,
    pub grad: NodeGrad,
}

/// Node `i`'s frame-to-frame rotation `R_{s+1} R_sᵀ`.
pub(crate) fn step_rotation(graph: &ScaffoldGraph, i: usize, s: usize) -> Matrix3<f64> {
    let n = &graph.nodes[i];
    n.transforms[s + 1].rotation_matrix() * n.transforms[s].rotation_matrix().transpose()
}

/// As-rigid-as-possible regularizer. For every edge `e = p_j − p_i` and
/// consecutive frames it adds `|‖e_{s+1}‖ − ‖e_s‖|` plus the mean over both
/// endpoints of `‖e_{s+1} − ΔR e_s‖`, averaged over edges × frame pairs.
pub fn arap_loss(graph: &ScaffoldGraph) -> ArapBreakdown {
    let mut grad = zero_grad(graph);
    let pairs = graph.frames.saturating_sub(1);
    let count = graph.edges.len() * pairs;
    if count == 0 {
        return ArapBreakdown { length: 0.0, rotation: 0.0, total: 0.0, grad };
    }
    let (mut length, mut rotation) = (0.0, 0.0);
    let scale = 1.0 / count as f64;
    for &(i, j) in &graph.edges {
        for s in 0..pairs {
            let e0 = graph.nodes[j].position(s) - graph.nodes[i].position(s);
            let e1 = graph.nodes[j].position(s + 1) - graph.nodes[i].position(s + 1);
            let diff = e1.norm() - e0.norm();
            length += diff.abs();
            let mut g1 = unit(&e1) * sign(diff);
            let mut g0 = -unit(&e0) * sign(diff);
            for end in [i, j] {
                let dr = step_rotation(graph, end, s);
                let r = e1 - dr * e0;
                rotation += 0.5 * r.norm();
                let u = unit(&r) * 0.5;
                g1 += u;
                g0 -= dr.transpose() * u;
            }
            grad[j][s + 1] += g1 * scale;
            grad[i][s + 1] -= g1 * scale;
            grad[j][s] += g0 * scale;
            grad[i][s] -= g0 * scale;
        }
    }
    length *= scale;
    rotation *= scale;
    ArapBreakdown { length, rotation, total: length + rotation, grad }
}

/// Mean first- and second-difference norms of node trajectories.
pub fn vel_acc_losses(graph: &ScaffoldGraph) -> (LossGrad, LossGrad) {
    let mut vel = LossGrad::zero(graph);
    let mut acc = LossGrad::zero(graph);
    for (m, node) in graph.nodes.iter().enumerate() {
        for s in 0..graph.frames.saturating_sub(1) {
            let d = node.position(s + 1) - node.position(s);
            vel.value += d.norm();
            let u = unit(&d);
            vel.grad[m][s + 1] += u;
            vel.grad[m][s] -= u;
            vel.terms += 1;
        }
        for s in 1..graph.frames.saturating_sub(1) {
            let a = node.position(s + 1) - node.position(s) * 2.0 + node.position(s - 1);
            acc.value += a.norm();
            let u = unit(&a);
            acc.grad[m][s + 1] += u;
            acc.grad[m][s] -= u * 2.0;
            acc.grad[m][s - 1] += u;
            acc.terms += 1;
        }
    }
    (vel.normalize(), acc.normalize())
}

/// Mean pixel distance between each node's projection and its source
/// track, over frames where the track is visible.
pub fn scaffold_projection_loss(graph: &ScaffoldGraph, tracks: &TrackSet, cams: &[Camera]) -> LossGrad {
    let by_id: HashMap<u64, usize> = tracks.tracks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let mut out = LossGrad::zero(graph);
    for (m, node) in graph.nodes.iter().enumerate() {
        let Some(&ti) = by_id.get(&node.track) else { continue };
        let track = &tracks.tracks[ti];
        for t in track.span().filter(|&t| t < graph.frames && t < cams.len()) {
            if !track.is_visible(t) {
                continue;
            }
            let u = track.position(t).expect("inside span");
            let cam = &cams[t];
            let p = node.position(t);
            let Ok((pix, _)) = cam.project(&p) else { continue };
            let r = pix - u;
            out.value += r.norm();
            out.terms += 1;
            let n = r.norm();
            if n > KINK_TOLERANCE {
                let j = cam.projection_jacobian(&cam.to_camera(&p)) * cam.pose.rotation_matrix();
                out.grad[m][t] += j.transpose() * (r / n);
            }
        }
    }
    out.normalize()
}

#[cfg(test)]
mod tests {
    use super::super::tests::rigid_graph;
    use super::super::{ScaffoldGraph, ScaffoldNode};
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::tracks::Track;
    use nalgebra::{UnitQuaternion, Vector2};
    use proptest::prelude::*;

    fn moving(t: usize) -> RigidTransform {
        let tf = t as f64;
        RigidTransform::new(UnitQuaternion::from_euler_angles(0.1 * tf, -0.2 * tf * tf, 0.05), Vector3::new(tf, 0.3 * tf * tf, -0.5))
    }

    #[test]
    fn zero_under_global_rigid_motion() {
        let g = rigid_graph(4, 5, moving);
        let a = arap_loss(&g);
        assert!(a.total.abs() < 1e-9, "{}", a.total);
        assert!(arap_loss(&rigid_graph(3, 4, |_| RigidTransform::identity())).total.abs() < 1e-12);
    }

    #[test]
    fn stretched_edge_contributes_its_length_change() {
        let node = |id: usize, ps: [f64; 2]| ScaffoldNode {
            id,
            track: id as u64,
            radius: 1.0,
            transforms: ps.iter().map(|x| RigidTransform::from_translation(Vector3::new(*x, 0.0, 0.0))).collect(),
            observed: vec![true; 2],
        };
        let delta = 0.37;
        let g = ScaffoldGraph {
            frames: 2,
            k: 8,
            nodes: vec![node(0, [0.0, 0.0]), node(1, [1.0, 1.0 + delta]), node(2, [3.0, 3.0])],
            edges: vec![(0, 1), (1, 2)],
        };
        let a = arap_loss(&g);
        // Both edges touching node 1 change length by δ.
        assert!((a.length - 2.0 * delta / 2.0).abs() < 1e-12);
        // Identity rotations: transported residual equals the length change too.
        assert!((a.rotation - a.length).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_time() {
        let mut g = rigid_graph(3, 4, moving);
        g.nodes[2].transforms[1].translation += Vector3::new(0.02, -0.05, 0.01);
        let forward = arap_loss(&g).total;
        for n in &mut g.nodes {
            n.transforms.reverse();
        }
        assert!((arap_loss(&g).total - forward).abs() < 1e-12);
    }

    fn static_line(frames: usize, f: impl Fn(usize) -> Vector3<f64>) -> ScaffoldGraph {
        ScaffoldGraph {
            frames,
            k: 8,
            nodes: vec![ScaffoldNode {
                id: 0,
                track: 0,
                radius: 1.0,
                transforms: (0..frames).map(|t| RigidTransform::from_translation(f(t))).collect(),
                observed: vec![true; frames],
            }],
            edges: vec![],
        }
    }

    #[test]
    fn velocity_and_acceleration_identities() {
        let (v, a) = vel_acc_losses(&static_line(5, |_| Vector3::new(1.0, 2.0, 3.0)));
        assert_eq!((v.value, a.value), (0.0, 0.0));
        let vel = Vector3::new(0.3, -0.4, 1.2);
        let (v, a) = vel_acc_losses(&static_line(6, |t| vel * t as f64));
        assert!((v.value - vel.norm()).abs() < 1e-12 && a.value.abs() < 1e-12);
        let acc = Vector3::new(0.0, 0.5, -0.2);
        let (_, a) = vel_acc_losses(&static_line(6, |t| acc * (0.5 * (t * t) as f64)));
        assert!((a.value - acc.norm()).abs() < 1e-12);
    }

    fn track_graph() -> (ScaffoldGraph, TrackSet, Vec<Camera>) {
        let cam = Camera::centered(50.0, 40, 30, RigidTransform::new(UnitQuaternion::from_euler_angles(0.0, 0.1, 0.0), Vector3::new(0.1, 0.0, 0.2)));
        let cams = vec![cam.clone(), cam.clone(), cam];
        let pixels = [Vector2::new(10.0, 12.0), Vector2::new(14.0, 11.0), Vector2::new(18.0, 13.0)];
        let depths = [2.0, 2.5, 3.0];
        let transforms = (0..3).map(|t| RigidTransform::from_translation(cams[t].backproject(&pixels[t], depths[t]).unwrap())).collect();
        let graph = ScaffoldGraph {
            frames: 3,
            k: 8,
            nodes: vec![ScaffoldNode { id: 0, track: 42, radius: 1.0, transforms, observed: vec![true; 3] }],
            edges: vec![],
        };
        let tracks = TrackSet { width: 40, height: 30, frames: 3, tracks: vec![Track::new(42, Some(0), 0, 0, pixels.to_vec(), vec![true, true, false])] };
        (graph, tracks, cams)
    }

    #[test]
    fn projection_loss_examples() {
        let (mut g, tracks, cams) = track_graph();
        let l = scaffold_projection_loss(&g, &tracks, &cams);
        assert!(l.value < 1e-9);
        assert_eq!(l.terms, 2);
        // Shift frame 0's node so it projects (3, 4) px away.
        let depth = cams[0].to_camera(&g.nodes[0].position(0)).z;
        g.nodes[0].transforms[0].translation = cams[0].backproject(&Vector2::new(13.0, 16.0), depth).unwrap();
        let l = scaffold_projection_loss(&g, &tracks, &cams);
        assert!((l.value - 5.0 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn projection_loss_decreases_toward_track_ray() {
        let (mut g, tracks, cams) = track_graph();
        let target = g.nodes[0].position(1);
        let drifted = target + Vector3::new(0.3, -0.2, 0.1);
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let s = 1.0 - k as f64 / 10.0;
            g.nodes[0].transforms[1].translation = target + (drifted - target) * s;
            let v = scaffold_projection_loss(&g, &tracks, &cams).value;
            assert!(v <= last + 1e-12);
            last = v;
        }
    }

    #[test]
    fn projection_loss_is_projectively_invariant() {
        let (g, tracks, cams) = track_graph();
        let (mut g2, mut cams2) = (g.clone(), cams.clone());
        let mut g_off = g.clone();
        for n in g_off.nodes.iter_mut() {
            n.transforms[0].translation += Vector3::new(0.05, 0.02, -0.1);
        }
        let base = scaffold_projection_loss(&g_off, &tracks, &cams).value;
        let k = 2.7;
        for (n, n_off) in g2.nodes.iter_mut().zip(&g_off.nodes) {
            for (tr, off) in n.transforms.iter_mut().zip(&n_off.transforms) {
                tr.translation = off.translation * k;
            }
        }
        for c in cams2.iter_mut() {
            c.pose.translation *= k;
        }
        assert!((scaffold_projection_loss(&g2, &tracks, &cams2).value - base).abs() < 1e-9);
    }

    fn fd_check(name: &str, graph: &ScaffoldGraph, f: impl Fn(&ScaffoldGraph) -> f64, grad: &NodeGrad) {
        let h = 1e-6;
        for m in 0..graph.nodes.len() {
            for t in 0..graph.frames {
                for k in 0..3 {
                    let mut a = graph.clone();
                    let mut b = graph.clone();
                    a.nodes[m].transforms[t].translation[k] += h;
                    b.nodes[m].transforms[t].translation[k] -= h;
                    let fd = (f(&a) - f(&b)) / (2.0 * h);
                    assert!((fd - grad[m][t][k]).abs() < 1e-5 * (1.0 + fd.abs()), "{name} node {m} frame {t} axis {k}: {fd} vs {}", grad[m][t][k]);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut g = rigid_graph(3, 4, moving);
        for (i, n) in g.nodes.iter_mut().enumerate() {
            for (t, tr) in n.transforms.iter_mut().enumerate() {
                tr.translation += Vector3::new(0.013 * ((i + t) % 5) as f64, -0.021 * (i % 3) as f64, 0.017 * (t % 2) as f64);
            }
        }
        fd_check("arap", &g, |g| arap_loss(g).total, &arap_loss(&g).grad);
        fd_check("vel", &g, |g| vel_acc_losses(g).0.value, &vel_acc_losses(&g).0.grad);
        fd_check("acc", &g, |g| vel_acc_losses(g).1.value, &vel_acc_losses(&g).1.grad);
        let (mut tg, tracks, cams) = track_graph();
        for (t, tr) in tg.nodes[0].transforms.iter_mut().enumerate() {
            tr.translation += Vector3::new(0.1, 0.05 * t as f64, 0.02);
        }
        fd_check("projection", &tg, |g| scaffold_projection_loss(g, &tracks, &cams).value, &scaffold_projection_loss(&tg, &tracks, &cams).grad);
    }

    proptest! {
        #[test]
        fn single_node_perturbation_is_penalized(node in 0usize..9, frame in 0usize..3, dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64, mag in 1e-5..0.1f64) {
            let mut g = rigid_graph(3, 3, moving);
            let d = Vector3::new(dx, dy, dz);
            prop_assume!(d.norm() > 1e-3);
            g.nodes[node].transforms[frame].translation += d.normalize() * mag;
            prop_assert!(arap_loss(&g).total > 0.0);
        }
    }
}

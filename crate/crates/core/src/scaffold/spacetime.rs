//! Space-time initialization of node trajectories: fills unobserved frames
//! and fits per-node rotations from neighbourhood motion.

use log::debug;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::ScaffoldGraph;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeConfig {
    pub iterations: usize,
    pub w_arap: f64,
    /// Velocity and acceleration weights; small by default so that they only
    /// resolve what the neighbourhood leaves undetermined.
    pub w_vel: f64,
    pub w_acc: f64,
    /// Stop once an iteration lowers the objective by less than this
    /// fraction.
    pub rel_tolerance: f64,
}

impl Default for SpacetimeConfig {
    fn default() -> Self {
        Self { iterations: 500, w_arap: 1.0, w_vel: 1e-9, w_acc: 1e-9, rel_tolerance: 1e-14 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeReport {
    /// Objective before the first and after every iteration.
    pub objective: Vec<f64>,
}

struct Problem {
    frames: usize,
    adj: Vec<Vec<usize>>,
    /// `[node][frame]` positions.
    pos: Vec<Vec<Vector3<f64>>>,
    /// `[node][pair]` rotation from frame `s` to `s + 1`.
    step: Vec<Vec<Matrix3<f64>>>,
    w_edge: f64,
    w_vel: f64,
    w_acc: f64,
}

impl Problem {
    fn edge_residual(&self, a: usize, b: usize, s: usize) -> Vector3<f64> {
        let e0 = self.pos[b][s] - self.pos[a][s];
        let e1 = self.pos[b][s + 1] - self.pos[a][s + 1];
        e1 - self.step[a][s] * e0
    }

    /// Squared surrogate of the ARAP, velocity and acceleration terms.
    fn objective(&self) -> f64 {
        let mut total = 0.0;
        for (a, nb) in self.adj.iter().enumerate() {
            for &b in nb {
                for s in 0..self.frames - 1 {
                    total += self.w_edge * self.edge_residual(a, b, s).norm_squared();
                }
            }
        }
        for p in &self.pos {
            for s in 0..self.frames - 1 {
                total += self.w_vel * (p[s + 1] - p[s]).norm_squared();
            }
            for s in 1..self.frames.saturating_sub(1) {
                total += self.w_acc * (p[s + 1] - p[s] * 2.0 + p[s - 1]).norm_squared();
            }
        }
        total
    }

    fn fit_rotations(&mut self) {
        for a in 0..self.adj.len() {
            for s in 0..self.frames - 1 {
                let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = self.adj[a]
                    .iter()
                    .map(|&b| (self.pos[b][s] - self.pos[a][s], self.pos[b][s + 1] - self.pos[a][s + 1]))
                    .collect();
                let r = procrustes(&pairs);
                let cost = |m: &Matrix3<f64>| pairs.iter().map(|(e0, e1)| (e1 - m * e0).norm_squared()).sum::<f64>();
                let identity = Matrix3::identity();
                self.step[a][s] = if cost(&r) < cost(&identity) { r } else { identity };
            }
        }
    }

    /// Exact minimization over one position with everything else fixed. All
    /// terms are `‖M x + c‖²` with `MᵀM = s·I`.
    fn solve_position(&mut self, i: usize, t: usize) {
        let saved = self.pos[i][t];
        self.pos[i][t] = Vector3::zeros();
        let mut num = Vector3::zeros();
        let mut den = 0.0;
        let mut add = |w: f64, m: Matrix3<f64>, scale: f64, c: Vector3<f64>| {
            num += m.transpose() * c * w;
            den += w * scale;
        };
        let last = self.frames - 1;
        for &j in &self.adj[i] {
            if t >= 1 {
                add(self.w_edge, -Matrix3::identity(), 1.0, self.edge_residual(i, j, t - 1));
                add(self.w_edge, Matrix3::identity(), 1.0, self.edge_residual(j, i, t - 1));
            }
            if t < last {
                add(self.w_edge, self.step[i][t], 1.0, self.edge_residual(i, j, t));
                add(self.w_edge, -self.step[j][t], 1.0, self.edge_residual(j, i, t));
            }
        }
        let p = &self.pos[i];
        if t >= 1 {
            add(self.w_vel, Matrix3::identity(), 1.0, p[t] - p[t - 1]);
        }
        if t < last {
            add(self.w_vel, -Matrix3::identity(), 1.0, p[t + 1] - p[t]);
        }
        for c in t.saturating_sub(1)..=t + 1 {
            if c >= 1 && c < last {
                let coeff = if c == t { -2.0 } else { 1.0 };
                add(self.w_acc, Matrix3::identity() * coeff, coeff * coeff, p[c + 1] - p[c] * 2.0 + p[c - 1]);
            }
        }
        self.pos[i][t] = if den > 0.0 { -num / den } else { saved };
    }
}

/// Rotation minimizing `Σ ‖b − R a‖²` over pairs `(a, b)`. Degenerate
/// configurations fall back to the minimal rotation between dominant
/// directions, or identity.
fn procrustes(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Matrix3<f64> {
    let h: Matrix3<f64> = pairs.iter().map(|(a, b)| b * a.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let s_max = svd.singular_values[order[0]];
    if s_max <= 1e-15 {
        return Matrix3::identity();
    }
    let rank = order.iter().filter(|&&k| svd.singular_values[k] > 1e-10 * s_max).count();
    if rank == 1 {
        let ub = u.column(order[0]).into_owned();
        let va = vt.row(order[0]).transpose();
        if let Some(q) = UnitQuaternion::rotation_between(&va, &ub) {
            return q.to_rotation_matrix().into_inner();
        }
    }
    let d = (u * vt).determinant().signum();
    let mut diag = Matrix3::identity();
    diag[(order[2], order[2])] = d;
    u * diag * vt
}

/// Fills unobserved node positions and fits node rotations by alternating
/// exact rotation fits with block Gauss–Seidel position updates on the
/// squared surrogate of `w_arap·L_arap + w_vel·L_vel + w_acc·L_acc`. Observed
/// positions never move and the objective never increases.
pub fn spacetime_init(graph: &ScaffoldGraph, cfg: &SpacetimeConfig) -> Result<(ScaffoldGraph, SpacetimeReport)> {
    graph.validate()?;
    let frames = graph.frames;
    if frames < 2 || graph.nodes.is_empty() {
        return Ok((graph.clone(), SpacetimeReport { objective: vec![0.0] }));
    }
    let n = graph.nodes.len();
    let adj = graph.adjacency();
    let directed = 2 * graph.edges.len();
    let mut prob = Problem {
        frames,
        pos: graph.nodes.iter().map(|nd| nd.transforms.iter().map(|t| t.translation).collect()).collect(),
        step: (0..n).map(|i| (0..frames - 1).map(|s| super::losses::step_rotation(graph, i, s)).collect()).collect(),
        adj,
        w_edge: if directed > 0 { cfg.w_arap / (directed * (frames - 1)) as f64 } else { 0.0 },
        w_vel: cfg.w_vel / (n * (frames - 1)) as f64,
        w_acc: if frames > 2 { cfg.w_acc / (n * (frames - 2)) as f64 } else { 0.0 },
    };
    let gaps: Vec<(usize, usize)> =
        graph.nodes.iter().enumerate().flat_map(|(i, nd)| (0..frames).filter(move |&t| !nd.observed[t]).map(move |t| (i, t))).collect();

    let mut objective = vec![prob.objective()];
    for it in 0..cfg.iterations {
        prob.fit_rotations();
        for &(i, t) in &gaps {
            prob.solve_position(i, t);
        }
        let value = prob.objective();
        let prev = *objective.last().unwrap();
        objective.push(value);
        if prev - value <= cfg.rel_tolerance * prev || value == 0.0 {
            debug!("space-time init converged after {} iterations", it + 1);
            break;
        }
    }

    let mut out = graph.clone();
    for (i, node) in out.nodes.iter_mut().enumerate() {
        let mut rot = Matrix3::identity();
        for t in 0..frames {
            if t > 0 {
                rot = prob.step[i][t - 1] * rot;
            }
            node.transforms[t].translation = prob.pos[i][t];
            node.transforms[t].rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        }
    }
    Ok((out, SpacetimeReport { objective }))
}

#[cfg(test)]
mod tests {
    use super::super::tests::rigid_graph;
    use super::super::{arap_loss, ScaffoldGraph};
    use super::*;
    use crate::geometry::RigidTransform;

    fn hide(g: &mut ScaffoldGraph, node: usize, frames: std::ops::Range<usize>) {
        let n = &mut g.nodes[node];
        for t in frames.clone() {
            n.observed[t] = false;
        }
        // Replace hidden samples with the linear fill used by lifting.
        let samples: Vec<Option<Vector3<f64>>> = (0..g.frames).map(|t| n.observed[t].then(|| n.position(t))).collect();
        for (t, p) in super::super::fill_linear(&samples).into_iter().enumerate() {
            n.transforms[t].translation = p;
        }
    }

    fn wobbly(t: usize) -> RigidTransform {
        let tf = t as f64;
        RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.2 * (0.7 * tf).sin(), 0.1 * tf, -0.05 * tf * tf),
            Vector3::new((0.9 * tf).sin(), 0.2 * tf * tf, -0.3 * tf),
        )
    }

    fn truth_and_hidden(motion: impl Fn(usize) -> RigidTransform + Copy) -> (ScaffoldGraph, ScaffoldGraph) {
        let truth = rigid_graph(4, 7, motion);
        let mut g = truth.clone();
        hide(&mut g, 5, 2..5);
        hide(&mut g, 10, 0..2);
        for n in g.nodes.iter_mut() {
            for tr in n.transforms.iter_mut() {
                tr.rotation = UnitQuaternion::identity();
            }
        }
        (truth, g)
    }

    #[test]
    fn fills_rigid_gaps_exactly() {
        let (truth, g) = truth_and_hidden(wobbly);
        let (out, rep) = spacetime_init(&g, &SpacetimeConfig::default()).unwrap();
        for w in rep.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-300, "objective rose {} -> {}", w[0], w[1]);
        }
        for (a, b) in out.nodes.iter().zip(&truth.nodes) {
            for t in 0..7 {
                assert!((a.position(t) - b.position(t)).norm() < 1e-6, "node {} frame {t}: {:?} vs {:?}", a.id, a.position(t), b.position(t));
            }
        }
        assert!(arap_loss(&out).total < 1e-6);
    }

    #[test]
    fn observed_positions_never_move() {
        let (_, g) = truth_and_hidden(wobbly);
        let (out, _) = spacetime_init(&g, &SpacetimeConfig { iterations: 3, ..Default::default() }).unwrap();
        for (a, b) in out.nodes.iter().zip(&g.nodes) {
            for t in 0..7 {
                if b.observed[t] {
                    assert_eq!(a.position(t), b.position(t));
                }
            }
        }
    }

    #[test]
    fn static_graph_is_unchanged() {
        let g = rigid_graph(3, 5, |_| RigidTransform::identity());
        let (out, _) = spacetime_init(&g, &SpacetimeConfig::default()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn constant_velocity_gap_is_linear() {
        let v = Vector3::new(0.2, -0.1, 0.05);
        let (_, g) = truth_and_hidden(move |t| RigidTransform::from_translation(v * t as f64));
        let (out, _) = spacetime_init(&g, &SpacetimeConfig::default()).unwrap();
        let n = &out.nodes[5];
        for t in 0..7 {
            let lin = n.position(1) + (n.position(5) - n.position(1)) * ((t as f64 - 1.0) / 4.0);
            assert!((n.position(t) - lin).norm() < 1e-6);
        }
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let r = Rotation3::from_euler_angles(0.3, -0.7, 1.2).into_inner();
        let pts = [Vector3::new(1.0, 0.0, 0.2), Vector3::new(0.0, 1.0, -0.5), Vector3::new(0.3, 0.3, 1.0)];
        let pairs: Vec<_> = pts.iter().map(|a| (*a, r * a)).collect();
        assert!((procrustes(&pairs) - r).norm() < 1e-12);
        // Collinear data: minimal rotation between the directions.
        let a = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 1.0, 0.0);
        let m = procrustes(&[(a, b), (a * 2.0, b * 2.0)]);
        assert!((m * a - b).norm() < 1e-12);
        assert_eq!(procrustes(&[]), Matrix3::identity());
    }
}

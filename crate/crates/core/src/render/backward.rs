use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{footprint, kernel, kernel_deriv, GaussianCloud, Projected, RenderTrace, ROW_CHUNK};
use crate::geometry::Camera;
use crate::scaffold::{NodeGrad, ScaffoldGraph};

/// Derivative of a scalar loss with respect to the raw render channels,
/// per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoint {
    pub rgb: Vec<Vector3<f64>>,
    /// With respect to `depth_sum`.
    pub depth_sum: Vec<f64>,
    pub alpha: Vec<f64>,
    /// With respect to `flow_sum`.
    pub flow: Vec<Vector2<f64>>,
}

impl Adjoint {
    pub fn zeros(pixels: usize) -> Self {
        Self { rgb: vec![Vector3::zeros(); pixels], depth_sum: vec![0.0; pixels], alpha: vec![0.0; pixels], flow: vec![Vector2::zeros(); pixels] }
    }

    pub fn add(&mut self, other: &Adjoint) {
        for i in 0..self.rgb.len() {
            self.rgb[i] += other.rgb[i];
            self.depth_sum[i] += other.depth_sum[i];
            self.alpha[i] += other.alpha[i];
            self.flow[i] += other.flow[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub means: Vec<Vector3<f64>>,
    pub colors: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
    /// Node translations, `[node][frame]`; empty without a graph.
    pub nodes: NodeGrad,
}

impl Gradients {
    pub fn zeros(gaussians: usize, graph: Option<&ScaffoldGraph>) -> Self {
        Self {
            means: vec![Vector3::zeros(); gaussians],
            colors: vec![Vector3::zeros(); gaussians],
            opacities: vec![0.0; gaussians],
            nodes: graph.map_or_else(Vec::new, |g| vec![vec![Vector3::zeros(); g.frames]; g.nodes.len()]),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.means.iter_mut().zip(&other.means) {
            *a += b;
        }
        for (a, b) in self.colors.iter_mut().zip(&other.colors) {
            *a += b;
        }
        for (a, b) in self.opacities.iter_mut().zip(&other.opacities) {
            *a += b;
        }
        for (a, b) in self.nodes.iter_mut().flatten().zip(other.nodes.iter().flatten()) {
            *a += b;
        }
    }
}

/// Screen-space gradient accumulator of one Gaussian.
#[derive(Debug, Clone, Copy)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: Vector3<f64>,
    depth: f64,
    flow: Vector2<f64>,
}

impl Default for ScreenGrad {
    fn default() -> Self {
        Self { mean2d: Vector2::zeros(), conic: Matrix2::zeros(), opacity: 0.0, color: Vector3::zeros(), depth: 0.0, flow: Vector2::zeros() }
    }
}

/// Gradients of `Σ_pixels ⟨adjoint, output⟩` for the render described by
/// `trace`. Blend weights of dynamic Gaussians are fixed by their skins, so
/// node-translation gradients are exact for the model as rendered.
pub fn render_gradients(cloud: &GaussianCloud, graph: Option<&ScaffoldGraph>, trace: &RenderTrace, adjoint: &Adjoint) -> Gradients {
    let n = cloud.gaussians.len();
    let w = trace.width;
    let h = trace.height;
    let bg = cloud.background;

    // Per-chunk screen-space accumulators merged in chunk order.
    let chunks: Vec<usize> = (0..h).step_by(ROW_CHUNK).collect();
    let partial: Vec<Vec<ScreenGrad>> = chunks
        .par_iter()
        .map(|&y0| {
            let mut acc = vec![ScreenGrad::default(); n];
            let mut alphas = Vec::new();
            for y in y0..(y0 + ROW_CHUNK).min(h) {
                for x in 0..w {
                    let i = y * w + x;
                    let list = &trace.lists[i];
                    let (g_rgb, g_z, g_a, g_f) = (adjoint.rgb[i], adjoint.depth_sum[i], adjoint.alpha[i], adjoint.flow[i]);
                    alphas.clear();
                    let mut t = 1.0;
                    for &gi in list {
                        let pr = trace.projected[gi as usize].as_ref().unwrap();
                        let (d2, d) = footprint(pr, x, y);
                        let a = cloud.gaussians[gi as usize].opacity * kernel(d2);
                        alphas.push((a, t, d2, d));
                        t *= 1.0 - a;
                    }
                    // Value each layer contributes per unit of compositing weight.
                    let value = |gi: usize| {
                        let g = &cloud.gaussians[gi];
                        let pr = trace.projected[gi].as_ref().unwrap();
                        g_rgb.dot(&g.color) + g_z * pr.cam_point.z + g_a + g_f.dot(&pr.flow)
                    };
                    let mut after = t * g_rgb.dot(&bg);
                    for (k, &gi) in list.iter().enumerate().rev() {
                        let gi = gi as usize;
                        let (a, t_i, d2, d) = alphas[k];
                        let v = value(gi);
                        let d_alpha = t_i * v - after / (1.0 - a);
                        after += t_i * a * v;
                        let g = &cloud.gaussians[gi];
                        let pr = trace.projected[gi].as_ref().unwrap();
                        let s = &mut acc[gi];
                        let wgt = t_i * a;
                        s.color += g_rgb * wgt;
                        s.depth += g_z * wgt;
                        s.flow += g_f * wgt;
                        s.opacity += d_alpha * kernel(d2);
                        let g_d2 = d_alpha * g.opacity * kernel_deriv(d2);
                        s.mean2d -= pr.conic * d * (2.0 * g_d2);
                        s.conic += d * d.transpose() * g_d2;
                    }
                }
            }
            acc
        })
        .collect();
    let mut screen = vec![ScreenGrad::default(); n];
    for part in &partial {
        for (a, b) in screen.iter_mut().zip(part) {
            a.mean2d += b.mean2d;
            a.conic += b.conic;
            a.opacity += b.opacity;
            a.color += b.color;
            a.depth += b.depth;
            a.flow += b.flow;
        }
    }

    // World-space gradients per Gaussian at the rendered and target frames.
    let world: Vec<(Vector3<f64>, Vector3<f64>)> = screen
        .par_iter()
        .zip(trace.projected.par_iter())
        .map(|(s, pr)| match pr {
            Some(pr) => world_mean_grads(s, pr, &trace.camera, trace.target.as_ref().map(|t| &t.0)),
            None => (Vector3::zeros(), Vector3::zeros()),
        })
        .collect();

    let mut out = Gradients::zeros(n, graph);
    for (gi, g) in cloud.gaussians.iter().enumerate() {
        out.colors[gi] = screen[gi].color;
        out.opacities[gi] = screen[gi].opacity;
        let (g_now, g_to) = world[gi];
        let mut frames = vec![(trace.frame, g_now)];
        if let Some((_, tf)) = trace.target {
            frames.push((tf, g_to));
        }
        match (&g.skin, graph) {
            (Some(skin), Some(graph)) => {
                for (frame, gw) in frames {
                    if gw == Vector3::zeros() {
                        continue;
                    }
                    let lin = graph.skin_linear(skin, frame);
                    out.means[gi] += lin.rotation.to_rotation_matrix().into_inner().transpose() * gw;
                    for (k, &(m, _)) in skin.weights.iter().enumerate() {
                        let ct = lin.coeffs[k].transpose() * gw;
                        let r_rel = graph.relative(m, skin.frame, frame).rotation_matrix();
                        out.nodes[m][frame] += ct;
                        out.nodes[m][skin.frame] -= r_rel.transpose() * ct;
                    }
                }
            }
            _ => {
                for (_, gw) in frames {
                    out.means[gi] += gw;
                }
            }
        }
    }
    out
}

/// Chains screen-space gradients back to the world-space mean at the
/// rendered frame and at the flow target frame.
fn world_mean_grads(s: &ScreenGrad, pr: &Projected, cam: &Camera, target: Option<&Camera>) -> (Vector3<f64>, Vector3<f64>) {
    let p = pr.cam_point;
    let (fx, fy) = (cam.fx, cam.fy);
    // Conic → 2-D covariance → projection Jacobian.
    let g_cov2 = -pr.conic * s.conic * pr.conic;
    let g_jac = (g_cov2 + g_cov2.transpose()) * pr.jac * pr.cov_cam;
    let (x, y, z) = (p.x, p.y, p.z);
    let (z2, z3) = (z * z, z * z * z);
    let mut gp = Vector3::new(
        -g_jac[(0, 2)] * fx / z2,
        -g_jac[(1, 2)] * fy / z2,
        -g_jac[(0, 0)] * fx / z2 + g_jac[(0, 2)] * 2.0 * fx * x / z3 - g_jac[(1, 1)] * fy / z2 + g_jac[(1, 2)] * 2.0 * fy * y / z3,
    );
    // Flow is the target projection minus this one.
    gp += pr.jac.transpose() * (s.mean2d - s.flow);
    gp.z += s.depth;
    let rot_t: Matrix3<f64> = cam.pose.rotation_matrix().transpose();
    let g_now = rot_t * gp;
    let g_to = match (target, pr.target_point) {
        (Some(tc), Some(q)) => tc.pose.rotation_matrix().transpose() * (tc.projection_jacobian(&q).transpose() * s.flow),
        _ => Vector3::zeros(),
    };
    (g_now, g_to)
}

#[cfg(test)]
mod tests {
    use super::super::tests::cam16;
    use super::super::{render, Gaussian, RenderOutput, View};
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::scaffold::{ScaffoldNode, Skin};
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(out: &RenderOutput, adj: &Adjoint) -> f64 {
        let mut s = 0.0;
        for i in 0..out.alpha.len() {
            let c = out.rgb.data[i];
            s += adj.rgb[i].dot(&Vector3::new(c[0], c[1], c[2]));
            s += adj.depth_sum[i] * out.depth_sum[i] + adj.alpha[i] * out.alpha[i] + adj.flow[i].dot(&out.flow_sum[i]);
        }
        s
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let cam = cam16();
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.2, 0.5, Vector3::repeat(0.3))], Vector3::zeros());
        let (_, trace) = render(&cloud, None, View { camera: &cam, frame: 0 }, None).unwrap();
        let g = render_gradients(&cloud, None, &trace, &Adjoint::zeros(256));
        assert_eq!(g, Gradients::zeros(1, None));
    }

    #[test]
    fn l1_color_gradient_of_isolated_gaussian() {
        let cam = cam16();
        let g = Gaussian::isotropic(Vector3::new(0.05, -0.02, 2.0), 0.15, 0.9, Vector3::new(0.2, 0.5, 0.7));
        let cloud = GaussianCloud::new(vec![g], Vector3::zeros());
        let (out, trace) = render(&cloud, None, View { camera: &cam, frame: 0 }, None).unwrap();
        // L1 loss against a white target: adjoint is −1 on every channel.
        let mut adj = Adjoint::zeros(256);
        adj.rgb.iter_mut().for_each(|a| *a = Vector3::repeat(-1.0));
        let grads = render_gradients(&cloud, None, &trace, &adj);
        // By hand: ∂C/∂c = T·α = α per pixel, so the gradient is −Σ α.
        let footprint: f64 = out.alpha.iter().sum();
        for k in 0..3 {
            assert!((grads.colors[0][k] + footprint).abs() < 1e-12);
        }
    }

    /// Dynamic two-node scene with a flow target, plus static Gaussians.
    pub(crate) fn probe_scene(seed: u64) -> (GaussianCloud, ScaffoldGraph, Camera, Camera) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let node = |id: usize, base: Vector3<f64>, d: Vector3<f64>, rot: f64| ScaffoldNode {
            id,
            track: id as u64,
            radius: 0.4,
            transforms: vec![
                RigidTransform::from_translation(base),
                RigidTransform::new(UnitQuaternion::from_euler_angles(0.0, rot, 0.1 * rot), base + d),
            ],
            observed: vec![true; 2],
        };
        let graph = ScaffoldGraph {
            frames: 2,
            k: 8,
            nodes: vec![
                node(0, Vector3::new(-0.2, 0.0, 2.5), Vector3::new(0.05, 0.02, 0.0), 0.1),
                node(1, Vector3::new(0.25, 0.1, 2.6), Vector3::new(-0.03, 0.04, 0.05), -0.15),
            ],
            edges: vec![(0, 1)],
        };
        let mut gs = Vec::new();
        for i in 0..24 {
            let mean = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(2.2..3.0));
            let mut g = Gaussian {
                mean,
                rotation: UnitQuaternion::from_euler_angles(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                scales: Vector3::new(rng.gen_range(0.05..0.15), rng.gen_range(0.05..0.15), rng.gen_range(0.05..0.15)),
                opacity: rng.gen_range(0.2..0.9),
                color: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                skin: None,
            };
            if i % 2 == 0 {
                let w0 = rng.gen_range(0.2..0.8);
                g.skin = Some(Skin { frame: 0, weights: vec![(0, w0), (1, 1.0 - w0)], fallback: false });
            }
            gs.push(g);
        }
        let cam0 = cam16();
        let cam1 = cam16().with_pose(RigidTransform::from_translation(Vector3::new(0.03, -0.01, 0.02)));
        (GaussianCloud::new(gs, Vector3::new(0.1, 0.1, 0.2)), graph, cam0, cam1)
    }

    #[test]
    fn gradients_match_central_differences() {
        let (cloud, graph, cam0, cam1) = probe_scene(3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut adj = Adjoint::zeros(256);
        for i in 0..256 {
            adj.rgb[i] = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            adj.depth_sum[i] = rng.gen_range(-1.0..1.0);
            adj.alpha[i] = rng.gen_range(-1.0..1.0);
            adj.flow[i] = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        for frame in [0usize, 1] {
            let cam = if frame == 0 { &cam0 } else { &cam1 };
            let other = if frame == 0 { &cam1 } else { &cam0 };
            let eval = |c: &GaussianCloud, g: &ScaffoldGraph| {
                objective(&render(c, Some(g), View { camera: cam, frame }, Some(View { camera: other, frame: 1 - frame })).unwrap().0, &adj)
            };
            let (_, trace) = render(&cloud, Some(&graph), View { camera: cam, frame }, Some(View { camera: other, frame: 1 - frame })).unwrap();
            let grads = render_gradients(&cloud, Some(&graph), &trace, &adj);
            let h = 1e-5;
            let mut checked = 0;
            let mut bad = Vec::new();
            let mut check = |name: String, analytic: f64, plus: f64, minus: f64| {
                let fd = (plus - minus) / (2.0 * h);
                checked += 1;
                if (fd - analytic).abs() > 1e-4 * fd.abs().max(analytic.abs()).max(1e-3) {
                    bad.push(format!("{name}: fd {fd} analytic {analytic}"));
                }
            };
            for gi in 0..cloud.gaussians.len() {
                for k in 0..3 {
                    let mut a = cloud.clone();
                    let mut b = cloud.clone();
                    a.gaussians[gi].mean[k] += h;
                    b.gaussians[gi].mean[k] -= h;
                    check(format!("mean {gi}.{k}"), grads.means[gi][k], eval(&a, &graph), eval(&b, &graph));
                    let mut a = cloud.clone();
                    let mut b = cloud.clone();
                    a.gaussians[gi].color[k] += h;
                    b.gaussians[gi].color[k] -= h;
                    check(format!("color {gi}.{k}"), grads.colors[gi][k], eval(&a, &graph), eval(&b, &graph));
                }
                let mut a = cloud.clone();
                let mut b = cloud.clone();
                a.gaussians[gi].opacity += h;
                b.gaussians[gi].opacity -= h;
                check(format!("opacity {gi}"), grads.opacities[gi], eval(&a, &graph), eval(&b, &graph));
            }
            for m in 0..2 {
                for t in 0..2 {
                    for k in 0..3 {
                        let mut a = graph.clone();
                        let mut b = graph.clone();
                        a.nodes[m].transforms[t].translation[k] += h;
                        b.nodes[m].transforms[t].translation[k] -= h;
                        check(format!("node {m} frame {t} axis {k}"), grads.nodes[m][t][k], eval(&cloud, &a), eval(&cloud, &b));
                    }
                }
            }
            assert!(bad.len() * 50 <= checked, "frame {frame}: {} of {checked} mismatched:\n{}", bad.len(), bad.join("\n"));
        }
    }
}

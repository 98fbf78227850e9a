//! Analytic primitives, rigid motion scripts and per-pixel ray casting.

use nalgebra::{Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::geometry::{Camera, RigidTransform};

/// Rays are parameterized by camera depth; hits closer than this are ignored.
const MIN_HIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Rectangle spanned by `u` and `v` (unit, orthogonal) with half sizes.
    Card { center: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, half_u: f64, half_v: f64 },
    Ellipsoid { center: Vector3<f64>, radii: Vector3<f64> },
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    /// Axis-aligned box.
    Cuboid { center: Vector3<f64>, half: Vector3<f64> },
}

impl Shape {
    /// Card facing the camera (`u = x`, `v = y`).
    pub fn card(center: Vector3<f64>, half_u: f64, half_v: f64) -> Self {
        Shape::Card { center, u: Vector3::x(), v: Vector3::y(), half_u, half_v }
    }

    pub fn center(&self) -> Vector3<f64> {
        match self {
            Shape::Card { center, .. } | Shape::Ellipsoid { center, .. } | Shape::Cuboid { center, .. } => *center,
            Shape::Capsule { a, b, .. } => (a + b) * 0.5,
        }
    }

    /// Smallest ray parameter `s > MIN_HIT` at which `o + s d` hits the shape.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Card { center, u, v, half_u, half_v } => {
                let n = u.cross(v);
                let den = d.dot(&n);
                if den.abs() < 1e-15 {
                    return None;
                }
                let s = (center - o).dot(&n) / den;
                let p = o + d * s - center;
                (s > MIN_HIT && p.dot(u).abs() <= *half_u && p.dot(v).abs() <= *half_v).then_some(s)
            }
            Shape::Ellipsoid { center, radii } => {
                let oc = (o - center).component_div(radii);
                let dd = d.component_div(radii);
                nearest_root(dd.norm_squared(), oc.dot(&dd), oc.norm_squared() - 1.0)
            }
            Shape::Capsule { a, b, radius } => capsule(o, d, a, b, *radius),
            Shape::Cuboid { center, half } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    let oc = o[k] - center[k];
                    if d[k].abs() < 1e-15 {
                        if oc.abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half[k] - oc) / d[k];
                    let t2 = (half[k] - oc) / d[k];
                    lo = lo.max(t1.min(t2));
                    hi = hi.min(t1.max(t2));
                }
                if lo > hi {
                    None
                } else if lo > MIN_HIT {
                    Some(lo)
                } else if hi > MIN_HIT {
                    Some(hi)
                } else {
                    None
                }
            }
        }
    }
}

/// Nearest positive root of `a s² + 2 b s + c = 0`.
fn nearest_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let disc = b * b - a * c;
    if disc < 0.0 || a <= 0.0 {
        return None;
    }
    let r = disc.sqrt();
    [(-b - r) / a, (-b + r) / a].into_iter().find(|s| *s > MIN_HIT)
}

fn capsule(o: &Vector3<f64>, d: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> Option<f64> {
    let axis = b - a;
    let len2 = axis.norm_squared();
    // Infinite cylinder around the segment, clipped to it.
    let oa = o - a;
    let dp = d - axis * (d.dot(&axis) / len2);
    let op = oa - axis * (oa.dot(&axis) / len2);
    let mut best: Option<f64> = None;
    let mut keep = |s: f64| {
        if s > MIN_HIT && best.map_or(true, |b| s < b) {
            best = Some(s);
        }
    };
    let qa = dp.norm_squared();
    if qa > 0.0 {
        let qb = op.dot(&dp);
        let qc = op.norm_squared() - radius * radius;
        let disc = qb * qb - qa * qc;
        if disc >= 0.0 {
            for s in [(-qb - disc.sqrt()) / qa, (-qb + disc.sqrt()) / qa] {
                let h = (oa + d * s).dot(&axis) / len2;
                if (0.0..=1.0).contains(&h) {
                    keep(s);
                }
            }
        }
    }
    for cap in [a, b] {
        let oc = o - cap;
        if let Some(s) = nearest_root(d.norm_squared(), oc.dot(d), oc.norm_squared() - radius * radius) {
            keep(s);
        }
    }
    best
}

/// Procedural color pattern evaluated in rest coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub base: [f64; 3],
    pub frequency: f64,
}

impl Texture {
    pub fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        let f = self.frequency;
        let pattern = 0.5 + 0.25 * (f * p.x).sin() + 0.25 * (1.37 * f * p.y + 0.7 * (f * p.z).sin()).sin();
        let k = 0.55 + 0.45 * pattern;
        self.base.map(|c| (c * k).clamp(0.0, 1.0))
    }
}

/// Rigid motion script: at frame `t` a rest point `p` moves to
/// `T(v t) · T(pivot) · R(spin t) · R(swing sin(2π t / period + phase)) · T(−pivot) · p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub velocity: Vector3<f64>,
    pub pivot: Vector3<f64>,
    /// Axis-angle per frame.
    pub spin: Vector3<f64>,
    /// Axis-angle amplitude of a sinusoidal swing.
    pub swing: Vector3<f64>,
    pub period: f64,
    pub phase: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Self { velocity: Vector3::zeros(), pivot: Vector3::zeros(), spin: Vector3::zeros(), swing: Vector3::zeros(), period: 1.0, phase: 0.0 }
    }
}

impl Motion {
    pub fn linear(velocity: Vector3<f64>) -> Self {
        Self { velocity, ..Self::default() }
    }

    pub fn is_static(&self) -> bool {
        self.velocity == Vector3::zeros() && self.spin == Vector3::zeros() && self.swing == Vector3::zeros()
    }

    pub fn at(&self, t: f64) -> RigidTransform {
        let angle = (std::f64::consts::TAU * t / self.period + self.phase).sin();
        let rot = UnitQuaternion::from_scaled_axis(self.spin * t) * UnitQuaternion::from_scaled_axis(self.swing * angle);
        RigidTransform::new(rot, self.pivot + self.velocity * t - rot * self.pivot)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub shape: Shape,
    pub texture: Texture,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    /// Segmentation label, non-zero.
    pub segment: u32,
    pub dynamic: bool,
    pub parts: Vec<Part>,
}

/// Camera moving along a line while yawing about its vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPath {
    pub focal: f64,
    pub start: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw_per_frame: f64,
}

impl CameraPath {
    pub fn camera(&self, width: usize, height: usize, t: usize) -> Camera {
        let tf = t as f64;
        let c2w = RigidTransform::new(UnitQuaternion::from_rotation_matrix(&Rotation3::from_euler_angles(0.0, self.yaw_per_frame * tf, 0.0)), self.start + self.velocity * tf);
        Camera::centered(self.focal, width, height, c2w.inverse())
    }
}

/// Disc of darkening on one body whose center moves over time. It changes
/// appearance only, not geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shadow {
    pub body: usize,
    pub center: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub radius: f64,
    pub darkness: f64,
}

impl Shadow {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        self.center + self.velocity * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub camera: CameraPath,
    pub bodies: Vec<Body>,
    pub shadow: Option<Shadow>,
    pub sky: [f64; 3],
}

/// Nearest surface along a pixel ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub body: usize,
    pub part: usize,
    /// Camera-space depth.
    pub depth: f64,
    /// Surface point in rest coordinates.
    pub rest: Vector3<f64>,
    pub world: Vector3<f64>,
}

impl Scene {
    pub fn camera(&self, t: usize) -> Camera {
        self.camera.camera(self.width, self.height, t)
    }

    pub fn cameras(&self) -> Vec<Camera> {
        (0..self.frames).map(|t| self.camera(t)).collect()
    }

    /// World position of a rest point of `(body, part)` at frame `t`.
    pub fn world_point(&self, body: usize, part: usize, rest: &Vector3<f64>, t: usize) -> Vector3<f64> {
        self.bodies[body].parts[part].motion.at(t as f64).apply(rest)
    }

    /// Casts the ray through continuous pixel position `pixel` of frame `t`.
    pub fn cast(&self, cam: &Camera, t: usize, pixel: &Vector2<f64>) -> Option<Hit> {
        let d_cam = Vector3::new((pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0);
        let c2w = cam.pose.inverse();
        let o = c2w.translation;
        let d = c2w.rotation * d_cam;
        let mut best: Option<Hit> = None;
        for (bi, body) in self.bodies.iter().enumerate() {
            for (pi, part) in body.parts.iter().enumerate() {
                let m = part.motion.at(t as f64);
                let inv = m.inverse();
                let (ro, rd) = (inv.apply(&o), inv.rotation * d);
                if let Some(s) = part.shape.intersect(&ro, &rd) {
                    if best.map_or(true, |b| s < b.depth) {
                        best = Some(Hit { body: bi, part: pi, depth: s, rest: ro + rd * s, world: o + d * s });
                    }
                }
            }
        }
        best
    }

    /// Shaded color of a hit at frame `t`.
    pub fn shade(&self, hit: &Hit, t: usize) -> [f64; 3] {
        let mut c = self.bodies[hit.body].parts[hit.part].texture.color(&hit.rest);
        if let Some(sh) = self.shadow.as_ref().filter(|s| s.body == hit.body) {
            if (hit.world - sh.center_at(t as f64)).norm() < sh.radius {
                c = c.map(|v| v * (1.0 - sh.darkness));
            }
        }
        c
    }

    pub fn in_shadow(&self, hit: &Hit, t: usize) -> bool {
        self.shadow.as_ref().is_some_and(|s| s.body == hit.body && (hit.world - s.center_at(t as f64)).norm() < s.radius)
    }
}

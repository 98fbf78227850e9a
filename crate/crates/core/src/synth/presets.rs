//! Scene layouts for each preset. Units are world units with the focal length
//! equal to the long image side, so a card at depth `z` spans `long / z`
//! pixels per unit at any resolution.

use nalgebra::Vector3;

use super::scene::{Body, CameraPath, Motion, Part, Scene, Shadow, Shape, Texture};
use super::{Preset, SceneSpec};

const SKY: [f64; 3] = [0.62, 0.74, 0.9];

fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

fn part(shape: Shape, base: [f64; 3], frequency: f64, motion: Motion) -> Part {
    Part { shape, texture: Texture { base, frequency }, motion }
}

fn body(name: &str, segment: u32, parts: Vec<Part>) -> Body {
    let dynamic = parts.iter().any(|p| !p.motion.is_static());
    Body { name: name.into(), segment, dynamic, parts }
}

fn backdrop(z: f64) -> Body {
    body("backdrop", 1, vec![part(Shape::card(v(0.0, 0.0, z), 3.0 * z, 3.0 * z), [0.85, 0.8, 0.7], 5.0, Motion::default())])
}

fn camera(spec: &SceneSpec, velocity: Vector3<f64>, yaw_per_frame: f64) -> CameraPath {
    CameraPath { focal: spec.width.max(spec.height) as f64, start: Vector3::zeros(), velocity, yaw_per_frame }
}

/// Card whose long axis starts `r0` from `pivot` and points along `angle`
/// (radians from +y, rotating towards +x).
fn arm_card(pivot: Vector3<f64>, angle: f64, r0: f64, length: f64, half_width: f64) -> Shape {
    let (s, c) = angle.sin_cos();
    let along = v(s, c, 0.0);
    let across = v(c, -s, 0.0);
    Shape::Card { center: pivot + along * (r0 + 0.5 * length), u: across, v: along, half_u: half_width, half_v: 0.5 * length }
}

pub(super) fn build(spec: &SceneSpec) -> Scene {
    let mut scene = Scene { width: spec.width, height: spec.height, frames: spec.frames, camera: camera(spec, Vector3::zeros(), 0.0), bodies: vec![], shadow: None, sky: SKY };
    match spec.preset {
        Preset::Occlusion => {
            // Leg A moves exactly one pixel per frame relative to the camera
            // at 64 px, with edges a quarter pixel off the pixel centers.
            scene.camera = camera(spec, v(1.0 / 32.0, 0.0, 0.0), 0.0);
            let q = 1.0 / 64.0;
            scene.bodies = vec![
                backdrop(8.0),
                body("leg_a", 2, vec![part(Shape::card(v(-1.0 + q, 0.25 + q, 4.0), 0.25, 1.25), [0.8, 0.3, 0.25], 9.0, Motion::linear(v(3.0 / 32.0, 0.0, 0.0)))]),
                body("leg_b", 3, vec![part(Shape::card(v(0.75, 0.25, 3.0), 0.25, 1.25), [0.25, 0.35, 0.8], 9.0, Motion::linear(v(-0.05, 0.0, 0.0)))]),
            ];
        }
        Preset::SelfOcclusion => {
            // An arm hinged above the frame sweeps across its own torso.
            scene.camera = camera(spec, v(0.02, 0.0, 0.0), 0.0);
            let drift = v(0.03, 0.0, 0.0);
            let pivot = v(0.0, -2.5, 3.6);
            let start = -1.2;
            let arm = Motion { velocity: drift, pivot, spin: v(0.0, 0.0, -0.1), ..Motion::default() };
            scene.bodies = vec![
                backdrop(8.0),
                body(
                    "person",
                    2,
                    vec![
                        part(Shape::card(v(0.0, 0.5, 4.0), 1.0, 1.25), [0.3, 0.7, 0.35], 7.0, Motion::linear(drift)),
                        part(arm_card(pivot, start, 0.5, 4.0, 0.2), [0.9, 0.75, 0.2], 11.0, arm),
                    ],
                ),
            ];
        }
        Preset::Walker => {
            // Rounded torso with a thin stick limb about two pixels wide at
            // 64 px, swinging about the shoulder.
            scene.camera = camera(spec, v(0.02, 0.0, 0.0), 0.0);
            let drift = v(0.025, 0.01, 0.0);
            let shoulder = v(-0.1, 0.1, 4.0);
            let limb = Motion { velocity: drift, pivot: shoulder, swing: v(0.0, 0.0, 0.25), period: 12.0, ..Motion::default() };
            scene.bodies = vec![
                backdrop(8.0),
                body(
                    "walker",
                    2,
                    vec![
                        part(Shape::Ellipsoid { center: v(-0.8, 0.0, 4.0), radii: v(0.8, 0.85, 0.5) }, [0.75, 0.35, 0.3], 6.0, Motion::linear(drift)),
                        part(Shape::Capsule { a: shoulder, b: v(1.2, 0.35, 4.0), radius: 1.0 / 16.0 }, [0.95, 0.85, 0.3], 8.0, limb),
                    ],
                ),
            ];
        }
        Preset::BlurredDepth => {
            // A strongly slanted slab carrying thin raised ridges: the large
            // depth range survives blurring while the ridges do not.
            scene.camera = camera(spec, v(0.02, 0.0, 0.0), 0.0);
            let (s, c) = 50f64.to_radians().sin_cos();
            let (u, up) = (v(c, 0.0, s), v(0.0, 1.0, 0.0));
            let toward_camera = v(s, 0.0, -c);
            let center = v(0.0, -0.1, 4.5);
            let motion = Motion::linear(v(0.0, 0.03, 0.0));
            let mut parts = vec![part(Shape::Card { center, u, v: up, half_u: 1.4, half_v: 1.2 }, [0.3, 0.55, 0.85], 7.0, motion)];
            for k in [-0.8, 0.0, 0.8] {
                let base = center + u * k + toward_camera * 0.25;
                parts.push(part(Shape::Capsule { a: base - up * 0.9, b: base + up * 0.9, radius: 0.07 }, [0.9, 0.8, 0.35], 9.0, motion));
            }
            scene.bodies = vec![backdrop(8.0), body("ridged_slab", 2, parts)];
        }
        Preset::Floater => {
            // Narrow baseline over a textured plane and a box, with one small
            // mover.
            scene.camera = camera(spec, v(0.004, 0.0, 0.0), 0.0);
            scene.bodies = vec![
                backdrop(5.0),
                body("box", 3, vec![part(Shape::Cuboid { center: v(-0.6, 0.3, 4.0), half: v(0.4, 0.4, 0.3) }, [0.5, 0.6, 0.4], 9.0, Motion::default())]),
                body("ball", 2, vec![part(Shape::Ellipsoid { center: v(0.7, -0.4, 3.0), radii: v(0.3, 0.3, 0.3) }, [0.85, 0.3, 0.6], 10.0, Motion::linear(v(0.0, 0.02, 0.0)))]),
            ];
        }
        Preset::Shadow => {
            // The shadow darkens a large static patch and moves with the ball,
            // so the flow prior follows it.
            scene.camera = camera(spec, v(0.03, 0.0, 0.0), 0.0);
            scene.bodies = vec![
                backdrop(7.0),
                body("ball", 2, vec![part(Shape::Ellipsoid { center: v(-0.8, -0.2, 4.0), radii: v(0.5, 0.5, 0.5) }, [0.9, 0.45, 0.2], 8.0, Motion::linear(v(0.0, 0.03, 0.0)))]),
                body("patch", 3, vec![part(Shape::card(v(0.3, -1.5, 6.0), 2.0, 0.8), [0.55, 0.75, 0.45], 6.0, Motion::default())]),
            ];
            scene.shadow = Some(Shadow { body: 2, center: v(1.0, -1.9, 6.0), velocity: v(0.0, 0.04, 0.0), radius: 0.35, darkness: 0.55 });
        }
        Preset::Static => {
            scene.camera = camera(spec, v(0.03, 0.01, 0.0), 0.004);
            scene.bodies = vec![
                backdrop(8.0),
                body("crate", 2, vec![part(Shape::Cuboid { center: v(0.5, 0.4, 4.5), half: v(0.6, 0.5, 0.5) }, [0.6, 0.45, 0.3], 7.0, Motion::default())]),
            ];
        }
    }
    scene
}

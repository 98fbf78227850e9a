use nalgebra::Vector2;
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

use super::*;
use crate::masks::{epi_masks, MaskSelectionConfig};
use crate::tracks::{SeedKind, TrackSeed};

fn small(preset: Preset) -> SceneSpec {
    SceneSpec { width: 32, height: 32, frames: 6, ..SceneSpec::preset(preset) }
}

fn seed(frame: usize, x: usize, y: usize) -> TrackSeed {
    TrackSeed { frame, x, y, object: Some(0), kind: SeedKind::Uniform }
}

#[test]
fn presets_parse_by_name() {
    for p in Preset::ALL {
        assert_eq!(p.name().parse::<Preset>().unwrap(), p);
    }
    assert!(matches!("dancer".parse::<Preset>(), Err(Error::InvalidSpec(_))));
}

#[test]
fn invalid_specs_name_every_field() {
    let mut spec = SceneSpec::preset(Preset::Walker);
    spec.frames = 2;
    spec.noise.mono_scale = 0.0;
    let Err(Error::InvalidSpec(msg)) = generate(&spec) else { panic!("accepted") };
    assert!(msg.contains("frames") && msg.contains("mono_scale"), "{msg}");
}

#[test]
fn identical_seeds_give_identical_bundles() {
    let mut spec = small(Preset::Shadow);
    spec.noise.flow_noise = 0.3;
    let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
    assert_eq!(a.images, b.images);
    assert_eq!(a.prior_flows, b.prior_flows);
    assert_eq!(a.segments, b.segments);
    spec.seed = 1;
    assert_ne!(generate(&spec).unwrap().prior_flows, a.prior_flows);
}

/// Backprojects through exact depth and reprojects with the target camera.
fn camera_flow(b: &OracleBundle, pair: &FlowPair, i: usize) -> Vector2<f64> {
    let w = b.spec.width;
    let x = Vector2::new((i % w) as f64, (i / w) as f64);
    let p = b.cams[pair.from].backproject(&x, b.depth[pair.from].values[i]).unwrap();
    b.cams[pair.to].project(&p).unwrap().0 - x
}

#[test]
fn static_scene_flow_is_camera_induced_and_epi_is_empty() {
    let b = generate(&small(Preset::Static)).unwrap();
    assert!(b.objects.objects.is_empty());
    for pair in &b.flows {
        for i in 0..pair.flow.values.len() {
            if pair.flow.valid[i] {
                assert!((pair.flow.values[i] - camera_flow(&b, pair, i)).norm() < 1e-6);
            }
        }
    }
    let epi = epi_masks(&b.prior_flows, &b.cams, &MaskSelectionConfig::default()).unwrap();
    assert_eq!(epi.total_area(), 0);
}

#[test]
fn static_pixels_of_dynamic_scenes_follow_the_camera() {
    for preset in [Preset::Occlusion, Preset::Walker, Preset::Shadow] {
        let b = generate(&small(preset)).unwrap();
        for pair in &b.flows {
            let dynamic = b.objects.union(pair.from);
            for i in 0..pair.flow.values.len() {
                if pair.flow.valid[i] && !dynamic.data[i] {
                    assert!((pair.flow.values[i] - camera_flow(&b, pair, i)).norm() < 1e-6, "{preset:?}");
                }
            }
        }
    }
}

#[test]
fn pairs_cover_both_gaps_and_wrap_backwards() {
    let b = generate(&small(Preset::Walker)).unwrap();
    let pairs: Vec<(usize, usize)> = b.flows.iter().map(|p| (p.from, p.to)).collect();
    assert!(pairs.contains(&(0, 1)) && pairs.contains(&(1, 5)) && pairs.contains(&(5, 4)) && pairs.contains(&(5, 1)));
    assert_eq!(pair_target(2, 4, 6), None);
}

#[test]
fn depth_blur_only_touches_video_depth() {
    let sharp = generate(&SceneSpec { noise: NoiseKnobs::default(), ..small(Preset::BlurredDepth) }).unwrap();
    let blurred = generate(&small(Preset::BlurredDepth)).unwrap();
    assert_eq!(sharp.flows, blurred.flows);
    assert_eq!(sharp.prior_flows, blurred.prior_flows);
    assert_eq!(sharp.depth, blurred.depth);
    assert_eq!(sharp.video_depth, sharp.depth);
    let inside = blurred.objects.union(0);
    let changed: Vec<usize> = (0..inside.data.len()).filter(|&i| blurred.video_depth[0].values[i] != blurred.depth[0].values[i]).collect();
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|&i| inside.data[i]));
}

#[test]
fn flow_noise_only_touches_the_prior() {
    let mut spec = small(Preset::Walker);
    let clean = generate(&spec).unwrap();
    spec.noise.flow_noise = 0.5;
    let noisy = generate(&spec).unwrap();
    assert_eq!(clean.flows, noisy.flows);
    assert_eq!(clean.images, noisy.images);
    assert_ne!(clean.prior_flows, noisy.prior_flows);
}

#[test]
fn mono_depth_is_affine_in_truth() {
    let b = generate(&small(Preset::Walker)).unwrap();
    for (m, d) in b.mono_depth.iter().zip(&b.depth) {
        for i in 0..d.values.len() {
            if d.valid[i] {
                assert!((m.values[i] - (0.5 * d.values[i] + 1.0)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn over_segmentation_splits_only_static_segments() {
    let mut spec = small(Preset::Shadow);
    spec.noise.over_segments = 3;
    let b = generate(&spec).unwrap();
    let ids = b.segments.segment_ids();
    assert!(ids.iter().any(|&s| s > 1000));
    assert!(ids.iter().all(|&s| s % 1000 != 2 || s == 2), "{ids:?}");
    assert_eq!(b.dynamic_segments, vec![2]);
}

#[test]
fn shadow_prior_flow_differs_only_in_the_shadow() {
    let b = generate(&small(Preset::Shadow)).unwrap();
    let sh = b.scene.shadow.unwrap();
    let mut differing = 0;
    for (exact, prior) in b.flows.iter().zip(&b.prior_flows) {
        let w = b.spec.width;
        for i in 0..exact.flow.values.len() {
            if exact.flow.values[i] != prior.flow.values[i] {
                differing += 1;
                let x = Vector2::new((i % w) as f64, (i / w) as f64);
                let p = b.cams[exact.from].backproject(&x, b.depth[exact.from].values[i]).unwrap();
                assert!((p - sh.center_at(exact.from as f64)).norm() < sh.radius + 1e-9);
            }
        }
    }
    assert!(differing > 0);
}

#[test]
fn part_ids_match_depth_validity() {
    let b = generate(&small(Preset::SelfOcclusion)).unwrap();
    for t in 0..b.frames() {
        for i in 0..b.part_ids[t].len() {
            assert_eq!(b.part_ids[t][i] != 0, b.depth[t].valid[i]);
        }
    }
    assert!(b.part_mask(0, 1, 1).count() > 0);
}

/// Independent crossing oracle for the occlusion preset at 64 px: leg A
/// pixels move one column per frame from `x0`; leg B's image extent is
/// `47.5 − (64/3)·0.08125·t ± 16/3`.
#[test]
fn occlusion_visibility_flips_exactly_during_the_crossing() {
    let b = generate(&SceneSpec::preset(Preset::Occlusion)).unwrap();
    let mut flips = 0;
    for x0 in 12..20 {
        let tr = b.trace(0, Some(0), 0, &Vector2::new(x0 as f64, 30.0)).unwrap();
        assert_eq!(tr.body, 1);
        for t in 0..b.frames() {
            assert_eq!(tr.positions[t], Vector2::new((x0 + t) as f64, 30.0));
            let b_center = 47.5 - 64.0 / 3.0 * 0.08125 * t as f64;
            let gap = ((x0 + t) as f64 - b_center).abs() - 16.0 / 3.0;
            if gap.abs() < 1e-9 {
                continue;
            }
            let expect = if gap < 0.0 { Occlusion::ByOther } else { Occlusion::Visible };
            assert_eq!(tr.state[t], expect, "x0 {x0} frame {t}");
            if t > 0 && tr.state[t] != tr.state[t - 1] {
                flips += 1;
            }
        }
    }
    // Every column is hidden once and re-emerges once.
    assert_eq!(flips, 16);
}

#[test]
fn tracks_reproject_through_exact_depth() {
    let b = generate(&SceneSpec::preset(Preset::Occlusion)).unwrap();
    let seeds: Vec<TrackSeed> = (12..20).flat_map(|x| (16..56).step_by(7).map(move |y| seed(0, x, y))).collect();
    let truth = b.ground_truth_tracks(&seeds);
    assert_eq!(truth.len(), seeds.len());
    for tr in &truth {
        for t in 0..b.frames() {
            if !tr.is_visible(t) {
                continue;
            }
            let u = tr.positions[t];
            let (x, y) = (u.x as usize, u.y as usize);
            let d = b.depth[t].get(x, y).unwrap();
            assert!((d - tr.depths[t]).abs() < 1e-6);
            let p = b.cams[t].backproject(&u, d).unwrap();
            assert!((b.cams[t].project(&p).unwrap().0 - u).norm() < 1e-6);
            assert!((p - tr.world[t]).norm() < 1e-6);
        }
    }
}

#[test]
fn self_occlusion_is_labelled_as_such() {
    let b = generate(&SceneSpec::preset(Preset::SelfOcclusion)).unwrap();
    let seeds: Vec<TrackSeed> = (20..44).step_by(2).flat_map(|x| (30..56).step_by(4).map(move |y| seed(0, x, y))).collect();
    let truth = b.ground_truth_tracks(&seeds);
    let torso: Vec<_> = truth.iter().filter(|t| t.body == 1 && t.part == 0).collect();
    assert!(!torso.is_empty());
    assert!(torso.iter().any(|t| t.state.contains(&Occlusion::SelfOccluded)));
    assert!(truth.iter().all(|t| !t.state.contains(&Occlusion::ByOther)));
    assert!(torso.iter().any(|t| !t.reemergent_frames().is_empty()));
}

#[test]
fn lossy_tracks_never_recover() {
    let b = generate(&SceneSpec::preset(Preset::Occlusion)).unwrap();
    let tr = b.trace(0, Some(0), 0, &Vector2::new(15.0, 30.0)).unwrap();
    let lossy = tr.to_lossy_track();
    let first_lost = lossy.visible.iter().position(|v| !v).unwrap();
    assert!(lossy.visible[first_lost..].iter().all(|v| !v));
    assert!(!tr.reemergent_frames().is_empty());
    assert_eq!(lossy.positions, tr.positions);
}

#[test]
fn oracle_resampler_follows_the_hit_surface() {
    let b = generate(&SceneSpec::preset(Preset::Occlusion)).unwrap();
    let r = OracleResampler::new(&b);
    let path = crate::tracks::Resampler::resample(&r, 0, 3, Vector2::new(18.0, 30.0), 1..=5);
    for (k, p) in path.iter().enumerate() {
        assert_eq!(p.unwrap(), Vector2::new(16.0 + k as f64, 30.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn visible_track_positions_hit_their_own_surface(x in 0usize..64, y in 0usize..64, frame in 0usize..24) {
        let b = generate(&SceneSpec::preset(Preset::Walker)).unwrap();
        if let Some(tr) = b.trace(0, None, frame, &Vector2::new(x as f64, y as f64)) {
            for t in 0..b.frames() {
                if tr.is_visible(t) && t != frame {
                    let hit = b.scene.cast(&b.cams[t], t, &tr.positions[t]);
                    if let Some(h) = hit {
                        prop_assert!(h.body == tr.body && (h.depth - tr.depths[t]).abs() < 1e-6);
                    }
                }
            }
        }
    }
}

use super::*;
use crate::recon::OptimizerConfig;
use crate::synth::{Preset, SceneSpec};
use crate::tracks::SamplerConfig;

fn small_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_ini(&format!("[pipeline]\nseed = {seed}\n")).unwrap();
    cfg.sampler = SamplerConfig { n_total: 300, n_skeleton: 60, ..cfg.sampler };
    cfg.lift.max_nodes = Some(24);
    cfg.init.stride = 3;
    cfg.optimizer = OptimizerConfig { iterations: 6, log_every: 3, ..cfg.optimizer };
    cfg
}

fn write_spec(dir: &Path, preset: Preset, frames: usize) -> PathBuf {
    let spec = SceneSpec { width: 32, height: 32, frames, seed: 3, ..SceneSpec::preset(preset) };
    let path = dir.join("scene.ini");
    std::fs::write(&path, scene_spec_to_ini(&spec)).unwrap();
    path
}

#[test]
fn psnr_is_capped_and_depth_mae_skips_invalid_pixels() {
    let img = RgbImage::filled(4, 4, [0.2, 0.4, 0.6]);
    assert_eq!(psnr_8bit(&img, &img), PSNR_CAP_DB);
    let mut a = DepthMap::constant(2, 1, 1.0);
    let mut b = DepthMap::constant(2, 1, 3.0);
    a.valid[1] = false;
    assert_eq!(depth_mae(&a, &b), Some(2.0));
    b.valid[0] = false;
    assert_eq!(depth_mae(&a, &b), None);
}

#[test]
fn orbit_with_zero_radius_keeps_the_reference_camera() {
    let pose = RigidTransform::new(UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3), Vector3::new(0.5, -1.0, 2.0));
    let cam = Camera::centered(40.0, 16, 12, pose);
    let orbit = OrbitSpec { radius: 0.0, views: 3, distance: 2.0, ..OrbitSpec::default() };
    for (c, frame) in orbit.cameras(&[cam]).unwrap() {
        assert_eq!(frame, 0);
        let p = Vector3::new(0.3, 0.1, 4.0);
        assert!((c.to_camera(&p) - cam.to_camera(&p)).norm() < 1e-9);
    }
}

#[test]
fn orbit_views_look_at_the_target() {
    let cam = Camera::centered(40.0, 16, 12, RigidTransform::identity());
    let orbit = OrbitSpec { radius: 0.3, views: 5, distance: 2.0, ..OrbitSpec::default() };
    let views = orbit.cameras(&[cam]).unwrap();
    assert_eq!(views.len(), 5);
    for (c, _) in views {
        let (px, _) = c.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((px - Vector2::new(cam.cx, cam.cy)).norm() < 1e-9);
    }
}

#[test]
fn orbit_spec_round_trips_and_rejects_unknown_keys() {
    let o = OrbitSpec { reference: 2, frame: 4, views: 6, radius: 0.25, distance: 3.5 };
    assert_eq!(OrbitSpec::from_ini(&o.to_ini()).unwrap(), o);
    assert!(OrbitSpec::from_ini("[orbit]\nspin = 1\n").is_err());
    assert!(OrbitSpec::from_ini("[orbit]\nviews = 0\n").is_err());
}

#[test]
fn shadow_preset_selection_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), Preset::Shadow, 8);
    let (prior, work) = (dir.path().join("prior"), dir.path().join("work"));
    cmd_synth(&spec, &prior).unwrap();
    let summary = cmd_masks(&PipelineConfig::default(), &prior, &work).unwrap();
    let bundle = generate(&scene_spec_from_ini(&std::fs::read_to_string(prior.join(SPEC)).unwrap()).unwrap()).unwrap();
    assert_eq!(summary.selected_segments, bundle.dynamic_segments);
    assert!(summary.report.lines().any(|l| l.ends_with("pass fail static")), "{}", summary.report);
    assert!(work.join("manifest-masks.txt").is_file());
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), Preset::Walker, 5);
    let rows = run_all(&small_config(7), &spec, dir.path()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.psnr.is_finite() && r.ssim <= 1.0));
    let work = dir.path().join("work");
    for f in [OBJECTS, SELECTION, DEPTH_REFINED, DEPTH_LOG, TRACKS, COVERAGE, CHECKPOINT, LOSS_LOG] {
        assert!(work.join(f).is_file(), "{f}");
    }
    for cmd in ["masks", "depth", "tracks", "reconstruct"] {
        let m = std::fs::read_to_string(work.join(format!("manifest-{cmd}.txt"))).unwrap();
        assert!(m.contains("prior/cameras.txt"), "{m}");
    }
    let eval = std::fs::read_to_string(dir.path().join("render").join(EVAL)).unwrap();
    assert!(eval.contains("LPIPS"));
}

#[test]
fn flow_tracker_is_used_without_a_scene_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), Preset::Walker, 5);
    let (prior, work) = (dir.path().join("prior"), dir.path().join("work"));
    cmd_synth(&spec, &prior).unwrap();
    std::fs::remove_file(prior.join(SPEC)).unwrap();
    let cfg = small_config(1);
    cmd_masks(&cfg, &prior, &work).unwrap();
    let tracks = cmd_tracks(&cfg, &prior, &work).unwrap();
    assert_eq!(tracks.tracks.len(), 300);
    assert!(tracks.tracks.iter().any(|t| t.span().len() > 1));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_masks(&PipelineConfig::default(), &dir.path().join("nope"), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#![no_main]

use dynsplat::pipeline::{scene_spec_from_ini, scene_spec_to_ini, OrbitSpec, PipelineConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_ini(text) {
        assert_eq!(PipelineConfig::from_ini(&cfg.to_ini()).expect("echo parses"), cfg);
    }
    if let Ok(spec) = scene_spec_from_ini(text) {
        assert_eq!(scene_spec_from_ini(&scene_spec_to_ini(&spec)).expect("echo parses"), spec);
    }
    if let Ok(orbit) = OrbitSpec::from_ini(text) {
        assert_eq!(OrbitSpec::from_ini(&orbit.to_ini()).expect("echo parses"), orbit);
    }
});

//! Pipeline and scene configuration files.
//!
//! Both are `key = value` files with `[section]` headers. Absent keys keep
//! their defaults, unknown keys are errors, and [`PipelineConfig::to_ini`]
//! writes every key so that a manifest echo fully determines a run.

use std::str::FromStr;

use crate::depth::DepthRefineConfig;
use crate::io::ini::{format_list, format_optional, parse_list, parse_optional, IniDoc, IniWriter};
use crate::masks::MaskSelectionConfig;
use crate::recon::{LossWeights, OptimizerConfig, VirtualViewConfig, TERM_NAMES};
use crate::scaffold::{LiftConfig, SpacetimeConfig};
use crate::synth::{NoiseKnobs, Preset, SceneSpec};
use crate::tracks::{ReIdConfig, SamplerConfig};
use crate::{Error, Result};

/// How the first Gaussians are placed before optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    /// One Gaussian every `stride` pixels along each axis.
    pub stride: usize,
    /// Frames whose depth is backprojected.
    pub keyframes: Vec<usize>,
    pub opacity: f64,
    /// Gaussian scale as a multiple of the pixel spacing at its depth.
    pub scale_factor: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { stride: 2, keyframes: vec![0], opacity: 0.8, scale_factor: 0.8 }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidConfig("init stride must be at least 1".into()));
        }
        if self.keyframes.is_empty() {
            return Err(Error::InvalidConfig("init needs at least one keyframe".into()));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(Error::InvalidConfig(format!("init opacity {} not in (0,1)", self.opacity)));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!("init scale_factor {} must be positive", self.scale_factor)));
        }
        Ok(())
    }
}

/// Every stage's settings plus the global seed. The seeds of the sampler,
/// the virtual views and the optimizer are derived from `seed` and cannot be
/// set on their own.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub masks: MaskSelectionConfig,
    pub depth: DepthRefineConfig,
    pub sampler: SamplerConfig,
    pub reid: ReIdConfig,
    pub lift: LiftConfig,
    pub spacetime: SpacetimeConfig,
    pub init: InitConfig,
    pub weights: LossWeights,
    pub virtual_view: VirtualViewConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            masks: MaskSelectionConfig::default(),
            depth: DepthRefineConfig::default(),
            sampler: SamplerConfig::default(),
            reid: ReIdConfig::default(),
            lift: LiftConfig { max_nodes: Some(200), ..LiftConfig::default() },
            spacetime: SpacetimeConfig::default(),
            init: InitConfig::default(),
            weights: LossWeights::default(),
            virtual_view: VirtualViewConfig::default(),
            optimizer: OptimizerConfig::default(),
        };
        cfg.derive_seeds();
        cfg
    }
}

/// SplitMix64 finalizer: decorrelates sub-seeds drawn from one seed.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the numbered random stream `stream` of a run seeded with `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    mix(seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn value<T: FromStr>(v: &str) -> Option<T> {
    v.parse().ok()
}

impl PipelineConfig {
    fn derive_seeds(&mut self) {
        self.sampler.seed = sub_seed(self.seed, 0);
        self.virtual_view.seed = sub_seed(self.seed, 1);
        self.optimizer.seed = sub_seed(self.seed, 2);
    }

    pub fn validate(&self) -> Result<()> {
        self.masks.validate()?;
        self.depth.validate()?;
        self.sampler.validate()?;
        self.reid.validate()?;
        self.init.validate()?;
        self.weights.validate()?;
        self.virtual_view.validate()?;
        self.optimizer.validate()?;
        if self.lift.k == 0 {
            return Err(Error::InvalidConfig("lift k must be at least 1".into()));
        }
        if self.virtual_view.samples_per_step == 0 {
            return Err(Error::InvalidConfig("samples_per_step must be at least 1".into()));
        }
        Ok(())
    }

    /// Defaults overridden by whatever `text` sets.
    pub fn from_ini(text: &str) -> Result<Self> {
        let mut doc = IniDoc::parse(text)?;
        let mut c = Self::default();
        doc.take("pipeline", "seed", &mut c.seed)?;

        doc.take("masks", "tau_salient", &mut c.masks.tau_salient)?;
        doc.take("masks", "tau_appearance", &mut c.masks.tau_appearance)?;
        doc.take("masks", "epi_threshold_px", &mut c.masks.epi_threshold_px)?;
        doc.take_with("masks", "flow_pair_gaps", &mut c.masks.flow_pair_gaps, parse_list)?;

        doc.take("depth", "lambda_anchor", &mut c.depth.lambda_anchor)?;
        doc.take("depth", "lambda_object", &mut c.depth.lambda_object)?;
        doc.take("depth", "iterations", &mut c.depth.iterations)?;
        doc.take("depth", "step_size", &mut c.depth.step_size)?;
        doc.take("depth", "min_mask_pixels", &mut c.depth.min_mask_pixels)?;

        doc.take("sampler", "n_total", &mut c.sampler.n_total)?;
        doc.take("sampler", "n_skeleton", &mut c.sampler.n_skeleton)?;
        doc.take("sampler", "skeleton_dilate_px", &mut c.sampler.skeleton_dilate_px)?;
        doc.take("sampler", "working_long_side", &mut c.sampler.working_long_side)?;

        doc.take("reid", "tau_self_occ", &mut c.reid.tau_self_occ)?;
        doc.take("reid", "window", &mut c.reid.window)?;

        doc.take("lift", "k", &mut c.lift.k)?;
        doc.take("lift", "min_visible", &mut c.lift.min_visible)?;
        doc.take("lift", "dynamic_only", &mut c.lift.dynamic_only)?;
        doc.take_with("lift", "max_nodes", &mut c.lift.max_nodes, parse_optional)?;

        doc.take("spacetime", "iterations", &mut c.spacetime.iterations)?;
        doc.take("spacetime", "w_arap", &mut c.spacetime.w_arap)?;
        doc.take("spacetime", "w_vel", &mut c.spacetime.w_vel)?;
        doc.take("spacetime", "w_acc", &mut c.spacetime.w_acc)?;
        doc.take("spacetime", "rel_tolerance", &mut c.spacetime.rel_tolerance)?;

        doc.take("init", "stride", &mut c.init.stride)?;
        doc.take_with("init", "keyframes", &mut c.init.keyframes, parse_list)?;
        doc.take("init", "opacity", &mut c.init.opacity)?;
        doc.take("init", "scale_factor", &mut c.init.scale_factor)?;

        let mut w = c.weights.as_array();
        for (name, slot) in TERM_NAMES.iter().zip(w.iter_mut()) {
            doc.take_with("weights", name, slot, value)?;
        }
        c.weights = LossWeights::from_array(w);

        doc.take("virtual", "max_offset_factor", &mut c.virtual_view.max_offset_factor)?;
        doc.take("virtual", "samples_per_step", &mut c.virtual_view.samples_per_step)?;

        doc.take("optimizer", "iterations", &mut c.optimizer.iterations)?;
        doc.take("optimizer", "step_means", &mut c.optimizer.step_means)?;
        doc.take("optimizer", "step_colors", &mut c.optimizer.step_colors)?;
        doc.take("optimizer", "step_opacities", &mut c.optimizer.step_opacities)?;
        doc.take("optimizer", "step_nodes", &mut c.optimizer.step_nodes)?;
        doc.take("optimizer", "log_every", &mut c.optimizer.log_every)?;
        doc.finish()?;

        c.derive_seeds();
        c.validate()?;
        Ok(c)
    }

    /// Canonical text with every key; `from_ini(to_ini())` is the identity.
    pub fn to_ini(&self) -> String {
        let mut w = IniWriter::default();
        w.section("pipeline").kv("seed", self.seed);
        w.section("masks")
            .kv("tau_salient", self.masks.tau_salient)
            .kv("tau_appearance", self.masks.tau_appearance)
            .kv("epi_threshold_px", self.masks.epi_threshold_px)
            .kv("flow_pair_gaps", format_list(&self.masks.flow_pair_gaps));
        w.section("depth")
            .kv("lambda_anchor", self.depth.lambda_anchor)
            .kv("lambda_object", self.depth.lambda_object)
            .kv("iterations", self.depth.iterations)
            .kv("step_size", self.depth.step_size)
            .kv("min_mask_pixels", self.depth.min_mask_pixels);
        w.section("sampler")
            .kv("n_total", self.sampler.n_total)
            .kv("n_skeleton", self.sampler.n_skeleton)
            .kv("skeleton_dilate_px", self.sampler.skeleton_dilate_px)
            .kv("working_long_side", self.sampler.working_long_side);
        w.section("reid").kv("tau_self_occ", self.reid.tau_self_occ).kv("window", self.reid.window);
        w.section("lift")
            .kv("k", self.lift.k)
            .kv("min_visible", self.lift.min_visible)
            .kv("dynamic_only", self.lift.dynamic_only)
            .kv("max_nodes", format_optional(&self.lift.max_nodes));
        w.section("spacetime")
            .kv("iterations", self.spacetime.iterations)
            .kv("w_arap", self.spacetime.w_arap)
            .kv("w_vel", self.spacetime.w_vel)
            .kv("w_acc", self.spacetime.w_acc)
            .kv("rel_tolerance", self.spacetime.rel_tolerance);
        w.section("init")
            .kv("stride", self.init.stride)
            .kv("keyframes", format_list(&self.init.keyframes))
            .kv("opacity", self.init.opacity)
            .kv("scale_factor", self.init.scale_factor);
        w.section("weights");
        for (name, v) in TERM_NAMES.iter().zip(self.weights.as_array()) {
            w.kv(name, v);
        }
        w.section("virtual").kv("max_offset_factor", self.virtual_view.max_offset_factor).kv("samples_per_step", self.virtual_view.samples_per_step);
        w.section("optimizer")
            .kv("iterations", self.optimizer.iterations)
            .kv("step_means", self.optimizer.step_means)
            .kv("step_colors", self.optimizer.step_colors)
            .kv("step_opacities", self.optimizer.step_opacities)
            .kv("step_nodes", self.optimizer.step_nodes)
            .kv("log_every", self.optimizer.log_every);
        w.finish()
    }
}

/// Reads a scene description: `[scene]` picks the preset and sizes, and
/// `[noise]` overrides the preset's noise knobs.
pub fn scene_spec_from_ini(text: &str) -> Result<SceneSpec> {
    let mut doc = IniDoc::parse(text)?;
    let mut preset = String::new();
    doc.take("scene", "preset", &mut preset)?;
    if preset.is_empty() {
        return Err(Error::InvalidSpec("[scene] preset is required".into()));
    }
    let mut spec = SceneSpec::preset(Preset::from_str(&preset)?);
    doc.take("scene", "width", &mut spec.width)?;
    doc.take("scene", "height", &mut spec.height)?;
    doc.take("scene", "frames", &mut spec.frames)?;
    doc.take("scene", "seed", &mut spec.seed)?;
    doc.take_with("scene", "flow_gaps", &mut spec.flow_gaps, parse_list)?;
    let n: &mut NoiseKnobs = &mut spec.noise;
    doc.take("noise", "depth_blur_sigma", &mut n.depth_blur_sigma)?;
    doc.take("noise", "flow_noise", &mut n.flow_noise)?;
    doc.take("noise", "over_segments", &mut n.over_segments)?;
    doc.take("noise", "mono_scale", &mut n.mono_scale)?;
    doc.take("noise", "mono_shift", &mut n.mono_shift)?;
    doc.finish()?;
    spec.validate()?;
    Ok(spec)
}

pub fn scene_spec_to_ini(spec: &SceneSpec) -> String {
    let mut w = IniWriter::default();
    w.section("scene")
        .kv("preset", spec.preset.name())
        .kv("width", spec.width)
        .kv("height", spec.height)
        .kv("frames", spec.frames)
        .kv("seed", spec.seed)
        .kv("flow_gaps", format_list(&spec.flow_gaps));
    let n = &spec.noise;
    w.section("noise")
        .kv("depth_blur_sigma", n.depth_blur_sigma)
        .kv("flow_noise", n.flow_noise)
        .kv("over_segments", n.over_segments)
        .kv("mono_scale", n.mono_scale)
        .kv("mono_shift", n.mono_shift);
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_ini("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn defaults_keep_the_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!((c.masks.tau_salient, c.masks.tau_appearance), (0.05, 0.2));
        assert_eq!((c.sampler.n_skeleton, c.sampler.n_total, c.sampler.working_long_side), (3000, 19384, 512));
        assert_eq!((c.reid.tau_self_occ, c.virtual_view.max_offset_factor, c.weights.ssim), (10.0, 0.18, 0.1));
        assert_eq!(c.sampler.skeleton_dilate_px, 5);
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert!(PipelineConfig::from_ini("[masks]\ntau_salent = 0.1\n").is_err());
        assert!(PipelineConfig::from_ini("[masks]\ntau_salient = lots\n").is_err());
        assert!(PipelineConfig::from_ini("seed = 3\n").is_err());
        assert!(PipelineConfig::from_ini("[masks]\ntau_salient = 1.5\n").is_err());
    }

    #[test]
    fn sub_seeds_follow_the_global_seed() {
        let a = PipelineConfig::from_ini("[pipeline]\nseed = 7\n").unwrap();
        let b = PipelineConfig::from_ini("[pipeline]\nseed = 8\n").unwrap();
        assert_ne!(a.sampler.seed, b.sampler.seed);
        assert_ne!(a.sampler.seed, a.optimizer.seed);
        assert_eq!(a, PipelineConfig::from_ini("[pipeline]\nseed = 7\n").unwrap());
    }

    #[test]
    fn scene_spec_requires_a_known_preset() {
        assert!(scene_spec_from_ini("[scene]\nwidth = 32\n").is_err());
        assert!(scene_spec_from_ini("[scene]\npreset = teapot\n").is_err());
        let s = scene_spec_from_ini("[scene]\npreset = walker\nframes = 6\n[noise]\nflow_noise = 0.5\n").unwrap();
        assert_eq!((s.preset, s.frames, s.noise.flow_noise), (Preset::Walker, 6, 0.5));
        assert_eq!(scene_spec_from_ini(&scene_spec_to_ini(&s)).unwrap(), s);
    }

    proptest! {
        #[test]
        fn config_echo_round_trips(seed in any::<u64>(), tau in 0.001f64..0.999, steps in 1usize..5000, w in 0.0f64..10.0, nodes in proptest::option::of(1usize..500)) {
            let mut c = PipelineConfig { seed, ..PipelineConfig::default() };
            c.masks.tau_appearance = tau;
            c.optimizer.iterations = steps;
            c.weights.depth_virtual = w;
            c.lift.max_nodes = nodes;
            c.derive_seeds();
            prop_assert_eq!(PipelineConfig::from_ini(&c.to_ini()).unwrap(), c);
        }
    }
}

//! Object-aware refinement of consistent video depth using sharper
//! single-image depth inside dynamic-object masks.

use log::warn;
use rayon::prelude::*;

use crate::geometry::{check_dims, BinaryMask, DepthMap};
use crate::masks::ObjectMaskStack;
use crate::{Error, Result};

/// Consistent video depth `video` and single-image depth `mono`, frame by
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthStack {
    pub video: Vec<DepthMap>,
    pub mono: Vec<DepthMap>,
}

impl DepthStack {
    pub fn frames(&self) -> usize {
        self.video.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.video.len() != self.mono.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} video depth frames vs {} mono depth frames",
                self.video.len(),
                self.mono.len()
            )));
        }
        for (v, m) in self.video.iter().zip(&self.mono) {
            check_dims("video vs mono depth", v.dims(), m.dims())?;
        }
        Ok(())
    }
}

/// Per-(object, frame) affine map from mono depth onto video depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub object: usize,
    pub frame: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl AffineFit {
    #[inline]
    pub fn apply(&self, mono: f64) -> f64 {
        self.alpha * mono + self.beta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRefineConfig {
    pub lambda_anchor: f64,
    pub lambda_object: f64,
    pub iterations: usize,
    /// Initial per-pixel step on log-depth.
    pub step_size: f64,
    pub min_mask_pixels: usize,
}

impl Default for DepthRefineConfig {
    fn default() -> Self {
        Self { lambda_anchor: 1.0, lambda_object: 4.0, iterations: 20, step_size: 0.5, min_mask_pixels: 32 }
    }
}

impl DepthRefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_anchor < 0.0 || self.lambda_object < 0.0 {
            return Err(Error::InvalidConfig("depth refinement weights must be non-negative".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("depth refinement needs at least one iteration".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("depth refinement step must be positive".into()));
        }
        Ok(())
    }
}

/// Least-squares `(alpha, beta)` minimizing `Σ (alpha·mono + beta − video)²`
/// over mask pixels where both depths are valid.
pub fn fit_scale_shift(mono: &DepthMap, video: &DepthMap, mask: &BinaryMask, min_pixels: usize) -> Result<(f64, f64)> {
    check_dims("mono vs video depth", mono.dims(), video.dims())?;
    check_dims("depth vs mask", mono.dims(), mask.dims())?;
    let pairs: Vec<(f64, f64)> = mask
        .pixels()
        .filter_map(|(x, y)| Some((mono.get(x, y)?, video.get(x, y)?)))
        .collect();
    if pairs.len() < min_pixels.max(2) {
        return Err(Error::DegenerateFit(format!("{} usable pixels, need {}", pairs.len(), min_pixels.max(2))));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx / n < 1e-12 {
        return Err(Error::DegenerateFit(format!("mono depth variance {:e} inside mask", sxx / n)));
    }
    let alpha = sxy / sxx;
    if !(alpha > 0.0) {
        return Err(Error::DegenerateFit(format!("non-positive scale {alpha}")));
    }
    Ok((alpha, my - alpha * mx))
}

/// Fits every `(object, frame)` pair; degenerate ones become `None` with a
/// warning. Indexed `[object][frame]`.
pub fn fit_objects(stack: &DepthStack, objects: &ObjectMaskStack, min_pixels: usize) -> Vec<Vec<Option<AffineFit>>> {
    objects
        .objects
        .iter()
        .map(|obj| {
            (0..stack.frames())
                .map(|t| {
                    let mask = &obj.masks[t];
                    if mask.is_empty() {
                        return None;
                    }
                    match fit_scale_shift(&stack.mono[t], &stack.video[t], mask, min_pixels) {
                        Ok((alpha, beta)) => Some(AffineFit { object: obj.id, frame: t, alpha, beta }),
                        Err(e) => {
                            warn!("object {} frame {t}: {e}; skipped", obj.id);
                            None
                        }
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectDepthLoss {
    pub value: f64,
    /// `(object, frame)` pairs with a non-empty mask but no usable fit.
    pub skipped: usize,
}

/// Mean absolute deviation of video depth from the aligned mono depth over
/// object pixels, normalized by `T·|Ω|`.
pub fn object_depth_loss(stack: &DepthStack, objects: &ObjectMaskStack, fits: &[Vec<Option<AffineFit>>]) -> ObjectDepthLoss {
    let frames = stack.frames();
    if frames == 0 {
        return ObjectDepthLoss { value: 0.0, skipped: 0 };
    }
    let omega = stack.video[0].width * stack.video[0].height;
    let mut sum = 0.0;
    let mut skipped = 0;
    for (obj, obj_fits) in objects.objects.iter().zip(fits) {
        for t in 0..frames {
            let mask = &obj.masks[t];
            let Some(fit) = obj_fits[t] else {
                if !mask.is_empty() {
                    skipped += 1;
                }
                continue;
            };
            for (x, y) in mask.pixels() {
                if let (Some(d), Some(m)) = (stack.video[t].get(x, y), stack.mono[t].get(x, y)) {
                    sum += (d - fit.apply(m)).abs();
                }
            }
        }
    }
    ObjectDepthLoss { value: sum / (frames * omega) as f64, skipped }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRefinement {
    pub stack: DepthStack,
    /// Objective before the first and after every outer iteration.
    pub objective: Vec<f64>,
    pub fits: Vec<Vec<Option<AffineFit>>>,
}

/// Per-pixel view of the surrogate objective
/// `λ_o Σ_o |exp(l) − target_o| + λ_a |l − l0|`.
struct PixelTerm {
    index: usize,
    anchor: f64,
    targets: Vec<f64>,
}

fn pixel_objective(log_depth: f64, term: &PixelTerm, cfg: &DepthRefineConfig) -> f64 {
    let d = log_depth.exp();
    cfg.lambda_object * term.targets.iter().map(|t| (d - t).abs()).sum::<f64>() + cfg.lambda_anchor * (log_depth - term.anchor).abs()
}

fn pixel_gradient(log_depth: f64, term: &PixelTerm, cfg: &DepthRefineConfig) -> f64 {
    let d = log_depth.exp();
    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    cfg.lambda_object * term.targets.iter().map(|t| sign(d - t) * d).sum::<f64>()
        + cfg.lambda_anchor * sign(log_depth - term.anchor)
}

fn surrogate_objective(video: &[DepthMap], init: &[DepthMap], stack: &DepthStack, objects: &ObjectMaskStack, fits: &[Vec<Option<AffineFit>>], cfg: &DepthRefineConfig) -> f64 {
    let current = DepthStack { video: video.to_vec(), mono: stack.mono.clone() };
    let object = object_depth_loss(&current, objects, fits).value;
    let frames = video.len();
    let omega = video[0].width * video[0].height;
    let mut anchor = 0.0;
    for (v, v0) in video.iter().zip(init) {
        for i in 0..omega {
            if v0.valid[i] {
                anchor += (v.values[i].ln() - v0.values[i].ln()).abs();
            }
        }
    }
    cfg.lambda_object * object + cfg.lambda_anchor * anchor / (frames * omega) as f64
}

/// Alternates closed-form scale–shift refits with per-pixel descent steps on
/// log-depth. Only pixels inside some object mask ever move, and the logged
/// objective never increases.
pub fn refine_depth(stack: &DepthStack, objects: &ObjectMaskStack, cfg: &DepthRefineConfig) -> Result<DepthRefinement> {
    cfg.validate()?;
    stack.validate()?;
    let frames = stack.frames();
    if frames == 0 {
        return Ok(DepthRefinement { stack: stack.clone(), objective: vec![0.0], fits: Vec::new() });
    }
    for obj in &objects.objects {
        if obj.masks.len() != frames {
            return Err(Error::DimensionMismatch(format!("object {} has {} mask frames, depth has {frames}", obj.id, obj.masks.len())));
        }
        for m in &obj.masks {
            check_dims("object mask vs depth", m.dims(), stack.video[0].dims())?;
        }
    }
    let init = stack.video.clone();
    let mut video = stack.video.clone();
    let mut fits = fit_objects(stack, objects, cfg.min_mask_pixels);
    let omega = video[0].width * video[0].height;
    // Per-pixel adaptive step, persisted across outer iterations.
    let mut steps: Vec<Vec<f64>> = vec![vec![cfg.step_size; omega]; frames];
    let mut objective = vec![surrogate_objective(&video, &init, stack, objects, &fits, cfg)];

    for _ in 0..cfg.iterations {
        // Refit, keeping a new fit only when it does not raise that pair's loss.
        let current = DepthStack { video: video.clone(), mono: stack.mono.clone() };
        let candidates = fit_objects(&current, objects, cfg.min_mask_pixels);
        for (o, obj) in objects.objects.iter().enumerate() {
            for t in 0..frames {
                let Some(new) = candidates[o][t] else { continue };
                let pair_loss = |fit: &AffineFit| -> f64 {
                    obj.masks[t]
                        .pixels()
                        .filter_map(|(x, y)| Some((current.video[t].get(x, y)? - fit.apply(current.mono[t].get(x, y)?)).abs()))
                        .sum()
                };
                match fits[o][t] {
                    Some(old) if pair_loss(&new) > pair_loss(&old) => {}
                    _ => fits[o][t] = Some(new),
                }
            }
        }

        // Descent on log-depth, frame by frame.
        video
            .par_iter_mut()
            .zip(steps.par_iter_mut())
            .enumerate()
            .for_each(|(t, (map, frame_steps))| {
                let terms = collect_terms(t, map, &init[t], &stack.mono[t], objects, &fits);
                for term in terms {
                    let l = map.values[term.index].ln();
                    let f0 = pixel_objective(l, &term, cfg);
                    let g = pixel_gradient(l, &term, cfg);
                    if g == 0.0 {
                        continue;
                    }
                    let mut eta = frame_steps[term.index];
                    let mut accepted = false;
                    for _ in 0..40 {
                        let cand = l - eta * g;
                        if pixel_objective(cand, &term, cfg) < f0 {
                            map.values[term.index] = cand.exp();
                            accepted = true;
                            break;
                        }
                        eta *= 0.5;
                    }
                    frame_steps[term.index] = if accepted { (eta * 1.5).min(cfg.step_size) } else { eta };
                }
            });
        objective.push(surrogate_objective(&video, &init, stack, objects, &fits, cfg));
    }
    Ok(DepthRefinement { stack: DepthStack { video, mono: stack.mono.clone() }, objective, fits })
}

fn collect_terms(t: usize, video: &DepthMap, init: &DepthMap, mono: &DepthMap, objects: &ObjectMaskStack, fits: &[Vec<Option<AffineFit>>]) -> Vec<PixelTerm> {
    let omega = video.width * video.height;
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); omega];
    for (o, obj) in objects.objects.iter().enumerate() {
        let Some(fit) = fits[o][t] else { continue };
        for (x, y) in obj.masks[t].pixels() {
            let i = y * video.width + x;
            if video.valid[i] && mono.valid[i] {
                targets[i].push(fit.apply(mono.values[i]));
            }
        }
    }
    targets
        .into_iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(index, targets)| PixelTerm { index, anchor: init.values[index].ln(), targets })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::DynamicObject;

    fn line_maps(mono: &[f64], video: &[f64]) -> (DepthMap, DepthMap, BinaryMask) {
        let n = mono.len();
        (
            DepthMap::from_values(n, 1, mono.to_vec()),
            DepthMap::from_values(n, 1, video.to_vec()),
            BinaryMask::filled(n, 1),
        )
    }

    #[test]
    fn identity_fit() {
        let v: Vec<f64> = (1..40).map(|i| 1.0 + 0.1 * i as f64).collect();
        let (m, d, mask) = line_maps(&v, &v);
        let (a, b) = fit_scale_shift(&m, &d, &mask, 32).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && b.abs() < 1e-12);
    }

    #[test]
    fn exact_affine_fit() {
        let v: Vec<f64> = (1..40).map(|i| 1.0 + 0.1 * i as f64).collect();
        let d: Vec<f64> = v.iter().map(|x| 2.0 * x + 1.0).collect();
        let (m, d, mask) = line_maps(&v, &d);
        let (a, b) = fit_scale_shift(&m, &d, &mask, 32).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_fit_satisfies_normal_equations() {
        let (m, d, mask) = line_maps(&[1.0, 2.0, 4.0], &[2.0, 3.0, 9.0]);
        let (a, b) = fit_scale_shift(&m, &d, &mask, 3).unwrap();
        assert!((a - 17.0 / 7.0).abs() < 1e-12);
        assert!((b + 1.0).abs() < 1e-12);
        let res: Vec<f64> = [(1.0, 2.0), (2.0, 3.0), (4.0, 9.0)].iter().map(|(x, y)| a * x + b - y).collect();
        assert!(res.iter().sum::<f64>().abs() < 1e-9);
        let ortho: f64 = res.iter().zip([1.0, 2.0, 4.0]).map(|(r, x)| r * x).sum();
        assert!(ortho.abs() < 1e-9);
    }

    #[test]
    fn degenerate_fits() {
        let (m, d, mask) = line_maps(&[2.0; 40], &(0..40).map(|i| i as f64 + 1.0).collect::<Vec<_>>());
        assert!(matches!(fit_scale_shift(&m, &d, &mask, 32), Err(Error::DegenerateFit(_))));
        let (m, d, mask) = line_maps(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_scale_shift(&m, &d, &mask, 32), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn normal_equations_hold_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(32..200);
            let mono: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
            let video: Vec<f64> = mono.iter().map(|x| 1.7 * x + 0.3 + rng.gen_range(-0.2..0.2)).collect();
            let (m, d, mask) = line_maps(&mono, &video);
            let (a, b) = fit_scale_shift(&m, &d, &mask, 32).unwrap();
            let res: Vec<f64> = mono.iter().zip(&video).map(|(x, y)| a * x + b - y).collect();
            assert!(res.iter().sum::<f64>().abs() < 1e-9);
            assert!(res.iter().zip(&mono).map(|(r, x)| r * x).sum::<f64>().abs() < 1e-9);
        }
    }

    fn single_object(mask: BinaryMask) -> ObjectMaskStack {
        ObjectMaskStack {
            width: mask.width,
            height: mask.height,
            frames: 1,
            objects: vec![DynamicObject { id: 0, segment: 1, masks: vec![mask] }],
        }
    }

    #[test]
    fn loss_of_two_pixel_mask() {
        // |Ω| = 4, mask of two pixels with residuals {0, 1}.
        let mono = DepthMap::from_values(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let video = DepthMap::from_values(4, 1, vec![1.0, 3.0, 3.0, 4.0]);
        let mask = BinaryMask::from_fn(4, 1, |x, _| x < 2);
        let stack = DepthStack { video: vec![video], mono: vec![mono] };
        let fits = vec![vec![Some(AffineFit { object: 0, frame: 0, alpha: 1.0, beta: 0.0 })]];
        let loss = object_depth_loss(&stack, &single_object(mask), &fits);
        assert!((loss.value - 0.25).abs() < 1e-12);
        assert_eq!(loss.skipped, 0);
    }

    fn ramp_stack(w: usize, h: usize, bump: f64) -> (DepthStack, ObjectMaskStack) {
        let mask = BinaryMask::from_fn(w, h, |x, y| (4..w - 4).contains(&x) && (4..h - 4).contains(&y));
        let truth: Vec<f64> = (0..w * h).map(|i| 2.0 + 0.05 * (i % w) as f64 + bump * (((i % w) as f64) * 1.3).sin()).collect();
        let mono: Vec<f64> = truth.iter().map(|d| 0.5 * d - 0.2).collect();
        let video: Vec<f64> = (0..w * h).map(|i| 2.0 + 0.05 * (i % w) as f64).collect();
        (
            DepthStack { video: vec![DepthMap::from_values(w, h, video)], mono: vec![DepthMap::from_values(w, h, mono)] },
            single_object(mask),
        )
    }

    #[test]
    fn loss_is_invariant_to_affine_mono_changes() {
        let (stack, objects) = ramp_stack(24, 16, 0.1);
        let fits = fit_objects(&stack, &objects, 32);
        let base = object_depth_loss(&stack, &objects, &fits).value;
        let mut doubled = stack.clone();
        for m in &mut doubled.mono {
            for v in &mut m.values {
                *v = 2.0 * *v + 0.7;
            }
        }
        let fits2 = fit_objects(&doubled, &objects, 32);
        let other = object_depth_loss(&doubled, &objects, &fits2).value;
        assert!((base - other).abs() < 1e-12);
        assert!(base > 0.0);
    }

    #[test]
    fn consistent_stack_is_a_fixed_point() {
        let (mut stack, objects) = ramp_stack(24, 16, 0.1);
        stack.video[0].values = stack.mono[0].values.iter().map(|m| 2.0 * m + 0.4).collect();
        let out = refine_depth(&stack, &objects, &DepthRefineConfig::default()).unwrap();
        for (a, b) in out.stack.video[0].values.iter().zip(&stack.video[0].values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn refinement_restores_detail_and_leaves_static_pixels() {
        let (stack, objects) = ramp_stack(40, 20, 0.15);
        let out = refine_depth(&stack, &objects, &DepthRefineConfig::default()).unwrap();
        for w in out.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective rose {} -> {}", w[0], w[1]);
        }
        let mask = &objects.objects[0].masks[0];
        let truth = |i: usize| 2.0 + 0.05 * (i % 40) as f64 + 0.15 * (((i % 40) as f64) * 1.3).sin();
        let mut before = 0.0;
        let mut after = 0.0;
        for i in 0..800 {
            if mask.data[i] {
                before += (stack.video[0].values[i] - truth(i)).abs();
                after += (out.stack.video[0].values[i] - truth(i)).abs();
            } else {
                assert_eq!(out.stack.video[0].values[i].to_bits(), stack.video[0].values[i].to_bits());
            }
        }
        assert!(after < 0.5 * before, "masked error {after} vs {before}");
    }
}

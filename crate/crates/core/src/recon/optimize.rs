use std::fmt::Write as _;

use log::{info, warn};

use super::{total_loss, LossTerms, LossWeights, ReconState, Supervision, VirtualViewConfig, TERM_NAMES};
use crate::render::{OPACITY_MAX, OPACITY_MIN};
use crate::{Error, Result};

/// Plain gradient descent with a constant step per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub step_means: f64,
    pub step_colors: f64,
    pub step_opacities: f64,
    pub step_nodes: f64,
    pub seed: u64,
    /// Full evaluation over all frames every this many iterations.
    pub log_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { iterations: 2000, step_means: 2e-3, step_colors: 5.0, step_opacities: 2.0, step_nodes: 2e-4, seed: 0, log_every: 50 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        for (name, s) in [("step_means", self.step_means), ("step_colors", self.step_colors), ("step_opacities", self.step_opacities), ("step_nodes", self.step_nodes)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {s} must be positive")));
            }
        }
        Ok(())
    }

}

/// Full-evaluation loss at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub terms: LossTerms,
    pub total: f64,
    /// Lowest total seen up to and including this record.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub history: Vec<LossRecord>,
    pub initial: f64,
    pub best: f64,
    pub best_iteration: usize,
}

/// Growth below this absolute amount never counts as divergence, so that
/// rounding noise around a zero loss is tolerated.
const DIVERGENCE_FLOOR: f64 = 1e-9;

/// Fixed step used for full evaluations so that they are comparable.
const EVAL_STEP: u64 = u64::MAX;

/// Runs gradient descent on `state`, one training frame per iteration in
/// round-robin order. On return `state` holds the best fully evaluated
/// iterate, which is also the state left behind on divergence or a
/// non-finite loss.
pub fn optimize(state: &mut ReconState, sup: &Supervision, weights: &LossWeights, vcfg: &VirtualViewConfig, cfg: &OptimizerConfig) -> Result<OptimizeReport> {
    weights.validate()?;
    vcfg.validate()?;
    cfg.validate()?;
    sup.validate()?;
    let frames = sup.frames();
    let all: Vec<usize> = (0..frames).collect();
    let vcfg = VirtualViewConfig { seed: vcfg.seed ^ cfg.seed, ..vcfg.clone() };

    let first = total_loss(state, sup, &all, weights, &vcfg, EVAL_STEP, false)?;
    let mut history = vec![LossRecord { iteration: 0, terms: first.terms, total: first.total, best: first.total }];
    let mut best = (first.total, 0, state.clone());
    info!("iteration 0: loss {:.6e}", first.total);

    for it in 1..=cfg.iterations {
        let t = (it - 1) % frames;
        let eval = match total_loss(state, sup, &[t], weights, &vcfg, it as u64, true) {
            Ok(e) => e,
            Err(e) => {
                *state = best.2;
                return Err(e);
            }
        };
        step(state, &eval.grad.expect("requested"), cfg);

        if it % cfg.log_every == 0 || it == cfg.iterations {
            let full = match total_loss(state, sup, &all, weights, &vcfg, EVAL_STEP, false) {
                Ok(e) => e,
                Err(e) => {
                    *state = best.2;
                    return Err(e);
                }
            };
            if full.total < best.0 {
                best = (full.total, it, state.clone());
            }
            history.push(LossRecord { iteration: it, terms: full.terms, total: full.total, best: best.0 });
            info!("iteration {it}: loss {:.6e} (best {:.6e})", full.total, best.0);
            if full.total > 10.0 * best.0 && full.total - best.0 > DIVERGENCE_FLOOR {
                warn!("loss {} exceeds 10x the best {}; restoring iteration {}", full.total, best.0, best.1);
                let best_loss = best.0;
                *state = best.2;
                return Err(Error::DivergenceDetected { iteration: it, loss: full.total, best: best_loss });
            }
        }
    }
    let (best_loss, best_iteration, best_state) = best;
    *state = best_state;
    Ok(OptimizeReport { history, initial: first.total, best: best_loss, best_iteration })
}

fn step(state: &mut ReconState, g: &crate::render::Gradients, cfg: &OptimizerConfig) {
    for (i, gs) in state.cloud.gaussians.iter_mut().enumerate() {
        gs.mean -= g.means[i] * cfg.step_means;
        gs.color -= g.colors[i] * cfg.step_colors;
        gs.color.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
        gs.opacity = (gs.opacity - g.opacities[i] * cfg.step_opacities).clamp(OPACITY_MIN, OPACITY_MAX);
        gs.rotation.renormalize();
    }
    if let Some(graph) = state.graph.as_mut() {
        for (node, gn) in graph.nodes.iter_mut().zip(&g.nodes) {
            for (tr, gt) in node.transforms.iter_mut().zip(gn) {
                tr.translation -= gt * cfg.step_nodes;
                tr.renormalize();
            }
        }
    }
}

/// Plain-text table of a loss history: iteration, every term, total, best.
pub fn loss_table(history: &[LossRecord]) -> String {
    let mut s = String::from("iteration");
    for name in TERM_NAMES {
        s.push(' ');
        s.push_str(name);
    }
    s.push_str(" total best\n");
    for r in history {
        let _ = write!(s, "{}", r.iteration);
        for v in r.terms.as_array() {
            let _ = write!(s, " {v:.9e}");
        }
        let _ = writeln!(s, " {:.9e} {:.9e}", r.total, r.best);
    }
    s
}

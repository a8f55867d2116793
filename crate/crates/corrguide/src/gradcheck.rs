//! Finite-difference check of the latent-optimization gradient.

use corrguide_core::attn::{accumulate_matching, extract_tar2ref, rescale_map};
use corrguide_core::corr::{estimate, filter_outliers, smooth};
use corrguide_core::guide::{build_attention_mask_for, grad_latent, objective_with_target, GradMode, ObjectiveTarget};
use corrguide_core::mat::Mat;
use corrguide_core::synthdata::{embed_stitched, generate_pair};
use corrguide_core::toydiff::{build_schedule, ToyDenoiser};
use corrguide_core::{AttentionMask, LatentTensor, MatchingMap};
use serde::Serialize;

use crate::config::Config;
use crate::error::Result;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Perturbs the analytic gradient before comparing. Exists so the
    /// checker itself can be shown to fail.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seed: 0, step: DEFAULT_STEP, tolerance: DEFAULT_TOLERANCE, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub entries: usize,
    pub loss: f64,
    pub max_abs_error: f64,
    /// `max |g - fd| / max |fd|`.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Objective through the plain forward path, independent of the tape.
fn forward_objective(model: &ToyDenoiser, z: &LatentTensor, masks: &[AttentionMask], target: &ObjectiveTarget) -> Result<f64> {
    let shape = z.shape();
    let mut total = 0.0;
    for a in model.layer_attention(z, Some(masks))? {
        let fine = rescale_map(&a, shape.stitched(), shape.stitched())?;
        total += objective_with_target(&extract_tar2ref(&fine, shape)?, target)?;
    }
    Ok(total)
}

/// Sets up the first guided step of a run on the seeded scene (field from
/// one passive step, masks from that field) and compares the tape gradient
/// with central differences over every noise-latent entry.
pub fn gradcheck(cfg: &Config, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let g = &cfg.guidance;
    let scene = generate_pair(opts.seed, &cfg.scene_for(opts.seed), &cfg.mask)?;
    let shape = scene.shape;
    let base = ToyDenoiser::new(cfg.model.clone(), scene.channels())?;
    let schedule = build_schedule(g.steps_total)?;
    let z = embed_stitched(&scene)?;

    let t = g.steps_total;
    let first = base.at_step(t).forward(&z, t, &schedule, None)?;
    let matching = accumulate_matching(&MatchingMap::zeros(shape), &first.aggregated_tar2ref)?;
    let field = smooth(&filter_outliers(&estimate(&matching)?, g.outlier_threshold), g.win_s);

    let guided = g.restrict_to_masked.then_some(&scene.inpaint_mask[..]);
    let model = base.at_step(t - 1);
    let masks = model.layer_masks(&build_attention_mask_for(&field, g, shape, guided)?)?;
    let target = ObjectiveTarget::new(&field, guided);

    let (mut grad, report) = grad_latent(&model, &z, &masks, &target, GradMode::Joint)?;
    if opts.corrupt {
        let bump = 0.01 * grad.max_abs().max(1e-3);
        grad.row_mut(0)[0] += bump;
    }

    let noise = z.noise_latent();
    let mut fd = Mat::zeros(noise.rows(), noise.cols());
    for r in 0..noise.rows() {
        for c in 0..noise.cols() {
            let eval = |delta: f64| -> Result<f64> {
                let mut x = noise.clone();
                x.row_mut(r)[c] += delta;
                forward_objective(&model, &z.with_noise_latent(x)?, &masks, &target)
            };
            fd.row_mut(r)[c] = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
        }
    }
    let max_abs_error = grad.max_abs_diff(&fd);
    let max_rel_error = max_abs_error / fd.max_abs().max(1e-12);
    Ok(GradcheckReport {
        seed: opts.seed,
        entries: noise.rows() * noise.cols(),
        loss: report.total_loss,
        max_abs_error,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
    })
}

//! The guided denoising loop.
//!
//! Each step: build the attention mask from the previous step's field,
//! optionally take one gradient step on the noise latent, denoise, fold the
//! new target→reference attention into the matching map and re-estimate the
//! field. The first step runs unguided because no field exists yet.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corr::{estimate, filter_outliers, smooth};
use crate::attn::accumulate_matching;
use crate::domain::{AttentionMap, AttentionMask, CorrespondenceField, GuidanceConfig, LatentTensor, MatchingMap};
use crate::error::{Error, Result};
use crate::eval::count_correct;
use crate::guide::{build_attention_mask_for, grad_latent, optimize_latent, GradMode, ObjectiveReport, ObjectiveTarget};
use crate::mat::Mat;
use crate::synthdata::{embed_stitched, ScenePair};
use crate::toydiff::model::{ModelConfig, ToyDenoiser};
use crate::toydiff::schedule::{build_schedule, Schedule};

/// Monotonic nanosecond source for per-component timing.
pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// Always reports 0; timings come out as zeros.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ns(&self) -> u64 {
        0
    }
}

/// How the matching map evolves over steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Policy {
    /// `C_t = C_{t+1} + A_t`
    Accumulate,
    /// `C_t = A_t`, guidance follows the latest attention only.
    Latest,
    /// Field estimated at the first step and frozen.
    FirstStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub masking: bool,
    pub filtering: bool,
    pub smoothing: bool,
    pub optimization: bool,
    pub policy: Policy,
}

/// Named component combinations used by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    Full,
    NoAcc,
    NoCyc,
    MaskOnly,
    MaskFilter,
    MaskFilterSmooth,
    NoGuide,
    NoSmooth,
    NoFilter,
}

impl Mode {
    pub const ALL: [Mode; 9] = [
        Mode::NoGuide,
        Mode::MaskOnly,
        Mode::MaskFilter,
        Mode::MaskFilterSmooth,
        Mode::Full,
        Mode::NoAcc,
        Mode::NoCyc,
        Mode::NoSmooth,
        Mode::NoFilter,
    ];

    /// The seven modes of the standard ablation suite.
    pub const ABLATION: [Mode; 7] = [
        Mode::NoGuide,
        Mode::MaskOnly,
        Mode::MaskFilter,
        Mode::MaskFilterSmooth,
        Mode::Full,
        Mode::NoAcc,
        Mode::NoCyc,
    ];

    pub fn toggles(self) -> Toggles {
        let full = Toggles { masking: true, filtering: true, smoothing: true, optimization: true, policy: Policy::Accumulate };
        match self {
            Mode::Full => full,
            Mode::NoAcc => Toggles { policy: Policy::Latest, ..full },
            Mode::NoCyc => Toggles { policy: Policy::FirstStep, ..full },
            Mode::MaskOnly => Toggles { filtering: false, smoothing: false, optimization: false, ..full },
            Mode::MaskFilter => Toggles { smoothing: false, optimization: false, ..full },
            Mode::MaskFilterSmooth => Toggles { optimization: false, ..full },
            Mode::NoGuide => Toggles { masking: false, optimization: false, ..full },
            Mode::NoSmooth => Toggles { smoothing: false, ..full },
            Mode::NoFilter => Toggles { filtering: false, ..full },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoAcc => "noacc",
            Mode::NoCyc => "nocyc",
            Mode::MaskOnly => "maskonly",
            Mode::MaskFilter => "maskonly+filter",
            Mode::MaskFilterSmooth => "maskonly+filter+smooth",
            Mode::NoGuide => "noguide",
            Mode::NoSmooth => "nosmooth",
            Mode::NoFilter => "nofilter",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        let key: String = s.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).flat_map(char::to_lowercase).collect();
        Mode::ALL.into_iter().find(|m| m.name().replace('+', "") == key.replace('+', ""))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep per-layer tar2ref maps in each [`StepTrace`].
    pub record_attention: bool,
    pub grad_mode: GradMode,
    /// Guide every step with this field instead of the estimated one.
    pub fixed_field: Option<CorrespondenceField>,
}

/// Wall-clock nanoseconds per component of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Timing {
    pub mask_ns: u64,
    pub optimize_ns: u64,
    pub denoise_ns: u64,
    pub correspondence_ns: u64,
    pub total_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepTrace {
    /// Diffusion timestep, `T` down to 1.
    pub t: usize,
    /// Executed-step counter, 0 at `t = T`.
    pub step_index: usize,
    pub masked: bool,
    pub optimized: bool,
    /// Per-layer tar2ref maps on the base half grid (empty unless recorded).
    pub attention: Vec<AttentionMap>,
    /// Field after this step's refinement (guides the next step).
    pub field: CorrespondenceField,
    /// `(correct, total)` against the scene's ground truth.
    pub correct: (usize, usize),
    pub loss: Option<ObjectiveReport>,
    pub fallback_tokens: Vec<usize>,
    pub timing: Timing,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Final clean prediction of the target half, `hw × d`.
    pub restored: Mat,
    pub final_latent: LatentTensor,
    pub matching: MatchingMap,
    pub field: CorrespondenceField,
    pub traces: Vec<StepTrace>,
}

/// Model, schedule and guidance settings for repeated runs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub model: ToyDenoiser,
    pub schedule: Schedule,
    pub cfg: GuidanceConfig,
}

impl Pipeline {
    pub fn new(cfg: GuidanceConfig, model_cfg: ModelConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        let schedule = build_schedule(cfg.steps_total)?;
        let model = ToyDenoiser::new(model_cfg, channels)?;
        Ok(Self { model, schedule, cfg })
    }

    pub fn run(&self, scene: &ScenePair, toggles: Toggles, opts: &RunOptions, clock: &dyn Clock) -> Result<RunOutput> {
        let shape = scene.shape;
        self.model.check_shape(shape)?;
        if scene.channels() != self.model.channels() {
            return Err(Error::arg("scene channels do not match the model"));
        }
        let cfg = &self.cfg;
        let guided: Option<&[bool]> = cfg.restrict_to_masked.then_some(&scene.inpaint_mask[..]);
        let zero_masks: Vec<AttentionMask> = self.model.layer_masks(&AttentionMask::zeros(shape))?;

        let mut z = embed_stitched(scene)?;
        let mut matching = MatchingMap::zeros(shape);
        let mut field: Option<CorrespondenceField> = None;
        let mut traces = Vec::with_capacity(cfg.steps_total);
        let mut last_x0 = z.image_latent().clone();

        for (step_index, t) in (1..=cfg.steps_total).rev().enumerate() {
            let start = clock.now_ns();
            let model = self.model.at_step(t);
            let mut timing = Timing::default();
            let guide_field = opts.fixed_field.as_ref().or(field.as_ref());

            let t0 = clock.now_ns();
            let masks = match guide_field {
                Some(p) if toggles.masking && step_index < cfg.step_a => {
                    let fine = build_attention_mask_for(p, cfg, shape, guided)?;
                    Some(self.model.layer_masks(&fine)?)
                }
                _ => None,
            };
            timing.mask_ns = clock.now_ns() - t0;

            let t0 = clock.now_ns();
            let mut loss = None;
            if let Some(p) = guide_field.filter(|_| toggles.optimization && step_index < cfg.step_o) {
                let target = ObjectiveTarget::new(p, guided);
                if !target.is_empty() {
                    let ms = masks.as_deref().unwrap_or(&zero_masks);
                    let (grad, report) = grad_latent(&model, &z, ms, &target, opts.grad_mode).map_err(|e| e.at_step(step_index))?;
                    z = optimize_latent(&z, &grad, cfg)?;
                    loss = Some(report);
                }
            }
            timing.optimize_ns = clock.now_ns() - t0;

            let t0 = clock.now_ns();
            let out = model.forward(&z, t, &self.schedule, masks.as_deref()).map_err(|e| e.at_step(step_index))?;
            timing.denoise_ns = clock.now_ns() - t0;

            let t0 = clock.now_ns();
            let refresh = match toggles.policy {
                Policy::Accumulate => {
                    matching = accumulate_matching(&matching, &out.aggregated_tar2ref)?;
                    true
                }
                Policy::Latest => {
                    matching = accumulate_matching(&MatchingMap::zeros(shape), &out.aggregated_tar2ref)?;
                    true
                }
                Policy::FirstStep => {
                    matching = accumulate_matching(&matching, &out.aggregated_tar2ref)?;
                    field.is_none()
                }
            };
            if refresh {
                let mut p = estimate(&matching)?;
                if toggles.filtering {
                    p = filter_outliers(&p, cfg.outlier_threshold);
                }
                if toggles.smoothing {
                    p = smooth(&p, cfg.win_s);
                }
                field = Some(p);
            }
            timing.correspondence_ns = clock.now_ns() - t0;

            let next_noise = self.schedule.ddim_step(&out.x0_pred, &out.eps_hat, t);
            if !next_noise.all_finite() {
                return Err(Error::Numeric { step: Some(step_index), detail: "non-finite latent after DDIM update".into() });
            }
            z = z.with_noise_latent(next_noise)?;
            last_x0 = out.x0_pred;
            timing.total_ns = clock.now_ns() - start;

            let current = field.clone().expect("field is set after the first step");
            traces.push(StepTrace {
                t,
                step_index,
                masked: masks.is_some(),
                optimized: loss.is_some(),
                attention: if opts.record_attention { out.tar2ref } else { vec![] },
                correct: count_correct(&current, scene)?,
                field: current,
                loss,
                fallback_tokens: out.fallback_tokens,
                timing,
            });
        }

        let target_rows = shape.target_indices();
        let restored = last_x0.select(&target_rows, &(0..scene.channels()).collect::<Vec<_>>());
        Ok(RunOutput {
            restored,
            final_latent: z,
            matching,
            field: field.expect("at least two steps run"),
            traces,
        })
    }
}

/// One-call convenience: build the pipeline and run `mode` without timing.
pub fn run_inpaint(scene: &ScenePair, cfg: &GuidanceConfig, model_cfg: &ModelConfig, mode: Mode) -> Result<RunOutput> {
    Pipeline::new(cfg.clone(), model_cfg.clone(), scene.channels())?.run(scene, mode.toggles(), &RunOptions::default(), &NullClock)
}

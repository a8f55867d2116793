//! Seeds × modes comparison suite.

use corrguide_core::eval::{psnr, ssim, to_unit_range};
use corrguide_core::synthdata::{generate_pair, ScenePair};
use corrguide_core::toydiff::{Clock, Mode, Pipeline, RunOptions, RunOutput};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Restoration quality of one run against the scene's target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// dB over the inpainting mask, values mapped to `[0, 1]` by the scene range.
    pub psnr: f64,
    /// Over the whole target half.
    pub ssim: f64,
    pub correct: usize,
    pub total: usize,
}

pub fn evaluate(scene: &ScenePair, out: &RunOutput) -> Result<Metrics> {
    let range = scene.value_range();
    let restored = to_unit_range(&out.restored, range);
    let truth = to_unit_range(&scene.target_latent, range);
    let region = scene.inpaint_mask.iter().any(|&m| m).then_some(&scene.inpaint_mask[..]);
    let (correct, total) = out.traces.last().map_or((0, 0), |t| t.correct);
    Ok(Metrics {
        psnr: psnr(&restored, &truth, region)?,
        ssim: ssim(&restored, &truth, scene.shape.half())?,
        correct,
        total,
    })
}

/// Mean nanoseconds per denoising step, split by pipeline component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step_ns: f64,
    pub mask_ns: f64,
    pub optimize_ns: f64,
    pub denoise_ns: f64,
    pub correspondence_ns: f64,
}

impl StepTiming {
    fn of_run(out: &RunOutput) -> Self {
        let n = out.traces.len().max(1) as f64;
        let mut t = StepTiming::default();
        for step in &out.traces {
            t.step_ns += step.timing.total_ns as f64 / n;
            t.mask_ns += step.timing.mask_ns as f64 / n;
            t.optimize_ns += step.timing.optimize_ns as f64 / n;
            t.denoise_ns += step.timing.denoise_ns as f64 / n;
            t.correspondence_ns += step.timing.correspondence_ns as f64 / n;
        }
        t
    }

    fn mean(items: &[StepTiming]) -> Self {
        let n = items.len().max(1) as f64;
        items.iter().fold(StepTiming::default(), |acc, t| StepTiming {
            step_ns: acc.step_ns + t.step_ns / n,
            mask_ns: acc.mask_ns + t.mask_ns / n,
            optimize_ns: acc.optimize_ns + t.optimize_ns / n,
            denoise_ns: acc.denoise_ns + t.denoise_ns / n,
            correspondence_ns: acc.correspondence_ns + t.correspondence_ns / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Metrics,
    /// Correct correspondences after each step.
    pub correct_curve: Vec<usize>,
    pub timing: StepTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub mode: String,
    pub error: String,
}

/// One report row. Means are `None` when every seed failed, and the
/// curve is then empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub runs: usize,
    pub failures: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// No perceptual network exists for toy latents.
    pub lpips: Option<f64>,
    pub correct: Option<f64>,
    pub total: Option<f64>,
    pub correct_curve: Vec<f64>,
    pub timing: StepTiming,
    pub seeds: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub steps_total: usize,
    pub seeds: Vec<u64>,
    pub modes: Vec<ModeSummary>,
    pub failures: Vec<SeedFailure>,
}

impl Report {
    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode.name())
    }
}

pub struct Suite<'a> {
    pub config: &'a Config,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub jobs: usize,
}

impl Suite<'_> {
    /// Runs every mode on every seed. Per-seed errors are recorded in the
    /// report rather than aborting the suite.
    pub fn run(&self, clock: &(dyn Clock + Sync)) -> Result<Report> {
        if self.seeds.len() < 10 {
            log::warn!("ablation over {} seeds; means are noisy below 10", self.seeds.len());
        }
        let cfg = self.config;
        let channels = cfg.scene.channels;
        let pipe = Pipeline::new(cfg.guidance.clone(), cfg.model.clone(), channels)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;

        let per_seed: Vec<Vec<std::result::Result<SeedResult, String>>> = pool.install(|| {
            self.seeds
                .par_iter()
                .map(|&seed| {
                    let scene = match generate_pair(seed, &cfg.scene_for(seed), &cfg.mask) {
                        Ok(s) => s,
                        Err(e) => return self.modes.iter().map(|_| Err(e.to_string())).collect(),
                    };
                    self.modes.iter().map(|&mode| run_one(&pipe, &scene, mode, clock).map_err(|e| e.to_string())).collect()
                })
                .collect()
        });

        let mut failures = Vec::new();
        let mut modes = Vec::with_capacity(self.modes.len());
        for (m, &mode) in self.modes.iter().enumerate() {
            let mut seeds = Vec::new();
            for (s, results) in per_seed.iter().enumerate() {
                match &results[m] {
                    Ok(r) => seeds.push(r.clone()),
                    Err(error) => {
                        log::info!("seed {} mode {}: {error}", self.seeds[s], mode.name());
                        failures.push(SeedFailure { seed: self.seeds[s], mode: mode.name().into(), error: error.clone() })
                    }
                }
            }
            modes.push(summarize(mode, seeds, per_seed.len(), cfg.guidance.steps_total));
        }
        Ok(Report { schema_version: REPORT_SCHEMA_VERSION, steps_total: cfg.guidance.steps_total, seeds: self.seeds.clone(), modes, failures })
    }
}

fn run_one(pipe: &Pipeline, scene: &ScenePair, mode: Mode, clock: &dyn Clock) -> Result<SeedResult> {
    let out = pipe.run(scene, mode.toggles(), &RunOptions::default(), clock)?;
    Ok(SeedResult {
        seed: scene.seed,
        metrics: evaluate(scene, &out)?,
        correct_curve: out.traces.iter().map(|t| t.correct.0).collect(),
        timing: StepTiming::of_run(&out),
    })
}

fn summarize(mode: Mode, seeds: Vec<SeedResult>, attempted: usize, steps: usize) -> ModeSummary {
    let runs = seeds.len();
    let mean = |f: &dyn Fn(&SeedResult) -> f64| (runs > 0).then(|| seeds.iter().map(f).sum::<f64>() / runs as f64);
    let correct_curve = if runs == 0 {
        vec![]
    } else {
        (0..steps).map(|k| seeds.iter().map(|s| s.correct_curve[k] as f64).sum::<f64>() / runs as f64).collect()
    };
    let timings: Vec<StepTiming> = seeds.iter().map(|s| s.timing).collect();
    ModeSummary {
        mode: mode.name().into(),
        runs,
        failures: attempted - runs,
        psnr: mean(&|s| s.metrics.psnr),
        ssim: mean(&|s| s.metrics.ssim),
        lpips: None,
        correct: mean(&|s| s.metrics.correct as f64),
        total: mean(&|s| s.metrics.total as f64),
        correct_curve,
        timing: StepTiming::mean(&timings),
        seeds,
    }
}

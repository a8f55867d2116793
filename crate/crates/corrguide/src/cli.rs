//! `corrguide gen | run | ablate | gradcheck`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use corrguide_core::synthdata::generate_pair;
use corrguide_core::toydiff::{Mode, NullClock, Pipeline, RunOptions};

use crate::ablation::{evaluate, Suite};
use crate::config::Config;
use crate::error::{Error, Result, EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE};
use crate::gradcheck::{gradcheck, GradcheckOptions};
use crate::scene_io::{read_scene, write_scene};
use crate::{report, trace, WallClock};

#[derive(Debug, Parser)]
#[command(name = "corrguide", version, about = "Correspondence-guided inpainting on a toy diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes (`.crfs` plus `.json` sidecar per seed).
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        count: u64,
        #[arg(long, default_value = "scenes")]
        out: PathBuf,
    },
    /// Inpaint one scene and print its metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// Scene file; when absent the scene is generated from `--seed`.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        mode: String,
        /// JSONL step trace destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare modes over consecutive seeds starting at `--seed`.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        count: u64,
        /// Comma-separated mode names.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        /// Worker threads. Timing columns are only comparable with `--jobs 1`.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
    /// Compare the optimization gradient against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn parse_mode(name: &str) -> Result<Mode> {
    Mode::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
        Error::Usage(format!("unknown mode `{name}` (known: {})", known.join(", ")))
    })
}

pub fn cmd_gen(cfg: &Config, start: u64, count: u64, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut failed = None;
    for seed in start..start + count {
        let params = cfg.scene_for(seed);
        let written = generate_pair(seed, &params, &cfg.mask).map_err(Error::from).and_then(|scene| {
            let path = out.join(format!("scene_{seed:06}.crfs"));
            write_scene(&path, &scene, Some(&params), Some(&cfg.mask))?;
            Ok((path, scene))
        });
        match written {
            Ok((path, scene)) => {
                let line = serde_json::json!({
                    "file": path.display().to_string(),
                    "seed": seed,
                    "warp": params.warp,
                    "overlap_count": scene.overlap_count(),
                    "mask_ratio": scene.mask_ratio(),
                });
                writeln!(stdout, "{line}").map_err(|e| Error::io("<stdout>", e))?;
            }
            Err(e) => {
                log::error!("seed {seed}: {e}");
                failed.get_or_insert(e);
            }
        }
    }
    failed.map_or(Ok(()), Err)
}

pub fn cmd_run(cfg: &Config, scene_path: Option<&Path>, seed: u64, mode: Mode, trace_out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let scene = match scene_path {
        Some(p) => read_scene(p)?,
        None => generate_pair(seed, &cfg.scene_for(seed), &cfg.mask)?,
    };
    let pipe = Pipeline::new(cfg.guidance.clone(), cfg.model.clone(), scene.channels())?;
    // No wall clock here: traces must be byte-identical across runs.
    let out = pipe.run(&scene, mode.toggles(), &RunOptions::default(), &NullClock)?;
    if let Some(path) = trace_out {
        trace::write_trace_file(path, &out.traces)?;
    }
    let m = evaluate(&scene, &out)?;
    writeln!(
        stdout,
        "mode={} seed={} steps={} psnr={:.3} ssim={:.4} correct={}/{}",
        mode.name(),
        scene.seed,
        out.traces.len(),
        m.psnr,
        m.ssim,
        m.correct,
        m.total
    )
    .map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_ablate(cfg: &Config, seeds: Vec<u64>, modes: Vec<Mode>, jobs: usize, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let suite = Suite { config: cfg, seeds, modes, jobs };
    let rep = suite.run(&WallClock::new())?;
    report::write_report(out, &rep)?;
    let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
    let io = |e| Error::io("<stdout>", e);
    writeln!(stdout, "{:<24} {:>5} {:>8} {:>7} {:>8} {:>12}", "mode", "runs", "psnr", "ssim", "correct", "step_us").map_err(io)?;
    for m in &rep.modes {
        writeln!(
            stdout,
            "{:<24} {:>5} {:>8} {:>7} {:>8} {:>12.1}",
            m.mode,
            m.runs,
            fmt(m.psnr, 3),
            fmt(m.ssim, 4),
            fmt(m.correct, 2),
            m.timing.step_ns / 1e3
        )
        .map_err(io)?;
    }
    if !rep.failures.is_empty() {
        writeln!(stdout, "{} failed runs recorded in report.json", rep.failures.len()).map_err(io)?;
    }
    Ok(())
}

/// Returns whether the check passed.
pub fn cmd_gradcheck(cfg: &Config, seed: u64, corrupt: bool, stdout: &mut dyn Write) -> Result<bool> {
    let rep = gradcheck(cfg, &GradcheckOptions { seed, corrupt, ..GradcheckOptions::default() })?;
    writeln!(stdout, "{}", serde_json::to_string(&rep).expect("report serializes")).map_err(|e| Error::io("<stdout>", e))?;
    Ok(rep.passed)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Gen { common, count, out } => {
            cmd_gen(&load_config(common.config.as_deref())?, common.seed, count, &out, stdout)?;
        }
        Command::Run { common, scene, mode, out } => {
            let mode = parse_mode(&mode)?;
            cmd_run(&load_config(common.config.as_deref())?, scene.as_deref(), common.seed, mode, out.as_deref(), stdout)?;
        }
        Command::Ablate { common, count, modes, jobs, out } => {
            let modes = match modes {
                Some(names) => names.iter().map(|n| parse_mode(n.trim())).collect::<Result<Vec<_>>>()?,
                None => Mode::ABLATION.to_vec(),
            };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let seeds = (common.seed..common.seed + count).collect();
            cmd_ablate(&load_config(common.config.as_deref())?, seeds, modes, jobs, &out, stdout)?;
        }
        Command::Gradcheck { common, corrupt_gradient } => {
            if !cmd_gradcheck(&load_config(common.config.as_deref())?, common.seed, corrupt_gradient, stdout)? {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, &mut std::io::stdout().lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Installs the logger configured by `CORRGUIDE_LOG` (default `error`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("CORRGUIDE_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

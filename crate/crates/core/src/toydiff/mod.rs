//! Toy stitched-image diffusion: schedule, denoiser and the guided loop.

pub mod model;
pub mod pipeline;
pub mod schedule;

pub use model::{DenoiseOutput, ModelConfig, ToyDenoiser};
pub use pipeline::{run_inpaint, Clock, Mode, NullClock, Pipeline, Policy, RunOptions, RunOutput, StepTrace, Timing, Toggles};
pub use schedule::{build_schedule, Schedule};

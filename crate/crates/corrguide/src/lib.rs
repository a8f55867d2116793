//! Files, reports and the command-line driver around `corrguide-core`.

pub mod ablation;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod report;
pub mod scene_io;
pub mod trace;

use std::time::Instant;

use corrguide_core::toydiff::Clock;

pub use error::{Error, Result};

/// Nanoseconds since construction, from the monotonic system clock.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

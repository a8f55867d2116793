//! JSON run configuration. Every field is optional; `{}` is a valid file.

use std::path::Path;

use corrguide_core::synthdata::{MaskParams, SceneParams};
use corrguide_core::toydiff::ModelConfig;
use corrguide_core::GuidanceConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_STEPS: usize = 50;

/// On-disk form. Guidance fields left out are derived from `steps_total`
/// the same way [`GuidanceConfig::with_steps`] does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub version: Option<u32>,
    pub steps_total: Option<usize>,
    pub step_a: Option<usize>,
    pub step_o: Option<usize>,
    pub win_a: Option<usize>,
    pub win_s: Option<usize>,
    pub str_a: Option<f64>,
    pub str_o: Option<f64>,
    pub outlier_threshold: Option<usize>,
    pub restrict_to_masked: Option<bool>,
    pub model: ModelConfig,
    pub scene: SceneParams,
    pub mask: MaskParams,
    /// Per-seed shifts drawn with `|di| <= shift_range[0]`, `|dj| <= shift_range[1]`.
    /// `null` keeps `scene.warp` for every seed.
    #[serde(default = "default_shift_range")]
    pub shift_range: Option<[usize; 2]>,
}

fn default_shift_range() -> Option<[usize; 2]> {
    Some([1, 2])
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            version: None,
            steps_total: None,
            step_a: None,
            step_o: None,
            win_a: None,
            win_s: None,
            str_a: None,
            str_o: None,
            outlier_threshold: None,
            restrict_to_masked: None,
            model: ModelConfig::default(),
            scene: SceneParams::default(),
            mask: MaskParams::default(),
            shift_range: default_shift_range(),
        }
    }
}

/// Resolved configuration used by the commands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub version: u32,
    pub guidance: GuidanceConfig,
    pub model: ModelConfig,
    pub scene: SceneParams,
    pub mask: MaskParams,
    pub shift_range: Option<[usize; 2]>,
}

impl Default for Config {
    fn default() -> Self {
        ConfigFile::default().resolve().expect("defaults are valid")
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !value.is_object() {
            return Err(Error::Config("top level must be a JSON object".into()));
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(self) -> Result<Config> {
        let version = self.version.unwrap_or(CONFIG_VERSION);
        if version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {version}, expected {CONFIG_VERSION}")));
        }
        let base = GuidanceConfig::with_steps(self.steps_total.unwrap_or(DEFAULT_STEPS));
        let guidance = GuidanceConfig {
            step_a: self.step_a.unwrap_or(base.step_a),
            step_o: self.step_o.unwrap_or(base.step_o),
            win_a: self.win_a.unwrap_or(base.win_a),
            win_s: self.win_s.unwrap_or(base.win_s),
            str_a: self.str_a.unwrap_or(base.str_a),
            str_o: self.str_o.unwrap_or(base.str_o),
            outlier_threshold: self.outlier_threshold.unwrap_or(base.outlier_threshold),
            restrict_to_masked: self.restrict_to_masked.unwrap_or(base.restrict_to_masked),
            ..base
        };
        guidance.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(Config { version, guidance, model: self.model, scene: self.scene, mask: self.mask, shift_range: self.shift_range })
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        ConfigFile::parse(text)?.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(detail) => Error::format(path, detail),
            other => other,
        })
    }

    /// Scene parameters for one seed, with the warp drawn from `shift_range` when set.
    pub fn scene_for(&self, seed: u64) -> SceneParams {
        match self.shift_range {
            Some(max) => SceneParams { warp: corrguide_core::synthdata::sample_shift(seed, max), ..self.scene.clone() },
            None => self.scene.clone(),
        }
    }
}

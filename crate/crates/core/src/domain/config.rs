use crate::error::{Error, Result};

/// Guidance parameters: step budgets, window radii and strengths.
///
/// Step budgets count executed denoising steps from the noisy end, so
/// `step_a = 10` masks attention during the first ten steps.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GuidanceConfig {
    pub steps_total: usize,
    pub step_a: usize,
    pub step_o: usize,
    /// Mask neighborhood radius around a correspondence.
    pub win_a: usize,
    /// Smoothing neighborhood radius.
    pub win_s: usize,
    /// Boost value `v` written into the mask.
    pub str_a: f64,
    /// Gradient-descent step weight for latent optimization.
    pub str_o: f64,
    /// A reference token with strictly more inlier correspondents than this is dominant.
    pub outlier_threshold: usize,
    /// Only guide target tokens inside the inpainting mask.
    pub restrict_to_masked: bool,
}

impl GuidanceConfig {
    /// Defaults for a `steps_total`-step run.
    pub fn with_steps(steps_total: usize) -> Self {
        Self {
            steps_total,
            step_a: steps_total,
            step_o: (steps_total * 3).div_ceil(5),
            win_a: 1,
            win_s: 2,
            str_a: 1.0,
            str_o: 0.1,
            outlier_threshold: 4,
            restrict_to_masked: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_total < 2 {
            return Err(Error::arg("steps_total must be at least 2"));
        }
        if self.step_a > self.steps_total || self.step_o > self.steps_total {
            return Err(Error::arg("step_a and step_o must not exceed steps_total"));
        }
        if !(self.str_a > 0.0) || !self.str_a.is_finite() {
            return Err(Error::arg("str_a must be positive"));
        }
        if !(self.str_o >= 0.0) || !self.str_o.is_finite() {
            return Err(Error::arg("str_o must be non-negative"));
        }
        if self.outlier_threshold < 1 {
            return Err(Error::arg("outlier_threshold must be at least 1"));
        }
        Ok(())
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self::with_steps(50)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = GuidanceConfig::default();
        assert_eq!(cfg.step_a, 50);
        assert_eq!(cfg.step_o, 30);
        assert_eq!(cfg.outlier_threshold, 4);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = GuidanceConfig::default();
        cfg.str_a = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = GuidanceConfig::default();
        cfg.step_o = 51;
        assert!(cfg.validate().is_err());
        let mut cfg = GuidanceConfig::default();
        cfg.outlier_threshold = 0;
        assert!(cfg.validate().is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::backbone::{check_input_size, BackboneKind};

/// Architecture of a CorrNet variant. Field names double as the keys of the
/// JSON config file; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrNetConfig {
    pub backbone: BackboneKind,
    pub input_size: usize,
    pub enable_fem: bool,
    pub enable_corrm: bool,
    pub enable_correlation: bool,
    pub enable_gate: bool,
    /// `false` replaces every refinement block by three cascaded DSConvs.
    pub enable_dlrb: bool,
    pub dilation_rates: [usize; 3],
    pub compressed_channels: usize,
    pub fem_reduction: usize,
}

impl Default for CorrNetConfig {
    fn default() -> Self {
        CorrNetConfig {
            backbone: BackboneKind::Lfe,
            input_size: 256,
            enable_fem: true,
            enable_corrm: true,
            enable_correlation: true,
            enable_gate: true,
            enable_dlrb: true,
            dilation_rates: [2, 4, 6],
            compressed_channels: 128,
            fem_reduction: 16,
        }
    }
}

impl CorrNetConfig {
    /// Disables the correlation module together with its sub-toggles.
    pub fn without_corrm(mut self) -> Self {
        self.enable_corrm = false;
        self.enable_correlation = false;
        self.enable_gate = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_input_size(self.input_size)?;
        if self.dilation_rates.contains(&0) {
            return Err(Error::Config("dilation rates must be positive".into()));
        }
        if self.compressed_channels == 0 || self.compressed_channels > 512 {
            return Err(Error::Config(format!(
                "compressed_channels must be in 1..=512, got {}",
                self.compressed_channels
            )));
        }
        if self.enable_fem
            && (self.fem_reduction == 0
                || 64 % self.fem_reduction != 0
                || 128 % self.fem_reduction != 0)
        {
            return Err(Error::Config(format!(
                "fem_reduction {} must divide the 64- and 128-channel features",
                self.fem_reduction
            )));
        }
        if !self.enable_corrm && (self.enable_correlation || self.enable_gate) {
            return Err(Error::Config(
                "enable_correlation and enable_gate require enable_corrm".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CorrNetConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_keeps_defaults() {
        let c = CorrNetConfig::from_json(r#"{"backbone": "vanilla", "dilation_rates": [1, 3, 5]}"#)
            .unwrap();
        assert_eq!(c.backbone, BackboneKind::Vanilla);
        assert_eq!(c.dilation_rates, [1, 3, 5]);
        assert_eq!(c.compressed_channels, 128);
    }

    #[test]
    fn rejects_unknown_keys_and_inconsistent_toggles() {
        assert!(CorrNetConfig::from_json(r#"{"dilation": [1, 1, 1]}"#).is_err());
        let c = CorrNetConfig {
            enable_corrm: false,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(CorrNetConfig::default().without_corrm().validate().is_ok());
    }

    #[test]
    fn rejects_bad_rates_and_sizes() {
        let mut c = CorrNetConfig::default();
        c.dilation_rates = [2, 0, 6];
        assert!(c.validate().is_err());
        c = CorrNetConfig::default();
        c.input_size = 100;
        assert!(c.validate().is_err());
        c = CorrNetConfig::default();
        c.compressed_channels = 600;
        assert!(c.validate().is_err());
    }
}

//! Network hyperparameters. Every field has a default so partial JSON
//! documents deserialize; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{LssfError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Square input side; a power of two no smaller than 16.
    pub input_size: usize,
    /// Channel widths of the four encoder stages.
    pub widths: [usize; 4],
    pub sab: SabConfig,
    pub gsa: GsaConfig,
    /// Groups of the channel shuffle at the bottleneck.
    pub shuffle_groups: usize,
    pub cfma: CfmaConfig,
    /// Seed for weight initialization.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SabConfig {
    /// Energy divisor is `sqrt(temperature)`; `None` means the channel count.
    pub temperature: Option<f64>,
    pub dropout: f64,
    /// Learned `C x C` query/key/value projections instead of plain reshapes.
    pub projections: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsaConfig {
    /// Query/key width is `C / factor`.
    pub factor: usize,
    /// Standard deviation of the spatial mixing matrix at init.
    pub mix_init_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfmaConfig {
    /// Number of hierarchical context levels; level `l` uses a
    /// `(2l + 1) x (2l + 1)` depthwise kernel.
    pub focal_levels: usize,
    pub mlp_ratio: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            widths: [6, 12, 24, 72],
            sab: SabConfig::default(),
            gsa: GsaConfig::default(),
            shuffle_groups: 2,
            cfma: CfmaConfig::default(),
            seed: 0,
        }
    }
}

impl Default for SabConfig {
    fn default() -> Self {
        Self {
            temperature: None,
            dropout: 0.1,
            projections: false,
        }
    }
}

impl Default for GsaConfig {
    fn default() -> Self {
        Self {
            factor: 2,
            mix_init_std: 0.02,
        }
    }
}

impl Default for CfmaConfig {
    fn default() -> Self {
        Self {
            focal_levels: 2,
            mlp_ratio: 2,
        }
    }
}

impl NetworkConfig {
    /// Small widths for desk-scale training and gradient checks.
    pub fn tiny(input_size: usize) -> Self {
        Self {
            input_size,
            widths: [4, 8, 12, 16],
            ..Self::default()
        }
    }

    /// Spatial side at the bottleneck.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size / 16
    }

    /// Kernel side of every focal level, innermost first.
    pub fn focal_kernels(&self) -> Vec<usize> {
        (1..=self.cfma.focal_levels).map(|l| 2 * l + 1).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LssfError::Config(msg));
        let s = self.input_size;
        if s < 16 || !s.is_power_of_two() {
            return bad(format!("input_size {s} must be a power of two >= 16"));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return bad(format!("widths[{i}] must be positive"));
        }
        let c = self.widths[3];
        if self.gsa.factor == 0 || !c.is_multiple_of(self.gsa.factor) {
            return bad(format!("gsa.factor {} must divide the bottleneck width {c}", self.gsa.factor));
        }
        if !(self.gsa.mix_init_std >= 0.0 && self.gsa.mix_init_std.is_finite()) {
            return bad("gsa.mix_init_std must be finite and >= 0".into());
        }
        let g = self.shuffle_groups;
        if g == 0 || !(2 * c).is_multiple_of(g) {
            return bad(format!("shuffle_groups {g} must divide the concatenated width {}", 2 * c));
        }
        if let Some(t) = self.sab.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("sab.temperature {t} must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.sab.dropout) {
            return bad(format!("sab.dropout {} must lie in [0, 1)", self.sab.dropout));
        }
        if self.cfma.focal_levels == 0 {
            return bad("cfma.focal_levels must be >= 1".into());
        }
        if self.cfma.mlp_ratio == 0 {
            return bad("cfma.mlp_ratio must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        NetworkConfig::default().validate().unwrap();
        NetworkConfig::tiny(16).validate().unwrap();
    }

    #[test]
    fn rejects_bad_sizes() {
        for s in [0, 8, 24, 100] {
            let c = NetworkConfig {
                input_size: s,
                ..Default::default()
            };
            assert!(c.validate().is_err(), "{s}");
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: NetworkConfig = serde_json::from_str(r#"{"input_size": 64, "sab": {"dropout": 0.0}}"#).unwrap();
        assert_eq!(c.input_size, 64);
        assert_eq!(c.sab.dropout, 0.0);
        assert_eq!(c.widths, NetworkConfig::default().widths);
    }

    #[test]
    fn unknown_keys_and_wrong_width_count_rejected() {
        assert!(serde_json::from_str::<NetworkConfig>(r#"{"widht": 3}"#).is_err());
        assert!(serde_json::from_str::<NetworkConfig>(r#"{"widths": [1, 2, 3]}"#).is_err());
    }

    #[test]
    fn focal_kernels_grow_by_two() {
        let mut c = NetworkConfig::default();
        assert_eq!(c.focal_kernels(), vec![3, 5]);
        c.cfma.focal_levels = 3;
        assert_eq!(c.focal_kernels(), vec![3, 5, 7]);
    }
}

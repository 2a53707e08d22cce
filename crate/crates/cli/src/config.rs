//! Run configuration: one TOML file describing the experiment, the scheme
//! cells to evaluate, and the optional sweep section.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use arxcv::experiments::{ExperimentSpec, SweepAxis, Variant};
use arxcv::schemes::SchemeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub experiment: ExperimentSpec,
    /// Scheme cells to evaluate; empty means the engine's defaults.
    #[serde(default)]
    pub schemes: Vec<SchemeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Sweep request: which axis to vary and where, at which fixed dependence
/// level. The swept scheme defaults to the first configured scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_sweep_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeSpec>,
}

fn default_sweep_alpha() -> f64 {
    1.0
}

impl Config {
    pub fn from_preset(id: u8, variant: Variant) -> Result<Self> {
        let experiment = ExperimentSpec::preset(id, variant)?;
        Ok(Config { experiment, schemes: Vec::new(), sweep: None })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: Config = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.normalize()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).context("cannot serialize config")
    }

    /// Revalidates the experiment and rebuilds each scheme through its
    /// constructor so mode coercions for singleton-test schemes apply to
    /// hand-written configs too.
    pub fn normalize(&mut self) -> Result<()> {
        self.experiment.validate()?;
        for scheme in &mut self.schemes {
            *scheme = SchemeSpec::new(scheme.kind, scheme.mode)?;
        }
        if let Some(sweep) = &mut self.sweep {
            if let Some(scheme) = &mut sweep.scheme {
                *scheme = SchemeSpec::new(scheme.kind, scheme.mode)?;
            }
            if sweep.values.is_empty() {
                bail!("sweep section needs at least one value");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use arxcv::schemes::{Mode, SchemeKind};

    #[test]
    fn every_preset_round_trips_through_toml() {
        for id in 1..=5u8 {
            for variant in [Variant::Easy, Variant::Hard] {
                let mut config = Config::from_preset(id, variant).unwrap();
                config.schemes = vec![
                    SchemeSpec::new(SchemeKind::Loo, Mode::Pointwise).unwrap(),
                    SchemeSpec::new(SchemeKind::HvBlock { h: 3, v: 3 }, Mode::Joint).unwrap(),
                    SchemeSpec::new(SchemeKind::KFold { k: 10 }, Mode::Joint).unwrap(),
                    SchemeSpec::new(SchemeKind::Lfo { h: 1, v: 0, w: 10 }, Mode::Pointwise)
                        .unwrap(),
                ];
                config.sweep = Some(SweepSection {
                    axis: SweepAxis::V,
                    values: vec![0.0, 1.0, 3.0, 6.0, 12.0],
                    alpha: 0.9,
                    scheme: Some(
                        SchemeSpec::new(SchemeKind::HvBlock { h: 3, v: 3 }, Mode::Joint).unwrap(),
                    ),
                });
                let text = config.to_toml_string().unwrap();
                let parsed: Config = toml::from_str(&text).unwrap();
                assert_eq!(parsed, config, "round trip failed for preset {id} {variant:?}");
            }
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let text = r#"
            [experiment]
            id = 1
            base_phi = [0.75, 0.2]
            q_star = 3
            candidate_a = { p = 1, q = 2 }
            candidate_b = { p = 1, q = 1 }
            variant = "hard"
        "#;
        let mut config: Config = toml::from_str(text).unwrap();
        config.normalize().unwrap();
        assert_eq!(config.experiment.t, 100);
        assert_eq!(config.experiment.replicates, 500);
        assert_eq!(config.experiment.alpha_grid, vec![0.0, 0.5, 0.75, 1.0]);
        assert!(config.schemes.is_empty());
    }

    #[test]
    fn scheme_tables_parse_flat_and_coerce_modes() {
        let text = r#"
            [experiment]
            id = 3
            base_phi = [0.95]
            q_star = 3
            candidate_a = { p = 1, q = 2 }
            candidate_b = { p = 1, q = 1 }
            variant = "easy"

            [[schemes]]
            kind = "hv-block"
            h = 2
            v = 1
            mode = "joint"

            [[schemes]]
            kind = "loo"
            mode = "joint"
        "#;
        let mut config: Config = toml::from_str(text).unwrap();
        config.normalize().unwrap();
        assert_eq!(config.schemes[0].kind, SchemeKind::HvBlock { h: 2, v: 1 });
        assert_eq!(config.schemes[0].mode, Mode::Joint);
        // Singleton-test schemes are always scored pointwise.
        assert_eq!(config.schemes[1].kind, SchemeKind::Loo);
        assert_eq!(config.schemes[1].mode, Mode::Pointwise);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let text = r#"
            [experiment]
            id = 1
            base_phi = [1.2]
            q_star = 3
            candidate_a = { p = 1, q = 2 }
            candidate_b = { p = 1, q = 1 }
            variant = "hard"
        "#;
        let mut config: Config = toml::from_str(text).unwrap();
        assert!(config.normalize().is_err());
    }
}

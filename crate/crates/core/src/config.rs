//! Experiment manifests: one file drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Adam;
use crate::data::dataset::DatasetConfig;
use crate::error::{FpmError, Result};
use crate::forward::NoiseModel;
use crate::geometry::OpticalConfig;
use crate::nn::{Curriculum, E2ENetSpec, FusionNetSpec, TrainConfig};
use crate::patterns::PatternSet;
use crate::physics::ReconConfig;
use crate::pipeline::{AblationConfig, ExperimentSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub optics: OpticalConfig,
    /// Pattern-set JSON file; the bundled ten-pattern layout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patterns: Option<PathBuf>,
    pub recon: ReconConfig,
    pub dataset: DatasetConfig,
    pub e2e: E2ENetSpec,
    pub fusion: FusionNetSpec,
    pub train_e2e: TrainConfig,
    pub train_fusion: TrainConfig,
    pub ablation: AblationConfig,
    /// Default output directory of commands that write several files.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The desk-scale experiment: 64² fields, 32² captures with additive
    /// noise, toy networks.
    fn default() -> Self {
        ExperimentConfig {
            optics: OpticalConfig::default(),
            patterns: None,
            recon: ReconConfig {
                iterations: 100,
                learning_rate: 0.05,
                warmup: 10,
                final_lr_fraction: 0.01,
                ..ReconConfig::default()
            },
            dataset: DatasetConfig {
                count: 48,
                seed: 1,
                noise: NoiseModel {
                    gaussian_sigma: 0.03,
                    photons_per_unit: 0.0,
                },
                ..DatasetConfig::default()
            },
            e2e: E2ENetSpec::default(),
            fusion: FusionNetSpec::default(),
            train_e2e: TrainConfig {
                epochs: 30,
                adam: Adam::with_lr(3e-3),
                seed: 3,
                curriculum: Curriculum::SimpleThenComplex,
            },
            train_fusion: TrainConfig {
                epochs: 20,
                adam: Adam::with_lr(1e-3),
                seed: 4,
                curriculum: Curriculum::None,
            },
            ablation: AblationConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML when the extension is `.toml`, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| FpmError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| FpmError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.recon.validate()?;
        self.e2e.validate()?;
        self.fusion.validate()?;
        let lr = self.optics.lr_size();
        if self.e2e.output_size(lr) != self.optics.hr_size {
            return Err(FpmError::Config(format!(
                "network output {} does not match HR size {}",
                self.e2e.output_size(lr),
                self.optics.hr_size
            )));
        }
        if self.ablation.tiles_per_side == 0 || self.optics.hr_size % self.ablation.tiles_per_side != 0 {
            return Err(FpmError::Config("tiles_per_side must divide the HR size".into()));
        }
        Ok(())
    }

    pub fn pattern_set(&self) -> Result<PatternSet> {
        let set = match &self.patterns {
            Some(p) => PatternSet::load(p)?,
            None => PatternSet::bundled_ten(),
        };
        set.validate(&self.optics)?;
        if set.patterns.len() != self.e2e.in_images {
            return Err(FpmError::Config(format!(
                "{} patterns but the network takes {} images",
                set.patterns.len(),
                self.e2e.in_images
            )));
        }
        Ok(set)
    }

    pub fn settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            e2e: self.e2e,
            fusion: self.fusion,
            train_e2e: self.train_e2e,
            train_fusion: self.train_fusion,
            recon: self.recon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        c.pattern_set().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c: ExperimentConfig = toml::from_str("[recon]\niterations = 7\n").unwrap();
        assert_eq!(c.recon.iterations, 7);
        assert_eq!(c.optics, ExperimentConfig::default().optics);
        let c: ExperimentConfig = toml::from_str("[optics]\nhr_size = 32\n").unwrap();
        assert_eq!(c.optics.hr_size, 32);
        assert_eq!(c.optics.na, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"optix": {}}"#).is_err());
    }
}

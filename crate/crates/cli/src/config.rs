use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use matmodal_core::dataset::SplitSpec;
use matmodal_models::{EncoderConfig, FeaturizeConfig, Modality, TrainConfig};

use crate::error::{CliError, Context, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Feature cache written by `precompute`.
    pub cache_dir: Option<PathBuf>,
    /// Prefix of the index files written by `dataset split`; when absent
    /// the split is recomputed from `split`.
    pub split_prefix: Option<PathBuf>,
}

/// One JSON document holding every setting of a run. Every field is
/// optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; when set it replaces `train.seed` and `split.seed`.
    pub seed: Option<u64>,
    pub featurize: FeaturizeConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub paths: Paths,
    /// Encoders to train. Defaults: structure + xrd for `train align`,
    /// structure for `train downstream`, xrd + composition for
    /// `train align-fuse`.
    pub modalities: Option<Vec<Modality>>,
    /// Aligned checkpoint whose encoder weights seed `train downstream`.
    pub init_checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(command: &'static str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).ctx(command, path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).ctx(command, path)?;
        cfg.resolve();
        cfg.validate().ctx(command, path)?;
        Ok(cfg)
    }

    /// Applies the root seed so the echoed config is the effective one.
    pub fn resolve(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.split.seed = seed;
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.featurize
            .xrd
            .validate()
            .map_err(|e| format!("featurize.xrd: {e}"))?;
        self.encoder
            .validate()
            .map_err(|e| format!("encoder: {e}"))?;
        self.train.validate().map_err(|e| format!("train: {e}"))?;
        self.split.validate().map_err(|e| format!("split: {e}"))?;
        if let Some(m) = &self.modalities {
            if m.is_empty() || m.len() > 2 {
                return Err(format!(
                    "modalities must list one or two entries, got {}",
                    m.len()
                ));
            }
        }
        Ok(())
    }

    pub fn modalities_or(
        &self,
        command: &'static str,
        default: &[Modality],
    ) -> Result<Vec<Modality>> {
        let m = self.modalities.clone().unwrap_or_else(|| default.to_vec());
        if m.len() == 2 && m[0] == m[1] {
            return Err(CliError::new(command, None, "modalities must differ"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults_and_typos_fail() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
        let mut c: RunConfig =
            serde_json::from_str(r#"{"seed": 9, "train": {"epochs": 2}}"#).unwrap();
        c.resolve();
        assert_eq!((c.train.seed, c.split.seed, c.train.epochs), (9, 9, 2));
    }
}

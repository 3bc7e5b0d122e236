use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use melmae::harness::{Gender, SplitFilter, SynthConfig};
use melmae::model::PatchConfig;
use melmae::train::{PretrainConfig, TrainConfig};
use melmae::ttt::TttConfig;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub mels: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig { mels: 32 }
    }
}

/// Cross-protocol training filter: which gender or dataset tag the training
/// stages see. Empty strings mean no filter.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub train_gender: String,
    pub train_dataset: String,
}

impl ProtocolConfig {
    pub fn train_filter(&self) -> Result<SplitFilter, CliError> {
        let gender = match self.train_gender.as_str() {
            "" => None,
            "F" => Some(Gender::F),
            "M" => Some(Gender::M),
            other => return Err(CliError::Config(format!("protocol.train_gender must be \"F\" or \"M\", got {other:?}"))),
        };
        let dataset_tag = match self.train_dataset.as_str() {
            "" => None,
            tag => Some(tag.to_string()),
        };
        Ok(SplitFilter { gender, dataset_tag })
    }
}

/// Whole-run configuration: flat sectioned key=value (TOML), unknown keys
/// rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; per-stage seeds derive from it and the stage name.
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub frontend: FrontendConfig,
    #[serde(default)]
    pub patch: PatchConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ttt: TttConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.patch.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Effective stage seed: global seed mixed with the stage tag and the
    /// stage's own seed field (so configs can fork substreams explicitly).
    pub fn stage_seed(&self, tag: &str, stage_seed: u64) -> u64 {
        melmae::rng::derive(self.seed, &format!("{tag}/{stage_seed}"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.corpus_dir.join("manifest.csv")
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.paths.checkpoint_dir.join("pretrained.ckpt")
    }

    pub fn probed_path(&self) -> PathBuf {
        self.paths.checkpoint_dir.join("probed.ckpt")
    }
}

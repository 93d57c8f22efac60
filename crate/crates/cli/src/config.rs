use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pixelcritic::metrics::EncoderTraining;
use pixelcritic::net::ArchConfig;
use pixelcritic::synth::{CollageParams, ToySetConfig};
use pixelcritic::train::{LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub arch: ArchConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub toy: ToySetConfig,
    pub collage: CollageParams,
    /// Number of collages in the training set.
    pub count: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            toy: ToySetConfig::default(),
            collage: CollageParams::default(),
            count: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ExtractorKind {
    RandomConv,
    TrainedEncoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    pub per_class: bool,
    pub extractor: ExtractorKind,
    /// Checkpoint of a trained encoder, required for `trained_encoder`.
    pub encoder: Option<PathBuf>,
    pub encoder_widths: Vec<usize>,
    pub encoder_training: EncoderTraining,
    pub alpha: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 4,
            per_class: false,
            extractor: ExtractorKind::RandomConv,
            encoder: None,
            encoder_widths: vec![16, 32, 64],
            encoder_training: EncoderTraining::default(),
            alpha: 0.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))?;
        Ok(config)
    }

    /// Write the effective configuration to `<dir>/config.json`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

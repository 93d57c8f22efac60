use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub width: usize,
    #[serde(default = "default_convs")]
    pub convs: usize,
}

fn default_convs() -> usize {
    5
}

/// Extra input channels reserved at the start of an encoder stage for
/// externally computed feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSlot {
    pub stage: usize,
    pub channels: usize,
}

/// Shape of the detector network.
///
/// Stage `s` runs at resolution `H / 2^s`. Attention indices name stages:
/// encoder attention runs after that encoder stage's convs, decoder attention
/// after the decoder block that restores stage `s`'s resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stages: Vec<StageConfig>,
    pub encoder_attention: Vec<usize>,
    pub decoder_attention: Vec<usize>,
    pub attention_reduction: usize,
    pub kernel: usize,
    pub injection: Vec<InjectionSlot>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            height: 64,
            width: 64,
            channels: 3,
            stages: [16, 32, 64]
                .iter()
                .map(|&width| StageConfig { width, convs: 5 })
                .collect(),
            encoder_attention: vec![2],
            decoder_attention: vec![1],
            attention_reduction: 8,
            kernel: 3,
            injection: Vec::new(),
        }
    }
}

impl ArchConfig {
    /// Stages with the given widths, each holding `convs` convolutions, and no attention.
    pub fn plain(
        height: usize,
        width: usize,
        channels: usize,
        widths: &[usize],
        convs: usize,
    ) -> Self {
        ArchConfig {
            height,
            width,
            channels,
            stages: widths
                .iter()
                .map(|&width| StageConfig { width, convs })
                .collect(),
            encoder_attention: Vec::new(),
            decoder_attention: Vec::new(),
            ..ArchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages.len();
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 stages, got {n}")));
        }
        if self.channels == 0 {
            return Err(Error::Config("input channels must be positive".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.convs == 0 || s.width == 0 {
                return Err(Error::Config(format!(
                    "stage {i} needs positive width and conv count, got {s:?}"
                )));
            }
        }
        let step = 1usize << (n - 1);
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(step)
            || !self.width.is_multiple_of(step)
        {
            return Err(Error::Config(format!(
                "input {}×{} is not divisible by 2^{} = {step} as {n} stages require",
                self.height,
                self.width,
                n - 1
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        for &i in &self.encoder_attention {
            if i >= n {
                return Err(Error::Config(format!(
                    "encoder attention stage {i} out of range 0..{n}"
                )));
            }
            self.check_attention_width(i)?;
        }
        for &i in &self.decoder_attention {
            if i + 1 >= n {
                return Err(Error::Config(format!(
                    "decoder attention stage {i} out of range 0..{}",
                    n - 1
                )));
            }
            self.check_attention_width(i)?;
        }
        for slot in &self.injection {
            if slot.stage >= n || slot.channels == 0 {
                return Err(Error::Config(format!("invalid injection slot {slot:?}")));
            }
        }
        Ok(())
    }

    fn check_attention_width(&self, stage: usize) -> Result<()> {
        let c = self.stages[stage].width;
        let r = self.attention_reduction;
        if r == 0 || c < r || !c.is_multiple_of(r) {
            return Err(Error::Config(format!(
                "attention at stage {stage} needs a channel count divisible by {r} and at least {r}, got {c}"
            )));
        }
        Ok(())
    }

    pub fn injected_channels(&self, stage: usize) -> usize {
        self.injection
            .iter()
            .filter(|s| s.stage == stage)
            .map(|s| s.channels)
            .sum()
    }

    /// Same network without any attention layer.
    pub fn without_attention(&self) -> Self {
        ArchConfig {
            encoder_attention: Vec::new(),
            decoder_attention: Vec::new(),
            ..self.clone()
        }
    }
}

use super::loss::{l2_gradient, l2_penalty, pixel_loss, LossConfig};
use crate::error::{Error, Result};
use crate::image::ErrorMap;
use crate::net::Model;
use crate::numeric::{Adam, Graph, Tensor};
use crate::synth::LabelledImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Named loss settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Tuned for image quality: `lambda = 5`, `gamma = 1`, `l2 = 0.03`.
    Quality,
    /// Tuned for mode collapse: `lambda = 2`, `gamma = 1`, `l2 = 0.3`.
    ModeCollapse,
}

impl Preset {
    /// Apply the preset's weights on top of `base`, keeping its form and normalization.
    pub fn apply(self, base: LossConfig) -> LossConfig {
        let (lambda, l2_coeff) = match self {
            Preset::Quality => (5.0, 0.03),
            Preset::ModeCollapse => (2.0, 0.3),
        };
        LossConfig {
            lambda,
            gamma: 1.0,
            l2_coeff,
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub preset: Option<Preset>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 2e-4,
            seed: 0,
            checkpoint_every: 0,
            preset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "epochs and batch size must be positive, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Loss settings after applying the preset, if any.
    pub fn effective_loss(&self, base: LossConfig) -> LossConfig {
        self.preset.map_or(base, |p| p.apply(base))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Loss and parameter gradients for one labelled image, without regularization.
pub fn sample_gradient(
    model: &Model,
    sample: &LabelledImage,
    loss: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let pass = model.forward_graph(&mut g, &sample.image)?;
    let (h, w) = sample.label.dims();
    let probs = ErrorMap::new(h, w, g.value(pass.output).data().to_vec())?;
    let pl = pixel_loss(&probs, &sample.label, None, loss)?;
    let grad = Tensor::new(g.shape(pass.output).to_vec(), pl.grad)?;
    let out = g.external_scalar(pass.output, pl.value, grad)?;
    let mut grads = g.backward(out)?;
    Ok((
        pl.value,
        pass.params.iter().map(|&v| grads.take(v)).collect(),
    ))
}

/// Minimize the detection loss over `samples` with Adam.
///
/// Each epoch visits the samples in a seeded shuffled order, in mini-batches.
/// Per-sample gradients are computed in parallel but summed in batch order, so
/// the result does not depend on the thread count. When `out_dir` is given,
/// checkpoints are written there at the configured cadence, and `model.pxc`
/// is always written at the end.
pub fn train(
    model: &mut Model,
    samples: &[LabelledImage],
    cfg: &TrainConfig,
    loss: &LossConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    loss.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let provenance = serde_json::json!({ "train": cfg, "loss": loss });
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, Vec<Tensor>)>> = chunk
                .par_iter()
                .map(|&i| sample_gradient(model, &samples[i], loss))
                .collect();
            let inv = 1.0 / chunk.len() as f64;
            let mut value = 0.0;
            let mut grads = l2_gradient(model.params(), loss.l2_coeff);
            for r in results {
                let (v, gs) = r.map_err(|e| match e {
                    Error::NonFinite(_) => Error::NanLoss { epoch, batch: bi },
                    other => other,
                })?;
                value += v;
                for (acc, mut gr) in grads.iter_mut().zip(gs) {
                    gr.scale_in_place(inv);
                    acc.add_assign(&gr)?;
                }
            }
            let value = value * inv + l2_penalty(model.params(), loss.l2_coeff);
            if !value.is_finite() {
                return Err(Error::NanLoss { epoch, batch: bi });
            }
            adam.step(model.params_mut(), &grads)?;
            total += value;
            batches += 1;
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss: total / batches as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0
                && (epoch + 1) % cfg.checkpoint_every == 0
                && epoch + 1 < cfg.epochs
            {
                let path = dir.join(format!("epoch-{:04}.pxc", epoch + 1));
                model.save_with_provenance(&path, Some(provenance.clone()))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        model.save_with_provenance(&dir.join("model.pxc"), Some(provenance))?;
        write_history(&dir.join("history.json"), &history)?;
    }
    Ok(history)
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(history).expect("serializable history");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

use crate::error::{Error, Result};
use crate::image::Image;
use crate::numeric::{
    read_checkpoint, write_checkpoint, Adam, Graph, ParamKind, Parameter, Tensor, Var,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const FEATURE_MAGIC: &[u8; 4] = b"PXF1";

/// Deterministic map from an image to a fixed-length feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn describe(&self) -> String;
    fn extract(&self, image: &Image) -> Result<Vec<f64>>;

    fn extract_all(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        images.par_iter().map(|i| self.extract(i)).collect()
    }
}

/// Stack of 3×3 conv + ReLU layers with 2× average pooling between them,
/// ending in a global average over positions.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    channels: usize,
    widths: Vec<usize>,
    params: Vec<Parameter>,
    classes: Vec<String>,
    label: String,
}

/// Settings for [`ConvEncoder::train_classifier`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EncoderTraining {
    fn default() -> Self {
        EncoderTraining {
            epochs: 8,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSidecar {
    channels: usize,
    widths: Vec<usize>,
    classes: Vec<String>,
}

fn init_params(channels: usize, widths: &[usize], classes: usize, seed: u64) -> Vec<Parameter> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut cin = channels;
    for (i, &w) in widths.iter().enumerate() {
        let normal = Normal::new(0.0, (2.0 / (9 * cin) as f64).sqrt()).unwrap();
        let k = Tensor::from_fn(vec![w, cin, 3, 3], |_| normal.sample(&mut rng));
        params.push(Parameter::new(format!("conv{i}.w"), ParamKind::Weight, k));
        params.push(Parameter::new(
            format!("conv{i}.b"),
            ParamKind::Bias,
            Tensor::zeros(vec![w]),
        ));
        cin = w;
    }
    if classes > 0 {
        let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt()).unwrap();
        let w = Tensor::from_fn(vec![cin, classes], |_| normal.sample(&mut rng));
        params.push(Parameter::new("classifier.w", ParamKind::Weight, w));
        params.push(Parameter::new(
            "classifier.b",
            ParamKind::Bias,
            Tensor::zeros(vec![1, classes]),
        ));
    }
    params
}

impl ConvEncoder {
    /// Untrained encoder with seeded He-normal weights.
    pub fn random(channels: usize, widths: &[usize], seed: u64) -> Self {
        ConvEncoder {
            channels,
            widths: widths.to_vec(),
            params: init_params(channels, widths, 0, seed),
            classes: Vec::new(),
            label: format!("random_conv(seed={seed}, widths={widths:?})"),
        }
    }

    /// The default random extractor: widths 16, 32, 64, so `d = 64`.
    pub fn random_default(seed: u64) -> Self {
        ConvEncoder::random(3, &[16, 32, 64], seed)
    }

    fn graph(&self, g: &mut Graph, vars: &[Var], image: &Image) -> Result<Var> {
        if image.channels() != self.channels {
            return Err(Error::dim(
                "feature extractor",
                format!(
                    "expects {} channels, got {}",
                    self.channels,
                    image.channels()
                ),
            ));
        }
        let mut h = g.constant(image.to_tensor());
        for i in 0..self.widths.len() {
            if i > 0 {
                h = g.avg_pool(h, 2)?;
            }
            let c = g.conv2d(h, vars[2 * i], Some(vars[2 * i + 1]), 1, 1)?;
            h = g.relu(c)?;
        }
        let [_, d, hh, ww] = g.value(h).dims4("feature extractor")?;
        let flat = g.reshape(h, &[d, hh * ww])?;
        let avg = g.constant(Tensor::full(vec![hh * ww, 1], 1.0 / (hh * ww) as f64));
        let pooled = g.matmul(flat, avg, false, false)?;
        g.reshape(pooled, &[1, d])
    }

    /// Train a classifier with this encoder as its trunk and keep the trunk.
    ///
    /// `classes[i]` is the class index of `images[i]`; the cross-entropy is
    /// minimized with Adam over seeded shuffled mini-batches.
    pub fn train_classifier(
        images: &[Image],
        classes: &[usize],
        class_names: Vec<String>,
        widths: &[usize],
        cfg: &EncoderTraining,
    ) -> Result<(ConvEncoder, Vec<f64>)> {
        if images.is_empty() || images.len() != classes.len() {
            return Err(Error::Data(format!(
                "encoder training needs one class per image, got {} images and {} classes",
                images.len(),
                classes.len()
            )));
        }
        let n_classes = class_names.len();
        if n_classes < 2 || classes.iter().any(|&c| c >= n_classes) {
            return Err(Error::Data(format!(
                "encoder training needs at least 2 classes and valid class indices, got {n_classes}"
            )));
        }
        let channels = images[0].channels();
        let mut enc = ConvEncoder {
            channels,
            widths: widths.to_vec(),
            params: init_params(channels, widths, n_classes, cfg.seed),
            classes: Vec::new(),
            label: String::new(),
        };
        let mut adam = Adam::new(cfg.lr);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut history = Vec::new();
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let results: Vec<Result<(f64, Vec<Tensor>)>> = chunk
                    .par_iter()
                    .map(|&i| enc.class_gradient(&images[i], classes[i]))
                    .collect();
                let inv = 1.0 / chunk.len() as f64;
                let mut grads: Vec<Tensor> = enc
                    .params
                    .iter()
                    .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                    .collect();
                for r in results {
                    let (v, gs) = r?;
                    total += v;
                    for (acc, mut gr) in grads.iter_mut().zip(gs) {
                        gr.scale_in_place(inv);
                        acc.add_assign(&gr)?;
                    }
                }
                adam.step(&mut enc.params, &grads)?;
            }
            history.push(total / images.len() as f64);
        }
        enc.params.truncate(2 * widths.len());
        enc.label = format!("trained_encoder(widths={widths:?}, classes={class_names:?})");
        enc.classes = class_names;
        Ok((enc, history))
    }

    fn class_gradient(&self, image: &Image, class: usize) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.param(p.value.clone()))
            .collect();
        let feats = self.graph(&mut g, &vars, image)?;
        let n = self.widths.len();
        let logits = g.matmul(feats, vars[2 * n], false, false)?;
        let logits = g.add(logits, vars[2 * n + 1])?;
        let z = g.value(logits).data();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let loss = total.ln() + max - z[class];
        let mut grad: Vec<f64> = exp.iter().map(|e| e / total).collect();
        grad[class] -= 1.0;
        let grad = Tensor::new(g.shape(logits).to_vec(), grad)?;
        let out = g.external_scalar(logits, loss, grad)?;
        let mut gs = g.backward(out)?;
        Ok((loss, vars.iter().map(|&v| gs.take(v)).collect()))
    }
}

impl ConvEncoder {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Write the trunk weights to `path` and its shape to the JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(
            path,
            self.params.iter().map(|p| (p.name.as_str(), &p.value)),
        )?;
        let side = path.with_extension("json");
        let sidecar = EncoderSidecar {
            channels: self.channels,
            widths: self.widths.clone(),
            classes: self.classes.clone(),
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("serializable sidecar");
        fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<ConvEncoder> {
        let side = path.with_extension("json");
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sc: EncoderSidecar =
            serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
        let mut enc = ConvEncoder {
            channels: sc.channels,
            widths: sc.widths.clone(),
            params: init_params(sc.channels, &sc.widths, 0, 0),
            label: format!("trained_encoder({})", path.display()),
            classes: sc.classes,
        };
        let stored = read_checkpoint(path)?;
        if stored.len() != enc.params.len() {
            return Err(Error::format(
                path,
                format!(
                    "expected {} tensors, found {}",
                    enc.params.len(),
                    stored.len()
                ),
            ));
        }
        for (p, (name, value)) in enc.params.iter_mut().zip(stored) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(Error::format(
                    path,
                    format!("unexpected tensor `{name}` {:?}", value.shape()),
                ));
            }
            p.value = value;
        }
        Ok(enc)
    }
}

impl FeatureExtractor for ConvEncoder {
    fn dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn describe(&self) -> String {
        self.label.clone()
    }

    fn extract(&self, image: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect();
        let f = self.graph(&mut g, &vars, image)?;
        Ok(g.value(f).data().to_vec())
    }
}

/// Binary feature dump: magic, u32 LE count, u32 LE dimension, then f64 LE values.
pub fn write_features(path: &Path, features: &[Vec<f64>]) -> Result<()> {
    let dim = features.first().map_or(0, |f| f.len());
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::dim(
            "write_features",
            "feature vectors differ in length",
        ));
    }
    let mut out = Vec::with_capacity(12 + features.len() * dim * 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(features.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in features.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "not a PXF1 feature dump"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (count, dim) = (word(4), word(8));
    if bytes.len() != 12 + count * dim * 8 {
        return Err(Error::format(
            path,
            format!(
                "{count}×{dim} features need {} bytes, file has {}",
                12 + count * dim * 8,
                bytes.len()
            ),
        ));
    }
    Ok(bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>()
        .chunks(dim.max(1))
        .take(count)
        .map(|c| c.to_vec())
        .collect())
}

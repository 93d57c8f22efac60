use super::arch::ArchConfig;
use super::attention::{self_attention, AttentionVars};
use super::hook::{fit_features, FeatureMaps};
use crate::error::{Error, Result};
use crate::image::{ErrorMap, Image};
use crate::numeric::{read_checkpoint, write_checkpoint, Graph, ParamKind, Parameter, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Encoder–decoder detector mapping an image to per-pixel error probabilities.
#[derive(Clone)]
pub struct Model {
    config: ArchConfig,
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
    features: Option<Arc<dyn FeatureMaps>>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.params.len())
            .field("features", &self.features.is_some())
            .finish()
    }
}

/// Graph handles produced by [`Model::forward_graph`].
pub struct ForwardPass {
    /// `[1, 1, H, W]` probabilities.
    pub output: Var,
    /// One handle per parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    arch: ArchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

fn stream_for(name: &str) -> u64 {
    // FNV-1a; stable across platforms and releases
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn he_normal(name: &str, shape: Vec<usize>, seed: u64) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_for(name));
    Tensor::from_fn(shape, |_| normal.sample(&mut rng))
}

struct Builder {
    seed: u64,
    params: Vec<Parameter>,
}

impl Builder {
    fn weight(&mut self, name: String, shape: Vec<usize>) {
        let value = he_normal(&name, shape, self.seed);
        self.params
            .push(Parameter::new(name, ParamKind::Weight, value));
    }

    fn conv(&mut self, name: &str, out: usize, input: usize, k: usize) {
        self.weight(format!("{name}.w"), vec![out, input, k, k]);
        self.params.push(Parameter::new(
            format!("{name}.b"),
            ParamKind::Bias,
            Tensor::zeros(vec![out]),
        ));
    }

    fn stage(&mut self, prefix: &str, input: usize, width: usize, convs: usize, k: usize) {
        for i in 0..convs {
            let cin = if i == 0 { input } else { width };
            self.conv(&format!("{prefix}.conv{i}"), width, cin, k);
            if i >= 2 && i % 2 == 0 {
                // closes a residual pair: start the branch at zero
                let w = &mut self.params.iter_mut().rev().nth(1).unwrap().value;
                *w = Tensor::zeros(w.shape().to_vec());
            }
        }
    }

    fn attention(&mut self, prefix: &str, channels: usize, reduction: usize) {
        let reduced = channels / reduction;
        self.weight(
            format!("{prefix}.attn.query"),
            vec![reduced, channels, 1, 1],
        );
        self.weight(format!("{prefix}.attn.key"), vec![reduced, channels, 1, 1]);
        self.weight(
            format!("{prefix}.attn.value"),
            vec![channels, channels, 1, 1],
        );
        self.params.push(Parameter::new(
            format!("{prefix}.attn.gain"),
            ParamKind::Gain,
            Tensor::zeros(vec![1]),
        ));
    }
}

/// Build a freshly initialized model.
///
/// Inputs are shifted by −0.5 before the first convolution. Weights are
/// He-normal except the closing convolution of each residual pair, which
/// starts at zero like the attention gains, so every residual block begins as
/// the identity. Biases are zero. Every tensor is drawn from its own stream
/// keyed by parameter name, so adding or removing a layer leaves the other
/// initial values untouched.
pub fn build_model(config: &ArchConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let k = config.kernel;
    let n = config.stages.len();
    let mut b = Builder {
        seed,
        params: Vec::new(),
    };
    for (s, stage) in config.stages.iter().enumerate() {
        let below = if s == 0 {
            config.channels
        } else {
            config.stages[s - 1].width
        };
        let input = below + config.injected_channels(s);
        b.stage(&format!("enc{s}"), input, stage.width, stage.convs, k);
        if config.encoder_attention.contains(&s) {
            b.attention(&format!("enc{s}"), stage.width, config.attention_reduction);
        }
    }
    for s in (0..n - 1).rev() {
        let stage = config.stages[s];
        let input = config.stages[s + 1].width + stage.width;
        b.stage(&format!("dec{s}"), input, stage.width, stage.convs, k);
        if config.decoder_attention.contains(&s) {
            b.attention(&format!("dec{s}"), stage.width, config.attention_reduction);
        }
    }
    b.conv("head", 1, config.stages[0].width, 1);
    Model::from_params(config.clone(), b.params)
}

impl Model {
    fn from_params(config: ArchConfig, params: Vec<Parameter>) -> Result<Model> {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(Model {
            config,
            params,
            index,
            features: None,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Register the source of injected feature maps. Without one, injection
    /// slots receive zeros.
    pub fn set_feature_maps(&mut self, features: Arc<dyn FeatureMaps>) {
        self.features = Some(features);
    }

    /// Copy of this model with every attention layer dropped.
    pub fn without_attention(&self) -> Model {
        let params = self
            .params
            .iter()
            .filter(|p| !p.name.contains(".attn."))
            .cloned()
            .collect();
        let mut m = Model::from_params(self.config.without_attention(), params)
            .expect("subset of a valid model");
        m.features = self.features.clone();
        m
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let c = &self.config;
        if (image.height(), image.width(), image.channels()) != (c.height, c.width, c.channels) {
            return Err(Error::dim(
                "forward",
                format!(
                    "model expects {}×{}×{} input, got {}×{}×{}",
                    c.height,
                    c.width,
                    c.channels,
                    image.height(),
                    image.width(),
                    image.channels()
                ),
            ));
        }
        Ok(())
    }

    /// Per-pixel error probabilities for one image.
    pub fn forward(&self, image: &Image) -> Result<ErrorMap> {
        self.check_input(image)?;
        let mut g = Graph::new();
        let pass = self.build_graph(&mut g, image.to_tensor(), false)?;
        let data = g.value(pass.output).data().to_vec();
        ErrorMap::new(self.config.height, self.config.width, data)
    }

    /// Record the forward pass of `image` on `g` with every parameter as a
    /// trainable leaf.
    pub fn forward_graph(&self, g: &mut Graph, image: &Image) -> Result<ForwardPass> {
        self.check_input(image)?;
        self.build_graph(g, image.to_tensor(), true)
    }

    /// Record the forward pass using caller-supplied parameter handles, one
    /// per entry of [`Model::params`]. Returns the `[1, 1, H, W]` output.
    pub fn forward_with(&self, g: &mut Graph, params: &[Var], image: &Image) -> Result<Var> {
        self.check_input(image)?;
        if params.len() != self.params.len() {
            return Err(Error::dim(
                "forward",
                format!(
                    "{} parameter handles for {} parameters",
                    params.len(),
                    self.params.len()
                ),
            ));
        }
        self.wire(g, params, image.to_tensor())
    }

    fn build_graph(&self, g: &mut Graph, input: Tensor, trainable: bool) -> Result<ForwardPass> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        let output = self.wire(g, &vars, input)?;
        Ok(ForwardPass {
            output,
            params: vars,
        })
    }

    fn wire(&self, g: &mut Graph, vars: &[Var], input: Tensor) -> Result<Var> {
        let var = |name: &str| vars[self.index[name]];
        let cfg = &self.config;
        let pad = cfg.kernel / 2;
        let n = cfg.stages.len();

        let stage = |g: &mut Graph, mut h: Var, prefix: &str, convs: usize| -> Result<Var> {
            let conv = |g: &mut Graph, h: Var, i: usize| {
                let w = var(&format!("{prefix}.conv{i}.w"));
                let b = var(&format!("{prefix}.conv{i}.b"));
                g.conv2d(h, w, Some(b), 1, pad)
            };
            let first = conv(g, h, 0)?;
            h = g.relu(first)?;
            let mut i = 1;
            while i + 1 < convs {
                let a = conv(g, h, i)?;
                let a = g.relu(a)?;
                let b = conv(g, a, i + 1)?;
                let sum = g.add(b, h)?;
                h = g.relu(sum)?;
                i += 2;
            }
            if i < convs {
                let last = conv(g, h, i)?;
                h = g.relu(last)?;
            }
            Ok(h)
        };
        let attention = |g: &mut Graph, h: Var, prefix: &str| -> Result<Var> {
            let vars = AttentionVars {
                query: var(&format!("{prefix}.attn.query")),
                key: var(&format!("{prefix}.attn.key")),
                value: var(&format!("{prefix}.attn.value")),
                gain: var(&format!("{prefix}.attn.gain")),
            };
            Ok(self_attention(g, h, vars)?.output)
        };

        let mut h = g.constant(input.map(|v| v - 0.5));
        let mut skips = Vec::with_capacity(n);
        for (s, st) in cfg.stages.iter().enumerate() {
            if s > 0 {
                h = g.avg_pool(h, 2)?;
            }
            let budget = cfg.injected_channels(s);
            if budget > 0 {
                let [_, _, hh, ww] = g.value(h).dims4("forward")?;
                let maps = match &self.features {
                    Some(f) => fit_features(f.feature_maps(&input, s)?, hh, ww, budget)?,
                    None => Tensor::zeros(vec![1, budget, hh, ww]),
                };
                let extra = g.constant(maps);
                h = g.concat_channels(&[h, extra])?;
            }
            h = stage(g, h, &format!("enc{s}"), st.convs)?;
            if cfg.encoder_attention.contains(&s) {
                h = attention(g, h, &format!("enc{s}"))?;
            }
            skips.push(h);
        }
        for s in (0..n - 1).rev() {
            let up = g.upsample(h, 2)?;
            h = g.concat_channels(&[up, skips[s]])?;
            h = stage(g, h, &format!("dec{s}"), cfg.stages[s].convs)?;
            if cfg.decoder_attention.contains(&s) {
                h = attention(g, h, &format!("dec{s}"))?;
            }
        }
        let logits = g.conv2d(h, var("head.w"), Some(var("head.b")), 1, 0)?;
        g.sigmoid(logits)
    }

    pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }

    /// Write parameters to `path` and the architecture to its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_provenance(path, None)
    }

    /// As [`Model::save`], recording extra settings in the sidecar.
    pub fn save_with_provenance(
        &self,
        path: &Path,
        provenance: Option<serde_json::Value>,
    ) -> Result<()> {
        write_checkpoint(
            path,
            self.params.iter().map(|p| (p.name.as_str(), &p.value)),
        )?;
        let sidecar = Sidecar {
            arch: self.config.clone(),
            provenance,
        };
        let side = Model::sidecar_path(path);
        let text = serde_json::to_string_pretty(&sidecar).expect("serializable config");
        std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let side = Model::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
        let mut model = build_model(&sidecar.arch, 0)?;
        let stored = read_checkpoint(path)?;
        if stored.len() != model.params.len() {
            return Err(Error::format(
                path,
                format!(
                    "checkpoint holds {} tensors, architecture needs {}",
                    stored.len(),
                    model.params.len()
                ),
            ));
        }
        for (p, (name, value)) in model.params.iter_mut().zip(stored) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(Error::format(
                    path,
                    format!(
                        "expected `{}` {:?}, found `{name}` {:?}",
                        p.name,
                        p.value.shape(),
                        value.shape()
                    ),
                ));
            }
            p.value = value;
        }
        Ok(model)
    }
}

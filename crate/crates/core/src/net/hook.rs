use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Source of auxiliary feature maps injected into encoder stages.
///
/// Implementations receive the network input `[1, C, H, W]` and return
/// `[1, c, h, w]` maps. Maps whose size differs from the stage by a power-of-two
/// factor are resampled; anything else is rejected.
pub trait FeatureMaps: Send + Sync {
    fn feature_maps(&self, input: &Tensor, stage: usize) -> Result<Tensor>;
}

/// Injector that always returns zeros; equivalent to leaving the slots empty.
pub struct ZeroFeatures {
    pub channels: usize,
}

impl FeatureMaps for ZeroFeatures {
    fn feature_maps(&self, input: &Tensor, _stage: usize) -> Result<Tensor> {
        let [b, _, h, w] = input.dims4("zero features")?;
        Ok(Tensor::zeros(vec![b, self.channels, h, w]))
    }
}

/// Fixed seeded 3×3 convolution followed by ReLU, applied at full resolution.
pub struct RandomConvFeatures {
    kernel: Tensor,
}

impl RandomConvFeatures {
    pub fn new(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 / (9 * in_channels) as f64).sqrt()).unwrap();
        let kernel = Tensor::from_fn(vec![out_channels, in_channels, 3, 3], |_| {
            normal.sample(&mut rng)
        });
        RandomConvFeatures { kernel }
    }
}

impl FeatureMaps for RandomConvFeatures {
    fn feature_maps(&self, input: &Tensor, _stage: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let k = g.constant(self.kernel.clone());
        let y = g.conv2d(x, k, None, 1, 1)?;
        let y = g.relu(y)?;
        Ok(g.value(y).clone())
    }
}

/// Bring `maps` to `height × width` by integer average pooling or nearest
/// upsampling, then zero-pad channels up to `budget`.
pub(crate) fn fit_features(
    maps: Tensor,
    height: usize,
    width: usize,
    budget: usize,
) -> Result<Tensor> {
    let [b, c, h, w] = maps.dims4("feature injection")?;
    if c > budget {
        return Err(Error::Config(format!(
            "injected features have {c} channels but the slot holds {budget}"
        )));
    }
    let mut g = Graph::new();
    let mut v = g.constant(maps);
    if h > height && h % height == 0 && w / width == h / height && w % width == 0 {
        v = g.avg_pool(v, h / height)?;
    } else if h < height
        && height.is_multiple_of(h)
        && width / w == height / h
        && width.is_multiple_of(w)
    {
        v = g.upsample(v, height / h)?;
    } else if (h, w) != (height, width) {
        return Err(Error::dim(
            "feature injection",
            format!("maps of {h}×{w} cannot be resampled to {height}×{width}"),
        ));
    }
    if c < budget {
        let pad = g.constant(Tensor::zeros(vec![b, budget - c, height, width]));
        v = g.concat_channels(&[v, pad])?;
    }
    Ok(g.value(v).clone())
}

//! Blending real and generated images into labelled collages, and pasting
//! rotated copies of real discs as artifacts.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LabelMap, MaskMap};

/// Where a collage came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub real_id: Option<String>,
    pub generated_id: Option<String>,
    pub class: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollageSample {
    pub image: Image,
    pub label: LabelMap,
    pub provenance: Provenance,
}

/// `image = alpha·real + (1 − alpha)·generated`, label 1 where `alpha ≥ 0.5`.
pub fn collage(real: &Image, generated: &Image, alpha: &MaskMap) -> Result<CollageSample> {
    if !generated.same_dims(real) {
        return Err(Error::dim(
            "collage",
            format!(
                "generated image is {}×{}×{}, real image is {}×{}×{}",
                generated.height(),
                generated.width(),
                generated.channels(),
                real.height(),
                real.width(),
                real.channels()
            ),
        ));
    }
    if alpha.dims() != (real.height(), real.width()) {
        return Err(Error::dim(
            "collage",
            format!(
                "alpha mask is {}×{}, images are {}×{}",
                alpha.height(),
                alpha.width(),
                real.height(),
                real.width()
            ),
        ));
    }
    let c = real.channels();
    let mut data = Vec::with_capacity(real.data().len());
    let mut label = Vec::with_capacity(alpha.data().len());
    for (p, &a) in alpha.data().iter().enumerate() {
        for ch in 0..c {
            let r = real.data()[p * c + ch];
            let g = generated.data()[p * c + ch];
            data.push(a * r + (1.0 - a) * g);
        }
        label.push(u8::from(a >= 0.5));
    }
    Ok(CollageSample {
        image: Image::from_clamped(real.height(), real.width(), c, data)?,
        label: LabelMap::new(real.height(), real.width(), label)?,
        provenance: Provenance::default(),
    })
}

/// Offsets `(dy, dx)` with `dy² + dx² < r²`; empty for `r = 0`.
pub fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx < r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Copy the disc of `radius` around `src_center` in `source`, rotate it by
/// `theta` (nearest-neighbour), and paste it around `dst_center` in the
/// sample. Pasted pixels are labelled 0. Pixels outside the image are skipped.
pub fn paste_rotated_disc(
    sample: &mut CollageSample,
    source: &Image,
    src_center: (usize, usize),
    dst_center: (usize, usize),
    radius: usize,
    theta: f64,
) -> Result<()> {
    if !source.same_dims(&sample.image) {
        return Err(Error::dim(
            "circular artifact",
            "artifact source and sample differ in size",
        ));
    }
    let (h, w) = (source.height() as isize, source.width() as isize);
    let (cos, sin) = (theta.cos(), theta.sin());
    for (dy, dx) in disc_offsets(radius) {
        let ty = dst_center.0 as isize + dy;
        let tx = dst_center.1 as isize + dx;
        if ty < 0 || tx < 0 || ty >= h || tx >= w {
            continue;
        }
        // inverse rotation of the destination offset gives the source offset
        let sy = (cos * dy as f64 + sin * dx as f64).round() as isize;
        let sx = (-sin * dy as f64 + cos * dx as f64).round() as isize;
        let py = (src_center.0 as isize + sy).clamp(0, h - 1) as usize;
        let px = (src_center.1 as isize + sx).clamp(0, w - 1) as usize;
        let value = source.pixel(py, px).to_vec();
        sample
            .image
            .pixel_mut(ty as usize, tx as usize)
            .copy_from_slice(&value);
        sample.label.set(ty as usize, tx as usize, 0);
    }
    Ok(())
}

/// One circular artifact with radius, centres and angle drawn from `seed`.
pub fn apply_circular_artifact(
    sample: &CollageSample,
    source: &Image,
    radius_range: (usize, usize),
    seed: u64,
) -> Result<CollageSample> {
    let (lo, hi) = radius_range;
    let (h, w) = (sample.image.height(), sample.image.width());
    if lo > hi {
        return Err(Error::Parameter(format!(
            "artifact radius range [{lo}, {hi}] is empty"
        )));
    }
    if 2 * hi >= h.min(w) {
        return Err(Error::Parameter(format!(
            "artifact radius {hi} must be below half the image side ({h}×{w})"
        )));
    }
    let mut out = sample.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = rng.random_range(lo..=hi);
    if radius == 0 {
        return Ok(out);
    }
    let src = (
        rng.random_range(radius..h - radius),
        rng.random_range(radius..w - radius),
    );
    let dst = (
        rng.random_range(radius..h - radius),
        rng.random_range(radius..w - radius),
    );
    let theta = rng.random_range(0.0..TAU);
    paste_rotated_disc(&mut out, source, src, dst, radius, theta)?;
    Ok(out)
}

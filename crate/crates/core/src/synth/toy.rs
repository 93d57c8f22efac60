//! A procedural stand-in for "real" and "generated" image distributions.
//!
//! Real scenes are a two-colour background gradient, one to three shapes in
//! class colours, and a fine luminance grain. The generator samples from the
//! same scene distribution and then degrades it: a Gaussian blur and a hue
//! rotation that both scale with `corruption`, and, with probability
//! `mode_collapse`, the class's single canonical layout instead of a fresh one.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, MIN_SIDE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyWorldConfig {
    pub height: usize,
    pub width: usize,
    /// Degradation strength in `[0, 1]`.
    pub corruption: f64,
    /// Probability in `[0, 1]` of emitting the canonical layout.
    pub mode_collapse: f64,
    pub class_id: u32,
    pub seed: u64,
    /// Amplitude of the per-pixel luminance grain.
    pub grain: f64,
    /// Blur sigma (pixels) at `corruption = 1`.
    pub max_blur_sigma: f64,
    /// Hue rotation (degrees) at `corruption = 1`.
    pub max_hue_degrees: f64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig {
            height: 64,
            width: 64,
            corruption: 0.0,
            mode_collapse: 0.0,
            class_id: 0,
            seed: 0,
            grain: 0.08,
            max_blur_sigma: 1.5,
            max_hue_degrees: 60.0,
        }
    }
}

impl ToyWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(Error::Parameter(format!(
                "corruption must be in [0, 1], got {}",
                self.corruption
            )));
        }
        if !(0.0..=1.0).contains(&self.mode_collapse) {
            return Err(Error::Parameter(format!(
                "mode_collapse must be in [0, 1], got {}",
                self.mode_collapse
            )));
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::Parameter(format!(
                "toy images must be at least {MIN_SIDE}×{MIN_SIDE}"
            )));
        }
        if self.grain < 0.0 || self.max_blur_sigma < 0.0 {
            return Err(Error::Parameter("grain and blur must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Square,
    Diamond,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub size: f64,
    pub color: [f64; 3],
}

impl Shape {
    fn covers(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        match self.kind {
            ShapeKind::Disc => dy * dy + dx * dx <= self.size * self.size,
            ShapeKind::Square => dy.abs() <= self.size && dx.abs() <= self.size,
            ShapeKind::Diamond => dy.abs() + dx.abs() <= self.size * 1.3,
        }
    }
}

/// Scene geometry and colours, everything except the grain.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub background: ([f64; 3], [f64; 3]),
    pub gradient_angle: f64,
    pub shapes: Vec<Shape>,
}

impl Layout {
    /// True where any shape covers the pixel centre.
    pub fn shape_mask(&self, height: usize, width: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                out.push(self.shapes.iter().any(|s| s.covers(y as f64, x as f64)));
            }
        }
        out
    }
}

struct Palette {
    background: ([f64; 3], [f64; 3]),
    shape_colors: [[f64; 3]; 3],
    kinds: [ShapeKind; 3],
}

fn class_rng(class_id: u32, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ (class_id as u64) << 8);
    rng.set_stream(stream);
    rng
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

fn palette(class_id: u32) -> Palette {
    let mut rng = class_rng(class_id, 0);
    let all = [ShapeKind::Disc, ShapeKind::Square, ShapeKind::Diamond];
    let first = class_id as usize % 3;
    Palette {
        background: (color(&mut rng, 0.2, 0.8), color(&mut rng, 0.2, 0.8)),
        shape_colors: [
            color(&mut rng, 0.1, 0.9),
            color(&mut rng, 0.1, 0.9),
            color(&mut rng, 0.1, 0.9),
        ],
        kinds: [all[first], all[first], all[(first + 1) % 3]],
    }
}

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amount: f64) -> [f64; 3] {
    c.map(|v| (v + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
}

fn sample_layout(rng: &mut ChaCha8Rng, class_id: u32, height: usize, width: usize) -> Layout {
    let p = palette(class_id);
    let side = height.min(width) as f64;
    let count = rng.random_range(1..=3);
    let shapes = (0..count)
        .map(|_| {
            let size = rng.random_range(side * 0.09..side * 0.22);
            let idx = rng.random_range(0..3);
            Shape {
                kind: p.kinds[idx],
                center: (
                    rng.random_range(size..height as f64 - size),
                    rng.random_range(size..width as f64 - size),
                ),
                size,
                color: jitter(rng, p.shape_colors[idx], 0.05),
            }
        })
        .collect();
    Layout {
        background: (
            jitter(rng, p.background.0, 0.05),
            jitter(rng, p.background.1, 0.05),
        ),
        gradient_angle: rng.random_range(0.0..TAU),
        shapes,
    }
}

/// The single layout a fully mode-collapsed generator emits for a class.
pub fn canonical_layout(class_id: u32, height: usize, width: usize) -> Layout {
    let mut rng = class_rng(class_id, 1);
    let mut layout = sample_layout(&mut rng, class_id, height, width);
    // always the busiest arrangement, so collapse is visible in every sample
    while layout.shapes.len() < 3 {
        let more = sample_layout(&mut rng, class_id, height, width);
        layout.shapes.extend(more.shapes);
    }
    layout.shapes.truncate(3);
    layout
}

fn render(
    layout: &Layout,
    rng: &mut ChaCha8Rng,
    height: usize,
    width: usize,
    grain: f64,
) -> Vec<f64> {
    let (dy, dx) = (layout.gradient_angle.sin(), layout.gradient_angle.cos());
    let (ca, cb) = layout.background;
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let u = y as f64 / (height - 1) as f64 - 0.5;
            let v = x as f64 / (width - 1) as f64 - 0.5;
            let t = ((u * dy + v * dx) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = ca[c] + t * (cb[c] - ca[c]);
            }
            // later shapes are drawn on top
            if let Some(s) = layout
                .shapes
                .iter()
                .rev()
                .find(|s| s.covers(y as f64, x as f64))
            {
                px = s.color;
            }
            let n = if grain > 0.0 {
                rng.random_range(-grain..grain)
            } else {
                0.0
            };
            data.extend(px.iter().map(|&c| c + n));
        }
    }
    data
}

fn gaussian_blur(data: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let (h, w) = (height as isize, width as isize);
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let xx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += wt * data[((y * w + xx) * 3) as usize + c];
                }
                tmp[((y * w + x) * 3) as usize + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let yy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += wt * tmp[((yy * w + x) * 3) as usize + c];
                }
                out[((y * w + x) * 3) as usize + c] = acc;
            }
        }
    }
    out
}

/// Rotate every RGB triple about the grey axis by `degrees`.
fn hue_rotate(data: &mut [f64], degrees: f64) {
    if degrees == 0.0 {
        return;
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let k = 1.0 / 3.0;
    let q = (1.0 / 3.0f64).sqrt();
    let a = c + (1.0 - c) * k;
    let b = k * (1.0 - c) - q * s;
    let d = k * (1.0 - c) + q * s;
    for px in data.chunks_mut(3) {
        let (r, g, bl) = (px[0], px[1], px[2]);
        px[0] = a * r + b * g + d * bl;
        px[1] = d * r + a * g + b * bl;
        px[2] = b * r + d * g + a * bl;
    }
}

/// A real scene of `class_id`.
pub fn make_toy_real(config: &ToyWorldConfig) -> Result<Image> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let layout = sample_layout(&mut rng, config.class_id, config.height, config.width);
    let data = render(&layout, &mut rng, config.height, config.width, config.grain);
    Image::from_clamped(config.height, config.width, 3, data)
}

/// Layout the generator uses for `config` (canonical or freshly sampled).
pub fn generated_layout(config: &ToyWorldConfig) -> (Layout, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let collapse = rng.random::<f64>() < config.mode_collapse;
    let fresh = sample_layout(&mut rng, config.class_id, config.height, config.width);
    let layout = if collapse {
        canonical_layout(config.class_id, config.height, config.width)
    } else {
        fresh
    };
    (layout, rng)
}

/// A degraded sample from the toy generator.
pub fn make_toy_generated(config: &ToyWorldConfig) -> Result<Image> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let (layout, mut rng) = generated_layout(config);
    let data = render(&layout, &mut rng, h, w, config.grain);
    let mut data = gaussian_blur(&data, h, w, config.max_blur_sigma * config.corruption);
    hue_rotate(&mut data, config.max_hue_degrees * config.corruption);
    Image::from_clamped(h, w, 3, data)
}

/// Independent real and generated samples sharing class and seed.
pub fn make_toy_pair(config: &ToyWorldConfig) -> Result<(Image, Image)> {
    Ok((make_toy_real(config)?, make_toy_generated(config)?))
}

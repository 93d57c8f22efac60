//! Image and per-pixel map types, plus 8-bit PNG input/output.
//!
//! Images store channels interleaved (`HWC`), values in `[0, 1]`. Bytes map
//! to floats as `v = byte / 255` and back as `round(v · 255)`.

use std::fs;
use std::io::Cursor;
use std::ops::Deref;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::dim(
                "image",
                format!("images must be at least {MIN_SIDE}×{MIN_SIDE}, got {height}×{width}"),
            ));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::dim(
                "image",
                format!("expected 1 or 3 channels, got {channels}"),
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(
                "image",
                format!(
                    "{height}×{width}×{channels} needs {} values, got {}",
                    height * width * channels,
                    data.len()
                ),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("image value {v} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from values that may stray outside `[0, 1]`; they are clamped.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Image::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub(crate) fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// `[1, C, H, W]` tensor for the network.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        Tensor::from_fn(vec![1, c, h, w], |i| {
            let ch = i / (h * w);
            let p = i % (h * w);
            self.data[p * c + ch]
        })
    }

    /// Shuffle pixel positions with a fixed permutation.
    pub fn permute_pixels(&self, perm: &[usize]) -> Result<Image> {
        if perm.len() != self.height * self.width {
            return Err(Error::dim(
                "permute_pixels",
                "permutation length differs from pixel count",
            ));
        }
        let c = self.channels;
        let mut data = vec![0.0; self.data.len()];
        for (dst, &src) in perm.iter().enumerate() {
            data[dst * c..(dst + 1) * c].copy_from_slice(&self.data[src * c..(src + 1) * c]);
        }
        Image::new(self.height, self.width, c, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_byte(v)).collect()
    }

    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
        Image::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let color = if self.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        };
        encode_png(self.width, self.height, color, &self.to_bytes())
    }

    pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
        let (h, w, c, raw) = decode_png(bytes, path)?;
        Image::from_bytes(h, w, c, &raw).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::decode_png(&bytes, path)
    }
}

pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let fail = |e: png::EncodingError| Error::Data(format!("png encoding failed: {e}"));
        let mut writer = enc.write_header().map_err(fail)?;
        writer.write_image_data(bytes).map_err(fail)?;
        writer.finish().map_err(fail)?;
    }
    Ok(out)
}

/// Decode to `(height, width, channels, bytes)`, channels 1 or 3. Alpha is dropped.
fn decode_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let fail = |e: png::DecodingError| Error::format(path, format!("png decoding failed: {e}"));
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(fail)?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::format(path, "image too large"))?
    ];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let src_c = info.color_type.samples();
    let keep = if src_c >= 3 { 3 } else { 1 };
    let data = if src_c == keep {
        buf
    } else {
        buf.chunks(src_c)
            .flat_map(|px| px[..keep].to_vec())
            .collect()
    };
    Ok((h, w, keep, data))
}

/// Single-channel float field.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn checked(op: &'static str, height: usize, width: usize, data: Vec<f64>) -> Result<Plane> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::dim(
                op,
                format!(
                    "{height}×{width} map needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.to_string()));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    fn unit_interval(
        op: &'static str,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Plane> {
        let p = Plane::checked(op, height, width, data)?;
        if let Some(v) = p.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("{op} value {v} outside [0, 1]")));
        }
        Ok(p)
    }

    /// 8-bit grayscale PNG of the field (values clamped to `[0, 1]`).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_byte(v)).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &bytes)
    }
}

macro_rules! plane_newtype {
    ($(#[$doc:meta])* $name:ident, $op:literal, $ctor:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Plane);

        impl $name {
            pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
                Plane::$ctor($op, height, width, data).map($name)
            }

            pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
                Self::new(height, width, vec![value; height * width])
            }

            pub fn into_data(self) -> Vec<f64> {
                self.0.data
            }
        }

        impl Deref for $name {
            type Target = Plane;
            fn deref(&self) -> &Plane {
                &self.0
            }
        }
    };
}

plane_newtype!(
    /// Unbounded finite scalar field (raw noise, before normalization).
    ScalarField,
    "scalar field",
    checked
);
plane_newtype!(
    /// Blend weights in `[0, 1]`: 1 takes the real source, 0 the generated one.
    MaskMap,
    "mask",
    unit_interval
);
plane_newtype!(
    /// Per-pixel probability that the pixel is an error, `P(E = 1 | x, i, j)`.
    ErrorMap,
    "error map",
    unit_interval
);

impl ErrorMap {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    /// Read a grayscale PNG written by [`ErrorMap::save_png`].
    pub fn load_png(path: &Path) -> Result<ErrorMap> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, w, c, raw) = decode_png(&bytes, path)?;
        let data = raw.chunks(c).map(|px| px[0] as f64 / 255.0).collect();
        ErrorMap::new(h, w, data)
    }
}

/// Binary per-pixel provenance: 1 where the pixel came from the real image,
/// 0 where it came from the generated image or an artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(
                "label map",
                format!(
                    "{height}×{width} map needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Contract("label values must be 0 or 1".into()));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        LabelMap::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub(crate) fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Fraction of pixels labelled real.
    pub fn real_fraction(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Single-channel PNG with values {0, 255}.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<LabelMap> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, w, c, raw) = decode_png(&bytes, path)?;
        let data = raw.chunks(c).map(|px| u8::from(px[0] >= 128)).collect();
        LabelMap::new(h, w, data)
    }
}

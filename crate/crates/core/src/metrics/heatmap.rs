use crate::error::{Error, Result};
use crate::image::{ErrorMap, Image};

/// Linear blue-to-red ramp: `P = 0` is pure blue, `P = 1` pure red.
pub fn error_color(p: f64) -> [f64; 3] {
    [p, 0.0, 1.0 - p]
}

/// `(1 - alpha) * image + alpha * error_color(P)`, per pixel.
///
/// Grayscale images are broadcast to three channels.
pub fn heatmap_overlay(image: &Image, errors: &ErrorMap, alpha: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let (h, w) = (image.height(), image.width());
    if errors.dims() != (h, w) {
        return Err(Error::dim(
            "heatmap_overlay",
            format!("image is {h}×{w}, error map is {:?}", errors.dims()),
        ));
    }
    let c = image.channels();
    let mut data = Vec::with_capacity(h * w * 3);
    for (i, &p) in errors.data().iter().enumerate() {
        let px = &image.data()[i * c..(i + 1) * c];
        let color = error_color(p);
        for k in 0..3 {
            let v = if c == 1 { px[0] } else { px[k] };
            data.push((1.0 - alpha) * v + alpha * color[k]);
        }
    }
    Image::from_clamped(h, w, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let img = Image::filled(8, 8, 3, 0.3).unwrap();
        let red = heatmap_overlay(&img, &ErrorMap::filled(8, 8, 1.0).unwrap(), 1.0).unwrap();
        assert!(red.data().chunks(3).all(|p| p == [1.0, 0.0, 0.0]));
        let same = heatmap_overlay(&img, &ErrorMap::filled(8, 8, 0.7).unwrap(), 0.0).unwrap();
        assert_eq!(same, img);
    }

    #[test]
    fn rejects_mismatch() {
        let img = Image::filled(8, 9, 1, 0.3).unwrap();
        assert!(heatmap_overlay(&img, &ErrorMap::filled(8, 8, 0.5).unwrap(), 0.5).is_err());
        assert!(heatmap_overlay(&img, &ErrorMap::filled(8, 9, 0.5).unwrap(), 1.5).is_err());
    }
}

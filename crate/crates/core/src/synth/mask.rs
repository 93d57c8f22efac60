use crate::error::{Error, Result};
use crate::image::{MaskMap, ScalarField};

/// Turn a `[0, 1]` noise field into blend weights.
///
/// The ramp is centred on `threshold`: `t = (field − threshold)/softness + ½`,
/// clamped to `[0, 1]` and passed through the cubic smoothstep, so
/// `alpha = ½` exactly at the threshold. `softness = 0` gives a hard step
/// (`alpha = 1` where `field ≥ threshold`).
pub fn field_to_alpha(field: &ScalarField, threshold: f64, softness: f64) -> Result<MaskMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if !softness.is_finite() || softness < 0.0 {
        return Err(Error::Parameter(format!(
            "softness must be a finite value ≥ 0, got {softness}"
        )));
    }
    let data = field
        .data()
        .iter()
        .map(|&v| {
            if softness == 0.0 {
                if v >= threshold {
                    1.0
                } else {
                    0.0
                }
            } else {
                let t = ((v - threshold) / softness + 0.5).clamp(0.0, 1.0);
                t * t * (3.0 - 2.0 * t)
            }
        })
        .collect();
    MaskMap::new(field.height(), field.width(), data)
}

//! Classic 2-D gradient (Perlin) noise on a square lattice.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ScalarField, MIN_SIDE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerlinParams {
    /// Lattice cells along each image axis for the first octave.
    pub lattice_cells: usize,
    /// Each further octave doubles the lattice density.
    pub octaves: usize,
    /// Amplitude ratio between consecutive octaves.
    pub persistence: f64,
}

impl Default for PerlinParams {
    fn default() -> Self {
        PerlinParams {
            lattice_cells: 4,
            octaves: 1,
            persistence: 0.5,
        }
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn check_dims(n: usize, m: usize, lattice_cells: usize) -> Result<()> {
    if lattice_cells < 2 {
        return Err(Error::Parameter(format!(
            "perlin lattice needs at least 2 cells, got {lattice_cells}"
        )));
    }
    if n < MIN_SIDE || m < MIN_SIDE {
        return Err(Error::Parameter(format!(
            "perlin field must be at least {MIN_SIDE}×{MIN_SIDE}, got {n}×{m}"
        )));
    }
    Ok(())
}

/// Unnormalized single-octave noise. Pixel `(i, j)` sits at lattice
/// coordinate `(i·cells/n, j·cells/m)`, so lattice nodes fall on pixels
/// whenever the side is a multiple of the cell count; the value there is 0.
pub fn perlin_raw(n: usize, m: usize, lattice_cells: usize, seed: u64) -> Result<ScalarField> {
    check_dims(n, m, lattice_cells)?;
    let nodes = lattice_cells + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gradients: Vec<(f64, f64)> = (0..nodes * nodes)
        .map(|_| {
            let a = rng.random_range(0.0..TAU);
            (a.cos(), a.sin())
        })
        .collect();
    let grad = |gy: usize, gx: usize| gradients[gy * nodes + gx];

    let mut data = Vec::with_capacity(n * m);
    for i in 0..n {
        let v = (i * lattice_cells) as f64 / n as f64;
        let cy = (v.floor() as usize).min(lattice_cells - 1);
        let fy = v - cy as f64;
        for j in 0..m {
            let u = (j * lattice_cells) as f64 / m as f64;
            let cx = (u.floor() as usize).min(lattice_cells - 1);
            let fx = u - cx as f64;
            let dot = |gy: usize, gx: usize, oy: f64, ox: f64| {
                let (dx, dy) = grad(gy, gx);
                dx * ox + dy * oy
            };
            let n00 = dot(cy, cx, fy, fx);
            let n01 = dot(cy, cx + 1, fy, fx - 1.0);
            let n10 = dot(cy + 1, cx, fy - 1.0, fx);
            let n11 = dot(cy + 1, cx + 1, fy - 1.0, fx - 1.0);
            let sx = fade(fx);
            let top = lerp(n00, n01, sx);
            let bottom = lerp(n10, n11, sx);
            data.push(lerp(top, bottom, fade(fy)));
        }
    }
    ScalarField::new(n, m, data)
}

/// Affine map of a field onto `[0, 1]`. A constant field maps to 0.5.
pub fn normalize(field: &ScalarField) -> ScalarField {
    let lo = field.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = field
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
        .collect();
    ScalarField::new(field.height(), field.width(), data).expect("same dims as a valid field")
}

/// Single-octave noise normalized to `[0, 1]`.
pub fn perlin_field(n: usize, m: usize, lattice_cells: usize, seed: u64) -> Result<ScalarField> {
    Ok(normalize(&perlin_raw(n, m, lattice_cells, seed)?))
}

/// Fractal sum of octaves, normalized to `[0, 1]`. Octave `o` uses
/// `lattice_cells · 2^o` cells and seed `seed + o`.
pub fn perlin_octaves(n: usize, m: usize, params: &PerlinParams, seed: u64) -> Result<ScalarField> {
    if params.octaves == 0 {
        return Err(Error::Parameter("perlin needs at least one octave".into()));
    }
    let mut acc = vec![0.0; n * m];
    let mut amplitude = 1.0;
    for o in 0..params.octaves {
        let layer = perlin_raw(n, m, params.lattice_cells << o, seed.wrapping_add(o as u64))?;
        for (a, v) in acc.iter_mut().zip(layer.data()) {
            *a += amplitude * v;
        }
        amplitude *= params.persistence;
    }
    Ok(normalize(&ScalarField::new(n, m, acc)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_nodes_are_zero() {
        for seed in 0..5 {
            let f = perlin_raw(64, 48, 4, seed).unwrap();
            for gy in 0..4 {
                for gx in 0..4 {
                    assert_eq!(f.get(gy * 16, gx * 12), 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_lattice() {
        assert!(matches!(
            perlin_field(16, 16, 1, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn normalized_range_is_unit() {
        let f = perlin_field(32, 32, 4, 9).unwrap();
        let lo = f.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn octaves_keep_base_nodes_at_zero_before_normalization() {
        // the coarse lattice is a sub-lattice of every finer one
        let p = PerlinParams {
            lattice_cells: 2,
            octaves: 3,
            persistence: 0.5,
        };
        let f = perlin_octaves(32, 32, &p, 3).unwrap();
        assert_eq!(f.dims(), (32, 32));
    }
}

//! Batch synthesis of collage training sets and the JSON Lines manifest.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collage::{apply_circular_artifact, collage, CollageSample, Provenance};
use super::mask::field_to_alpha;
use super::perlin::{perlin_octaves, PerlinParams};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Real,
    Generated,
    Collage,
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: String,
    pub label: Option<String>,
    pub class: Option<String>,
    pub tag: Tag,
    pub seed: u64,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("manifest records always serialize");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Resolve a manifest-relative path.
pub fn manifest_path(manifest: &Path, relative: &str) -> PathBuf {
    manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(relative)
}

/// An image available for collaging.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceImage {
    pub id: String,
    pub class: Option<String>,
    pub image: Image,
}

/// Load every record's image from a manifest as a collage source.
pub fn load_sources(manifest: &Path) -> Result<Vec<SourceImage>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let image = Image::load_png(&manifest_path(manifest, &r.image))?;
            Ok(SourceImage {
                id: r.image,
                class: r.class,
                image,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollageParams {
    pub perlin: PerlinParams,
    pub threshold: f64,
    pub softness: f64,
    /// Inclusive range for the number of artifact discs per collage.
    pub artifacts: (usize, usize),
    pub artifact_radius: (usize, usize),
    /// Pair real and generated images of the same class when classes exist.
    pub within_class: bool,
}

impl Default for CollageParams {
    fn default() -> Self {
        CollageParams {
            perlin: PerlinParams::default(),
            threshold: 0.5,
            softness: 0.1,
            artifacts: (0, 3),
            artifact_radius: (3, 8),
            within_class: true,
        }
    }
}

fn classes(sources: &[SourceImage]) -> BTreeSet<String> {
    sources.iter().filter_map(|s| s.class.clone()).collect()
}

/// Build `count` collages in memory. Sample `i` depends only on
/// `seed + i`, so the result is independent of thread count.
pub fn synthesize_collages(
    real: &[SourceImage],
    generated: &[SourceImage],
    count: usize,
    params: &CollageParams,
    seed: u64,
) -> Result<Vec<CollageSample>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Data(
            "collage synthesis needs real and generated sources".into(),
        ));
    }
    let pair_by_class =
        params.within_class && real.iter().chain(generated).all(|s| s.class.is_some());
    if pair_by_class {
        let (rc, gc) = (classes(real), classes(generated));
        let missing: Vec<String> = rc.symmetric_difference(&gc).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "within-class pairing needs both real and generated images for classes: {}",
                missing.join(", ")
            )));
        }
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let sample_seed = seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let r = &real[rng.random_range(0..real.len())];
            let candidates: Vec<&SourceImage> = if pair_by_class {
                generated.iter().filter(|g| g.class == r.class).collect()
            } else {
                generated.iter().collect()
            };
            let g = candidates[rng.random_range(0..candidates.len())];
            let (h, w) = (r.image.height(), r.image.width());
            let field = perlin_octaves(h, w, &params.perlin, rng.random())?;
            let alpha = field_to_alpha(&field, params.threshold, params.softness)?;
            let mut sample = collage(&r.image, &g.image, &alpha)?;
            let n_artifacts = rng.random_range(params.artifacts.0..=params.artifacts.1);
            for _ in 0..n_artifacts {
                sample = apply_circular_artifact(
                    &sample,
                    &r.image,
                    params.artifact_radius,
                    rng.random(),
                )?;
            }
            sample.provenance = Provenance {
                seed: sample_seed,
                real_id: Some(r.id.clone()),
                generated_id: Some(g.id.clone()),
                class: r.class.clone(),
            };
            Ok(sample)
        })
        .collect()
}

/// Write collages as `<dir>/collage/NNNNNN.png` plus `NNNNNN_label.png`
/// and the manifest `<dir>/<manifest_name>`. Returns the records.
pub fn write_collage_set(
    samples: &[CollageSample],
    out_dir: &Path,
    manifest_name: &str,
) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if !samples.is_empty() {
        let sub = out_dir.join("collage");
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let records: Vec<ManifestRecord> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let image = format!("collage/{i:06}.png");
            let label = format!("collage/{i:06}_label.png");
            s.image.save_png(&out_dir.join(&image))?;
            s.label.save_png(&out_dir.join(&label))?;
            Ok(ManifestRecord {
                image,
                label: Some(label),
                class: s.provenance.class.clone(),
                tag: Tag::Collage,
                seed: s.provenance.seed,
            })
        })
        .collect::<Result<_>>()?;
    write_manifest(&out_dir.join(manifest_name), &records)?;
    Ok(records)
}

/// Synthesize and write a collage training set.
pub fn synthesize_training_set(
    real: &[SourceImage],
    generated: &[SourceImage],
    count: usize,
    params: &CollageParams,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    let samples = synthesize_collages(real, generated, count, params, seed)?;
    write_collage_set(&samples, out_dir, "train.jsonl")
}

/// Image plus ground truth loaded from a collage manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledImage {
    pub id: String,
    pub image: Image,
    pub label: LabelMap,
}

pub fn load_labelled(manifest: &Path) -> Result<Vec<LabelledImage>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let label_rel = r.label.as_deref().ok_or_else(|| {
                Error::Data(format!("manifest entry {} has no label map", r.image))
            })?;
            let image = Image::load_png(&manifest_path(manifest, &r.image))?;
            let label = LabelMap::load_png(&manifest_path(manifest, label_rel))?;
            if label.dims() != (image.height(), image.width()) {
                return Err(Error::Data(format!(
                    "label map of {} has the wrong size",
                    r.image
                )));
            }
            Ok(LabelledImage {
                id: r.image,
                image,
                label,
            })
        })
        .collect()
}

impl From<CollageSample> for LabelledImage {
    fn from(s: CollageSample) -> Self {
        LabelledImage {
            id: format!("collage-{}", s.provenance.seed),
            image: s.image,
            label: s.label,
        }
    }
}

//! Whole toy datasets: numbered real and generated scenes with manifests.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{write_manifest, ManifestRecord, SourceImage, Tag};
use super::toy::{make_toy_generated, make_toy_real, ToyWorldConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySetConfig {
    pub height: usize,
    pub width: usize,
    pub classes: u32,
    pub real_count: usize,
    pub generated_count: usize,
    /// Generated sample `i` uses `corruption_levels[(i / classes) % len]`.
    pub corruption_levels: Vec<f64>,
    pub mode_collapse: f64,
    pub grain: f64,
    pub max_blur_sigma: f64,
    pub max_hue_degrees: f64,
}

impl Default for ToySetConfig {
    fn default() -> Self {
        let scene = ToyWorldConfig::default();
        ToySetConfig {
            height: scene.height,
            width: scene.width,
            classes: 4,
            real_count: 200,
            generated_count: 200,
            corruption_levels: vec![0.25, 0.5, 0.75, 1.0],
            mode_collapse: 0.0,
            grain: scene.grain,
            max_blur_sigma: scene.max_blur_sigma,
            max_hue_degrees: scene.max_hue_degrees,
        }
    }
}

/// Mix a base seed with a component id and index (splitmix64 finalizer).
pub fn derive_seed(base: u64, component: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(component.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn class_name(class_id: u32) -> String {
    format!("class{class_id}")
}

impl ToySetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Config("toy set needs at least one class".into()));
        }
        if self.corruption_levels.is_empty() {
            return Err(Error::Config("corruption_levels must not be empty".into()));
        }
        for &c in &self.corruption_levels {
            self.scene(0, c, 0).validate()?;
        }
        self.scene(0, 0.0, 0).validate()
    }

    fn scene(&self, class_id: u32, corruption: f64, seed: u64) -> ToyWorldConfig {
        ToyWorldConfig {
            height: self.height,
            width: self.width,
            corruption,
            mode_collapse: self.mode_collapse,
            class_id,
            seed,
            grain: self.grain,
            max_blur_sigma: self.max_blur_sigma,
            max_hue_degrees: self.max_hue_degrees,
        }
    }

    /// Scene settings and seed of the `index`-th sample of `tag`.
    pub fn sample(&self, tag: Tag, index: usize, seed: u64) -> ToyWorldConfig {
        let class_id = (index % self.classes as usize) as u32;
        let level = index / self.classes as usize % self.corruption_levels.len();
        let component = match tag {
            Tag::Real => 1,
            Tag::Generated => 2,
            Tag::Collage => 3,
        };
        let corruption = if tag == Tag::Generated {
            self.corruption_levels[level]
        } else {
            0.0
        };
        self.scene(
            class_id,
            corruption,
            derive_seed(seed, component, index as u64),
        )
    }
}

fn render(config: &ToySetConfig, tag: Tag, count: usize, seed: u64) -> Result<Vec<SourceImage>> {
    let prefix = if tag == Tag::Real {
        "real"
    } else {
        "generated"
    };
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = config.sample(tag, i, seed);
            let image = match tag {
                Tag::Real => make_toy_real(&scene)?,
                _ => make_toy_generated(&scene)?,
            };
            Ok(SourceImage {
                id: format!("{prefix}/{i:06}.png"),
                class: Some(class_name(scene.class_id)),
                image,
            })
        })
        .collect()
}

/// Real and generated toy images in memory. Ids are the paths
/// [`write_toy_set`] would use.
pub fn toy_sources(
    config: &ToySetConfig,
    seed: u64,
) -> Result<(Vec<SourceImage>, Vec<SourceImage>)> {
    config.validate()?;
    Ok((
        render(config, Tag::Real, config.real_count, seed)?,
        render(config, Tag::Generated, config.generated_count, seed)?,
    ))
}

fn write_sources(
    config: &ToySetConfig,
    sources: &[SourceImage],
    tag: Tag,
    seed: u64,
    out_dir: &Path,
    manifest_name: &str,
) -> Result<Vec<ManifestRecord>> {
    if let Some(first) = sources.first() {
        let sub = out_dir
            .join(&first.id)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let records: Vec<ManifestRecord> = sources
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            s.image.save_png(&out_dir.join(&s.id))?;
            Ok(ManifestRecord {
                image: s.id.clone(),
                label: None,
                class: s.class.clone(),
                tag,
                seed: config.sample(tag, i, seed).seed,
            })
        })
        .collect::<Result<_>>()?;
    write_manifest(&out_dir.join(manifest_name), &records)?;
    Ok(records)
}

/// Write `real/`, `generated/`, `real.jsonl` and `generated.jsonl` under
/// `out_dir`, returning the in-memory sources as well.
pub fn write_toy_set(
    config: &ToySetConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<SourceImage>, Vec<SourceImage>)> {
    let (real, generated) = toy_sources(config, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_sources(config, &real, Tag::Real, seed, out_dir, "real.jsonl")?;
    write_sources(
        config,
        &generated,
        Tag::Generated,
        seed,
        out_dir,
        "generated.jsonl",
    )?;
    Ok((real, generated))
}

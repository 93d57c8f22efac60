use super::features::FeatureExtractor;
use super::frechet::{frechet_distance, gaussian_stats, GaussianStats};
use super::pd::PdScore;
use super::rank::Split;
use crate::error::{Error, Result};
use crate::image::Image;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub index: usize,
    pub mean_pd: f64,
    pub frechet: f64,
    pub members: Vec<String>,
}

/// Fréchet distance of every split against one reference set, plus a
/// same-size random subset as baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub splits: Vec<SplitEntry>,
    pub random_baseline: f64,
}

impl SplitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report") + "\n"
    }

    /// Plain-text table, one row per split.
    pub fn table(&self) -> String {
        let mut out = format!("{:>5}  {:>8}  {:>12}\n", "split", "mean_pd", "frechet");
        for s in &self.splits {
            out += &format!("{:>5}  {:>8.4}  {:>12.4}\n", s.index, s.mean_pd, s.frechet);
        }
        out += &format!("{:>5}  {:>8}  {:>12.4}\n", "rand", "", self.random_baseline);
        out
    }
}

/// Score every split's features against `reference`.
///
/// `features` maps sample id to its feature vector and must cover every split
/// member. The baseline draws one split's worth of ids uniformly without
/// replacement, seeded.
pub fn evaluate_splits(
    splits: &[Split],
    features: &BTreeMap<String, Vec<f64>>,
    reference: &GaussianStats,
    seed: u64,
) -> Result<SplitReport> {
    let lookup = |id: &str| {
        features
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no features for sample `{id}`")))
    };
    let mut entries = Vec::with_capacity(splits.len());
    for s in splits {
        if s.members.len() < 2 {
            return Err(Error::Data(format!(
                "split {} has {} members; Fréchet distance needs at least 2",
                s.index,
                s.members.len()
            )));
        }
        let feats = s
            .members
            .iter()
            .map(|m| lookup(&m.id))
            .collect::<Result<Vec<_>>>()?;
        entries.push(SplitEntry {
            index: s.index,
            mean_pd: s.mean_pd(),
            frechet: frechet_distance(&gaussian_stats(&feats)?, reference)?,
            members: s.members.iter().map(|m| m.id.clone()).collect(),
        });
    }
    let ids: Vec<&String> = splits
        .iter()
        .flat_map(|s| s.members.iter().map(|m| &m.id))
        .collect();
    let size = splits.first().map_or(0, |s| s.members.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, ids.len(), size).into_vec();
    picked.sort_unstable();
    let feats = picked
        .iter()
        .map(|&i| lookup(ids[i]))
        .collect::<Result<Vec<_>>>()?;
    let random_baseline = frechet_distance(&gaussian_stats(&feats)?, reference)?;
    Ok(SplitReport {
        splits: entries,
        random_baseline,
    })
}

/// [`evaluate_splits`] with features computed by `extractor` from images.
pub fn evaluate_split_images(
    splits: &[Split],
    images: &BTreeMap<String, Image>,
    reference: &[Image],
    extractor: &dyn FeatureExtractor,
    seed: u64,
) -> Result<SplitReport> {
    let ids: Vec<&String> = images.keys().collect();
    let imgs: Vec<Image> = images.values().cloned().collect();
    let feats = extractor.extract_all(&imgs)?;
    let features = ids.into_iter().cloned().zip(feats).collect();
    let reference = gaussian_stats(&extractor.extract_all(reference)?)?;
    evaluate_splits(splits, &features, &reference, seed)
}

/// Score table with header `id,class,pd`; a missing class is an empty field.
pub fn write_scores(path: &Path, scores: &[PdScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["id", "class", "pd"])
        .map_err(|e| csv_error(path, e))?;
    for s in scores {
        let value = s.value.to_string();
        w.write_record([
            s.id.as_str(),
            s.class.as_deref().unwrap_or(""),
            value.as_str(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<PdScore>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header != vec!["id", "class", "pd"] {
        return Err(Error::format(
            path,
            format!("expected header id,class,pd, got {header:?}"),
        ));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let value: f64 = rec[2]
            .parse()
            .map_err(|_| Error::format(path, format!("bad pd value `{}`", &rec[2])))?;
        let class = (!rec[1].is_empty()).then(|| rec[1].to_string());
        out.push(PdScore::new(&rec[0], class, value)?);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

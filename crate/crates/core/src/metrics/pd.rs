use crate::error::{Error, Result};
use crate::image::{ErrorMap, MaskMap};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Mean error probability of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdScore {
    pub id: String,
    pub class: Option<String>,
    pub value: f64,
}

impl PdScore {
    pub fn new(id: impl Into<String>, class: Option<String>, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Contract(format!("PD {value} outside [0, 1]")));
        }
        Ok(PdScore {
            id: id.into(),
            class,
            value,
        })
    }
}

/// Mean of all pixel probabilities.
pub fn pd_score(errors: &ErrorMap) -> f64 {
    errors.mean()
}

/// Weighted mean of the pixel probabilities, `Σ w·P / Σ w`.
pub fn region_pd(errors: &ErrorMap, region: &MaskMap) -> Result<f64> {
    if errors.dims() != region.dims() {
        return Err(Error::dim(
            "region_pd",
            format!(
                "error map {:?} vs region {:?}",
                errors.dims(),
                region.dims()
            ),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, w) in errors.data().iter().zip(region.data()) {
        num += w * p;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::Data("region selects no pixels".into()));
    }
    Ok(num / den)
}

/// Mean score per class. Unlabelled scores are an error.
pub fn class_means(scores: &[PdScore]) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in scores {
        let class = s
            .class
            .as_ref()
            .ok_or_else(|| Error::Data(format!("score for `{}` has no class", s.id)))?;
        let e = acc.entry(class.clone()).or_default();
        e.0 += s.value;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(c, (t, n))| (c, t / n as f64))
        .collect())
}

/// Per-class `generated − real` mean PD, which cancels how hard each class is
/// to judge on its own.
pub fn class_offset_pd(
    generated: &BTreeMap<String, f64>,
    real: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    if generated.keys().ne(real.keys()) {
        let only = |a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>| {
            a.keys()
                .filter(|k| !b.contains_key(*k))
                .cloned()
                .collect::<Vec<_>>()
        };
        return Err(Error::Data(format!(
            "class sets differ: only generated {:?}, only real {:?}",
            only(generated, real),
            only(real, generated)
        )));
    }
    Ok(generated
        .iter()
        .map(|(c, g)| (c.clone(), g - real[c]))
        .collect())
}

use crate::error::{Error, Result};
use crate::image::{ErrorMap, LabelMap};
use crate::metrics::auc;
use crate::net::Model;
use crate::synth::LabelledImage;
use rayon::prelude::*;
use serde::Serialize;

/// Pixel-level detection quality. Errors (`T = 0`) are the positive class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionReport {
    /// Area under the ROC curve over all pixels pooled.
    pub auc: f64,
    /// Per-image AUC; `None` for images whose label holds a single class.
    pub per_image_auc: Vec<Option<f64>>,
    pub precision: f64,
    pub recall: f64,
}

/// Score `samples` with `model` and compare against their labels.
pub fn evaluate_detection(model: &Model, samples: &[LabelledImage]) -> Result<DetectionReport> {
    let maps = samples
        .par_iter()
        .map(|s| model.forward(&s.image))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<&LabelMap> = samples.iter().map(|s| &s.label).collect();
    detection_report(&maps, &labels)
}

/// Compare predicted error maps against labels, pairwise.
pub fn detection_report(maps: &[ErrorMap], labels: &[&LabelMap]) -> Result<DetectionReport> {
    if maps.len() != labels.len() {
        return Err(Error::dim(
            "detection_report",
            format!("{} predictions for {} labels", maps.len(), labels.len()),
        ));
    }
    let mut scores = Vec::new();
    let mut positive = Vec::new();
    let mut per_image_auc = Vec::with_capacity(maps.len());
    for (i, (m, label)) in maps.iter().zip(labels).enumerate() {
        if m.dims() != label.dims() {
            return Err(Error::dim(
                "detection_report",
                format!(
                    "image {i}: prediction {:?} vs label {:?}",
                    m.dims(),
                    label.dims()
                ),
            ));
        }
        let pos: Vec<bool> = label.data().iter().map(|&t| t == 0).collect();
        per_image_auc.push(auc(m.data(), &pos).ok());
        scores.extend_from_slice(m.data());
        positive.extend(pos);
    }
    let auc = auc(&scores, &positive)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &e) in scores.iter().zip(&positive) {
        match (p >= 0.5, e) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| {
        if a + b == 0 {
            0.0
        } else {
            a as f64 / (a + b) as f64
        }
    };
    Ok(DetectionReport {
        auc,
        per_image_auc,
        precision: ratio(tp, fp),
        recall: ratio(tp, fneg),
    })
}

use crate::error::{Error, Result};
use crate::image::{ErrorMap, LabelMap, MaskMap};
use crate::numeric::{ParamKind, Parameter, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// Expected misclassification cost; accepts probabilities in `[0, 1]`.
    Linear,
    /// Negative log-likelihood; needs probabilities in `(0, 1)`.
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Cost of flagging a real pixel as an error.
    pub lambda: f64,
    /// Cost of missing an error on a generated pixel.
    pub gamma: f64,
    pub l2_coeff: f64,
    pub form: LossForm,
    pub normalize_by_area: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 5.0,
            gamma: 1.0,
            l2_coeff: 0.03,
            form: LossForm::Linear,
            normalize_by_area: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.gamma > 0.0 && self.l2_coeff >= 0.0)
            || !self.l2_coeff.is_finite()
        {
            return Err(Error::Config(format!(
                "loss needs lambda > 0, gamma > 0 and l2_coeff ≥ 0, got {}, {}, {}",
                self.lambda, self.gamma, self.l2_coeff
            )));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to each probability.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Weighted per-pixel detection loss.
///
/// Real pixels (`T = 1`) cost `lambda` times the penalty for predicting an
/// error, generated pixels cost `gamma` times the penalty for predicting none.
/// Linear form: the penalties are `P` and `1 − P`. Log form: `−ln(1 − P)` and
/// `−ln P`. `weight` defaults to all ones.
pub fn pixel_loss(
    errors: &ErrorMap,
    label: &LabelMap,
    weight: Option<&MaskMap>,
    cfg: &LossConfig,
) -> Result<PixelLoss> {
    if errors.dims() != label.dims() {
        return Err(Error::dim(
            "pixel_loss",
            format!("error map {:?} vs label {:?}", errors.dims(), label.dims()),
        ));
    }
    if let Some(w) = weight {
        if w.dims() != label.dims() {
            return Err(Error::dim(
                "pixel_loss",
                format!("weight {:?} vs label {:?}", w.dims(), label.dims()),
            ));
        }
    }
    if cfg.form == LossForm::Log {
        if let Some(p) = errors.data().iter().find(|&&p| p <= 0.0 || p >= 1.0) {
            return Err(Error::Contract(format!(
                "log-form loss needs probabilities strictly inside (0, 1), got {p}"
            )));
        }
    }
    let scale = if cfg.normalize_by_area {
        1.0 / errors.data().len() as f64
    } else {
        1.0
    };
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(errors.data().len());
    for (k, (&p, &t)) in errors.data().iter().zip(label.data()).enumerate() {
        let w = weight.map_or(1.0, |m| m.data()[k]);
        let (v, d) = match (cfg.form, t) {
            (LossForm::Linear, 1) => (cfg.lambda * p, cfg.lambda),
            (LossForm::Linear, _) => (cfg.gamma * (1.0 - p), -cfg.gamma),
            (LossForm::Log, 1) => (-cfg.lambda * (1.0 - p).ln(), cfg.lambda / (1.0 - p)),
            (LossForm::Log, _) => (-cfg.gamma * p.ln(), -cfg.gamma / p),
        };
        value += w * v;
        grad.push(w * d * scale);
    }
    Ok(PixelLoss {
        value: value * scale,
        grad,
    })
}

/// `coeff · Σ w²` over weight tensors; biases and gains are not penalized.
pub fn l2_penalty(params: &[Parameter], coeff: f64) -> f64 {
    coeff
        * params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.sum_squares())
            .sum::<f64>()
}

/// Gradient of [`l2_penalty`] for each parameter.
pub fn l2_gradient(params: &[Parameter], coeff: f64) -> Vec<Tensor> {
    params
        .iter()
        .map(|p| match p.kind {
            ParamKind::Weight => p.value.map(|w| 2.0 * coeff * w),
            _ => Tensor::zeros(p.value.shape().to_vec()),
        })
        .collect()
}

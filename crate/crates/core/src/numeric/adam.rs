use super::param::Parameter;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
///
/// Moment buffers are created lazily on the first step and are matched to
/// parameters by position; later steps check that names and shapes still line up.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Moments>,
}

#[derive(Clone, Debug)]
struct Moments {
    name: String,
    first: Vec<f64>,
    second: Vec<f64>,
    shape: Vec<usize>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(2e-4)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers for parameter `index`, if initialized.
    pub fn moments(&self, index: usize) -> Option<(&[f64], &[f64])> {
        self.moments
            .get(index)
            .map(|m| (m.first.as_slice(), m.second.as_slice()))
    }

    /// Apply one update. Nothing is modified if any gradient holds a NaN.
    pub fn step(&mut self, params: &mut [Parameter], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                "adam_step",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!(
                        "parameter `{}` is {:?} but its gradient is {:?}",
                        p.name,
                        p.value.shape(),
                        g.shape()
                    ),
                ));
            }
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(p.name.clone()));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    first: vec![0.0; p.value.len()],
                    second: vec![0.0; p.value.len()],
                    shape: p.value.shape().to_vec(),
                })
                .collect();
        } else if self.moments.len() != params.len()
            || self
                .moments
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.name != p.name || m.shape != p.value.shape())
        {
            return Err(Error::Contract(
                "parameter set changed between Adam steps".into(),
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            for (((w, &gv), mv), vv) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(&mut m.first)
                .zip(&mut m.second)
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

//! Asymmetric loss over ternary labels.
//!
//! For a presence probability `ŷ`:
//!
//! ```text
//! present:  −(1 − ŷ)^γ₊ · ln ŷ
//! absent:   −ŷ_δ^γ₋ · ln(1 − ŷ_δ),   ŷ_δ = max(ŷ − δ, 0)
//! unknown:  0
//! ```
//!
//! [`batch_loss`] evaluates the same terms from the logit difference
//! `x = p⁺ − p⁻` (so `ŷ = σ(x)`) to stay finite when `ŷ` rounds to 0 or 1.

use serde::{Deserialize, Serialize};

use crate::aggregation::PredictionPair;
use crate::data::{Label, LabelMatrix};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub delta: f64,
    /// Treat the focusing weights as constants when differentiating.
    pub focal_detach: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma_plus: 1.0,
            gamma_minus: 2.0,
            delta: 0.05,
            focal_detach: false,
        }
    }
}

impl LossConfig {
    /// Plain binary cross-entropy.
    pub fn bce() -> Self {
        Self {
            gamma_plus: 0.0,
            gamma_minus: 0.0,
            delta: 0.0,
            focal_detach: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_plus >= 0.0 && self.gamma_minus >= 0.0) {
            return Err(Error::Config("focusing exponents must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("shift δ = {} outside [0, 1)", self.delta)));
        }
        Ok(())
    }
}

fn check_probability(y_hat: f64) -> Result<()> {
    if y_hat > 0.0 && y_hat < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("prediction {y_hat} outside (0, 1)")))
    }
}

/// `base^exp` with `0^0 = 1`.
fn pow(base: f64, exp: f64) -> f64 {
    if exp == 0.0 {
        1.0
    } else {
        base.powf(exp)
    }
}

/// `exp · base^(exp − 1)`, the derivative of `base^exp`, zero when `exp = 0`.
fn dpow(base: f64, exp: f64) -> f64 {
    if exp == 0.0 {
        0.0
    } else if exp == 1.0 {
        1.0
    } else {
        exp * base.powf(exp - 1.0)
    }
}

pub fn asl_term(y: Label, y_hat: f64, cfg: &LossConfig) -> Result<f64> {
    check_probability(y_hat)?;
    Ok(match y {
        Label::Unknown => 0.0,
        Label::Present => -pow(1.0 - y_hat, cfg.gamma_plus) * y_hat.ln(),
        Label::Absent => {
            let shifted = (y_hat - cfg.delta).max(0.0);
            if shifted == 0.0 {
                0.0
            } else {
                -pow(shifted, cfg.gamma_minus) * (-shifted).ln_1p()
            }
        }
    })
}

/// `d asl_term / d ŷ`. At the clamp kink `ŷ = δ` the gradient is taken as 0.
pub fn asl_grad(y: Label, y_hat: f64, cfg: &LossConfig) -> Result<f64> {
    check_probability(y_hat)?;
    Ok(match y {
        Label::Unknown => 0.0,
        Label::Present => {
            let q = 1.0 - y_hat;
            let focus = if cfg.focal_detach {
                0.0
            } else {
                dpow(q, cfg.gamma_plus) * y_hat.ln()
            };
            focus - pow(q, cfg.gamma_plus) / y_hat
        }
        Label::Absent => {
            let shifted = y_hat - cfg.delta;
            if shifted <= 0.0 {
                0.0
            } else {
                let focus = if cfg.focal_detach {
                    0.0
                } else {
                    -dpow(shifted, cfg.gamma_minus) * (-shifted).ln_1p()
                };
                focus + pow(shifted, cfg.gamma_minus) / (1.0 - shifted)
            }
        }
    })
}

/// Loss and `d loss / d x` for the logit difference `x` with `ŷ = σ(x)`.
pub fn asl_from_logit(y: Label, x: f64, cfg: &LossConfig) -> (f64, f64) {
    match y {
        Label::Unknown => (0.0, 0.0),
        Label::Present => {
            // −ln σ(x) = softplus(−x), 1 − σ(x) = σ(−x)
            let nll = softplus(-x);
            let q = sigmoid(-x);
            let p = sigmoid(x);
            let weight = pow(q, cfg.gamma_plus);
            let loss = weight * nll;
            let focus = if cfg.focal_detach {
                0.0
            } else {
                dpow(q, cfg.gamma_plus) * nll
            };
            // dq/dx = −p·q, d nll/dx = −q
            let grad = -q * (p * focus + weight);
            (loss, grad)
        }
        Label::Absent => {
            let p = sigmoid(x);
            let shifted = p - cfg.delta;
            if shifted <= 0.0 {
                return (0.0, 0.0);
            }
            // 1 − ŷ_δ = σ(−x) + δ, computed without cancellation
            let one_minus = sigmoid(-x) + cfg.delta;
            let log_term = -one_minus.ln();
            let weight = pow(shifted, cfg.gamma_minus);
            let loss = weight * log_term;
            let focus = if cfg.focal_detach {
                0.0
            } else {
                dpow(shifted, cfg.gamma_minus) * log_term
            };
            let dloss_dyhat = focus + weight / one_minus;
            (loss, dloss_dyhat * p * sigmoid(-x))
        }
    }
}

/// Gradient of the loss with respect to one image's aggregated logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub grads: Vec<PairGrad>,
}

/// Loss and logit gradients of one image.
pub fn image_loss(pair: &PredictionPair, labels: &[Label], cfg: &LossConfig) -> Result<(f64, PairGrad)> {
    let n = pair.num_classes();
    if labels.len() != n || pair.negative.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a prediction over {n} classes",
            labels.len()
        )));
    }
    let mut total = 0.0;
    let mut grad = PairGrad {
        positive: vec![0.0; n],
        negative: vec![0.0; n],
    };
    for (j, &y) in labels.iter().enumerate() {
        let (l, g) = asl_from_logit(y, pair.positive[j] - pair.negative[j], cfg);
        total += l;
        grad.positive[j] = g;
        grad.negative[j] = -g;
    }
    Ok((total, grad))
}

/// Summed loss over a batch, with gradients for every aggregated logit.
///
/// `labels` row `i` belongs to `preds[i]`.
pub fn batch_loss(preds: &[PredictionPair], labels: &LabelMatrix, cfg: &LossConfig) -> Result<BatchLoss> {
    if preds.len() != labels.num_images() {
        return Err(Error::Shape(format!(
            "{} predictions for {} label rows",
            preds.len(),
            labels.num_images()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (i, pair) in preds.iter().enumerate() {
        let (l, g) = image_loss(pair, labels.row(i), cfg)?;
        total += l;
        grads.push(g);
    }
    Ok(BatchLoss { total, grads })
}

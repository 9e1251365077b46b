//! Focal loss over softmax outputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities below this are clamped before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FocalOutput {
    /// Batch-mean loss.
    pub loss: f64,
    /// Gradient of `loss` with respect to the pre-softmax logits.
    pub grad_logits: Tensor,
    /// Samples whose target probability hit [`PROB_FLOOR`].
    pub floor_events: usize,
}

/// `−mean_i α_{y_i} (1 − p_i)^γ log p_i` with `p_i` the softmax probability
/// of the true class.
pub fn focal_loss(probs: &Tensor, labels: &[usize], alpha: &[f64], gamma: f64) -> Result<FocalOutput> {
    if probs.rank() != 2 {
        return Err(Error::shape(format!(
            "focal loss expects N×C probabilities, got {:?}",
            probs.shape()
        )));
    }
    let (n, c) = (probs.dim(0), probs.dim(1));
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    if alpha.len() != c {
        return Err(Error::shape(format!("{} alpha weights for {c} classes", alpha.len())));
    }
    if !(gamma >= 0.0) {
        return Err(Error::param(format!("gamma {gamma} must be non-negative")));
    }
    let mut grad = vec![0.0; n * c];
    let mut total = 0.0;
    let mut floor_events = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::param(format!("label {y} out of range for {c} classes")));
        }
        let row = &probs.data()[i * c..(i + 1) * c];
        let p = row[y];
        let a = alpha[y];
        let q = 1.0 - p;
        let clamped = if p < PROB_FLOOR {
            floor_events += 1;
            PROB_FLOOR
        } else {
            p
        };
        let log_p = clamped.ln();
        total -= a * q.powf(gamma) * log_p;

        // dL/dz_j = α [γ (1−p)^(γ−1) p log p − (1−p)^γ] (δ_jy − p_j)
        let curvature = if gamma == 0.0 || q == 0.0 || p == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p * p.ln()
        };
        let k = a * (curvature - q.powf(gamma)) / n as f64;
        for j in 0..c {
            let delta = if j == y { 1.0 } else { 0.0 };
            grad[i * c + j] = k * (delta - row[j]);
        }
    }
    Ok(FocalOutput {
        loss: total / n as f64,
        grad_logits: Tensor::new(&[n, c], grad)?,
        floor_events,
    })
}

/// `α_c = 1 − count_c / Σ count`.
pub fn default_alpha(class_counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = class_counts.iter().sum();
    if total == 0 {
        return Err(Error::param("class counts are all zero"));
    }
    Ok(class_counts.iter().map(|&k| 1.0 - k as f64 / total as f64).collect())
}

//! Forward and backward loss corrections for a known transition matrix.

use nalgebra::DMatrix;
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::classifier::softmax_row;
use crate::error::{Error, Result};
use crate::noise::TransitionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCorrection {
    Forward,
    Backward,
}

fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

pub fn cross_entropy_loss(logits: ArrayView1<f64>, label: usize) -> f64 {
    -log_softmax(logits)[label]
}

fn check(logits: ArrayView1<f64>, label: usize, t: &TransitionMatrix) -> Result<()> {
    if logits.len() != t.num_classes() {
        return Err(Error::arg("logit length differs from transition matrix size"));
    }
    if label >= logits.len() {
        return Err(Error::arg(format!("label {label} out of range")));
    }
    Ok(())
}

/// Forward: `-log((Tᵀ·softmax(z))[y])`. Backward: `(T⁻¹·ℓ)[y]` with
/// `ℓ[c] = -log softmax(z)[c]`.
pub fn corrected_loss(
    logits: ArrayView1<f64>,
    label: usize,
    t: &TransitionMatrix,
    mode: LossCorrection,
) -> Result<f64> {
    check(logits, label, t)?;
    let m = t.num_classes();
    match mode {
        LossCorrection::Forward => {
            let q = softmax_row(logits);
            let r: f64 = (0..m).map(|c| t.get(c, label) * q[c]).sum();
            Ok(-r.ln())
        }
        LossCorrection::Backward => {
            let tm = DMatrix::from_fn(m, m, |i, j| t.get(i, j));
            let inv = tm
                .try_inverse()
                .ok_or_else(|| Error::LinearAlgebra("transition matrix is singular".into()))?;
            let ell = log_softmax(logits).mapv(|v| -v);
            Ok((0..m).map(|c| inv[(label, c)] * ell[c]).sum())
        }
    }
}

/// Gradient of the forward-corrected loss with respect to the logits.
pub fn corrected_loss_gradient(logits: ArrayView1<f64>, label: usize, t: &TransitionMatrix) -> Result<Array1<f64>> {
    check(logits, label, t)?;
    let m = t.num_classes();
    let q = softmax_row(logits);
    let r: f64 = (0..m).map(|c| t.get(c, label) * q[c]).sum();
    // dL/dq_c = -T[c][y] / r, then through the softmax Jacobian.
    let g: Vec<f64> = (0..m).map(|c| -t.get(c, label) / r).collect();
    let qg: f64 = (0..m).map(|c| q[c] * g[c]).sum();
    Ok((0..m).map(|k| q[k] * (g[k] - qg)).collect())
}

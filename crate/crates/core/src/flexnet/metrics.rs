use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// `||est - reference||_F^2 / ||reference||_F^2`.
pub fn tensor_nmse(estimate: &Tensor3, reference: &Tensor3) -> Result<f64> {
    if estimate.dims() != reference.dims() {
        return Err(Error::shape(format!(
            "tensor dims {:?} vs {:?}",
            estimate.dims(),
            reference.dims()
        )));
    }
    let denom = reference.norm_sq();
    if denom == 0.0 {
        return Err(Error::ZeroReference("tensor NMSE"));
    }
    let num: f64 = estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

pub fn matrix_nmse(estimate: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "matrix shapes {:?} vs {:?}",
            estimate.shape(),
            reference.shape()
        )));
    }
    let denom: f64 = reference.iter().map(|x| x * x).sum();
    if denom == 0.0 {
        return Err(Error::ZeroReference("matrix NMSE"));
    }
    let num: f64 = estimate
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// Percentage points lost, `acc_orig - acc_approx`.
pub fn accuracy_drop(acc_orig: f64, acc_approx: f64) -> f64 {
    acc_orig - acc_approx
}

/// Index of the largest entry per column; ties resolve to the lowest index.
pub fn argmax_columns(scores: &DMatrix<f64>) -> Vec<usize> {
    scores
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for (i, &x) in col.iter().enumerate() {
                if x > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Classification accuracy in percent.
pub fn accuracy(scores: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if scores.ncols() != labels.len() {
        return Err(Error::shape("label count != score columns"));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let hits = argmax_columns(scores)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

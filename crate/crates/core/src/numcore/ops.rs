//! Row-wise probability and embedding helpers.

use log::warn;

use super::tensor::Tensor;
use crate::error::{HclError, Result};

/// Tolerance used when checking that a row is a probability vector.
pub const PROB_ROW_TOL: f64 = 1e-6;

/// Row-wise softmax with max-subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.expect_matrix("softmax")?;
    if k < 2 {
        return Err(HclError::Validation(format!(
            "softmax needs at least 2 classes, got {k}"
        )));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    Ok(out)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Checks every row is non-negative and sums to one within [`PROB_ROW_TOL`].
pub fn validate_prob_rows(p: &Tensor, what: &str) -> Result<()> {
    let (_, k) = p.expect_matrix(what)?;
    for (i, row) in p.data().chunks(k).enumerate() {
        let sum: f64 = row.iter().sum();
        if row
            .iter()
            .any(|&v| !(0.0..=1.0 + PROB_ROW_TOL).contains(&v))
            || (sum - 1.0).abs() > PROB_ROW_TOL
        {
            return Err(HclError::Validation(format!(
                "{what}: row {i} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

pub(crate) fn row_entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Shannon entropy (natural log) of each probability row, with `0 ln 0 = 0`.
pub fn entropy(p: &Tensor) -> Result<Tensor> {
    validate_prob_rows(p, "entropy")?;
    Ok(Tensor::vector(p.row_iter().map(row_entropy).collect()))
}

/// Row-wise L2 normalization.
///
/// Zero rows are left as they are; their indices are returned so callers can
/// treat the embedding as degenerate.
pub fn l2_normalize(v: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (_, d) = v.expect_matrix("l2_normalize")?;
    let mut out = v.clone();
    let mut degenerate = Vec::new();
    for (i, row) in out.data_mut().chunks_mut(d).enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            degenerate.push(i);
        } else {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    if !degenerate.is_empty() {
        warn!(
            "l2_normalize: {} zero row(s) left unnormalized (degenerate embedding)",
            degenerate.len()
        );
    }
    Ok((out, degenerate))
}

/// Backward pass of row-wise L2 normalization.
///
/// Given the raw rows `raw`, and the gradient `grad_unit` w.r.t. the unit
/// rows, returns the gradient w.r.t. `raw`. Zero rows receive zero gradient.
pub fn l2_normalize_backward(raw: &Tensor, grad_unit: &Tensor) -> Result<Tensor> {
    if raw.shape() != grad_unit.shape() {
        return Err(HclError::Dimension(format!(
            "l2_normalize_backward: {:?} vs {:?}",
            raw.shape(),
            grad_unit.shape()
        )));
    }
    let d = raw.cols();
    let mut out = raw.zeros_like();
    for ((z, g), o) in raw
        .data()
        .chunks(d)
        .zip(grad_unit.data().chunks(d))
        .zip(out.data_mut().chunks_mut(d))
    {
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let ug: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / norm;
        for ((oi, zi), gi) in o.iter_mut().zip(z).zip(g) {
            *oi = (gi - zi / norm * ug) / norm;
        }
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

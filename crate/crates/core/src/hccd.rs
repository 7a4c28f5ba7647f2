//! Historical contrastive category discrimination: class-balanced pseudo
//! labels, prediction consistency between the current and historical
//! models, and the consistency-weighted self-training loss.

use log::warn;

use crate::error::{HclError, Result};
use crate::numcore::{argmax, sigmoid, validate_prob_rows, Tensor};

const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HccdConfig {
    pub pseudo_fraction: f64,
    pub lambda_st: f64,
}

impl Default for HccdConfig {
    fn default() -> Self {
        Self {
            pseudo_fraction: 0.5,
            lambda_st: 1.0,
        }
    }
}

impl HccdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pseudo_fraction > 0.0 && self.pseudo_fraction <= 1.0) {
            return Err(HclError::config(
                "hccd.pseudo_fraction",
                format!("must lie in (0, 1], got {}", self.pseudo_fraction),
            ));
        }
        if !(self.lambda_st >= 0.0) || !self.lambda_st.is_finite() {
            return Err(HclError::config(
                "hccd.lambda_st",
                format!("must be >= 0, got {}", self.lambda_st),
            ));
        }
        Ok(())
    }
}

/// Pseudo labels with per-sample weights and a selection mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch {
    pub labels: Vec<usize>,
    /// Per-sample weight; the historical consistency, or 1 for unweighted
    /// self-training.
    pub h_con: Vec<f64>,
    pub selected: Vec<bool>,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Replaces the weights, e.g. with [`multi_history_consistency`].
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.labels.len() {
            return Err(HclError::Dimension(format!(
                "{} weights for {} samples",
                weights.len(),
                self.labels.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(HclError::Validation(format!("weight {w} outside [0, 1]")));
        }
        self.h_con = weights;
        Ok(self)
    }

    /// Rows `idx` of this batch, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            h_con: idx.iter().map(|&i| self.h_con[i]).collect(),
            selected: idx.iter().map(|&i| self.selected[i]).collect(),
        }
    }
}

/// Argmax labels; within each predicted class the `ceil(fraction * n_c)`
/// most confident samples are selected (lower index wins ties). Weights
/// start at 1.
pub fn generate_pseudo_labels(probs: &Tensor, pseudo_fraction: f64) -> Result<PseudoBatch> {
    validate_prob_rows(probs, "generate_pseudo_labels")?;
    if !(pseudo_fraction > 0.0 && pseudo_fraction <= 1.0) {
        return Err(HclError::Validation(format!(
            "pseudo fraction must lie in (0, 1], got {pseudo_fraction}"
        )));
    }
    let k = probs.cols();
    let labels: Vec<usize> = probs.row_iter().map(argmax).collect();
    let mut selected = vec![false; labels.len()];
    for class in 0..k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        // stable sort keeps lower indices first among equal confidences
        members.sort_by(|&a, &b| probs.at(b, class).total_cmp(&probs.at(a, class)));
        let take = (pseudo_fraction * members.len() as f64).ceil() as usize;
        for &i in members.iter().take(take) {
            selected[i] = true;
        }
    }
    Ok(PseudoBatch {
        h_con: vec![1.0; labels.len()],
        labels,
        selected,
    })
}

/// `1 - sigmoid(||p_t - p_hist||_1)` per row.
pub fn historical_consistency(p_t: &Tensor, p_hist: &Tensor) -> Result<Tensor> {
    if p_t.shape() != p_hist.shape() {
        return Err(HclError::Dimension(format!(
            "current {:?} vs historical {:?} predictions",
            p_t.shape(),
            p_hist.shape()
        )));
    }
    validate_prob_rows(p_t, "current predictions")?;
    validate_prob_rows(p_hist, "historical predictions")?;
    Ok(Tensor::vector(
        p_t.row_iter()
            .zip(p_hist.row_iter())
            .map(|(a, b)| {
                let l1: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                1.0 - sigmoid(l1)
            })
            .collect(),
    ))
}

/// Mean of [`historical_consistency`] over several historical predictions.
pub fn multi_history_consistency(p_t: &Tensor, history: &[Tensor]) -> Result<Tensor> {
    if history.is_empty() {
        return Err(HclError::Validation(
            "consistency needs at least one historical prediction".into(),
        ));
    }
    let mut acc = Tensor::zeros(&[p_t.rows()]);
    for p in history {
        acc.add_scaled(&historical_consistency(p_t, p)?, 1.0)?;
    }
    acc.scale(1.0 / history.len() as f64);
    Ok(acc)
}

/// Weighted cross-entropy on the selected pseudo labels, normalized by the
/// number selected. Returns the loss and its gradient w.r.t. the logits
/// that produced `probs`.
pub fn hisst_loss(probs: &Tensor, pseudo: &PseudoBatch) -> Result<(f64, Tensor)> {
    let (b, k) = probs.expect_matrix("hisst_loss")?;
    if pseudo.len() != b || pseudo.h_con.len() != b || pseudo.selected.len() != b {
        return Err(HclError::Dimension(format!(
            "pseudo batch of {} for {b} predictions",
            pseudo.len()
        )));
    }
    if let Some(&y) = pseudo.labels.iter().find(|&&y| y >= k) {
        return Err(HclError::Validation(format!(
            "pseudo label {y} out of range for {k} classes"
        )));
    }
    let mut grad = probs.zeros_like();
    let n_sel = pseudo.selected_count();
    if n_sel == 0 {
        return Ok((0.0, grad));
    }
    let norm = 1.0 / n_sel as f64;
    let mut loss = 0.0;
    let mut clamped = 0usize;
    for i in (0..b).filter(|&i| pseudo.selected[i]) {
        let (y, w) = (pseudo.labels[i], pseudo.h_con[i]);
        let row = probs.row(i);
        let py = if row[y] < LOG_CLAMP {
            clamped += 1;
            LOG_CLAMP
        } else {
            row[y]
        };
        loss -= w * py.ln();
        if w != 0.0 {
            for (c, (g, p)) in grad.row_mut(i).iter_mut().zip(row).enumerate() {
                *g = norm * w * (p - if c == y { 1.0 } else { 0.0 });
            }
        }
    }
    if clamped > 0 {
        warn!("hisst_loss: clamped {clamped} vanishing pseudo-label probabilities at {LOG_CLAMP}");
    }
    Ok((loss * norm, grad))
}

/// Mean prediction entropy and its gradient w.r.t. the logits.
pub fn entropy_loss(probs: &Tensor) -> Result<(f64, Tensor)> {
    let (b, _) = probs.expect_matrix("entropy_loss")?;
    let mut grad = probs.zeros_like();
    let mut total = 0.0;
    for i in 0..b {
        let row = probs.row(i);
        let h: f64 = -row
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>();
        total += h;
        for (g, &p) in grad.row_mut(i).iter_mut().zip(row) {
            // dH/dz_c = -p_c (ln p_c + H)
            if p > 0.0 {
                *g = -p * (p.ln() + h) / b as f64;
            }
        }
    }
    Ok((total / b as f64, grad))
}

//! Finite-difference checks of the analytic loss gradients over seeded
//! random batches.

use hcl_core::hccd::{entropy_loss, hisst_loss, PseudoBatch};
use hcl_core::hcid::{hisnce_loss, ContrastBatch, HcidConfig};
use hcl_core::numcore::{grad_check, l2_normalize, l2_normalize_backward, softmax, Tensor};
use hcl_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub loss: &'static str,
    pub batches: usize,
    pub max_rel_error: f64,
    /// Batch index that produced `max_rel_error`.
    pub worst_batch: usize,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOL
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 2], lo: f64, hi: f64) -> Tensor {
    let data = (0..shape[0] * shape[1])
        .map(|_| rng.random_range(lo..hi))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Contrastive loss as a function of the raw (unnormalized) query
/// embeddings, so the check covers the normalization backward pass too.
fn hisnce_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let b = rng.random_range(2..=12);
    let d = rng.random_range(2..=8);
    let raw = uniform(rng, [b, d], -1.0, 1.0);
    let (keys, _) = l2_normalize(&uniform(rng, [b, d], -1.0, 1.0))?;
    let r = Tensor::vector((0..b).map(|_| rng.random_range(0.05..=1.0)).collect());
    let cfg = HcidConfig {
        temperature: [0.07, 0.2, 0.5, 1.0][rng.random_range(0..4)],
        ..HcidConfig::default()
    };
    let f = |theta: &[f64]| {
        let z = Tensor::new(vec![b, d], theta.to_vec())?;
        let (q, _) = l2_normalize(&z)?;
        let (loss, g_unit) = hisnce_loss(&ContrastBatch::new(q, keys.clone(), r.clone())?, &cfg)?;
        Ok((loss, l2_normalize_backward(&z, &g_unit)?.into_data()))
    };
    Ok(grad_check(f, raw.data(), GRADCHECK_EPS)?.max_rel_error)
}

fn hisst_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let b = rng.random_range(2..=12);
    let k = rng.random_range(2..=5);
    let logits = uniform(rng, [b, k], -3.0, 3.0);
    let mut selected: Vec<bool> = (0..b).map(|_| rng.random_bool(0.6)).collect();
    selected[0] = true;
    let pseudo = PseudoBatch {
        labels: (0..b).map(|_| rng.random_range(0..k)).collect(),
        h_con: (0..b).map(|_| rng.random_range(0.0..=1.0)).collect(),
        selected,
    };
    let f = |theta: &[f64]| {
        let probs = softmax(&Tensor::new(vec![b, k], theta.to_vec())?)?;
        let (loss, g) = hisst_loss(&probs, &pseudo)?;
        Ok((loss, g.into_data()))
    };
    Ok(grad_check(f, logits.data(), GRADCHECK_EPS)?.max_rel_error)
}

fn entropy_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let b = rng.random_range(1..=12);
    let k = rng.random_range(2..=5);
    let logits = uniform(rng, [b, k], -3.0, 3.0);
    let f = |theta: &[f64]| {
        let probs = softmax(&Tensor::new(vec![b, k], theta.to_vec())?)?;
        let (loss, g) = entropy_loss(&probs)?;
        Ok((loss, g.into_data()))
    };
    Ok(grad_check(f, logits.data(), GRADCHECK_EPS)?.max_rel_error)
}

/// Runs every loss over `batches` random batches derived from `seed`.
pub fn gradcheck_suite(batches: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    type Case = fn(&mut ChaCha8Rng) -> Result<f64>;
    let cases: [(&'static str, Case); 3] = [
        ("hisnce", hisnce_case),
        ("hisst", hisst_case),
        ("entropy", entropy_case),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(c, &(loss, case))| {
            let mut row = GradCheckRow {
                loss,
                batches,
                max_rel_error: 0.0,
                worst_batch: 0,
            };
            for i in 0..batches {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((c as u64) << 32) ^ i as u64);
                let err = case(&mut rng)?;
                if err > row.max_rel_error {
                    row.max_rel_error = err;
                    row.worst_batch = i;
                }
            }
            Ok(row)
        })
        .collect()
}

pub fn gradcheck_table(rows: &[GradCheckRow]) -> String {
    let mut s = format!(
        "{:<8} {:>7} {:>14} {:>6} {:>6}\n",
        "loss", "batches", "max_rel_error", "worst", "result"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<8} {:>7} {:>14.3e} {:>6} {:>6}\n",
            r.loss,
            r.batches,
            r.max_rel_error,
            r.worst_batch,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_deterministic_and_passes() {
        let a = gradcheck_suite(5, 11).unwrap();
        assert_eq!(a, gradcheck_suite(5, 11).unwrap());
        assert!(
            a.iter().all(GradCheckRow::passed),
            "{}",
            gradcheck_table(&a)
        );
    }

    #[test]
    fn table_marks_failures() {
        let rows = [GradCheckRow {
            loss: "hisst",
            batches: 1,
            max_rel_error: 0.5,
            worst_batch: 0,
        }];
        assert!(gradcheck_table(&rows).contains("FAIL"));
    }
}

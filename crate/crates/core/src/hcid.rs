//! Historical contrastive instance discrimination.
//!
//! Queries are embeddings of target samples under the current model; keys
//! are embeddings of augmented views under frozen historical models. Each
//! key is weighted by a reliability derived from the historical classifier's
//! prediction entropy, and the loss is a reliability-weighted InfoNCE:
//!
//! ```text
//! loss_i = -ln( exp(q_i.k_i / tau) r_i / sum_j exp(q_i.k_j / tau) r_j )
//! ```
//!
//! averaged over queries. Gradients flow into the queries only.

use serde::{Deserialize, Serialize};

use crate::error::{HclError, Result};
use crate::exec::Execution;
use crate::model::{ForwardPass, ModelParams, Snapshot};
use crate::numcore::{
    dot, l2_normalize, l2_normalize_backward, row_entropy, softmax, validate_prob_rows, Tensor,
};

const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// How key reliabilities are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReliabilityMode {
    /// `1 - H(p)/ln K` from the key model's prediction, floored.
    #[default]
    Entropy,
    /// Every key gets reliability 1 (plain InfoNCE weighting).
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcidConfig {
    pub temperature: f64,
    pub aggregation: Aggregation,
    pub reliability_floor: f64,
    pub reliability: ReliabilityMode,
}

impl Default for HcidConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            aggregation: Aggregation::Mean,
            reliability_floor: 1e-3,
            reliability: ReliabilityMode::Entropy,
        }
    }
}

impl HcidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(HclError::config(
                "hcid.temperature",
                format!("must be > 0, got {}", self.temperature),
            ));
        }
        if !(0.0..=1.0).contains(&self.reliability_floor) {
            return Err(HclError::config(
                "hcid.reliability_floor",
                format!("must lie in [0, 1], got {}", self.reliability_floor),
            ));
        }
        Ok(())
    }
}

/// Queries, keys and key reliabilities for one contrastive evaluation.
/// Row `i` of `keys` is the positive key of query `i`.
#[derive(Debug, Clone)]
pub struct ContrastBatch {
    queries: Tensor,
    keys: Tensor,
    reliabilities: Tensor,
}

fn check_unit_rows(t: &Tensor, what: &str) -> Result<()> {
    for (i, row) in t.row_iter().enumerate() {
        let n2: f64 = row.iter().map(|v| v * v).sum();
        // zero rows come from degenerate embeddings and are tolerated
        if n2 != 0.0 && (n2.sqrt() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(HclError::Validation(format!(
                "{what} row {i} has norm {}, expected 1",
                n2.sqrt()
            )));
        }
    }
    Ok(())
}

impl ContrastBatch {
    pub fn new(queries: Tensor, keys: Tensor, reliabilities: Tensor) -> Result<Self> {
        let (b, d) = queries.expect_matrix("queries")?;
        let (bk, dk) = keys.expect_matrix("keys")?;
        if (b, d) != (bk, dk) {
            return Err(HclError::Dimension(format!(
                "queries {b}x{d} vs keys {bk}x{dk}"
            )));
        }
        if reliabilities.len() != b {
            return Err(HclError::Dimension(format!(
                "{} reliabilities for {b} keys",
                reliabilities.len()
            )));
        }
        if b < 2 {
            return Err(HclError::DegenerateBatch(format!(
                "batch of {b} has no negative key"
            )));
        }
        check_unit_rows(&queries, "query")?;
        check_unit_rows(&keys, "key")?;
        if let Some(r) = reliabilities
            .data()
            .iter()
            .find(|r| !(0.0..=1.0).contains(*r))
        {
            return Err(HclError::Validation(format!(
                "reliability {r} outside [0, 1]"
            )));
        }
        Ok(Self {
            queries,
            keys,
            reliabilities,
        })
    }

    pub fn queries(&self) -> &Tensor {
        &self.queries
    }

    pub fn keys(&self) -> &Tensor {
        &self.keys
    }

    pub fn reliabilities(&self) -> &Tensor {
        &self.reliabilities
    }

    pub fn batch_size(&self) -> usize {
        self.queries.rows()
    }
}

/// Entropy-based reliability `max(1 - H(p)/ln K, floor)` for each row.
pub fn key_reliability(probs: &Tensor, floor: f64) -> Result<Tensor> {
    let (_, k) = probs.expect_matrix("key_reliability")?;
    if k < 2 {
        return Err(HclError::Validation(format!(
            "key reliability needs K >= 2, got {k}"
        )));
    }
    validate_prob_rows(probs, "key_reliability")?;
    let ln_k = (k as f64).ln();
    Ok(Tensor::vector(
        probs
            .row_iter()
            .map(|row| (1.0 - row_entropy(row) / ln_k).clamp(floor, 1.0))
            .collect(),
    ))
}

/// Reliability-weighted contrastive loss and its gradient w.r.t. the
/// queries.
pub fn hisnce_loss(batch: &ContrastBatch, cfg: &HcidConfig) -> Result<(f64, Tensor)> {
    cfg.validate()?;
    let b = batch.batch_size();
    let tau = cfg.temperature;
    let log_r: Vec<f64> = batch
        .reliabilities
        .data()
        .iter()
        .map(|&r| if r > 0.0 { r.ln() } else { f64::NEG_INFINITY })
        .collect();
    if log_r.iter().all(|l| l.is_infinite()) {
        return Err(HclError::DegenerateBatch(
            "every key reliability is zero".into(),
        ));
    }

    let mut loss = 0.0;
    let mut grad = batch.queries.zeros_like();
    let mut logits = vec![0.0; b];
    let scale = 1.0 / (b as f64 * tau);
    for i in 0..b {
        if log_r[i].is_infinite() {
            return Err(HclError::DegenerateBatch(format!(
                "positive key {i} has zero reliability"
            )));
        }
        let q = batch.queries.row(i);
        for (j, a) in logits.iter_mut().enumerate() {
            *a = dot(q, batch.keys.row(j)) / tau + log_r[j];
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
        loss += lse - logits[i];

        let g = grad.row_mut(i);
        for (j, a) in logits.iter().enumerate() {
            let w = (a - lse).exp() - if j == i { 1.0 } else { 0.0 };
            if w != 0.0 {
                for (gd, kd) in g.iter_mut().zip(batch.keys.row(j)) {
                    *gd += scale * w * kd;
                }
            }
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(HclError::Numeric("hisnce loss".into()));
    }
    Ok((loss, grad))
}

/// Plain InfoNCE evaluated directly from the softmax ratio: unit
/// reliabilities, no log-sum-exp shift. Kept independent of
/// [`hisnce_loss`] so the two can check each other.
pub fn infonce_reference(queries: &Tensor, keys: &Tensor, temperature: f64) -> Result<f64> {
    let b = queries.rows();
    if keys.shape() != queries.shape() || b < 2 {
        return Err(HclError::DegenerateBatch(
            "InfoNCE needs matching query/key matrices with at least 2 rows".into(),
        ));
    }
    if !(temperature > 0.0) {
        return Err(HclError::Validation("temperature must be > 0".into()));
    }
    let mut total = 0.0;
    for (i, q) in queries.row_iter().enumerate() {
        let sims: Vec<f64> = keys.row_iter().map(|k| dot(q, k) / temperature).collect();
        let denom: f64 = sims.iter().map(|s| s.exp()).sum();
        total += -(sims[i].exp() / denom).ln();
    }
    Ok(total / b as f64)
}

/// Result of evaluating the contrastive branch on one minibatch.
#[derive(Debug, Clone)]
pub struct HcidTerms {
    pub loss: f64,
    /// Gradient w.r.t. the raw (unnormalized) current embedding.
    pub grad_embedding: Tensor,
    /// Mean key reliability over all key models and samples.
    pub mean_reliability: f64,
}

/// Contrastive loss against each key model, aggregated in input order.
///
/// `pass` is the current model's forward pass on the query samples and
/// `augmented` the key views of the same samples.
pub fn hcid_terms(
    pass: &ForwardPass,
    key_models: &[&ModelParams],
    augmented: &Tensor,
    cfg: &HcidConfig,
    exec: Execution,
) -> Result<HcidTerms> {
    cfg.validate()?;
    if key_models.is_empty() {
        return Err(HclError::Validation("history must not be empty".into()));
    }
    let (queries, _) = l2_normalize(&pass.embedding)?;
    let per_model = exec.map(key_models, |model| -> Result<(f64, Tensor, f64)> {
        let kp = model.forward(augmented)?;
        let (keys, _) = l2_normalize(&kp.embedding)?;
        let r = match cfg.reliability {
            ReliabilityMode::Entropy => {
                key_reliability(&softmax(&kp.logits)?, cfg.reliability_floor)?
            }
            ReliabilityMode::Fixed => Tensor::filled(&[keys.rows()], 1.0),
        };
        let mean_r = r.data().iter().sum::<f64>() / r.len() as f64;
        let batch = ContrastBatch::new(queries.clone(), keys, r)?;
        let (loss, grad) = hisnce_loss(&batch, cfg)?;
        Ok((loss, grad, mean_r))
    });

    let mut loss = 0.0;
    let mut grad_q = queries.zeros_like();
    let mut r_sum = 0.0;
    for item in per_model {
        let (l, g, r) = item?;
        loss += l;
        grad_q.add_scaled(&g, 1.0)?;
        r_sum += r;
    }
    let n = key_models.len() as f64;
    if cfg.aggregation == Aggregation::Mean {
        loss /= n;
        grad_q.scale(1.0 / n);
    }
    Ok(HcidTerms {
        loss,
        grad_embedding: l2_normalize_backward(&pass.embedding, &grad_q)?,
        mean_reliability: r_sum / n,
    })
}

/// Contrastive loss of the current model against every snapshot in
/// `history`, with gradients w.r.t. all current parameters.
pub fn hcid_batch_loss(
    current: &ModelParams,
    history: &[&Snapshot],
    samples: &Tensor,
    augmented: &Tensor,
    cfg: &HcidConfig,
    exec: Execution,
) -> Result<(f64, ModelParams)> {
    let mut ordered: Vec<&Snapshot> = history.to_vec();
    ordered.sort_by_key(|s| s.epoch());
    let key_models: Vec<&ModelParams> = ordered.iter().map(|s| s.params()).collect();
    let pass = current.forward(samples)?;
    let terms = hcid_terms(&pass, &key_models, augmented, cfg, exec)?;
    let grads = current.backward(&pass, Some(&terms.grad_embedding), None, false)?;
    Ok((terms.loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelSpec, SnapshotTag};
    use crate::numcore::grad_check;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Tensor {
        let raw = Tensor::new(
            vec![b, d],
            (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        l2_normalize(&raw).unwrap().0
    }

    fn cfg(tau: f64) -> HcidConfig {
        HcidConfig {
            temperature: tau,
            ..HcidConfig::default()
        }
    }

    #[test]
    fn reliability_anchors() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap();
        let r = key_reliability(&p, 0.0).unwrap();
        assert_eq!(r.data()[0], 1.0);
        assert_eq!(r.data()[1], 0.0);
        let h = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert_abs_diff_eq!(h, 0.325083, epsilon = 1e-6);
        assert_abs_diff_eq!(r.data()[2], 1.0 - h / 2f64.ln(), epsilon = 1e-15);
        // 1 - 0.325083/0.693147 = 0.531004
        assert_abs_diff_eq!(r.data()[2], 0.531004, epsilon = 1e-6);
        let floored = key_reliability(&p, 1e-3).unwrap();
        assert_eq!(floored.data()[1], 1e-3);
    }

    #[test]
    fn reliability_rejects_single_class() {
        let p = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            key_reliability(&p, 0.0),
            Err(HclError::Validation(_))
        ));
    }

    #[test]
    fn uniform_similarity_gives_log_batch() {
        for b in [2usize, 8, 64] {
            let e = Tensor::new(vec![b, 3], [0.0, 1.0, 0.0].repeat(b)).unwrap();
            let batch =
                ContrastBatch::new(e.clone(), e.clone(), Tensor::filled(&[b], 0.7)).unwrap();
            let (loss, _) = hisnce_loss(&batch, &cfg(0.07)).unwrap();
            assert_abs_diff_eq!(loss, (b as f64).ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn orthogonal_pair_closed_form() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let batch = ContrastBatch::new(e.clone(), e, Tensor::filled(&[2], 1.0)).unwrap();
        let (loss, _) = hisnce_loss(&batch, &cfg(1.0)).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert_abs_diff_eq!(expected, 0.313262, epsilon = 1e-6);
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
    }

    #[test]
    fn common_reliability_factor_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = unit_rows(&mut rng, 6, 4);
        let k = unit_rows(&mut rng, 6, 4);
        let r: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.5)).collect();
        let base = ContrastBatch::new(q.clone(), k.clone(), Tensor::vector(r.clone())).unwrap();
        let scaled =
            ContrastBatch::new(q, k, Tensor::vector(r.iter().map(|x| x * 1.9).collect())).unwrap();
        let (a, _) = hisnce_loss(&base, &cfg(0.07)).unwrap();
        let (b, _) = hisnce_loss(&scaled, &cfg(0.07)).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn unit_reliability_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let q = unit_rows(&mut rng, 5, 3);
            let k = unit_rows(&mut rng, 5, 3);
            let batch =
                ContrastBatch::new(q.clone(), k.clone(), Tensor::filled(&[5], 1.0)).unwrap();
            let (loss, _) = hisnce_loss(&batch, &cfg(0.07)).unwrap();
            let reference = infonce_reference(&q, &k, 0.07).unwrap();
            assert!((loss - reference).abs() <= 1e-12);
        }
    }

    #[test]
    fn reference_flattens_with_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = unit_rows(&mut rng, 4, 3);
        let k = unit_rows(&mut rng, 4, 3);
        let target = 4f64.ln();
        let mut prev = f64::INFINITY;
        for tau in [1.0, 10.0, 100.0, 1e3, 1e4] {
            let gap = (infonce_reference(&q, &k, tau).unwrap() - target).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn zero_reliabilities_are_degenerate() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let batch = ContrastBatch::new(e.clone(), e.clone(), Tensor::filled(&[2], 0.0)).unwrap();
        assert!(matches!(
            hisnce_loss(&batch, &cfg(0.1)),
            Err(HclError::DegenerateBatch(_))
        ));
        let batch = ContrastBatch::new(e.clone(), e, Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert!(matches!(
            hisnce_loss(&batch, &cfg(0.1)),
            Err(HclError::DegenerateBatch(_))
        ));
    }

    #[test]
    fn batch_invariants_are_enforced() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            ContrastBatch::new(e.clone(), e, Tensor::filled(&[1], 1.0)),
            Err(HclError::DegenerateBatch(_))
        ));
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let long = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(ContrastBatch::new(long, e.clone(), Tensor::filled(&[2], 1.0)).is_err());
        assert!(ContrastBatch::new(e.clone(), e, Tensor::vector(vec![1.5, 1.0])).is_err());
    }

    #[test]
    fn positive_alignment_lowers_loss() {
        // query 0 rotates toward its positive key while the other similarities stay fixed
        let keys = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..=10 {
            let theta = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 10.0);
            let q = Tensor::from_rows(&[vec![theta.cos(), theta.sin(), 0.0], vec![0.0, 0.0, 1.0]])
                .unwrap();
            let batch =
                ContrastBatch::new(q, keys.clone(), Tensor::vector(vec![0.8, 0.6])).unwrap();
            let (loss, _) = hisnce_loss(&batch, &cfg(0.5)).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn query_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = unit_rows(&mut rng, 4, 3);
        let k = unit_rows(&mut rng, 4, 3);
        let r = Tensor::vector((0..4).map(|_| rng.random_range(0.1..1.0)).collect());
        // unit norm is not preserved under perturbation; treat q as free
        let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
            let qq = Tensor::new(vec![4, 3], theta.to_vec())?;
            let batch = ContrastBatch {
                queries: qq,
                keys: k.clone(),
                reliabilities: r.clone(),
            };
            let (l, g) = hisnce_loss(&batch, &cfg(0.2))?;
            Ok((l, g.into_data()))
        };
        let rep = grad_check(f, q.data(), 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    fn small_model(seed: u64) -> ModelParams {
        init_model(
            &ModelSpec {
                input_dim: 2,
                hidden_dims: vec![6],
                embed_dim: 4,
                num_classes: 3,
            },
            seed,
        )
        .unwrap()
    }

    fn samples(seed: u64, b: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![b, 2],
            (0..2 * b).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_and_duplicated_snapshot_agree() {
        let current = small_model(1);
        let snap = Snapshot::new(&small_model(2), 0, SnapshotTag::SourceInit);
        let x = samples(3, 5);
        let aug = samples(4, 5);
        let c = cfg(0.1);
        let (single, _) =
            hcid_batch_loss(&current, &[&snap], &x, &aug, &c, Execution::Sequential).unwrap();

        let pass = current.forward(&x).unwrap();
        let (q, _) = l2_normalize(&pass.embedding).unwrap();
        let kp = snap.params().forward(&aug).unwrap();
        let (k, _) = l2_normalize(&kp.embedding).unwrap();
        let r = key_reliability(&softmax(&kp.logits).unwrap(), c.reliability_floor).unwrap();
        let (direct, _) = hisnce_loss(&ContrastBatch::new(q, k, r).unwrap(), &c).unwrap();
        assert_eq!(single, direct);

        let (dup, _) =
            hcid_batch_loss(&current, &[&snap, &snap], &x, &aug, &c, Execution::Parallel).unwrap();
        assert!((dup - single).abs() <= 1e-12);
        assert!(snap.is_intact());
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        let current = small_model(10);
        let s0 = Snapshot::new(&small_model(11), 0, SnapshotTag::SourceInit);
        let s1 = Snapshot::new(&small_model(12), 1, SnapshotTag::Lagged);
        let x = samples(13, 6);
        let aug = samples(14, 6);
        let c = cfg(0.5);
        let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
            let m = current.with_flat(theta)?;
            let (l, g) = hcid_batch_loss(&m, &[&s0, &s1], &x, &aug, &c, Execution::Sequential)?;
            Ok((l, g.to_flat()))
        };
        let rep = grad_check(f, &current.to_flat(), 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn sum_aggregation_doubles_duplicates() {
        let current = small_model(1);
        let snap = Snapshot::new(&small_model(2), 0, SnapshotTag::SourceInit);
        let x = samples(3, 4);
        let aug = samples(4, 4);
        let c = HcidConfig {
            aggregation: Aggregation::Sum,
            ..cfg(0.1)
        };
        let (one, _) =
            hcid_batch_loss(&current, &[&snap], &x, &aug, &c, Execution::Sequential).unwrap();
        let (two, _) = hcid_batch_loss(
            &current,
            &[&snap, &snap],
            &x,
            &aug,
            &c,
            Execution::Sequential,
        )
        .unwrap();
        assert!((two - 2.0 * one).abs() <= 1e-12);
    }

    #[test]
    fn rejects_bad_temperature() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let batch = ContrastBatch::new(e.clone(), e, Tensor::filled(&[2], 1.0)).unwrap();
        assert!(hisnce_loss(&batch, &cfg(0.0)).is_err());
    }
}

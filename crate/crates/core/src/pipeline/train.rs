use std::collections::VecDeque;
use std::time::Instant;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AdaptConfig, Method};
use super::trace::{EpochRecord, MetricsTrace};
use crate::data::{augment, Dataset, UnlabeledView};
use crate::error::{HclError, Result};
use crate::exec::Execution;
use crate::hccd::{
    entropy_loss, generate_pseudo_labels, hisst_loss, multi_history_consistency, PseudoBatch,
};
use crate::hcid::{hcid_terms, HcidConfig, ReliabilityMode};
use crate::model::{init_model, HistoryQueue, ModelParams, Snapshot};
use crate::numcore::{argmax, poly_lr, sgd_step, softmax, OptimizerState, Tensor};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_PRETRAIN: u64 = 6;
pub(crate) const STREAM_SOURCE_DATA: u64 = 4;
pub(crate) const STREAM_TARGET_DATA: u64 = 5;

/// Mixes a run seed with a stream id and two counters (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ b.wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub params: ModelParams,
    pub trace: MetricsTrace,
    pub config_hash: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub result: RunResult,
    /// History queue at the end of the run; `None` for methods that keep no
    /// history.
    pub history: Option<HistoryQueue>,
    /// Every stored snapshot matched its creation hash at every epoch
    /// boundary.
    pub snapshots_intact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Recall per class; `None` for classes absent from the dataset.
    pub per_class: Vec<Option<f64>>,
}

pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(HclError::Validation(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let k = params.num_classes();
    let labels = dataset.require_labels(k)?;
    let logits = params.logits(dataset.features())?;
    let mut hits = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (row, &y) in logits.row_iter().zip(labels) {
        support[y] += 1;
        if argmax(row) == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        per_class: hits
            .iter()
            .zip(&support)
            .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
            .collect(),
    })
}

fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE, epoch as u64, 0));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Supervised cross-entropy training on labeled source data.
pub fn pretrain_source(cfg: &AdaptConfig, source: &Dataset, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let k = cfg.model.num_classes;
    let labels = source.require_labels(k)?.to_vec();
    let mut params = init_model(
        &cfg.model_spec(source.dim()),
        derive_seed(seed, STREAM_INIT, 0, 0),
    )?;
    let mut opt = OptimizerState::new(
        &params,
        cfg.optim.momentum,
        cfg.optim.weight_decay,
        cfg.optim.pretrain_lr,
    )?;
    let epochs = cfg.run.pretrain_epochs;
    let per_epoch = batches(source.len(), cfg.run.batch_size, seed, 0).len();
    let total_iters = epochs * per_epoch;
    let mut trace = MetricsTrace::default();
    let mut iter = 0;
    for epoch in 0..epochs {
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        let plan = batches(
            source.len(),
            cfg.run.batch_size,
            derive_seed(seed, STREAM_PRETRAIN, 0, 0),
            epoch,
        );
        for (it, idx) in plan.iter().enumerate() {
            let x = source.features().select_rows(idx)?;
            let pass = params.forward(&x)?;
            let probs = softmax(&pass.logits)?;
            let truth = PseudoBatch {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                h_con: vec![1.0; idx.len()],
                selected: vec![true; idx.len()],
            };
            let (loss, g_logits) = hisst_loss(&probs, &truth)?;
            if !loss.is_finite() {
                return Err(HclError::Numeric("source cross-entropy".into()).in_training(epoch, it));
            }
            let grads = params.backward(&pass, None, Some(&g_logits), false)?;
            lr = poly_lr(opt.base_lr, iter, total_iters, cfg.optim.lr_power);
            sgd_step(&mut params, &grads, &mut opt, lr).map_err(|e| e.in_training(epoch, it))?;
            loss_sum += loss;
            iter += 1;
        }
        trace.push(EpochRecord {
            epoch,
            l_hisnce: 0.0,
            l_hisst: 0.0,
            total_loss: loss_sum / plan.len().max(1) as f64,
            target_accuracy: Some(evaluate(&params, source)?.accuracy),
            mean_h_con: None,
            mean_r: None,
            selected_fraction: None,
            lr,
        });
    }
    Ok(RunResult {
        params,
        trace,
        config_hash: cfg.config_hash(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Loss values of one minibatch, plus the gradient.
#[derive(Debug, Clone)]
pub struct BatchTerms {
    pub hisnce: f64,
    pub hisst: f64,
    pub entropy: f64,
    pub total: f64,
    pub mean_r: Option<f64>,
    pub grads: ModelParams,
}

/// Everything fixed for the duration of one adaptation epoch.
struct EpochPlan {
    history: Vec<Snapshot>,
    pseudo: Option<PseudoBatch>,
    batches: Vec<Vec<usize>>,
}

struct Adapter<'a> {
    cfg: &'a AdaptConfig,
    method: Method,
    hcid: HcidConfig,
    lambda_st: f64,
    features: &'a Tensor,
    exec: Execution,
    seed: u64,
    params: ModelParams,
    opt: OptimizerState,
    queue: HistoryQueue,
    pending: VecDeque<(usize, ModelParams)>,
    snapshots_intact: bool,
    iter: usize,
    total_iters: usize,
}

impl<'a> Adapter<'a> {
    fn new(
        cfg: &'a AdaptConfig,
        method: Method,
        source: &ModelParams,
        target: &'a UnlabeledView,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        let mut hcid = cfg.hcid_config();
        if method == Method::InfonceSt {
            hcid.reliability = ReliabilityMode::Fixed;
        }
        let per_epoch = batches(target.len(), cfg.run.batch_size, seed, 0).len();
        Ok(Self {
            cfg,
            method,
            hcid,
            lambda_st: cfg.hccd.lambda_st,
            features: target.features(),
            exec,
            seed,
            params: source.clone(),
            opt: OptimizerState::new(
                source,
                cfg.optim.momentum,
                cfg.optim.weight_decay,
                cfg.optim.base_lr,
            )?,
            queue: HistoryQueue::new(
                source,
                cfg.history.capacity,
                cfg.history.lag_m,
                cfg.history.pin_source_init,
            )?,
            pending: VecDeque::new(),
            snapshots_intact: true,
            iter: 0,
            total_iters: cfg.run.epochs * per_epoch,
        })
    }

    /// Moves models that have aged by `lag_m` epochs into the queue.
    fn refresh_history(&mut self, epoch: usize) -> Result<()> {
        if epoch > 0 {
            self.pending.push_back((epoch, self.params.clone()));
        }
        while let Some((e, _)) = self.pending.front() {
            if e + self.cfg.history.lag_m > epoch {
                break;
            }
            let (e, p) = self.pending.pop_front().unwrap();
            self.queue.snapshot_push(&p, e)?;
        }
        self.snapshots_intact &= self.queue.all_intact();
        Ok(())
    }

    fn plan_epoch(&self, epoch: usize) -> Result<EpochPlan> {
        let history: Vec<Snapshot> = self
            .queue
            .select_history(epoch)
            .into_iter()
            .cloned()
            .collect();
        let pseudo = if self.method.uses_self_training() {
            let p_t = self.params.predict_proba(self.features)?;
            let pb = generate_pseudo_labels(&p_t, self.cfg.hccd.pseudo_fraction)?;
            if self.method.weights_by_history() {
                let hist_probs = history
                    .iter()
                    .map(|s| s.params().predict_proba(self.features))
                    .collect::<Result<Vec<_>>>()?;
                let h_con = multi_history_consistency(&p_t, &hist_probs)?;
                Some(pb.with_weights(h_con.into_data())?)
            } else {
                Some(pb)
            }
        } else {
            None
        };
        Ok(EpochPlan {
            history,
            pseudo,
            batches: batches(
                self.features.rows(),
                self.cfg.run.batch_size,
                self.seed,
                epoch,
            ),
        })
    }

    fn batch_terms(
        &self,
        plan: &EpochPlan,
        idx: &[usize],
        epoch: usize,
        batch_no: usize,
    ) -> Result<BatchTerms> {
        let x = self.features.select_rows(idx)?;
        let pass = self.params.forward(&x)?;
        let mut grad_embedding = None;
        let mut grad_logits: Option<Tensor> = None;
        let (mut hisnce, mut hisst, mut entropy, mut mean_r) = (0.0, 0.0, 0.0, None);

        if self.method.uses_contrast() {
            let aug = augment(
                &x,
                &self.cfg.augment_spec(),
                derive_seed(self.seed, STREAM_AUGMENT, epoch as u64, batch_no as u64),
            )?;
            let key_models: Vec<&ModelParams> = if self.method == Method::InfonceSt {
                vec![&self.params]
            } else {
                plan.history.iter().map(Snapshot::params).collect()
            };
            let terms = hcid_terms(&pass, &key_models, &aug, &self.hcid, self.exec)?;
            hisnce = terms.loss;
            mean_r = Some(terms.mean_reliability);
            grad_embedding = Some(terms.grad_embedding);
        }
        if let Some(pseudo) = &plan.pseudo {
            let probs = softmax(&pass.logits)?;
            let (l, mut g) = hisst_loss(&probs, &pseudo.subset(idx))?;
            g.scale(self.lambda_st);
            hisst = l;
            grad_logits = Some(g);
        }
        if self.method == Method::EntropyMin {
            let probs = softmax(&pass.logits)?;
            let (l, g) = entropy_loss(&probs)?;
            entropy = l;
            grad_logits = Some(g);
        }
        let total = hisnce + self.lambda_st * hisst + entropy;
        if !total.is_finite() {
            return Err(HclError::Numeric("adaptation objective".into()));
        }
        let grads = self.params.backward(
            &pass,
            grad_embedding.as_ref(),
            grad_logits.as_ref(),
            self.cfg.run.freeze_classifier,
        )?;
        Ok(BatchTerms {
            hisnce,
            hisst,
            entropy,
            total,
            mean_r,
            grads,
        })
    }

    fn run_epoch(&mut self, epoch: usize, monitor: Option<&Dataset>) -> Result<EpochRecord> {
        self.refresh_history(epoch)?;
        let plan = self.plan_epoch(epoch)?;
        let (mut s_nce, mut s_st, mut s_total, mut s_r) = (0.0, 0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for (b, idx) in plan.batches.iter().enumerate() {
            let terms = self
                .batch_terms(&plan, idx, epoch, b)
                .map_err(|e| e.in_training(epoch, b))?;
            lr = poly_lr(
                self.cfg.optim.base_lr,
                self.iter,
                self.total_iters,
                self.cfg.optim.lr_power,
            );
            sgd_step(&mut self.params, &terms.grads, &mut self.opt, lr)
                .map_err(|e| e.in_training(epoch, b))?;
            self.iter += 1;
            s_nce += terms.hisnce;
            s_st += terms.hisst;
            s_total += terms.total;
            s_r += terms.mean_r.unwrap_or(0.0);
        }
        let nb = plan.batches.len().max(1) as f64;
        let (mean_h_con, selected_fraction) = match &plan.pseudo {
            Some(p) => {
                let sel = p.selected_count();
                let h: f64 = (0..p.len())
                    .filter(|&i| p.selected[i])
                    .map(|i| p.h_con[i])
                    .sum();
                (
                    Some(h / sel.max(1) as f64),
                    Some(sel as f64 / p.len() as f64),
                )
            }
            None => (None, None),
        };
        self.snapshots_intact &= plan.history.iter().all(Snapshot::is_intact);
        debug!("{} epoch {epoch}: total {:.6}", self.method, s_total / nb);
        Ok(EpochRecord {
            epoch,
            l_hisnce: s_nce / nb,
            l_hisst: s_st / nb,
            total_loss: s_total / nb,
            target_accuracy: monitor
                .map(|d| evaluate(&self.params, d).map(|e| e.accuracy))
                .transpose()?,
            mean_h_con,
            mean_r: self.method.uses_contrast().then_some(s_r / nb),
            selected_fraction,
            lr,
        })
    }
}

/// Adapts `source` to the unlabeled target with the configured method.
///
/// `monitor`, when given, is only used to report per-epoch accuracy; it never
/// influences training.
pub fn adapt(
    cfg: &AdaptConfig,
    source: &ModelParams,
    target: &UnlabeledView,
    monitor: Option<&Dataset>,
    seed: u64,
    exec: Execution,
) -> Result<AdaptOutcome> {
    adapt_with(cfg, cfg.run.method, source, target, monitor, seed, exec)
}

/// [`adapt`] with an explicit method, used to run baselines from one config.
pub fn adapt_with(
    cfg: &AdaptConfig,
    method: Method,
    source: &ModelParams,
    target: &UnlabeledView,
    monitor: Option<&Dataset>,
    seed: u64,
    exec: Execution,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    if target.features().cols() != source.input_dim() {
        return Err(HclError::Dimension(format!(
            "target has {} features, model expects {}",
            target.features().cols(),
            source.input_dim()
        )));
    }
    let start = Instant::now();
    let mut trace = MetricsTrace::default();
    if method == Method::SourceOnly {
        trace.push(EpochRecord {
            epoch: 0,
            l_hisnce: 0.0,
            l_hisst: 0.0,
            total_loss: 0.0,
            target_accuracy: monitor
                .map(|d| evaluate(source, d).map(|e| e.accuracy))
                .transpose()?,
            mean_h_con: None,
            mean_r: None,
            selected_fraction: None,
            lr: 0.0,
        });
        return Ok(AdaptOutcome {
            result: RunResult {
                params: source.clone(),
                trace,
                config_hash: cfg.config_hash(),
                wall_seconds: start.elapsed().as_secs_f64(),
            },
            history: None,
            snapshots_intact: true,
        });
    }
    let mut adapter = Adapter::new(cfg, method, source, target, seed, exec)?;
    for epoch in 0..cfg.run.epochs {
        trace.push(adapter.run_epoch(epoch, monitor)?);
    }
    let intact = adapter.snapshots_intact && adapter.queue.all_intact();
    Ok(AdaptOutcome {
        result: RunResult {
            params: adapter.params,
            trace,
            config_hash: cfg.config_hash(),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        history: Some(adapter.queue),
        snapshots_intact: intact,
    })
}

/// Loss terms of `method` at the source weights, averaged over the first
/// epoch's minibatches, without taking any step.
pub fn initial_objective(
    cfg: &AdaptConfig,
    method: Method,
    source: &ModelParams,
    target: &UnlabeledView,
    seed: u64,
    exec: Execution,
) -> Result<BatchTerms> {
    cfg.validate()?;
    let mut adapter = Adapter::new(cfg, method, source, target, seed, exec)?;
    adapter.refresh_history(0)?;
    let plan = adapter.plan_epoch(0)?;
    let mut acc: Option<BatchTerms> = None;
    for (b, idx) in plan.batches.iter().enumerate() {
        let t = adapter.batch_terms(&plan, idx, 0, b)?;
        acc = Some(match acc {
            None => t,
            Some(mut a) => {
                a.hisnce += t.hisnce;
                a.hisst += t.hisst;
                a.entropy += t.entropy;
                a.total += t.total;
                a.mean_r = a.mean_r.zip(t.mean_r).map(|(x, y)| x + y);
                a.grads.add_assign(&t.grads)?;
                a
            }
        });
    }
    let mut a =
        acc.ok_or_else(|| HclError::Validation("target has fewer than 2 samples".into()))?;
    let n = plan.batches.len() as f64;
    a.hisnce /= n;
    a.hisst /= n;
    a.entropy /= n;
    a.total /= n;
    a.mean_r = a.mean_r.map(|r| r / n);
    a.grads.scale(1.0 / n);
    Ok(a)
}

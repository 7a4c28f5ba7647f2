//! Encoder + classifier network, checkpoints and the historical snapshot
//! queue.

mod checkpoint;
mod history;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, FORMAT_VERSION};
pub use history::{HistoryQueue, Snapshot, SnapshotTag};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{HclError, Result};
use crate::numcore::{softmax, Activation, Layer, LayerCache, LayerSpec, ParamTensors, Tensor};

/// Dimensions of the feed-forward model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.num_classes < 2 {
            return Err(HclError::Validation(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let mut specs = Vec::with_capacity(self.hidden_dims.len() + 2);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            specs.push(LayerSpec::new(prev, h, Activation::Relu)?);
            prev = h;
        }
        specs.push(LayerSpec::new(prev, self.embed_dim, Activation::None)?);
        specs.push(LayerSpec::new(
            self.embed_dim,
            self.num_classes,
            Activation::None,
        )?);
        Ok(specs)
    }
}

/// Encoder layers (input -> embedding) followed by a single affine
/// classifier (embedding -> logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<Layer>,
    pub classifier: Layer,
    /// Seed used at initialization, kept for checkpoint provenance.
    pub seed: u64,
}

/// Intermediate values of one forward pass.
pub struct ForwardPass {
    encoder_caches: Vec<LayerCache>,
    classifier_cache: LayerCache,
    /// Raw (unnormalized) encoder output.
    pub embedding: Tensor,
    pub logits: Tensor,
}

/// Seeded He-uniform initialization; identical seeds give bit-identical weights.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    let specs = spec.layer_specs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Layer> = specs
        .into_iter()
        .map(|s| Layer::init(s, &mut rng))
        .collect();
    let classifier = layers
        .pop()
        .expect("layer_specs always yields a classifier");
    Ok(ModelParams {
        encoder: layers,
        classifier,
        seed,
    })
}

impl ModelParams {
    pub fn from_layers(mut layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(HclError::Validation(
                "a model needs at least one encoder layer and a classifier".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].spec.out_dim != pair[1].spec.in_dim {
                return Err(HclError::Dimension(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].spec.out_dim, pair[1].spec.in_dim
                )));
            }
        }
        let classifier = layers.pop().unwrap();
        Ok(Self {
            encoder: layers,
            classifier,
            seed,
        })
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.classifier))
            .map(|l| l.spec)
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].spec.in_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.spec.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.spec.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(LayerSpec::param_count).sum()
    }

    /// Gradient container with the same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(|l| Layer::zeros(l.spec)).collect(),
            classifier: Layer::zeros(self.classifier.spec),
            seed: self.seed,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        let mut h = x.clone();
        let mut encoder_caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (y, cache) = layer.forward(&h)?;
            encoder_caches.push(cache);
            h = y;
        }
        let (logits, classifier_cache) = self.classifier.forward(&h)?;
        Ok(ForwardPass {
            encoder_caches,
            classifier_cache,
            embedding: h,
            logits,
        })
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.encoder {
            h = layer.forward(&h)?.0;
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.logits)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        softmax(&self.logits(x)?)
    }

    /// Backpropagates gradients arriving at the embedding and/or the logits.
    ///
    /// With `freeze_classifier` the classifier gradient is zeroed but its
    /// input gradient still reaches the encoder.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_embedding: Option<&Tensor>,
        grad_logits: Option<&Tensor>,
        freeze_classifier: bool,
    ) -> Result<ModelParams> {
        let mut grads = self.zeros_like();
        let mut g_embed = match grad_embedding {
            Some(g) => g.clone(),
            None => pass.embedding.zeros_like(),
        };
        if let Some(gl) = grad_logits {
            let cg = self.classifier.backward(&pass.classifier_cache, gl)?;
            g_embed.add_scaled(&cg.input, 1.0)?;
            if !freeze_classifier {
                grads.classifier.weight = cg.weight;
                grads.classifier.bias = cg.bias;
            }
        }
        let mut g = g_embed;
        for (i, layer) in self.encoder.iter().enumerate().rev() {
            let lg = layer.backward(&pass.encoder_caches[i], &g)?;
            grads.encoder[i].weight = lg.weight;
            grads.encoder[i].bias = lg.bias;
            g = lg.input;
        }
        Ok(grads)
    }

    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        let others = other.named_tensors();
        if others.len() != self.encoder.len() * 2 + 2 {
            return Err(HclError::Dimension("models differ in layer count".into()));
        }
        for (t, (_, o)) in self.tensors_mut().into_iter().zip(others) {
            t.add_scaled(o, 1.0)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(factor));
    }

    /// All weights flattened in `named_tensors` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.named_tensors()
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let total: usize = out.named_tensors().iter().map(|(_, t)| t.len()).sum();
        if flat.len() != total {
            return Err(HclError::Dimension(format!(
                "flat vector has {} values, model has {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in out.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// SHA-256 over layer dimensions and the bit patterns of every weight.
    pub fn weight_hash(&self) -> String {
        let mut h = Sha256::new();
        for spec in self.layer_specs() {
            h.update((spec.in_dim as u64).to_le_bytes());
            h.update((spec.out_dim as u64).to_le_bytes());
            h.update([matches!(spec.activation, Activation::Relu) as u8]);
        }
        for (_, t) in self.named_tensors() {
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl ParamTensors for ModelParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.encoder.len() + 2);
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), &l.weight));
            out.push((format!("encoder.{i}.bias"), &l.bias));
        }
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * self.encoder.len() + 2);
        for l in &mut self.encoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }
}

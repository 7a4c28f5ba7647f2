use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{HclError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(HclError::Validation(format!(
                "layer dims must be >= 1, got {in_dim}x{out_dim}"
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Affine layer `y = act(x W + b)` with `W` stored as `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Values saved by [`Layer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Tensor,
    pre_activation: Tensor,
}

pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

impl Layer {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weight: Tensor::zeros(&[spec.in_dim, spec.out_dim]),
            bias: Tensor::zeros(&[spec.out_dim]),
        }
    }

    /// He-uniform weights, zero bias. Linear layers use the Glorot bound.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        let bound = match spec.activation {
            Activation::Relu => (6.0 / spec.in_dim as f64).sqrt(),
            Activation::None => (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt(),
        };
        let mut layer = Self::zeros(spec);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn from_parts(spec: LayerSpec, weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape() != [spec.in_dim, spec.out_dim] || bias.shape() != [spec.out_dim] {
            return Err(HclError::Dimension(format!(
                "layer {}x{} got weight {:?}, bias {:?}",
                spec.in_dim,
                spec.out_dim,
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        let (b, d) = x.expect_matrix("affine_forward")?;
        if d != self.spec.in_dim {
            return Err(HclError::Dimension(format!(
                "affine_forward: input has {d} columns, layer expects {}",
                self.spec.in_dim
            )));
        }
        let out = self.spec.out_dim;
        let w = self.weight.data();
        let mut pre = Vec::with_capacity(b * out);
        for row in x.row_iter() {
            let start = pre.len();
            pre.extend_from_slice(self.bias.data());
            let acc = &mut pre[start..];
            for (xi, wrow) in row.iter().zip(w.chunks(out)) {
                for (a, wij) in acc.iter_mut().zip(wrow) {
                    *a += xi * wij;
                }
            }
        }
        let pre = Tensor::new(vec![b, out], pre)?;
        let y = match self.spec.activation {
            Activation::None => pre.clone(),
            Activation::Relu => {
                let mut y = pre.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
        };
        Ok((
            y,
            LayerCache {
                input: x.clone(),
                pre_activation: pre,
            },
        ))
    }

    /// Gradients of the weights, bias and layer input given `grad_out = dL/dy`.
    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<LayerGrad> {
        if grad_out.shape() != cache.pre_activation.shape() {
            return Err(HclError::Dimension(format!(
                "backward: gradient {:?} vs output {:?}",
                grad_out.shape(),
                cache.pre_activation.shape()
            )));
        }
        let mut g = grad_out.clone();
        if self.spec.activation == Activation::Relu {
            for (gi, &p) in g.data_mut().iter_mut().zip(cache.pre_activation.data()) {
                if p <= 0.0 {
                    *gi = 0.0;
                }
            }
        }
        let (in_dim, out_dim) = (self.spec.in_dim, self.spec.out_dim);
        let mut gw = vec![0.0; in_dim * out_dim];
        let mut gb = vec![0.0; out_dim];
        let mut gx = Vec::with_capacity(cache.input.len());
        for (xrow, grow) in cache.input.row_iter().zip(g.row_iter()) {
            for (b, gj) in gb.iter_mut().zip(grow) {
                *b += gj;
            }
            for (xi, gwrow) in xrow.iter().zip(gw.chunks_mut(out_dim)) {
                for (a, gj) in gwrow.iter_mut().zip(grow) {
                    *a += xi * gj;
                }
            }
            for wrow in self.weight.data().chunks(out_dim) {
                gx.push(wrow.iter().zip(grow).map(|(w, gj)| w * gj).sum());
            }
        }
        Ok(LayerGrad {
            weight: Tensor::new(vec![in_dim, out_dim], gw)?,
            bias: Tensor::new(vec![out_dim], gb)?,
            input: Tensor::new(cache.input.shape().to_vec(), gx)?,
        })
    }
}

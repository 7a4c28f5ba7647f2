use log::warn;

use super::tensor::Tensor;
use crate::error::{HclError, Result};

/// A collection of named parameter tensors with a stable ordering.
pub trait ParamTensors {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

impl ParamTensors for Vec<Tensor> {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.iter()
            .enumerate()
            .map(|(i, t)| (format!("param{i}"), t))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub momentum_buffers: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
}

impl OptimizerState {
    pub fn new<P: ParamTensors>(
        params: &P,
        momentum: f64,
        weight_decay: f64,
        base_lr: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(HclError::Validation(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(HclError::Validation(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        if !(base_lr > 0.0) {
            return Err(HclError::Validation(format!(
                "base learning rate must be > 0, got {base_lr}"
            )));
        }
        Ok(Self {
            momentum_buffers: params
                .named_tensors()
                .into_iter()
                .map(|(_, t)| t.zeros_like())
                .collect(),
            momentum,
            weight_decay,
            base_lr,
        })
    }
}

/// One update: `v <- momentum * v + (grad + weight_decay * param)`, then
/// `param <- param - lr * v`.
///
/// All gradients are checked before anything is written, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn sgd_step<P: ParamTensors>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let named_grads = grads.named_tensors();
    {
        let named_params = params.named_tensors();
        if named_params.len() != named_grads.len()
            || named_params.len() != state.momentum_buffers.len()
        {
            return Err(HclError::Dimension(format!(
                "sgd_step: {} params, {} grads, {} buffers",
                named_params.len(),
                named_grads.len(),
                state.momentum_buffers.len()
            )));
        }
        for (((name, p), (_, g)), v) in named_params
            .iter()
            .zip(&named_grads)
            .zip(&state.momentum_buffers)
        {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(HclError::Dimension(format!(
                    "sgd_step: `{name}` has shape {:?}, gradient {:?}, buffer {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
            if !g.is_finite() {
                return Err(HclError::Numeric(format!("gradient of `{name}`")));
            }
        }
    }
    let (momentum, wd) = (state.momentum, state.weight_decay);
    for ((p, (_, g)), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&named_grads)
        .zip(&mut state.momentum_buffers)
    {
        for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + (gi + wd * *pi);
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Polynomial learning-rate annealing `base_lr * (1 - iter/max_iter)^power`.
///
/// `iter > max_iter` clamps to zero with a warning.
pub fn poly_lr(base_lr: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if iter > max_iter {
        warn!("poly_lr: iteration {iter} exceeds max {max_iter}; clamping lr to 0");
        return 0.0;
    }
    if max_iter == 0 {
        return base_lr;
    }
    base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::vector(vec![v])]
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = scalar(2.0);
        let g = scalar(0.5);
        let mut st = OptimizerState::new(&p, 0.0, 0.0, 0.1).unwrap();
        sgd_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p[0].data()[0], 2.0 - 0.1 * 0.5);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar(1.25);
        let g = scalar(0.0);
        let mut st = OptimizerState::new(&p, 0.9, 0.0, 0.1).unwrap();
        sgd_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p[0].data()[0], 1.25);
    }

    #[test]
    fn two_momentum_steps_match_hand_unrolled_recurrence() {
        let (mu, wd, lr) = (0.9, 5e-4, 0.1);
        // step 1: v1 = 1 + wd*1 = 1.0005; p1 = 1 - 0.1*1.0005 = 0.89995
        // step 2: v2 = 0.9*1.0005 + (1 + wd*0.89995) = 0.90045 + 1.000449975 = 1.900899975
        //         p2 = 0.89995 - 0.1*1.900899975 = 0.7098600025
        let v1 = 1.0 + wd * 1.0;
        let p1 = 1.0 - lr * v1;
        let v2 = mu * v1 + (1.0 + wd * p1);
        let p2 = p1 - lr * v2;
        assert!((p2 - 0.7098600025f64).abs() < 1e-15);

        let mut p = scalar(1.0);
        let g = scalar(1.0);
        let mut st = OptimizerState::new(&p, mu, wd, lr).unwrap();
        sgd_step(&mut p, &g, &mut st, lr).unwrap();
        sgd_step(&mut p, &g, &mut st, lr).unwrap();
        assert!((p[0].data()[0] - p2).abs() <= 1e-15);
        assert!((st.momentum_buffers[0].data()[0] - v2).abs() <= 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        let g = vec![Tensor::vector(vec![0.0]), Tensor::vector(vec![f64::NAN])];
        let mut st = OptimizerState::new(&p, 0.9, 0.0, 0.1).unwrap();
        let err = sgd_step(&mut p, &g, &mut st, 0.1).unwrap_err();
        assert!(err.to_string().contains("param1"), "{err}");
        assert_eq!(p[0].data()[0], 1.0);
    }

    #[test]
    fn optimizer_rejects_bad_hyperparameters() {
        let p = scalar(0.0);
        assert!(OptimizerState::new(&p, 1.0, 0.0, 0.1).is_err());
        assert!(OptimizerState::new(&p, 0.5, -1.0, 0.1).is_err());
        assert!(OptimizerState::new(&p, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn poly_lr_anchors() {
        assert_eq!(poly_lr(0.01, 0, 100, 0.9), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100, 0.9), 0.0);
        // 0.5^0.9 = exp(0.9 ln 0.5)
        let expected = (0.9 * 0.5f64.ln()).exp();
        assert!((poly_lr(1.0, 50, 100, 0.9) - expected).abs() < 1e-15);
        assert!((expected - 0.535887).abs() < 1e-6);
        assert_eq!(poly_lr(0.01, 101, 100, 0.9), 0.0);
    }
}

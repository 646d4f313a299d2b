use super::mlp::MlpParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state for one [`MlpParams`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads` follows [`MlpParams::tensors`] order.
    pub fn step(&mut self, params: &mut MlpParams, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Config(format!(
                "adam: {} gradients for {} parameter tensors",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, Layer};

    fn scalar_param(x: f64) -> MlpParams {
        MlpParams::from_layers(vec![Layer {
            weight: Tensor::matrix(1, 1, vec![x]).unwrap(),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_param(0.7);
        let before = p.clone();
        let mut adam = Adam::new(&p, AdamConfig::default());
        let grads: Vec<Tensor> = p.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        for _ in 0..10 {
            adam.step(&mut p, &grads).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias-corrected both to 1 -> update = lr / (1 + eps)
        let mut p = scalar_param(0.0);
        let mut adam = Adam::new(
            &p,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        let grads = vec![Tensor::matrix(1, 1, vec![1.0]).unwrap(), Tensor::zeros(&[1])];
        adam.step(&mut p, &grads).unwrap();
        let w = p.layers()[0].weight.data()[0];
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-12, "{w} vs {expected}");
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut p = scalar_param(0.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        assert!(adam.step(&mut p, &[Tensor::zeros(&[1, 1])]).is_err());
        let bad = vec![Tensor::zeros(&[2, 1]), Tensor::zeros(&[1])];
        assert!(adam.step(&mut p, &bad).is_err());
    }
}

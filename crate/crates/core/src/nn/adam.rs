use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First and second moment estimates for every parameter of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_weights: Vec<Array2<f64>>,
    v_biases: Vec<Array1<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        let zeros = Gradients::zeros_like(mlp);
        Self {
            config,
            m_weights: zeros.weights.clone(),
            m_biases: zeros.biases.clone(),
            v_weights: zeros.weights,
            v_biases: zeros.biases,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected descent step along `grads`.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if grads.weights.len() != mlp.layers.len()
            || grads
                .weights
                .iter()
                .zip(&mlp.layers)
                .any(|(g, l)| g.dim() != l.weight.dim())
        {
            return Err(NnError::Shape {
                expected: mlp.parameter_count(),
                got: grads.iter().count(),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite);
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (idx, layer) in mlp.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weight)
                .and(&mut self.m_weights[idx])
                .and(&mut self.v_weights[idx])
                .and(&grads.weights[idx])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut self.m_biases[idx])
                .and(&mut self.v_biases[idx])
                .and(&grads.biases[idx])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(value: f64) -> Mlp {
        let mut net = Mlp::new(1, &[], 1, Activation::Identity, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(0));
        net.parameters_mut().for_each(|p| *p = value);
        net
    }

    fn constant_grad(net: &Mlp, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(net);
        grads.weights.iter_mut().for_each(|w| w.fill(g));
        grads.biases.iter_mut().for_each(|b| b.fill(g));
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar(1.0);
        let mut adam = Adam::new(&net, AdamConfig::default());
        let g = constant_grad(&net, 1.0);
        adam.step(&mut net, &g).unwrap();
        // m_hat = 1, v_hat = 1: delta = lr / (1 + eps).
        let expected = 1.0 - 3e-4 / (1.0 + 1e-8);
        assert!(net.parameters().all(|p| (p - expected).abs() < 1e-15));
    }

    #[test]
    fn two_constant_steps_move_two_learning_rates() {
        let mut net = scalar(0.0);
        let mut adam = Adam::new(&net, AdamConfig::with_learning_rate(0.01));
        let g = constant_grad(&net, 2.5);
        adam.step(&mut net, &g).unwrap();
        adam.step(&mut net, &g).unwrap();
        // Hand iteration: m1 = 0.25, v1 = 0.00625; m2 = 0.475, v2 = 0.01249375.
        // m_hat2 = 0.475 / 0.19 = 2.5, v_hat2 = 0.01249375 / 0.001999 = 6.25.
        let step = |m_hat: f64, v_hat: f64| 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        let expected = -(step(2.5, 6.25) + step(2.5, 6.25));
        assert!(net.parameters().all(|p| (p - expected).abs() < 1e-12));
        assert!(net.parameters().all(|p| (p + 0.02).abs() < 1e-8));
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut net = scalar(0.7);
        let before = net.clone();
        let mut adam = Adam::new(&net, AdamConfig::default());
        let g = constant_grad(&net, 0.0);
        adam.step(&mut net, &g).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = scalar(0.7);
        let before = net.clone();
        let mut adam = Adam::new(&net, AdamConfig::default());
        let g = constant_grad(&net, f64::NAN);
        assert!(matches!(adam.step(&mut net, &g), Err(NnError::NonFinite)));
        assert_eq!(net, before);
        assert_eq!(adam.steps(), 0);
    }
}

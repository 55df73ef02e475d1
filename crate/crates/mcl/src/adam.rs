//! Adam optimizer over named parameter sets.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Scalar> Default for AdamConfig<F> {
    /// lr 1e-4, beta1 0, beta2 0.999, eps 1e-8.
    fn default() -> Self {
        AdamConfig {
            learning_rate: F::from_f64(1e-4),
            beta1: F::zero(),
            beta2: F::from_f64(0.999),
            epsilon: F::from_f64(1e-8),
        }
    }
}

/// Per-parameter first/second moments plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    config: AdamConfig<F>,
    step: u64,
    slots: Vec<(String, Tensor<F>, Tensor<F>)>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig<F>, params: &ParamSet<F>) -> Self {
        let slots = params
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    Tensor::zeros(t.dims().to_vec()),
                    Tensor::zeros(t.dims().to_vec()),
                )
            })
            .collect();
        AdamState { config, step: 0, slots }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig<F> {
        &self.config
    }

    /// One bias-corrected update. Gradients are validated first; a non-finite
    /// gradient aborts the step with parameters untouched.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) -> Result<()> {
        for (name, _, _) in &self.slots {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing gradient for {name}")))?;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient for {name}")));
            }
        }
        self.step += 1;
        let t = self.step;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bc1 = F::one() - beta1.powi(t as i32);
        let bc2 = F::one() - beta2.powi(t as i32);
        for (name, m, v) in &mut self.slots {
            let g = grads.get(name).unwrap();
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = beta1 * *mv + (F::one() - beta1) * gv;
                *vv = beta2 * *vv + (F::one() - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// First moment for a parameter, for diagnostics and tests.
    pub fn first_moment(&self, name: &str) -> Option<&Tensor<F>> {
        self.slots
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, m, _)| m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        p
    }

    fn grad_of(value: f64) -> ParamSet<f64> {
        let mut g = ParamSet::new();
        g.insert("p", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = single_param(1.5);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        state.step(&mut params, &grad_of(0.0)).unwrap();
        assert_eq!(params.get("p").unwrap().data(), &[1.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn beta1_zero_makes_first_moment_the_gradient() {
        let mut params = single_param(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        state.step(&mut params, &grad_of(0.7)).unwrap();
        assert_eq!(state.first_moment("p").unwrap().data(), &[0.7]);
        state.step(&mut params, &grad_of(-0.2)).unwrap();
        assert_eq!(state.first_moment("p").unwrap().data(), &[-0.2]);
    }

    #[test]
    fn single_step_matches_scalar_oracle() {
        // Hand-rolled scalar Adam, one step on p=1 with g=1.
        let (lr, b1, b2, eps) = (1e-4, 0.0, 0.999, 1e-8);
        let m = (1.0 - b1) * 1.0;
        let v: f64 = (1.0 - b2) * 1.0;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let expected = 1.0 - lr * m_hat / (v_hat.sqrt() + eps);

        let mut params = single_param(1.0);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        state.step(&mut params, &grad_of(1.0)).unwrap();
        let got = params.get("p").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15);
        assert!((got - (1.0 - 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn multi_step_matches_scalar_oracle() {
        let cfg = AdamConfig { learning_rate: 0.01, beta1: 0.0, beta2: 0.999, epsilon: 1e-8 };
        let grads = [0.4, -0.3, 1.2, 0.05];
        let mut p = 0.8;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
            p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }

        let mut params = single_param(0.8);
        let mut state = AdamState::new(cfg, &params);
        for &g in &grads {
            state.step(&mut params, &grad_of(g)).unwrap();
        }
        assert!((params.get("p").unwrap().data()[0] - p).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let cfg = AdamConfig { learning_rate: 0.0, ..AdamConfig::default() };
        let mut params = single_param(2.5);
        let mut state = AdamState::new(cfg, &params);
        for g in [1.0, -2.0, 0.3] {
            state.step(&mut params, &grad_of(g)).unwrap();
        }
        assert_eq!(params.get("p").unwrap().data(), &[2.5]);
    }

    #[test]
    fn nan_gradient_aborts_without_mutation() {
        let mut params = single_param(1.0);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let err = state.step(&mut params, &grad_of(f64::NAN));
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(params.get("p").unwrap().data(), &[1.0]);
        assert_eq!(state.step_count(), 0);
    }
}

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Multiply the learning rate by `factor` once every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

impl StepDecay {
    pub fn none() -> Self {
        StepDecay { every: 0, factor: 1.0 }
    }

    pub fn lr_at(&self, base_lr: f64, epoch: usize) -> f64 {
        if self.every == 0 {
            return base_lr;
        }
        base_lr * self.factor.powi((epoch / self.every) as i32)
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction and a step-decay learning-rate schedule.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    decay: StepDecay,
    lr: f64,
    step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    /// Moment buffers are sized from `params`, in the order later passed to
    /// [`Adam::step`].
    pub fn new(config: AdamConfig, decay: StepDecay, params: &[&Tensor]) -> Result<Self> {
        if config.lr.is_nan() || config.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", config.lr)));
        }
        let moments = params
            .iter()
            .map(|p| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            })
            .collect();
        Ok(Adam {
            config,
            decay,
            lr: config.lr,
            step: 0,
            moments,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Sets the learning rate for the (0-based) `epoch` from the schedule.
    pub fn apply_decay(&mut self, epoch: usize) {
        self.lr = self.decay.lr_at(self.config.lr, epoch);
    }

    /// One update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != params.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.moments.len(),
                params.len(),
                grads.len()
            )));
        }
        let next = self.step + 1;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
                    step: next,
                });
            }
        }
        self.step = next;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(next as i32);
        let bc2 = 1.0 - beta2.powi(next as i32);
        for ((p, g), mo) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            for (((w, &gv), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut mo.m).zip(&mut mo.v) {
                *m = beta1 * *m + (1.0 - beta1) * gv;
                *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![0.5, -2.0, 3.0]);
        let g = Tensor::vector(vec![1.0; 3]);
        let mut adam = Adam::new(AdamConfig::default(), StepDecay::none(), &[&p]).unwrap();
        adam.step(&mut [&mut p], &[g], &["p".into()]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = 1e-3 / (1.0 + 1e-8);
        for (after, before) in p.data().iter().zip([0.5, -2.0, 3.0]) {
            assert!((before - after - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![0.5, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), StepDecay::none(), &[&p]).unwrap();
        for _ in 0..3 {
            adam.step(&mut [&mut p], &[Tensor::zeros(&[2])], &["p".into()]).unwrap();
        }
        assert_eq!(p.data(), &[0.5, -2.0]);
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        };
        let decay = StepDecay { every: 20, factor: 0.1 };
        let mut adam = Adam::new(cfg, decay, &[]).unwrap();
        adam.apply_decay(19);
        assert_eq!(adam.lr(), 1e-4);
        adam.apply_decay(20);
        assert!((adam.lr() - 1e-5).abs() < 1e-20);
        adam.apply_decay(40);
        assert!((adam.lr() - 1e-6).abs() < 1e-21);
    }

    #[test]
    fn nan_gradient_names_param_and_step() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default(), StepDecay::none(), &[&p]).unwrap();
        adam.step(&mut [&mut p], &[Tensor::vector(vec![0.1])], &["w".into()])
            .unwrap();
        let err = adam
            .step(
                &mut [&mut p],
                &[Tensor::vector(vec![f64::NAN])],
                &["trunk.weight".into()],
            )
            .unwrap_err();
        match err {
            Error::NonFiniteGradient { param, step } => {
                assert_eq!(param, "trunk.weight");
                assert_eq!(step, 2);
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(adam.step_count(), 1);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what, value: f64, ok: bool, range| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(Error::Range { what, value, range })
            }
        };
        check("lr", self.lr, self.lr > 0.0, "(0, inf)")?;
        check("beta1", self.beta1, (0.0..1.0).contains(&self.beta1), "[0, 1)")?;
        check("beta2", self.beta2, (0.0..1.0).contains(&self.beta2), "[0, 1)")?;
        check("epsilon", self.epsilon, self.epsilon > 0.0, "(0, inf)")
    }
}

/// Bias-corrected Adam with first and second moment buffers per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F = f32> {
    config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<F>>) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<F>> = params.into_iter().map(|p| vec![F::zero(); p.numel()]).collect();
        Ok(Self {
            config,
            v: zeros.clone(),
            m: zeros,
            t: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<F>], &[Vec<F>]) {
        (&self.m, &self.v)
    }

    /// One update. Every gradient is checked before anything moves, so a
    /// non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[&[F]], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, got {} with {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if g.len() != p.numel() {
                return Err(Error::conform("adam_step", p.shape(), &[g.len()]));
            }
            if g.iter().any(|v| !v.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::DivergedTraining {
                    what: format!("gradient of {name}"),
                    last_good: None,
                });
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = F::of(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (F::of(c.lr), F::of(c.epsilon));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(*g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *w = *w - lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

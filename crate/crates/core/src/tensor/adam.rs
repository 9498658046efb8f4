use serde::{Deserialize, Serialize};

use super::{HasParams, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// First/second moment estimates for every trainable parameter, in visit
/// order. Moments are created lazily on the first step.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one bias-corrected adam update from the accumulated gradients.
    pub fn update<M: HasParams<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        if self.m.is_empty() {
            model.visit("", &mut |_, p| {
                if p.trainable {
                    self.m.push(Tensor::zeros(p.value.shape()));
                    self.v.push(Tensor::zeros(p.value.shape()));
                }
            });
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::lit(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let mut idx = 0;
        let mut err = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_mut("", &mut |name, p| {
            if !p.trainable || err.is_some() {
                return;
            }
            let (Some(m), Some(v)) = (ms.get_mut(idx), vs.get_mut(idx)) else {
                err = Some(Error::Geometry(format!("adam state has no slot for {name:?}")));
                return;
            };
            idx += 1;
            if m.shape() != p.value.shape() {
                err = Some(Error::Geometry(format!(
                    "adam moment for {name:?} is {:?}, parameter is {:?}",
                    m.shape(),
                    p.value.shape()
                )));
                return;
            }
            let grads = p.grad.data();
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        });
        if err.is_none() && idx != self.m.len() {
            err = Some(Error::Geometry(format!(
                "adam state tracks {} parameters, model has {idx}",
                self.m.len()
            )));
        }
        err.map_or(Ok(()), Err)
    }
}

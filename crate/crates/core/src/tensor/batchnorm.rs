use super::{join, HasParams, Mode, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics momentum: `running = m·running + (1 − m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// Batch normalization over the last axis. Every other axis counts as batch,
/// so an NHWC tensor is normalized per channel over `N·H·W` positions.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    mode: Mode,
    shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::filled(&[channels], T::one())),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        let c = self.channels();
        match input.shape().last() {
            Some(&last) if last == c && input.len() > 0 => Ok((input.len() / c, c)),
            _ => Err(Error::Geometry(format!(
                "batchnorm over {c} channels got shape {:?}",
                input.shape()
            ))),
        }
    }

    /// Inference-mode forward without touching the cache.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c) = self.check(input)?;
        let eps = T::lit(BN_EPS);
        let scale: Vec<T> = (0..c)
            .map(|j| self.gamma.value.data()[j] / (self.running_var.value.data()[j] + eps).sqrt())
            .collect();
        let mut out = input.clone();
        for row in out.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - self.running_mean.value.data()[j]) * scale[j] + self.beta.value.data()[j];
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (m, c) = self.check(input)?;
        let eps = T::lit(BN_EPS);
        let x = input.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::Geometry(
                        "batchnorm in train mode needs at least 2 values per channel".into(),
                    ));
                }
                let mf = T::lit(m as f64);
                let mut mean = vec![T::zero(); c];
                for row in x.chunks(c) {
                    for j in 0..c {
                        mean[j] = mean[j] + row[j];
                    }
                }
                mean.iter_mut().for_each(|v| *v = *v / mf);
                let mut var = vec![T::zero(); c];
                for row in x.chunks(c) {
                    for j in 0..c {
                        let d = row[j] - mean[j];
                        var[j] = var[j] + d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / mf);

                let mom = T::lit(BN_MOMENTUM);
                let rm = self.running_mean.value.data_mut();
                for j in 0..c {
                    rm[j] = mom * rm[j] + (T::one() - mom) * mean[j];
                }
                let rv = self.running_var.value.data_mut();
                for j in 0..c {
                    rv[j] = mom * rv[j] + (T::one() - mom) * var[j];
                }
                (mean, var)
            }
            Mode::Infer => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for (i, (&xi, (h, o))) in x.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let j = i % c;
            *h = (xi - mean[j]) * inv_std[j];
            *o = g[j] * *h + b[j];
        }
        self.cache = Some(Cache {
            mode,
            shape: input.shape().to_vec(),
            xhat,
            inv_std,
        });
        Tensor::from_vec(input.shape(), out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Geometry("batchnorm backward without forward".into()))?;
        upstream.expect_shape(&cache.shape)?;
        let c = self.channels();
        let dy = upstream.data();
        let m = dy.len() / c;
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (dy_row, xh_row) in dy.chunks(c).zip(cache.xhat.chunks(c)) {
            for j in 0..c {
                sum_dy[j] = sum_dy[j] + dy_row[j];
                sum_dy_xhat[j] = sum_dy_xhat[j] + dy_row[j] * xh_row[j];
            }
        }
        for j in 0..c {
            let gg = self.gamma.grad.data_mut();
            gg[j] = gg[j] + sum_dy_xhat[j];
            let bg = self.beta.grad.data_mut();
            bg[j] = bg[j] + sum_dy[j];
        }
        let gamma = self.gamma.value.data();
        let mut dx = vec![T::zero(); dy.len()];
        match cache.mode {
            Mode::Train => {
                let mf = T::lit(m as f64);
                for ((dx_row, dy_row), xh_row) in dx.chunks_mut(c).zip(dy.chunks(c)).zip(cache.xhat.chunks(c)) {
                    for j in 0..c {
                        let k = gamma[j] * cache.inv_std[j] / mf;
                        dx_row[j] = k * (mf * dy_row[j] - sum_dy[j] - xh_row[j] * sum_dy_xhat[j]);
                    }
                }
            }
            Mode::Infer => {
                for (dx_row, dy_row) in dx.chunks_mut(c).zip(dy.chunks(c)) {
                    for j in 0..c {
                        dx_row[j] = dy_row[j] * gamma[j] * cache.inv_std[j];
                    }
                }
            }
        }
        Tensor::from_vec(&cache.shape, dx)
    }
}

impl<T: Real> HasParams<T> for BatchNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

use rand::Rng;

use super::{fan_in_bound, join, matmul, HasParams, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = x·W + b` with `W: [d_in, d_out]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Dense {
            weight: Param::new(Tensor::uniform(&[d_in, d_out], fan_in_bound(d_in), rng)),
            bias: Param::new(Tensor::zeros(&[d_out])),
            cache: None,
        }
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::Geometry(format!("dense weight must be rank 2, got {:?}", weight.shape())));
        }
        bias.expect_shape(&[weight.shape()[1]])?;
        Ok(Dense {
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// Forward without caching, for read-only inference.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        if input.rank() != 2 || input.shape()[1] != d_in {
            return Err(Error::Geometry(format!(
                "dense expects [N, {d_in}], got {:?}",
                input.shape()
            )));
        }
        let n = input.shape()[0];
        let mut out = vec![T::zero(); n * d_out];
        for row in out.chunks_mut(d_out) {
            row.copy_from_slice(self.bias.value.data());
        }
        matmul(input.data(), false, self.weight.value.data(), false, &mut out, n, d_in, d_out, true)?;
        Tensor::from_vec(&[n, d_out], out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::Geometry("dense backward without forward".into()))?;
        let (n, d_in, d_out) = (input.shape()[0], self.d_in(), self.d_out());
        upstream.expect_shape(&[n, d_out])?;
        matmul(input.data(), true, upstream.data(), false, self.weight.grad.data_mut(), d_in, n, d_out, true)?;
        let bg = self.bias.grad.data_mut();
        for row in upstream.data().chunks(d_out) {
            for (g, &u) in bg.iter_mut().zip(row) {
                *g = *g + u;
            }
        }
        let mut dx = vec![T::zero(); n * d_in];
        matmul(upstream.data(), false, self.weight.value.data(), true, &mut dx, n, d_out, d_in, false)?;
        Tensor::from_vec(&[n, d_in], dx)
    }
}

impl<T: Real> HasParams<T> for Dense<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

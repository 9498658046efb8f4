use super::{Real, Tensor};
use crate::error::{Error, Result};

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Logistic sigmoid, evaluated in a form that never overflows.
pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `d tanh` given the forward output `y = tanh(x)`.
pub fn tanh_backward<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    zip_grad(output, upstream, |y| T::one() - y * y)
}

/// `d sigmoid` given the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    zip_grad(output, upstream, |y| y * (T::one() - y))
}

fn zip_grad<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>, local: impl Fn(T) -> T) -> Result<Tensor<T>> {
    if output.shape() != upstream.shape() {
        return Err(Error::Geometry(format!(
            "activation gradient shape {:?} vs output {:?}",
            upstream.shape(),
            output.shape()
        )));
    }
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &u)| local(y) * u)
        .collect();
    Tensor::from_vec(output.shape(), data)
}

macro_rules! activation_layer {
    ($name:ident, $fwd:ident, $bwd:ident) => {
        /// Caching wrapper so the activation composes like a layer.
        #[derive(Debug, Clone, Default)]
        pub struct $name<T> {
            output: Option<Tensor<T>>,
        }

        impl<T: Real> $name<T> {
            pub fn new() -> Self {
                $name { output: None }
            }

            pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
                let y = $fwd(x);
                self.output = Some(y.clone());
                y
            }

            pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
                let y = self.output.take().ok_or_else(|| {
                    Error::Geometry(concat!(stringify!($name), " backward without forward").into())
                })?;
                $bwd(&y, upstream)
            }
        }
    };
}

activation_layer!(Tanh, tanh, tanh_backward);
activation_layer!(Sigmoid, sigmoid, sigmoid_backward);

//! Dense numeric kernel: tensors, layers with hand-written backward passes,
//! losses, the adam optimizer and a finite-difference gradient checker.
//!
//! Every layer is generic over [`Real`] so the same code trains in `f32` and
//! is gradient-checked in `f64`. Layers cache what their backward pass needs
//! during `forward` and accumulate parameter gradients into [`Param::grad`].

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod dense;
pub mod gradcheck;
mod linalg;
mod loss;
mod lstm;
pub mod weights;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

pub use activation::{sigmoid, sigmoid_backward, tanh, tanh_backward, Sigmoid, Tanh};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BN_EPS, BN_MOMENTUM};
pub use conv::{Conv2d, ConvTranspose2d, Padding};
pub use dense::Dense;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use linalg::matmul;
pub use loss::{mse_loss, weighted_bce_loss, LossOutput, PROB_CLAMP};
pub use lstm::{Lstm, LstmState};

/// Floating-point element type for tensors.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Sum + 'static
{
    /// Raw GEMM entry point; see [`matmul`] for the safe wrapper.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real")
    }
}

impl Real for f32 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
    ) {
        // SAFETY: `linalg::matmul` checks every slice length against the
        // dimensions and strides before calling in.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

impl Real for f64 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
    ) {
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Geometry(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform samples in `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Geometry(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Adds `other` elementwise. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Geometry(format!(
                "expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Leading extent (batch size for batched tensors).
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Concatenates two rank-2 tensors along the feature axis.
    pub fn concat_cols(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0] {
            return Err(Error::Geometry(format!(
                "cannot concatenate {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let (n, da, db) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut data = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            data.extend_from_slice(&a.data[i * da..(i + 1) * da]);
            data.extend_from_slice(&b.data[i * db..(i + 1) * db]);
        }
        Tensor::from_vec(&[n, da + db], data)
    }

    /// Splits a rank-2 tensor's columns at `at`; inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        if self.rank() != 2 || at > self.shape[1] {
            return Err(Error::Geometry(format!(
                "cannot split {:?} at column {at}",
                self.shape
            )));
        }
        let (n, d) = (self.shape[0], self.shape[1]);
        let mut left = Vec::with_capacity(n * at);
        let mut right = Vec::with_capacity(n * (d - at));
        for row in self.data.chunks(d) {
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        Ok((
            Tensor::from_vec(&[n, at], left)?,
            Tensor::from_vec(&[n, d - at], right)?,
        ))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let n = self.batch();
        if start > end || end > n {
            return Err(Error::Geometry(format!(
                "batch slice {start}..{end} out of range for {n}"
            )));
        }
        let stride = if n == 0 { 0 } else { self.len() / n };
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::from_vec(&shape, self.data[start * stride..end * stride].to_vec())
    }
}

/// A trainable (or buffered) parameter with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Buffers such as batchnorm running statistics are serialized but not
    /// optimized.
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: Tensor<T>) -> Self {
        Param {
            trainable: false,
            ..Param::new(value)
        }
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
            trainable: self.trainable,
        }
    }
}

/// Models and layers expose their parameters by name through a visitor.
/// Visit order is stable and defines the serialization and optimizer order.
pub trait HasParams<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.grad.fill(T::zero()));
    }

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    /// `(name, value)` pairs for every parameter and buffer.
    fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    /// Overwrites parameters from named tensors; every parameter must be
    /// present with a matching shape.
    fn load_named(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let mut err = None;
        self.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match tensors.iter().find(|(n, _)| n == name) {
                None => err = Some(Error::Format(format!("missing tensor {name:?}"))),
                Some((_, t)) if t.shape() != p.value.shape() => {
                    err = Some(Error::Geometry(format!(
                        "tensor {name:?} has shape {:?}, expected {:?}",
                        t.shape(),
                        p.value.shape()
                    )))
                }
                Some((_, t)) => p.value = t.clone(),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// All trainable parameter values, flattened in visit order.
    fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit("", &mut |_, p| {
            if p.trainable {
                out.extend_from_slice(p.value.data())
            }
        });
        out
    }

    /// All trainable parameter gradients, flattened in visit order.
    fn flat_grads(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit("", &mut |_, p| {
            if p.trainable {
                out.extend_from_slice(p.grad.data())
            }
        });
        out
    }

    fn set_flat_params(&mut self, flat: &[T]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, p| {
            if p.trainable {
                let n = p.value.len();
                p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Forward-pass mode for layers whose behavior differs between training and
/// inference (batchnorm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Uniform fan-in initialization bound, `sqrt(3 / fan_in)`, which gives
/// unit-variance pre-activations for unit-variance inputs.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in.max(1) as f64).sqrt()
}

//! 2-D convolution and transposed convolution over NHWC tensors, both built
//! on im2col/col2im plus GEMM.

use rand::Rng;

use super::{fan_in_bound, join, matmul, HasParams, Param, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, zero padding split with the extra
    /// row/column at the bottom/right.
    Same,
    /// No padding; output extent `(in - k) / stride + 1`.
    Valid,
}

/// Geometry of a convolution from an `h×w×c` image to `out_h×out_w` with a
/// `k×k` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

fn out_extent(input: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out.saturating_sub(1)) * stride + k).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < k {
                return Err(Error::Geometry(format!(
                    "valid convolution needs extent >= {k}, got {input}"
                )));
            }
            Ok(((input - k) / stride + 1, 0))
        }
    }
}

impl Geometry {
    fn new(h: usize, w: usize, c: usize, k: usize, stride: usize, padding: Padding) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(Error::Geometry("stride and kernel size must be >= 1".into()));
        }
        let (out_h, pad_top) = out_extent(h, k, stride, padding)?;
        let (out_w, pad_left) = out_extent(w, k, stride, padding)?;
        Ok(Geometry {
            h,
            w,
            c,
            k,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }

    /// Source pixel for output `(oy, ox)` and kernel tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    /// `[n·out_h·out_w, k·k·c]` patch matrix.
    fn im2col<T: Real>(&self, n: usize, input: &[T]) -> Vec<T> {
        let pl = self.patch_len();
        let mut cols = vec![T::zero(); n * self.out_h * self.out_w * pl];
        let c = self.c;
        for b in 0..n {
            let img = &input[b * self.h * self.w * c..(b + 1) * self.h * self.w * c];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = ((b * self.out_h + oy) * self.out_w + ox) * pl;
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                let dst = row + (ky * self.k + kx) * c;
                                let src = (y * self.w + x) * c;
                                cols[dst..dst + c].copy_from_slice(&img[src..src + c]);
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds a patch matrix back onto an `[n, h, w, c]` image.
    fn col2im<T: Real>(&self, n: usize, cols: &[T]) -> Vec<T> {
        let pl = self.patch_len();
        let c = self.c;
        let mut out = vec![T::zero(); n * self.h * self.w * c];
        for b in 0..n {
            let img = &mut out[b * self.h * self.w * c..(b + 1) * self.h * self.w * c];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = ((b * self.out_h + oy) * self.out_w + ox) * pl;
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                let src = row + (ky * self.k + kx) * c;
                                let dst = (y * self.w + x) * c;
                                for ch in 0..c {
                                    img[dst + ch] = img[dst + ch] + cols[src + ch];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn nhwc(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, h, w, c] => Ok((n, h, w, c)),
        ref s => Err(Error::Geometry(format!("{what} expects an NHWC tensor, got {s:?}"))),
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    let c = bias.len();
    for row in out.chunks_mut(c) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], upstream: &[T]) {
    let c = grad.len();
    for row in upstream.chunks(c) {
        for (g, &u) in grad.iter_mut().zip(row) {
            *g = *g + u;
        }
    }
}

/// Convolution with kernel `[k, k, c_in, c_out]` and per-output-channel bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: Padding,
    cache: Option<(Geometry, usize, Vec<T>)>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng>(
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let bound = fan_in_bound(k * k * c_in);
        Conv2d {
            kernel: Param::new(Tensor::uniform(&[k, k, c_in, c_out], bound, rng)),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn from_params(kernel: Tensor<T>, bias: Tensor<T>, stride: usize, padding: Padding) -> Result<Self> {
        if kernel.rank() != 4 || kernel.shape()[0] != kernel.shape()[1] {
            return Err(Error::Geometry(format!("conv kernel must be [k,k,cin,cout], got {:?}", kernel.shape())));
        }
        bias.expect_shape(&[kernel.shape()[3]])?;
        Ok(Conv2d {
            kernel: Param::new(kernel),
            bias: Param::new(bias),
            stride,
            padding,
            cache: None,
        })
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.kernel.value.shape();
        (s[0], s[2], s[3])
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (k, c_in, c_out) = self.dims();
        let [n, h, w, c] = *input else {
            return Err(Error::Geometry(format!("conv2d expects NHWC, got {input:?}")));
        };
        if c != c_in {
            return Err(Error::Geometry(format!("conv2d expects {c_in} channels, got {c}")));
        }
        let g = Geometry::new(h, w, c, k, self.stride, self.padding)?;
        Ok(vec![n, g.out_h, g.out_w, c_out])
    }

    /// Forward without caching, for read-only inference.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input)?.0)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, cache) = self.run(input)?;
        self.cache = Some(cache);
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, input: &Tensor<T>) -> Result<(Tensor<T>, (Geometry, usize, Vec<T>))> {
        let (k, c_in, c_out) = self.dims();
        let (n, h, w, c) = nhwc(input, "conv2d")?;
        if c != c_in {
            return Err(Error::Geometry(format!("conv2d expects {c_in} channels, got {c}")));
        }
        let g = Geometry::new(h, w, c, k, self.stride, self.padding)?;
        let cols = g.im2col(n, input.data());
        let rows = n * g.out_h * g.out_w;
        let mut out = vec![T::zero(); rows * c_out];
        matmul(&cols, false, self.kernel.value.data(), false, &mut out, rows, g.patch_len(), c_out, false)?;
        add_bias(&mut out, self.bias.value.data());
        Ok((Tensor::from_vec(&[n, g.out_h, g.out_w, c_out], out)?, (g, n, cols)))
    }

    /// Gradient w.r.t. the last forward input; parameter gradients accumulate.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, c_out) = self.dims();
        let (g, n, cols) = self
            .cache
            .take()
            .ok_or_else(|| Error::Geometry("conv2d backward without forward".into()))?;
        upstream.expect_shape(&[n, g.out_h, g.out_w, c_out])?;
        let rows = n * g.out_h * g.out_w;
        let pl = g.patch_len();
        matmul(&cols, true, upstream.data(), false, self.kernel.grad.data_mut(), pl, rows, c_out, true)?;
        accumulate_bias_grad(self.bias.grad.data_mut(), upstream.data());
        let mut dcols = vec![T::zero(); rows * pl];
        matmul(upstream.data(), false, self.kernel.value.data(), true, &mut dcols, rows, c_out, pl, false)?;
        Tensor::from_vec(&[n, g.h, g.w, g.c], g.col2im(n, &dcols))
    }
}

impl<T: Real> HasParams<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution (the adjoint of [`Conv2d`] in its input), mapping
/// `h×w` to `h·stride × w·stride` under same padding.
///
/// The kernel is stored as `[k, k, c_out, c_in]`, i.e. as the kernel of the
/// forward convolution this layer is the transpose of.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    cache: Option<(Geometry, usize, Tensor<T>)>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng>(k: usize, c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Self {
        // Each output pixel receives roughly k²/stride² taps of c_in channels.
        let taps = (k * k).div_ceil(stride * stride) * c_in;
        let bound = fan_in_bound(taps);
        ConvTranspose2d {
            kernel: Param::new(Tensor::uniform(&[k, k, c_out, c_in], bound, rng)),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            cache: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.kernel.value.shape();
        (s[0], s[3], s[2])
    }

    fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        let (k, _, c_out) = self.dims();
        Geometry::new(h * self.stride, w * self.stride, c_out, k, self.stride, Padding::Same)
    }

    /// Forward without caching, for read-only inference.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c_in, c_out) = self.dims();
        let (n, h, w, c) = nhwc(input, "conv_transpose2d")?;
        if c != c_in {
            return Err(Error::Geometry(format!("conv_transpose2d expects {c_in} channels, got {c}")));
        }
        let g = self.geometry(h, w)?;
        debug_assert_eq!((g.out_h, g.out_w), (h, w));
        let rows = n * h * w;
        let pl = g.patch_len();
        let mut cols = vec![T::zero(); rows * pl];
        matmul(input.data(), false, self.kernel.value.data(), true, &mut cols, rows, c_in, pl, false)?;
        let mut out = g.col2im(n, &cols);
        add_bias(&mut out, self.bias.value.data());
        Tensor::from_vec(&[n, g.h, g.w, c_out], out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        let g = self.geometry(input.shape()[1], input.shape()[2])?;
        self.cache = Some((g, input.shape()[0], input.clone()));
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c_in, c_out) = self.dims();
        let (g, n, input) = self
            .cache
            .take()
            .ok_or_else(|| Error::Geometry("conv_transpose2d backward without forward".into()))?;
        upstream.expect_shape(&[n, g.h, g.w, c_out])?;
        accumulate_bias_grad(self.bias.grad.data_mut(), upstream.data());
        let dcols = g.im2col(n, upstream.data());
        let rows = n * g.out_h * g.out_w;
        let pl = g.patch_len();
        matmul(&dcols, true, input.data(), false, self.kernel.grad.data_mut(), pl, rows, c_in, true)?;
        let mut dx = vec![T::zero(); rows * c_in];
        matmul(&dcols, false, self.kernel.value.data(), false, &mut dx, rows, pl, c_in, false)?;
        Tensor::from_vec(&[n, g.out_h, g.out_w, c_in], dx)
    }
}

impl<T: Real> HasParams<T> for ConvTranspose2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_input, check_layer_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-sum convolution used as an independent oracle.
    fn naive_conv(input: &Tensor<f64>, kernel: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
        let (n, h, w, c) = nhwc(input, "").unwrap();
        let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
        let (oh, pt) = out_extent(h, k, stride, padding).unwrap();
        let (ow, pl) = out_extent(w, k, stride, padding).unwrap();
        let mut out = Tensor::zeros(&[n, oh, ow, cout]);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for f in 0..cout {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pt as isize;
                                let x = (ox * stride + kx) as isize - pl as isize;
                                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    acc += input.data()[((b * h + y as usize) * w + x as usize) * c + ch]
                                        * kernel.data()[((ky * k + kx) * c + ch) * cout + f];
                                }
                            }
                        }
                        out.data_mut()[((b * oh + oy) * ow + ox) * cout + f] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut kernel = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
        kernel.data_mut()[4] = 1.0;
        let mut conv = Conv2d::from_params(kernel, Tensor::zeros(&[1]), 1, Padding::Same).unwrap();
        let input = Tensor::from_vec(&[1, 3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(conv.forward(&input).unwrap(), input);
    }

    #[test]
    fn stride_two_same_padding_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(3, 3, 32, 2, Padding::Same, &mut rng);
        let out = conv.forward(&Tensor::zeros(&[1, 48, 48, 3])).unwrap();
        assert_eq!(out.shape(), &[1, 24, 24, 32]);
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (2, Padding::Valid)] {
            let mut conv = Conv2d::<f64>::new(3, 2, 4, stride, padding, &mut rng);
            let input = Tensor::uniform(&[2, 7, 6, 2], 1.0, &mut rng);
            let got = conv.forward(&input).unwrap();
            let want = naive_conv(&input, &conv.kernel.value, stride, padding);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_geometry_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(3, 3, 4, 1, Padding::Same, &mut rng);
        assert!(matches!(conv.forward(&Tensor::zeros(&[1, 4, 4, 2])), Err(Error::Geometry(_))));
        assert!(conv.forward(&Tensor::zeros(&[4, 4, 3])).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = Conv2d::<f64>::new(3, 1, 1, 1, Padding::Same, &mut rng);
        let input = Tensor::uniform(&[1, 4, 4, 1], 1.0, &mut rng);
        let report = check_input(&input, |x, up| {
            let y = conv.forward(x).unwrap();
            let dx = up.map(|u| conv.backward(u).unwrap());
            (y, dx)
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut conv = Conv2d::<f64>::new(3, 2, 3, 2, Padding::Same, &mut rng);
        let input = Tensor::uniform(&[2, 5, 5, 2], 1.0, &mut rng);
        let report = check_layer_params(&mut conv, &input, |l, x| l.forward(x).unwrap(), |l, u| {
            l.backward(u).unwrap();
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn transposed_doubles_extent_and_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut up = ConvTranspose2d::<f64>::new(3, 4, 2, 2, &mut rng);
        let x = Tensor::uniform(&[1, 3, 3, 4], 1.0, &mut rng);
        let y = up.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 6, 6, 2]);

        // <T x, z> == <x, C z> where C is the conv sharing the kernel.
        let z = Tensor::uniform(&[1, 6, 6, 2], 1.0, &mut rng);
        let mut conv = Conv2d::from_params(up.kernel.value.clone(), Tensor::zeros(&[4]), 2, Padding::Same).unwrap();
        let cz = conv.forward(&z).unwrap();
        let lhs: f64 = y.data().iter().zip(z.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(cz.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut up = ConvTranspose2d::<f64>::new(3, 2, 3, 2, &mut rng);
        up.bias.value = Tensor::uniform(&[3], 0.5, &mut rng);
        let input = Tensor::uniform(&[2, 2, 3, 2], 1.0, &mut rng);
        let report = check_layer_params(&mut up, &input, |l, x| l.forward(x).unwrap(), |l, u| {
            l.backward(u).unwrap();
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let report = check_input(&input, |x, g| {
            let y = up.forward(x).unwrap();
            let dx = g.map(|u| up.backward(u).unwrap());
            (y, dx)
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

use rand::Rng;

use super::activation::sigmoid_scalar;
use super::{fan_in_bound, join, matmul, HasParams, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Hidden and cell state for a batch, each `[N, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }
}

/// Single-layer LSTM. Gate blocks in `W: [D, 4H]`, `U: [H, 4H]` and
/// `b: [4H]` are ordered input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct Lstm<T> {
    pub w: Param<T>,
    pub u: Param<T>,
    pub b: Param<T>,
    cache: Option<SeqCache<T>>,
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    /// Activated gates `[N, 4H]`.
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Debug, Clone)]
struct SeqCache<T> {
    batch: usize,
    steps: Vec<StepCache<T>>,
}

impl<T: Real> Lstm<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
        Lstm {
            w: Param::new(Tensor::uniform(&[input, 4 * hidden], fan_in_bound(input), rng)),
            u: Param::new(Tensor::uniform(&[hidden, 4 * hidden], fan_in_bound(hidden), rng)),
            b: Param::new(b),
            cache: None,
        }
    }

    pub fn from_params(w: Tensor<T>, u: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        let hidden = u.shape().first().copied().unwrap_or(0);
        if w.rank() != 2 || w.shape()[1] != 4 * hidden || u.shape() != [hidden, 4 * hidden] || b.shape() != [4 * hidden] {
            return Err(Error::Geometry(format!(
                "inconsistent lstm shapes W {:?}, U {:?}, b {:?}",
                w.shape(),
                u.shape(),
                b.shape()
            )));
        }
        Ok(Lstm {
            w: Param::new(w),
            u: Param::new(u),
            b: Param::new(b),
            cache: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.u.value.shape()[0]
    }

    fn gates(&self, x: &[T], h_prev: &[T], n: usize) -> Result<Vec<T>> {
        let (d, hs) = (self.input_size(), self.hidden_size());
        let mut z = vec![T::zero(); n * 4 * hs];
        for row in z.chunks_mut(4 * hs) {
            row.copy_from_slice(self.b.value.data());
        }
        matmul(x, false, self.w.value.data(), false, &mut z, n, d, 4 * hs, true)?;
        matmul(h_prev, false, self.u.value.data(), false, &mut z, n, hs, 4 * hs, true)?;
        for row in z.chunks_mut(4 * hs) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if (2 * hs..3 * hs).contains(&j) { v.tanh() } else { sigmoid_scalar(*v) };
            }
        }
        Ok(z)
    }

    fn cell(gates: &[T], c_prev: &[T], hs: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        let n = c_prev.len() / hs;
        let mut c = vec![T::zero(); n * hs];
        let mut tanh_c = vec![T::zero(); n * hs];
        let mut h = vec![T::zero(); n * hs];
        for r in 0..n {
            let g = &gates[r * 4 * hs..(r + 1) * 4 * hs];
            for j in 0..hs {
                let k = r * hs + j;
                c[k] = g[hs + j] * c_prev[k] + g[j] * g[2 * hs + j];
                tanh_c[k] = c[k].tanh();
                h[k] = g[3 * hs + j] * tanh_c[k];
            }
        }
        (h, c, tanh_c)
    }

    fn check_step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<usize> {
        let (d, hs) = (self.input_size(), self.hidden_size());
        let n = x.batch();
        if x.shape() != [n, d] || state.h.shape() != [n, hs] || state.c.shape() != [n, hs] {
            return Err(Error::Geometry(format!(
                "lstm step expects x [N,{d}] and state [N,{hs}], got {:?}, {:?}, {:?}",
                x.shape(),
                state.h.shape(),
                state.c.shape()
            )));
        }
        Ok(n)
    }

    /// One cell update without caching (inference).
    pub fn step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<LstmState<T>> {
        let n = self.check_step(x, state)?;
        let hs = self.hidden_size();
        let gates = self.gates(x.data(), state.h.data(), n)?;
        let (h, c, _) = Self::cell(&gates, state.c.data(), hs);
        Ok(LstmState {
            h: Tensor::from_vec(&[n, hs], h)?,
            c: Tensor::from_vec(&[n, hs], c)?,
        })
    }

    /// Runs `[N, T, D]` inputs from a zero state and returns all hidden
    /// states `[N, T, H]`, caching for [`Lstm::backward_sequence`].
    pub fn forward_sequence(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (d, hs) = (self.input_size(), self.hidden_size());
        let [n, steps, dx] = *x.shape() else {
            return Err(Error::Geometry(format!("lstm expects [N,T,D], got {:?}", x.shape())));
        };
        if dx != d {
            return Err(Error::Geometry(format!("lstm expects input width {d}, got {dx}")));
        }
        let mut h = vec![T::zero(); n * hs];
        let mut c = vec![T::zero(); n * hs];
        let mut out = vec![T::zero(); n * steps * hs];
        let mut cache = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut xt = Vec::with_capacity(n * d);
            for b in 0..n {
                let off = (b * steps + t) * d;
                xt.extend_from_slice(&x.data()[off..off + d]);
            }
            let gates = self.gates(&xt, &h, n)?;
            let (h_new, c_new, tanh_c) = Self::cell(&gates, &c, hs);
            for b in 0..n {
                let off = (b * steps + t) * hs;
                out[off..off + hs].copy_from_slice(&h_new[b * hs..(b + 1) * hs]);
            }
            cache.push(StepCache {
                x: xt,
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates,
                tanh_c,
            });
        }
        self.cache = Some(SeqCache { batch: n, steps: cache });
        Tensor::from_vec(&[n, steps, hs], out)
    }

    /// Backpropagation through time. `upstream` is the gradient w.r.t. every
    /// hidden output `[N, T, H]`; returns the gradient w.r.t. the inputs.
    pub fn backward_sequence(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let SeqCache { batch: n, steps } = self
            .cache
            .take()
            .ok_or_else(|| Error::Geometry("lstm backward without forward".into()))?;
        let (d, hs) = (self.input_size(), self.hidden_size());
        let t_len = steps.len();
        upstream.expect_shape(&[n, t_len, hs])?;
        let mut dx = vec![T::zero(); n * t_len * d];
        let mut dh_next = vec![T::zero(); n * hs];
        let mut dc_next = vec![T::zero(); n * hs];
        let mut dz = vec![T::zero(); n * 4 * hs];
        for (t, sc) in steps.iter().enumerate().rev() {
            for b in 0..n {
                let g = &sc.gates[b * 4 * hs..(b + 1) * 4 * hs];
                let dzb = &mut dz[b * 4 * hs..(b + 1) * 4 * hs];
                for j in 0..hs {
                    let k = b * hs + j;
                    let dh = upstream.data()[(b * t_len + t) * hs + j] + dh_next[k];
                    let (i, f, gg, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
                    let tc = sc.tanh_c[k];
                    let dc = dc_next[k] + dh * o * (T::one() - tc * tc);
                    dzb[j] = dc * gg * i * (T::one() - i);
                    dzb[hs + j] = dc * sc.c_prev[k] * f * (T::one() - f);
                    dzb[2 * hs + j] = dc * i * (T::one() - gg * gg);
                    dzb[3 * hs + j] = dh * tc * o * (T::one() - o);
                    dc_next[k] = dc * f;
                }
            }
            matmul(&sc.x, true, &dz, false, self.w.grad.data_mut(), d, n, 4 * hs, true)?;
            matmul(&sc.h_prev, true, &dz, false, self.u.grad.data_mut(), hs, n, 4 * hs, true)?;
            let bg = self.b.grad.data_mut();
            for row in dz.chunks(4 * hs) {
                for (g, &v) in bg.iter_mut().zip(row) {
                    *g = *g + v;
                }
            }
            let mut dxt = vec![T::zero(); n * d];
            matmul(&dz, false, self.w.value.data(), true, &mut dxt, n, 4 * hs, d, false)?;
            for b in 0..n {
                let off = (b * t_len + t) * d;
                dx[off..off + d].copy_from_slice(&dxt[b * d..(b + 1) * d]);
            }
            matmul(&dz, false, self.u.value.data(), true, &mut dh_next, n, 4 * hs, hs, false)?;
        }
        Tensor::from_vec(&[n, t_len, d], dx)
    }
}

impl<T: Real> HasParams<T> for Lstm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "u"), &self.u);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "u"), &mut self.u);
        f(&join(prefix, "b"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_input, check_layer_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_state_stay_zero() {
        let lstm = Lstm::<f64>::from_params(
            Tensor::zeros(&[3, 8]),
            Tensor::zeros(&[2, 8]),
            Tensor::zeros(&[8]),
        )
        .unwrap();
        let s = lstm
            .step(&Tensor::filled(&[1, 3], 0.7), &LstmState::zeros(1, 2))
            .unwrap();
        assert_eq!(s, LstmState::zeros(1, 2));
    }

    #[test]
    fn saturated_forget_keeps_cell() {
        let hs = 2;
        let mut b = Tensor::<f64>::zeros(&[4 * hs]);
        for j in 0..hs {
            b.data_mut()[j] = -100.0; // input gate closed
            b.data_mut()[hs + j] = 100.0; // forget gate open
        }
        let lstm = Lstm::from_params(Tensor::zeros(&[1, 4 * hs]), Tensor::zeros(&[hs, 4 * hs]), b).unwrap();
        let prev = LstmState {
            h: Tensor::zeros(&[1, hs]),
            c: Tensor::from_vec(&[1, hs], vec![0.4, -1.3]).unwrap(),
        };
        let next = lstm.step(&Tensor::filled(&[1, 1], 1.0), &prev).unwrap();
        for (a, b) in next.c.data().iter().zip(prev.c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_matches_repeated_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lstm = Lstm::<f64>::new(3, 4, &mut rng);
        let x = Tensor::uniform(&[2, 5, 3], 1.0, &mut rng);
        let hs = lstm.forward_sequence(&x).unwrap();
        let mut state = LstmState::zeros(2, 4);
        for t in 0..5 {
            let xt: Vec<f64> = (0..2).flat_map(|b| x.data()[(b * 5 + t) * 3..(b * 5 + t + 1) * 3].to_vec()).collect();
            state = lstm.step(&Tensor::from_vec(&[2, 3], xt).unwrap(), &state).unwrap();
            for b in 0..2 {
                for j in 0..4 {
                    assert!((state.h.data()[b * 4 + j] - hs.data()[(b * 5 + t) * 4 + j]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lstm = Lstm::<f64>::new(3, 4, &mut rng);
        let x = Tensor::uniform(&[2, 3, 3], 1.0, &mut rng);
        let report = check_layer_params(&mut lstm, &x, |l, x| l.forward_sequence(x).unwrap(), |l, u| {
            l.backward_sequence(u).unwrap();
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let report = check_input(&x, |x, up| {
            let y = lstm.forward_sequence(x).unwrap();
            (y, up.map(|u| lstm.backward_sequence(u).unwrap()))
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lstm = Lstm::<f32>::new(3, 4, &mut rng);
        assert!(lstm.forward_sequence(&Tensor::zeros(&[1, 2, 4])).is_err());
        assert!(lstm.step(&Tensor::zeros(&[1, 3]), &LstmState::zeros(2, 4)).is_err());
        assert!(Lstm::<f32>::from_params(Tensor::zeros(&[3, 8]), Tensor::zeros(&[3, 8]), Tensor::zeros(&[8])).is_err());
    }
}

use super::Real;
use crate::error::{Error, Result};

/// `c (m×n) = op(a) · op(b)`, or `c += ...` when `accumulate` is set.
///
/// `a` is stored row-major as `m×k`, or `k×m` when `ta` is set; `b` likewise
/// as `k×n` or `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) -> Result<()> {
    if a.len() != m * k || b.len() != k * n || c.len() != m * n {
        return Err(Error::Geometry(format!(
            "matmul {m}x{k} · {k}x{n}: got buffers of {}, {}, {}",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = T::zero());
        }
        return Ok(());
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    T::gemm_strided(m, k, n, a, rsa, csa, b, rsb, csb, beta, c);
    Ok(())
}

use super::{Real, Tensor};
use crate::affordance::TAG_COUNT;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the
/// cross-entropy, where the log is otherwise undefined.
pub const PROB_CLAMP: f64 = 1e-7;

/// A scalar loss (accumulated in `f64`) and its gradient w.r.t. the prediction.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// Mean squared error over every element.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    if pred.shape() != target.shape() || pred.is_empty() {
        return Err(Error::Geometry(format!(
            "mse between {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0f64;
    let scale = T::lit(2.0 / n);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            scale * d
        })
        .collect();
    Ok(LossOutput {
        value: sum / n,
        grad: Tensor::from_vec(pred.shape(), grad)?,
    })
}

/// Label-weighted binary cross-entropy over `[N, 13]` probabilities:
/// `−(1/N)·Σ_n Σ_i w_i·[y log p + (1 − y) log(1 − p)]`.
///
/// Probabilities are clamped; the gradient is zero where the clamp is active.
pub fn weighted_bce_loss<T: Real>(
    probs: &Tensor<T>,
    targets: &Tensor<T>,
    weights: &[f64],
) -> Result<LossOutput<T>> {
    if weights.len() != TAG_COUNT {
        return Err(Error::Geometry(format!(
            "expected {TAG_COUNT} label weights, got {}",
            weights.len()
        )));
    }
    if probs.shape() != targets.shape() || probs.rank() != 2 || probs.shape()[1] != TAG_COUNT {
        return Err(Error::Geometry(format!(
            "weighted bce expects [N, {TAG_COUNT}] inputs, got {:?} and {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    let n = probs.shape()[0];
    if n == 0 {
        return Err(Error::Geometry("weighted bce on an empty batch".into()));
    }
    let nf = n as f64;
    let (lo, hi) = (PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mut sum = 0.0f64;
    let mut grad = vec![T::zero(); probs.len()];
    for (i, ((&p, &y), g)) in probs.data().iter().zip(targets.data()).zip(grad.iter_mut()).enumerate() {
        let w = weights[i % TAG_COUNT];
        let (p, y) = (p.as_f64(), y.as_f64());
        let pc = p.clamp(lo, hi);
        sum += w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        if p > lo && p < hi {
            *g = T::lit(-w / nf * (y / pc - (1.0 - y) / (1.0 - pc)));
        }
    }
    Ok(LossOutput {
        value: -sum / nf,
        grad: Tensor::from_vec(probs.shape(), grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_input;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_cases() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap().value, 0.0);
        let t = Tensor::<f64>::zeros(&[300]);
        let p = Tensor::filled(&[300], 0.1);
        assert!((mse_loss(&p, &t).unwrap().value - 0.01).abs() < 1e-15);
        assert!(mse_loss(&p, &a).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = Tensor::<f64>::uniform(&[3, 4], 1.0, &mut rng);
        let pred = Tensor::<f64>::uniform(&[3, 4], 1.0, &mut rng);
        let report = crate::tensor::grad_check(
            pred.data(),
            mse_loss(&pred, &target).unwrap().grad.data(),
            |x| mse_loss(&Tensor::from_vec(&[3, 4], x.to_vec()).unwrap(), &target).unwrap().value,
            Default::default(),
        );
        assert!(report.passed, "{report:?}");
        // Also exercised through the projection helper.
        let _ = check_input(&pred, |x, up| (x.clone(), up.cloned()));
    }

    fn unweighted_bce(p: &[f64], y: &[f64], n: usize) -> f64 {
        let mut s = 0.0;
        for (&p, &y) in p.iter().zip(y) {
            s += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        -s / n as f64
    }

    #[test]
    fn unit_weights_equal_plain_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let probs = Tensor::<f64>::uniform(&[4, TAG_COUNT], 0.45, &mut rng).map(|x| x + 0.5);
        let targets = Tensor::<f64>::uniform(&[4, TAG_COUNT], 1.0, &mut rng).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let got = weighted_bce_loss(&probs, &targets, &[1.0; TAG_COUNT]).unwrap().value;
        let want = unweighted_bce(probs.data(), targets.data(), 4);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_case() {
        let probs = Tensor::<f64>::filled(&[1, TAG_COUNT], 0.5);
        let mut y = vec![0.0; TAG_COUNT];
        y[0] = 1.0;
        let targets = Tensor::from_vec(&[1, TAG_COUNT], y).unwrap();
        let mut w = [1.0; TAG_COUNT];
        w[0] = 2.0;
        // Every term is w_i·ln 0.5, so the loss is (2 + 12)·ln 2.
        let got = weighted_bce_loss(&probs, &targets, &w).unwrap().value;
        assert!((got - 14.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn exact_predictions_are_clamp_bounded() {
        let y = Tensor::<f64>::from_vec(&[1, TAG_COUNT], (0..TAG_COUNT).map(|i| (i % 2) as f64).collect()).unwrap();
        let loss = weighted_bce_loss(&y, &y, &[1.0; TAG_COUNT]).unwrap();
        assert!(loss.value > 0.0 && loss.value < 13.0 * 2.0 * PROB_CLAMP);
        assert!(loss.grad.all_finite());
    }

    #[test]
    fn wrong_weight_count_is_geometry_error() {
        let p = Tensor::<f64>::filled(&[1, TAG_COUNT], 0.5);
        assert!(matches!(weighted_bce_loss(&p, &p, &[1.0; 12]), Err(Error::Geometry(_))));
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let probs = Tensor::<f64>::uniform(&[2, TAG_COUNT], 0.4, &mut rng).map(|x| x + 0.5);
        let targets = Tensor::<f64>::uniform(&[2, TAG_COUNT], 1.0, &mut rng).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let w: Vec<f64> = (0..TAG_COUNT).map(|i| 0.5 + i as f64 * 0.1).collect();
        let analytic = weighted_bce_loss(&probs, &targets, &w).unwrap().grad;
        let report = crate::tensor::grad_check(
            probs.data(),
            analytic.data(),
            |x| {
                weighted_bce_loss(&Tensor::from_vec(&[2, TAG_COUNT], x.to_vec()).unwrap(), &targets, &w)
                    .unwrap()
                    .value
            },
            Default::default(),
        );
        assert!(report.passed, "{report:?}");
    }
}

//! Loss evaluation, empirical risk, and Monte-Carlo population risk.

use crate::datagen::{seeded_rng, TaskDistribution};
use crate::error::{Error, Result};
use crate::model::{Dataset, LossKind, Predictor};
use crate::scalar::{dot, Scalar};

/// `ℓ(prediction, target)` for the given loss.
pub fn loss_value<T: Scalar>(kind: LossKind, prediction: T, target: T) -> Result<T> {
    if !prediction.is_finite() || !target.is_finite() {
        return Err(Error::invalid("non-finite loss argument"));
    }
    Ok(kind.value_unchecked(prediction, target))
}

/// Mean loss of `predictor` over `data`.
pub fn empirical_risk<T: Scalar>(predictor: &Predictor<T>, data: &Dataset<T>) -> Result<T> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if data.dim() != predictor.representation.ambient_dim() {
        return Err(Error::invalid(format!(
            "dataset has d={} but predictor expects d={}",
            data.dim(),
            predictor.representation.ambient_dim()
        )));
    }
    let theta = predictor.effective_weights();
    let mut total = 0.0f64;
    for j in 0..data.len() {
        let pred = predictor.loss.link(dot(data.x(j), &theta));
        total += predictor.loss.value_unchecked(pred, data.y(j)).as_f64();
    }
    Ok(T::lit(total / data.len() as f64))
}

/// Monte-Carlo estimate of the population risk with standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 1 << 15;

/// Empirical risk over `n_samples` fresh draws from `task`, deterministic in `seed`.
pub fn population_risk_mc<T: Scalar>(
    predictor: &Predictor<T>,
    task: &TaskDistribution<T>,
    n_samples: usize,
    seed: u64,
) -> Result<T> {
    Ok(T::lit(
        population_risk_estimate(predictor, task, n_samples, seed)?.mean,
    ))
}

/// Like [`population_risk_mc`] but also reports the standard error.
pub fn population_risk_estimate<T: Scalar>(
    predictor: &Predictor<T>,
    task: &TaskDistribution<T>,
    n_samples: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    if task.ambient_dim() != predictor.representation.ambient_dim() {
        return Err(Error::invalid("predictor and task dimensions differ"));
    }
    let theta = predictor.effective_weights();
    let mut rng = seeded_rng(seed, 0);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    let mut remaining = n_samples;
    while remaining > 0 {
        let m = remaining.min(MC_CHUNK);
        let chunk = task.sample(&mut rng, m, 0);
        for j in 0..m {
            let pred = predictor.loss.link(dot(chunk.x(j), &theta));
            let l = predictor.loss.value_unchecked(pred, chunk.y(j)).as_f64();
            sum += l;
            sum_sq += l * l;
        }
        remaining -= m;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(RiskEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PredictionHead, SemiOrthogonalMatrix};

    #[test]
    fn loss_value_examples() {
        assert_eq!(loss_value(LossKind::ScaledSquared, 1.0, -1.0).unwrap(), 1.0);
        assert_eq!(loss_value(LossKind::ScaledSquared, 0.5, 0.5).unwrap(), 0.0);
        let bce = loss_value(LossKind::BinaryCrossEntropy, 0.5, 1.0).unwrap();
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_value(LossKind::ScaledSquared, f64::NAN, 0.0).is_err());
        assert!(loss_value(LossKind::BinaryCrossEntropy, 0.5, f64::INFINITY).is_err());
    }

    #[test]
    fn bce_clamps_extreme_predictions() {
        let worst = loss_value(LossKind::BinaryCrossEntropy, 0.0, 1.0).unwrap();
        assert!((worst - (1e12f64).ln()).abs() < 1e-9);
        assert!(worst < 27.7);
    }

    #[test]
    fn zero_one_counts_sign_disagreement() {
        assert_eq!(loss_value(LossKind::ZeroOne, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(loss_value(LossKind::ZeroOne, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_value(LossKind::ZeroOne, -1.0, 0.0).unwrap(), 0.0);
        assert_eq!(loss_value(LossKind::ZeroOne, -1.0, -1.0).unwrap(), 0.0);
    }

    fn line_predictor(loss: LossKind, w: f64) -> Predictor<f64> {
        let rep = SemiOrthogonalMatrix::canonical(1, 1).unwrap();
        Predictor::new(
            rep,
            PredictionHead::new(vec![w], f64::INFINITY).unwrap(),
            loss,
        )
        .unwrap()
    }

    #[test]
    fn empirical_risk_of_known_residuals() {
        // residuals 0, 1, 2 -> (0 + 1/4 + 1) / 3
        let p = line_predictor(LossKind::ScaledSquared, 1.0);
        let data =
            Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 1.0, 1.0], 1).unwrap();
        let r = empirical_risk(&p, &data).unwrap();
        assert!((r - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn empirical_risk_zero_for_perfect_fit_and_ln2_for_zero_head() {
        let p = line_predictor(LossKind::ScaledSquared, 0.5);
        let data = Dataset::from_rows(&[vec![1.0], vec![-2.0]], vec![0.5, -1.0], 1).unwrap();
        assert_eq!(empirical_risk(&p, &data).unwrap(), 0.0);
        let q = line_predictor(LossKind::BinaryCrossEntropy, 0.0);
        let labels =
            Dataset::from_rows(&[vec![1.0], vec![-2.0], vec![0.3]], vec![1.0, 0.0, 1.0], 1)
                .unwrap();
        assert!((empirical_risk(&q, &labels).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empirical_risk_rejects_dimension_mismatch() {
        let p = line_predictor(LossKind::ScaledSquared, 0.5);
        let data = Dataset::from_rows(&[vec![1.0, 0.0]], vec![0.5], 1).unwrap();
        assert!(empirical_risk(&p, &data).is_err());
    }
}

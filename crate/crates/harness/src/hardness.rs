//! Planted-signal detection at desk scale: one fixed test statistic applied
//! to pure-noise and planted-signal samples. This illustrates the
//! small-sample regime of the lower bound for a single test; it proves
//! nothing about other tests.

use std::fmt::Write as _;

use anyhow::Result;
use lifelong_rep::datagen::{
    make_hardness_sample, HardnessInstance, Hypothesis, PLANTED_SIGNAL_ENERGY,
};
use lifelong_rep::Dataset;
use rayon::prelude::*;
use serde::Serialize;

/// Half the population gap in residual variance between the hypotheses.
pub const THRESHOLD: f64 = PLANTED_SIGNAL_ENERGY / 2.0;

/// Unbiased estimate of `‖E[y·x_{U⊥}]‖²`, the drop in residual variance
/// from the restricted fit (first `r` coordinates) to the full fit.
///
/// `Σ_{i≠j} yᵢyⱼ⟨xᵢ^⊥, xⱼ^⊥⟩ / (n(n−1))`; zero when `n < 2`.
pub fn residual_energy_statistic(data: &Dataset<f64>, r: usize) -> f64 {
    let n = data.len();
    if n < 2 {
        return 0.0;
    }
    let p = data.dim() - r;
    let mut sum = vec![0.0; p];
    let mut diag = 0.0;
    for j in 0..n {
        let y = data.y(j);
        let tail = &data.x(j)[r..];
        for (s, &v) in sum.iter_mut().zip(tail) {
            *s += y * v;
        }
        diag += y * y * tail.iter().map(|v| v * v).sum::<f64>();
    }
    let total: f64 = sum.iter().map(|s| s * s).sum();
    (total - diag) / (n * (n - 1)) as f64
}

/// Declares a planted signal iff the statistic exceeds [`THRESHOLD`].
pub fn detects_signal(data: &Dataset<f64>, r: usize) -> bool {
    residual_energy_statistic(data, r) > THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardnessRow {
    pub d: usize,
    pub r: usize,
    pub n: usize,
    /// Instances per hypothesis.
    pub trials: usize,
    pub accuracy: f64,
    /// Binomial standard error of `accuracy`.
    pub std_error: f64,
    pub null_correct: usize,
    pub planted_correct: usize,
}

fn instance_seed(seed: u64, d: usize, n: usize, hyp: u64, trial: usize) -> u64 {
    let mut h = seed ^ 0x2545_f491_4f6c_dd1d;
    for v in [d as u64, n as u64, hyp, trial as u64] {
        h = (h ^ v).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29);
    }
    h
}

/// Accuracy of [`detects_signal`] over `trials` instances of each hypothesis
/// for every `(d, n)`. `r = None` uses `d/2`. With `n = 0` no data is drawn
/// and the test always answers "pure noise".
pub fn hardness_demo(
    d_list: &[usize],
    r: Option<usize>,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<HardnessRow>> {
    let cells: Vec<(usize, usize)> = d_list
        .iter()
        .flat_map(|&d| n_grid.iter().map(move |&n| (d, n)))
        .collect();
    cells
        .par_iter()
        .map(|&(d, n)| {
            let r = r.unwrap_or(d / 2);
            let mut correct = [0usize; 2];
            for (slot, hyp) in [Hypothesis::PureNoise, Hypothesis::PlantedSignal]
                .into_iter()
                .enumerate()
            {
                // validates r ≤ d/2 even when n = 0
                HardnessInstance::new(hyp, d, r, n.max(1))?;
                for trial in 0..trials {
                    let says_planted = if n == 0 {
                        false
                    } else {
                        let inst = HardnessInstance::new(hyp, d, r, n)?;
                        let data = make_hardness_sample::<f64>(
                            &inst,
                            instance_seed(seed, d, n, slot as u64, trial),
                        )?;
                        detects_signal(&data, r)
                    };
                    correct[slot] +=
                        usize::from(says_planted == (hyp == Hypothesis::PlantedSignal));
                }
            }
            let total = 2 * trials;
            let accuracy = (correct[0] + correct[1]) as f64 / total as f64;
            Ok(HardnessRow {
                d,
                r,
                n,
                trials,
                accuracy,
                std_error: (accuracy * (1.0 - accuracy) / total as f64).sqrt(),
                null_correct: correct[0],
                planted_correct: correct[1],
            })
        })
        .collect()
}

/// Pairs of consecutive grid points (same `d`) where accuracy drops by
/// more than three combined standard errors.
pub fn monotonicity_violations(rows: &[HardnessRow]) -> Vec<(usize, usize, usize)> {
    rows.windows(2)
        .filter(|w| w[0].d == w[1].d && w[1].n >= w[0].n)
        .filter(|w| {
            let band = 3.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[1].accuracy < w[0].accuracy - band
        })
        .map(|w| (w[0].d, w[0].n, w[1].n))
        .collect()
}

pub fn rows_csv(rows: &[HardnessRow]) -> String {
    let mut s = String::from("d,r,n,trials,accuracy,std_error,null_correct,planted_correct\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{},{}",
            r.d, r.r, r.n, r.trials, r.accuracy, r.std_error, r.null_correct, r.planted_correct
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistic_is_unbiased_under_both_hypotheses() {
        let (d, r, n, reps) = (40, 20, 50, 400);
        for (hyp, target) in [
            (Hypothesis::PureNoise, 0.0),
            (Hypothesis::PlantedSignal, PLANTED_SIGNAL_ENERGY),
        ] {
            let inst = HardnessInstance::new(hyp, d, r, n).unwrap();
            let vals: Vec<f64> = (0..reps)
                .map(|s| {
                    residual_energy_statistic(&make_hardness_sample::<f64>(&inst, s).unwrap(), r)
                })
                .collect();
            let m = vals.iter().sum::<f64>() / reps as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / reps as f64).sqrt();
            assert!(
                (m - target).abs() < 4.0 * sd / (reps as f64).sqrt(),
                "{hyp:?}: {m}"
            );
        }
    }

    #[test]
    fn statistic_matches_direct_pair_sum() {
        let inst = HardnessInstance::new(Hypothesis::PlantedSignal, 8, 3, 7).unwrap();
        let data = make_hardness_sample::<f64>(&inst, 3).unwrap();
        let mut direct = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    let ip: f64 = data.x(i)[3..]
                        .iter()
                        .zip(&data.x(j)[3..])
                        .map(|(a, b)| a * b)
                        .sum();
                    direct += data.y(i) * data.y(j) * ip;
                }
            }
        }
        assert!((residual_energy_statistic(&data, 3) - direct / 42.0).abs() < 1e-12);
    }

    #[test]
    fn no_data_gives_one_half() {
        let rows = hardness_demo(&[20], None, &[0, 1], 50, 1).unwrap();
        assert!(rows
            .iter()
            .all(|r| r.accuracy == 0.5 && r.null_correct == 50));
    }

    #[test]
    fn separates_with_many_samples() {
        let rows = hardness_demo(&[40], Some(20), &[2, 400], 100, 5).unwrap();
        assert!(rows[1].accuracy >= 0.95, "{rows:?}");
        assert!(monotonicity_violations(&rows).is_empty());
    }

    #[test]
    fn rejects_large_restricted_subspace() {
        assert!(hardness_demo(&[10], Some(6), &[0], 5, 0).is_err());
    }

    #[test]
    fn violations_use_three_sigma_band() {
        let row = |n, accuracy| HardnessRow {
            d: 10,
            r: 5,
            n,
            trials: 200,
            accuracy,
            std_error: 0.02,
            null_correct: 0,
            planted_correct: 0,
        };
        assert!(monotonicity_violations(&[row(1, 0.8), row(2, 0.73)]).is_empty());
        assert_eq!(
            monotonicity_violations(&[row(1, 0.8), row(2, 0.6)]),
            vec![(10, 1, 2)]
        );
    }
}

//! Randomized numerical checks of the linear-algebra lemmas and the
//! multi-task gradient, each against an independent oracle.

use std::f64::consts::PI;

use anyhow::Result;
use lifelong_rep::datagen::seeded_rng;
use lifelong_rep::erm::multi_task_objective;
use lifelong_rep::linalg::{
    constrained_subspace_distance, random_semi_orthogonal, ridge_identity_sides,
};
use lifelong_rep::{Dataset, LossKind, Mat, SemiOrthogonalMatrix};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

pub const RIDGE_REL_TOL: f64 = 1e-8;
pub const GRID_TOL: f64 = 1e-3;
pub const GRADIENT_REL_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// Largest error in the check's own units.
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }

    fn collect(name: &str, tolerance: f64, errors: impl IntoIterator<Item = (f64, bool)>) -> Self {
        let (mut instances, mut failures, mut max_error) = (0, 0, 0.0f64);
        for (err, ok) in errors {
            instances += 1;
            failures += usize::from(!ok);
            max_error = max_error.max(err);
        }
        Self {
            name: name.to_string(),
            instances,
            failures,
            max_error,
            tolerance,
        }
    }
}

fn gaussian(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|LHS − RHS| ≤ tol·(1 + |LHS|)` for `xᵀ(UUᵀ + λI)⁻¹x = min_z ‖x − Uz‖²/λ + ‖z‖²`.
pub fn ridge_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed, 11);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let d = rng.random_range(1..=20);
        let n = rng.random_range(0..=20);
        let lambda = 10f64.powf(rng.random_range(-2.0..2.0));
        let x = gaussian(&mut rng, d);
        let u = Mat::from_vec(d, n, gaussian(&mut rng, d * n))?;
        let (lhs, rhs) = ridge_identity_sides(&x, &u, lambda)?;
        let rel = (lhs - rhs).abs() / (1.0 + lhs.abs());
        errors.push((rel, rel <= RIDGE_REL_TOL));
    }
    Ok(CheckReport::collect(
        "ridge_identity",
        RIDGE_REL_TOL,
        errors,
    ))
}

/// Random `(B, u, lower, upper)` with `lower ≤ ‖u‖ ≤ upper ≤ 1`; half the
/// draws put `u` close to `span B` so the inner constraint binds.
fn subspace_instance(
    rng: &mut ChaCha20Rng,
    d: usize,
    k: usize,
) -> Result<(SemiOrthogonalMatrix<f64>, Vec<f64>, f64, f64)> {
    let b = random_semi_orthogonal::<f64>(d, k, rng.random())?;
    let upper = rng.random_range(0.1..=1.0);
    let lower = rng.random_range(0.0..=upper);
    let mut dir = gaussian(rng, d);
    if rng.random_bool(0.5) {
        let inside = b.lift(&gaussian(rng, k));
        let s = rng.random_range(0.0..0.3);
        dir = inside.iter().zip(&dir).map(|(a, g)| a + s * g).collect();
    }
    let r = rng.random_range(lower..=upper);
    let n = norm(&dir);
    let u = dir.iter().map(|v| v * r / n).collect();
    Ok((b, u, lower, upper))
}

/// `min ‖Bw − u‖ ≤ 2‖P_B^⊥u‖` over the annulus `lower ≤ ‖w‖ ≤ upper`.
pub fn subspace_bound_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed, 12);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let d = rng.random_range(2..=20);
        let k = rng.random_range(1..=d);
        let (b, u, lower, upper) = subspace_instance(&mut rng, d, k)?;
        let r = constrained_subspace_distance(&b, &u, lower, upper)?;
        let excess = (r.min_dist - r.bound).max(0.0);
        errors.push((excess, r.min_dist <= r.bound + 1e-12));
    }
    Ok(CheckReport::collect("subspace_distance_bound", 0.0, errors))
}

/// Minimizes `‖Bw − u‖` over the annulus by a zooming polar grid (k ≤ 2).
pub fn grid_min_distance(b: &SemiOrthogonalMatrix<f64>, u: &[f64], lower: f64, upper: f64) -> f64 {
    let k = b.rep_dim();
    assert!(k <= 2, "grid oracle handles k <= 2");
    let dist = |rho: f64, phi: f64| {
        let w = if k == 1 {
            vec![rho * phi.cos().signum()]
        } else {
            vec![rho * phi.cos(), rho * phi.sin()]
        };
        let bw = b.lift(&w);
        norm(&bw.iter().zip(u).map(|(a, c)| a - c).collect::<Vec<_>>())
    };
    let angles: Vec<f64> = if k == 1 {
        vec![0.0, PI]
    } else {
        (0..720).map(|i| 2.0 * PI * i as f64 / 720.0).collect()
    };
    let radii = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let mut best = (f64::INFINITY, lower, 0.0);
    for &rho in &radii(lower, upper, 101) {
        for &phi in &angles {
            let v = dist(rho, phi);
            if v < best.0 {
                best = (v, rho, phi);
            }
        }
    }
    let (mut d_rho, mut d_phi) = ((upper - lower) / 100.0, 2.0 * PI / 720.0);
    for _ in 0..6 {
        let (_, rho0, phi0) = best;
        let rs = radii(
            (rho0 - 2.0 * d_rho).max(lower),
            (rho0 + 2.0 * d_rho).min(upper),
            41,
        );
        let ps: Vec<f64> = if k == 1 {
            vec![phi0]
        } else {
            radii(phi0 - 2.0 * d_phi, phi0 + 2.0 * d_phi, 41)
        };
        for &rho in &rs {
            for &phi in &ps {
                let v = dist(rho, phi);
                if v < best.0 {
                    best = (v, rho, phi);
                }
            }
        }
        d_rho /= 10.0;
        d_phi /= 10.0;
    }
    best.0
}

/// Closed-form constrained distance against [`grid_min_distance`].
pub fn subspace_grid_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed, 13);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let k = rng.random_range(1..=2);
        let d = rng.random_range(k + 1..=20);
        let (b, u, lower, upper) = subspace_instance(&mut rng, d, k)?;
        let closed = constrained_subspace_distance(&b, &u, lower, upper)?.min_dist;
        let grid = grid_min_distance(&b, &u, lower, upper);
        let err = (closed - grid).abs();
        // the grid only ever evaluates feasible points, so it cannot beat the true minimum
        errors.push((err, err <= GRID_TOL && grid >= closed - 1e-9));
    }
    Ok(CheckReport::collect(
        "subspace_distance_grid_oracle",
        GRID_TOL,
        errors,
    ))
}

/// Analytic multi-task gradients against central differences in every
/// coordinate of `(B, w_1, …, w_n)`.
pub fn gradient_check(loss: LossKind, points: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed, 14 + loss as u64);
    let (d, k, tasks, m) = (5, 2, 3, 15);
    let h = 1e-5;
    let mut errors = Vec::with_capacity(points);
    for _ in 0..points {
        let data: Vec<Dataset<f64>> = (0..tasks)
            .map(|t| {
                let x = Mat::from_vec(m, d, gaussian(&mut rng, m * d))?;
                let y = (0..m)
                    .map(|_| match loss {
                        LossKind::BinaryCrossEntropy => f64::from(u8::from(rng.random_bool(0.5))),
                        _ => rng.sample(StandardNormal),
                    })
                    .collect();
                Dataset::new(x, y, t + 1)
            })
            .collect::<lifelong_rep::Result<_>>()?;
        let refs: Vec<&Dataset<f64>> = data.iter().collect();
        let basis = Mat::from_vec(d, k, gaussian(&mut rng, d * k))?;
        let heads: Vec<Vec<f64>> = (0..tasks).map(|_| gaussian(&mut rng, k)).collect();
        let (_, gb, gw) = multi_task_objective(&refs, &basis, &heads, loss);
        let f = |b: &Mat<f64>, w: &[Vec<f64>]| multi_task_objective(&refs, b, w, loss).0;

        let mut analytic = gb.as_slice().to_vec();
        analytic.extend(gw.iter().flatten());
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..d * k {
            let (mut plus, mut minus) = (basis.clone(), basis.clone());
            plus.as_mut_slice()[i] += h;
            minus.as_mut_slice()[i] -= h;
            numeric.push((f(&plus, &heads) - f(&minus, &heads)) / (2.0 * h));
        }
        for t in 0..tasks {
            for c in 0..k {
                let (mut plus, mut minus) = (heads.clone(), heads.clone());
                plus[t][c] += h;
                minus[t][c] -= h;
                numeric.push((f(&basis, &plus) - f(&basis, &minus)) / (2.0 * h));
            }
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12);
        errors.push((rel, rel <= GRADIENT_REL_TOL));
    }
    Ok(CheckReport::collect(
        &format!("gradient_{loss:?}"),
        GRADIENT_REL_TOL,
        errors,
    ))
}

/// Every check at its default instance count.
pub fn lemma_checks(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        ridge_check(1000, seed)?,
        subspace_bound_check(1000, seed)?,
        subspace_grid_check(1000, seed)?,
        gradient_check(LossKind::ScaledSquared, 100, seed)?,
        gradient_check(LossKind::BinaryCrossEntropy, 100, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_oracle_finds_known_minimum() {
        // B = e1 in R², u = 0.3·e2, ‖w‖ ∈ [0.3, 0.8]: best w = ±0.3 at distance 0.3·√2
        let b = SemiOrthogonalMatrix::canonical(2, 1).unwrap();
        let got = grid_min_distance(&b, &[0.0, 0.3], 0.3, 0.8);
        assert!((got - 0.3 * 2f64.sqrt()).abs() < 1e-9);
        let b2 = SemiOrthogonalMatrix::canonical(3, 2).unwrap();
        let got = grid_min_distance(&b2, &[0.2, 0.1, 0.5], 0.0, 1.0);
        assert!((got - 0.5).abs() < 1e-9);
    }

    #[test]
    fn small_runs_pass() {
        assert!(ridge_check(50, 1).unwrap().passed());
        assert!(subspace_bound_check(50, 1).unwrap().passed());
        assert!(subspace_grid_check(50, 1).unwrap().passed());
        assert!(gradient_check(LossKind::BinaryCrossEntropy, 5, 1)
            .unwrap()
            .passed());
    }

    #[test]
    fn empty_report_does_not_pass() {
        assert!(!CheckReport::collect("x", 0.0, []).passed());
    }
}

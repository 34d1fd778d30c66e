//! Second-order ERM.
//!
//! Heads are fitted by damped Newton with a norm-ball constrained step. The
//! multi-task problem starts from independent per-task fits `θᵢ`: when the
//! `θᵢ` span at most `k` dimensions the top-`k` eigenbasis of `Σ θᵢθᵢᵀ`
//! reproduces every `θᵢ` and the start is already a global minimizer.
//! Otherwise alternating minimization refines it, with exact head refits for
//! a fixed basis and a Newton step on the basis for fixed heads.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::model::{project_to_ball, Dataset, LossKind, PredictionHead, SemiOrthogonalMatrix};
use crate::scalar::{dot, norm2, Scalar};

use super::kernel::{loss_grad_hess_sum, loss_sum};
use super::{HeadFit, MultiTaskSolution, OptimizerConfig};

const MAX_NEWTON_ITERS: usize = 100;
const MAX_OUTER_ITERS: usize = 500;
const ARMIJO: f64 = 1e-4;

/// Minimizes `(1/m) Σⱼ ℓ(⟨fⱼ, w⟩, yⱼ)` over `‖w‖ ≤ bound`, starting at `w0`.
///
/// Returns the minimizer, its mean loss, and the number of Newton steps.
pub(super) fn fit_glm<T: Scalar>(
    features: &Mat<T>,
    y: &[T],
    w0: Vec<T>,
    bound: T,
    loss: LossKind,
) -> (Vec<T>, T, usize) {
    let p = features.cols();
    let m = T::lit(y.len() as f64);
    let mut w = w0;
    project_to_ball(&mut w, bound);
    let mut grad = vec![T::zero(); p];
    let mut hess = Mat::zeros(p, p);
    let mut f = loss_sum(features, y, &w, loss) / m;
    let stop = T::epsilon() * T::lit(100.0);
    let mut iters = 0;
    while iters < MAX_NEWTON_ITERS {
        loss_grad_hess_sum(features, y, &w, loss, &mut grad, &mut hess);
        grad.iter_mut().for_each(|g| *g = *g / m);
        hess.as_mut_slice().iter_mut().for_each(|h| *h = *h / m);
        add_ridge(&mut hess);
        let Ok(target) = ball_newton_target(&hess, &grad, &w, bound) else {
            break;
        };
        let dir: Vec<T> = target.iter().zip(&w).map(|(&a, &b)| a - b).collect();
        let slope = dot(&grad, &dir);
        if !(slope < -stop * (T::one() + f.abs())) {
            break;
        }
        iters += 1;
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<T> = w.iter().zip(&dir).map(|(&a, &b)| a + t * b).collect();
            let fc = loss_sum(features, y, &cand, loss) / m;
            if fc <= f + T::lit(ARMIJO) * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t = t * T::lit(0.5);
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        let gain = f - fc;
        w = cand;
        f = fc;
        if gain <= stop * (T::one() + f.abs()) {
            break;
        }
    }
    (w, f, iters)
}

fn add_ridge<T: Scalar>(hess: &mut Mat<T>) {
    let p = hess.rows();
    let trace: T = (0..p).map(|i| hess[(i, i)]).sum();
    let ridge = T::epsilon() * T::lit(10.0) * (trace / T::lit(p as f64)).max(T::one());
    for i in 0..p {
        hess[(i, i)] = hess[(i, i)] + ridge;
    }
}

/// Minimizer of the quadratic model `gᵀ(u − w) + ½(u − w)ᵀH(u − w)` over
/// `‖u‖ ≤ bound`. Outside the ball the solution is `(H + λI)⁻¹(Hw − g)` with
/// `λ` chosen by bisection so that `‖u‖ = bound`.
fn ball_newton_target<T: Scalar>(hess: &Mat<T>, grad: &[T], w: &[T], bound: T) -> Result<Vec<T>> {
    let hw = hess.matvec(w);
    let rhs: Vec<T> = hw.iter().zip(grad).map(|(&a, &b)| a - b).collect();
    let u = hess.solve_spd(&rhs)?;
    if bound.is_infinite() || norm2(&u) <= bound {
        return Ok(u);
    }
    let shifted = |lambda: T| -> Result<Vec<T>> {
        let mut h = hess.clone();
        for i in 0..h.rows() {
            h[(i, i)] = h[(i, i)] + lambda;
        }
        h.solve_spd(&rhs)
    };
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut u_hi = shifted(hi)?;
    let mut doublings = 0;
    while norm2(&u_hi) > bound {
        lo = hi;
        hi = hi * T::lit(2.0);
        u_hi = shifted(hi)?;
        doublings += 1;
        if doublings > 2000 {
            return Err(Error::degenerate("trust-region multiplier diverged"));
        }
    }
    for _ in 0..100 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let u_mid = shifted(mid)?;
        if norm2(&u_mid) > bound {
            lo = mid;
        } else {
            hi = mid;
            u_hi = u_mid;
        }
    }
    project_to_ball(&mut u_hi, bound);
    Ok(u_hi)
}

pub(super) fn head<T: Scalar>(
    features: &Mat<T>,
    y: &[T],
    loss: LossKind,
    cfg: &OptimizerConfig<T>,
) -> HeadFit<T> {
    let bound = cfg.head_bound(loss);
    let (w, objective, iters) = fit_glm(features, y, vec![T::zero(); features.cols()], bound, loss);
    HeadFit {
        head: PredictionHead::projected(w, bound),
        objective,
        epochs: iters,
    }
}

/// `(1/n) Σᵢ (1/mᵢ) Σⱼ ℓ(⟨xⱼ, θᵢ⟩, yⱼ)` for `θᵢ = B wᵢ`.
fn objective<T: Scalar>(
    datasets: &[&Dataset<T>],
    basis: &Mat<T>,
    heads: &[Vec<T>],
    loss: LossKind,
) -> T {
    let n = T::lit(datasets.len() as f64);
    datasets
        .iter()
        .zip(heads)
        .map(|(s, w)| {
            let theta = basis.matvec(w);
            loss_sum(s.inputs(), s.targets(), &theta, loss) / T::lit(s.len() as f64)
        })
        .fold(T::zero(), |a, b| a + b)
        / n
}

/// Top-`k` eigenvectors of `Σ θθᵢᵀ`, and whether they reproduce every `θᵢ`.
fn spanning_basis<T: Scalar>(thetas: &[Vec<T>], d: usize, k: usize) -> Result<(Mat<T>, bool)> {
    let mut scatter = Mat::zeros(d, d);
    let mut total = T::zero();
    for th in thetas {
        total = total + dot(th, th);
        for a in 0..d {
            for b in 0..d {
                scatter[(a, b)] = scatter[(a, b)] + th[a] * th[b];
            }
        }
    }
    let (_, vecs) = scatter.symmetric_eigen();
    let basis = Mat::from_fn(d, k, |r, c| vecs[(r, c)]);
    let basis = SemiOrthogonalMatrix::new(basis)?.into_matrix();
    let mut resid = T::zero();
    for th in thetas {
        let back = basis.matvec(&basis.t_matvec(th));
        resid = resid
            + th.iter()
                .zip(&back)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>();
    }
    let tol = T::epsilon() * T::lit(1e4);
    Ok((basis, resid <= tol * tol * (T::one() + total)))
}

pub(super) fn multi_task<T: Scalar>(
    datasets: &[&Dataset<T>],
    d: usize,
    k: usize,
    loss: LossKind,
    cfg: &OptimizerConfig<T>,
) -> Result<MultiTaskSolution<T>> {
    let bound = cfg.head_bound(loss);
    let thetas: Vec<Vec<T>> = datasets
        .iter()
        .map(|s| fit_glm(s.inputs(), s.targets(), vec![T::zero(); d], bound, loss).0)
        .collect();
    let (mut basis, exact) = spanning_basis(&thetas, d, k)?;
    let mut heads: Vec<Vec<T>> = thetas
        .iter()
        .map(|th| {
            let mut w = basis.t_matvec(th);
            project_to_ball(&mut w, bound);
            w
        })
        .collect();
    let mut obj = objective(datasets, &basis, &heads, loss);
    let mut history = vec![obj];
    let mut rounds = 0;
    let max_rounds = cfg.max_epochs.min(MAX_OUTER_ITERS);
    while !exact && rounds < max_rounds {
        rounds += 1;
        for (s, w) in datasets.iter().zip(heads.iter_mut()) {
            let features = s.inputs().matmul(&basis);
            *w = fit_glm(&features, s.targets(), std::mem::take(w), bound, loss).0;
        }
        let after_heads = objective(datasets, &basis, &heads, loss);
        let (next_basis, next_heads, next_obj) =
            match basis_newton_step(datasets, &basis, &heads, loss, bound, after_heads) {
                Some(step) => step,
                None => (basis.clone(), heads.clone(), after_heads),
            };
        let improved = obj - next_obj;
        if next_obj <= after_heads {
            basis = next_basis;
            heads = next_heads;
            obj = next_obj;
        } else {
            obj = obj.min(after_heads);
        }
        history.push(obj);
        if !(improved > cfg.tolerance) {
            break;
        }
    }
    Ok(MultiTaskSolution {
        representation: SemiOrthogonalMatrix::new(basis)?,
        heads: heads
            .into_iter()
            .map(|w| PredictionHead::projected(w, bound))
            .collect(),
        final_objective: obj,
        epochs: rounds,
        history,
    })
}

/// One damped Newton step on `B` with heads fixed, followed by the QR
/// retraction with `R` absorbed into the heads (`QRw = Bw`).
fn basis_newton_step<T: Scalar>(
    datasets: &[&Dataset<T>],
    basis: &Mat<T>,
    heads: &[Vec<T>],
    loss: LossKind,
    bound: T,
    current: T,
) -> Option<(Mat<T>, Vec<Vec<T>>, T)> {
    let (d, k) = (basis.rows(), basis.cols());
    let dk = d * k;
    let n = T::lit(datasets.len() as f64);
    let mut grad = vec![T::zero(); dk];
    let mut hess = Mat::zeros(dk, dk);
    let mut g_theta = vec![T::zero(); d];
    let mut curv = Mat::zeros(d, d);
    for (s, w) in datasets.iter().zip(heads) {
        let theta = basis.matvec(w);
        loss_grad_hess_sum(
            s.inputs(),
            s.targets(),
            &theta,
            loss,
            &mut g_theta,
            &mut curv,
        );
        let scale = T::one() / (n * T::lit(s.len() as f64));
        for r in 0..d {
            for c in 0..k {
                grad[r * k + c] = grad[r * k + c] + scale * g_theta[r] * w[c];
            }
        }
        for r in 0..d {
            for rr in 0..d {
                let cr = scale * curv[(r, rr)];
                for c in 0..k {
                    let cw = cr * w[c];
                    for cc in 0..k {
                        hess[(r * k + c, rr * k + cc)] =
                            hess[(r * k + c, rr * k + cc)] + cw * w[cc];
                    }
                }
            }
        }
    }
    add_ridge(&mut hess);
    let step = hess.solve_spd(&grad).ok()?;
    let slope = -dot(&grad, &step);
    if !(slope < T::zero()) {
        return None;
    }
    let mut t = T::one();
    for _ in 0..60 {
        let cand = Mat::from_vec(
            d,
            k,
            basis
                .as_slice()
                .iter()
                .zip(&step)
                .map(|(&b, &s)| b - t * s)
                .collect(),
        )
        .ok()?;
        let fc = objective(datasets, &cand, heads, loss);
        if fc <= current + T::lit(ARMIJO) * t * slope {
            let (q, r) = cand.thin_qr().ok()?;
            let new_heads: Vec<Vec<T>> = heads
                .iter()
                .map(|w| {
                    let mut rw = r.matvec(w);
                    project_to_ball(&mut rw, bound);
                    rw
                })
                .collect();
            let q = SemiOrthogonalMatrix::new(q).ok()?.into_matrix();
            let obj = objective(datasets, &q, &new_heads, loss);
            return Some((q, new_heads, obj));
        }
        t = t * T::lit(0.5);
    }
    None
}

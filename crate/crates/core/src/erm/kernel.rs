//! Single-pass loss/gradient/Hessian sums for linear scores `⟨f, w⟩`.

use crate::dense::Mat;
use crate::model::LossKind;
use crate::scalar::{dot, Scalar};

/// `Σⱼ ℓ(⟨fⱼ, w⟩, yⱼ)`.
pub(crate) fn loss_sum<T: Scalar>(features: &Mat<T>, y: &[T], w: &[T], loss: LossKind) -> T {
    let mut total = T::zero();
    for (j, &yj) in y.iter().enumerate() {
        total = total + loss.score_loss(dot(features.row(j), w), yj);
    }
    total
}

/// Loss sum; writes `Σⱼ ℓ′ⱼ fⱼ` into `grad`.
pub(crate) fn loss_grad_sum<T: Scalar>(
    features: &Mat<T>,
    y: &[T],
    w: &[T],
    loss: LossKind,
    grad: &mut [T],
) -> T {
    grad.iter_mut().for_each(|g| *g = T::zero());
    let mut total = T::zero();
    for (j, &yj) in y.iter().enumerate() {
        let f = features.row(j);
        let (l, slope, _) = loss.score_terms(dot(f, w), yj);
        total = total + l;
        for (g, &fi) in grad.iter_mut().zip(f) {
            *g = *g + slope * fi;
        }
    }
    total
}

/// Loss sum; writes `Σⱼ ℓ′ⱼ fⱼ` into `grad` and `Σⱼ ℓ″ⱼ fⱼfⱼᵀ` into `hess`.
pub(crate) fn loss_grad_hess_sum<T: Scalar>(
    features: &Mat<T>,
    y: &[T],
    w: &[T],
    loss: LossKind,
    grad: &mut [T],
    hess: &mut Mat<T>,
) -> T {
    let p = w.len();
    grad.iter_mut().for_each(|g| *g = T::zero());
    hess.as_mut_slice().iter_mut().for_each(|h| *h = T::zero());
    let mut total = T::zero();
    let h = hess.as_mut_slice();
    for (j, &yj) in y.iter().enumerate() {
        let f = features.row(j);
        let (l, slope, curv) = loss.score_terms(dot(f, w), yj);
        total = total + l;
        for (a, &fa) in f.iter().enumerate() {
            grad[a] = grad[a] + slope * fa;
            let cfa = curv * fa;
            let row = &mut h[a * p..a * p + a + 1];
            for (hv, &fb) in row.iter_mut().zip(f) {
                *hv = *hv + cfa * fb;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[b * p + a] = h[a * p + b];
        }
    }
    total
}

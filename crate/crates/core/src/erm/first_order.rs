//! Full-batch descent with Adam-style per-coordinate step sizes.

use crate::dense::Mat;
use crate::error::Result;
use crate::linalg::{random_semi_orthogonal, retract_to_stiefel};
use crate::model::{project_to_ball, Dataset, LossKind, PredictionHead, SemiOrthogonalMatrix};
use crate::scalar::{dot, Scalar};

use super::kernel::loss_grad_sum;
use super::{multi_task_objective, HeadFit, Moments, MultiTaskSolution, OptimizerConfig};

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: T, moments: Option<Moments<T>>) {
        let Some(Moments { beta1, beta2, eps }) = moments else {
            for (p, &g) in params.iter_mut().zip(grad) {
                *p = *p - lr * g;
            }
            return;
        };
        self.t += 1;
        let c1 = T::one() - beta1.powi(self.t);
        let c2 = T::one() - beta2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (T::one() - beta1) * g;
            *v = beta2 * *v + (T::one() - beta2) * g * g;
            *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Drops the outward radial part of `grad` when `w` sits on the ball's
/// boundary, so that the projected adaptive step is stationary exactly at the
/// constrained minimizer.
fn tangent_to_ball<T: Scalar>(w: &[T], grad: &mut [T], bound: T) {
    if bound.is_infinite() {
        return;
    }
    let ww = dot(w, w);
    let gw = dot(grad, w);
    if ww >= bound * bound * (T::one() - T::lit(1e-9)) && gw < T::zero() {
        let c = gw / ww;
        for (g, &wi) in grad.iter_mut().zip(w) {
            *g = *g - c * wi;
        }
    }
}

/// Best-so-far bookkeeping with patience-based early stopping.
struct Tracker<T, S> {
    best_obj: T,
    best: S,
    stale: usize,
    patience: usize,
    tolerance: T,
}

impl<T: Scalar, S: Clone> Tracker<T, S> {
    fn new(init: S, patience: usize, tolerance: T) -> Self {
        Self {
            best_obj: T::infinity(),
            best: init,
            stale: 0,
            patience,
            tolerance,
        }
    }

    /// Records `obj`; returns true when training should stop.
    fn observe(&mut self, obj: T, state: impl FnOnce() -> S) -> bool {
        if obj < self.best_obj - self.tolerance {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if obj < self.best_obj {
            self.best_obj = obj;
            self.best = state();
        }
        self.stale >= self.patience
    }
}

pub(super) fn multi_task<T: Scalar>(
    datasets: &[&Dataset<T>],
    d: usize,
    k: usize,
    loss: LossKind,
    cfg: &OptimizerConfig<T>,
    seed: u64,
) -> Result<MultiTaskSolution<T>> {
    let bound = cfg.head_bound(loss);
    let n = datasets.len();
    let mut basis = random_semi_orthogonal::<T>(d, k, seed)?.into_matrix();
    let mut heads = vec![vec![T::zero(); k]; n];
    let mut adam_b = Adam::new(d * k);
    let mut adam_w: Vec<Adam<T>> = (0..n).map(|_| Adam::new(k)).collect();
    let mut tracker: Tracker<T, (Mat<T>, Vec<Vec<T>>)> = Tracker::new(
        (basis.clone(), heads.clone()),
        cfg.early_stop_patience,
        cfg.tolerance,
    );
    let mut history = Vec::new();
    let mut epochs = 0;
    loop {
        let (obj, grad_b, grad_w) = multi_task_objective(datasets, &basis, &heads, loss);
        if !obj.is_finite() {
            break;
        }
        history.push(obj);
        if tracker.observe(obj, || (basis.clone(), heads.clone())) || epochs == cfg.max_epochs {
            break;
        }
        epochs += 1;
        adam_b.step(
            basis.as_mut_slice(),
            grad_b.as_slice(),
            cfg.learning_rate,
            cfg.moments,
        );
        basis = match retract_to_stiefel(&basis) {
            Ok(b) => b.into_matrix(),
            Err(_) => break,
        };
        for ((w, mut g), opt) in heads.iter_mut().zip(grad_w).zip(adam_w.iter_mut()) {
            tangent_to_ball(w, &mut g, bound);
            opt.step(w, &g, cfg.learning_rate, cfg.moments);
            project_to_ball(w, bound);
        }
    }
    let (basis, heads) = tracker.best;
    Ok(MultiTaskSolution {
        representation: SemiOrthogonalMatrix::new(basis)?,
        heads: heads
            .into_iter()
            .map(|w| PredictionHead::projected(w, bound))
            .collect(),
        final_objective: tracker.best_obj,
        epochs,
        history,
    })
}

/// Fits a head on fixed `features` (rows `B̂ᵀx`).
pub(super) fn head<T: Scalar>(
    features: &Mat<T>,
    y: &[T],
    loss: LossKind,
    cfg: &OptimizerConfig<T>,
) -> HeadFit<T> {
    let bound = cfg.head_bound(loss);
    let k = features.cols();
    let m = T::lit(y.len() as f64);
    let mut w = vec![T::zero(); k];
    let mut grad = vec![T::zero(); k];
    let mut adam = Adam::new(k);
    let mut tracker = Tracker::new(w.clone(), cfg.early_stop_patience, cfg.tolerance);
    let mut epochs = 0;
    loop {
        let obj = loss_grad_sum(features, y, &w, loss, &mut grad) / m;
        if !obj.is_finite() || tracker.observe(obj, || w.clone()) || epochs == cfg.max_epochs {
            break;
        }
        epochs += 1;
        for g in grad.iter_mut() {
            *g = *g / m;
        }
        tangent_to_ball(&w, &mut grad, bound);
        adam.step(&mut w, &grad, cfg.learning_rate, cfg.moments);
        project_to_ball(&mut w, bound);
    }
    HeadFit {
        head: PredictionHead::projected(tracker.best, bound),
        objective: tracker.best_obj,
        epochs,
    }
}

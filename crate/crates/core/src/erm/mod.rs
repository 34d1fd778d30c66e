//! Single-task, multi-task and frozen-representation ERM.
//!
//! Two solvers are available. [`SolverKind::FirstOrder`] runs full-batch
//! descent with Adam-style step sizes, retracting the representation onto the
//! Stiefel manifold by thin QR and projecting every head onto its norm ball
//! after each step. [`SolverKind::Newton`] fits heads by damped Newton and
//! refines the representation by alternating second-order steps. Every iterate
//! of either solver is a member of the hypothesis class. Multi-task ERM is
//! non-convex, so both return a local solution.

mod first_order;
mod kernel;
mod newton;

use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::model::{Dataset, LossKind, PredictionHead, Predictor, SemiOrthogonalMatrix};
use crate::scalar::Scalar;

use kernel::loss_grad_sum;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    /// Projected Adam (plain gradient descent when `moments` is `None`).
    #[default]
    FirstOrder,
    /// Damped Newton heads with alternating Newton steps on the representation.
    Newton,
}

/// First/second moment decay rates for adaptive step sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for Moments<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig<T> {
    pub learning_rate: T,
    pub max_epochs: usize,
    /// Stop after this many epochs without an improvement larger than `tolerance`.
    pub early_stop_patience: usize,
    pub tolerance: T,
    /// `None` gives plain projected gradient descent.
    pub moments: Option<Moments<T>>,
    /// Head norm bound; `None` uses the loss's default class bound.
    pub head_norm_bound: Option<T>,
    pub solver: SolverKind,
}

impl<T: Scalar> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(1e-3),
            max_epochs: 10_000,
            early_stop_patience: 20,
            tolerance: T::lit(1e-9),
            moments: Some(Moments::default()),
            head_norm_bound: None,
            solver: SolverKind::FirstOrder,
        }
    }
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if let Some(b) = self.head_norm_bound {
            if !(b > T::zero()) {
                return Err(Error::invalid("head norm bound must be positive"));
            }
        }
        Ok(())
    }

    pub fn head_bound(&self, loss: LossKind) -> T {
        self.head_norm_bound
            .unwrap_or_else(|| loss.default_head_bound())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct MultiTaskSolution<T: Scalar> {
    pub representation: SemiOrthogonalMatrix<T>,
    pub heads: Vec<PredictionHead<T>>,
    pub final_objective: T,
    pub epochs: usize,
    /// Objective of the iterate at the start of each epoch.
    #[serde(skip)]
    pub history: Vec<T>,
}

impl<T: Scalar> MultiTaskSolution<T> {
    pub fn predictor(&self, i: usize, loss: LossKind) -> Predictor<T> {
        Predictor {
            representation: self.representation.clone(),
            head: self.heads[i].clone(),
            loss,
        }
    }
}

/// Multi-task objective `(1/n) Σᵢ L̂_{Sᵢ}(wᵢ, B)` and its gradients in `B`
/// and each `wᵢ`. `B` need not be orthonormal.
pub fn multi_task_objective<T: Scalar>(
    datasets: &[&Dataset<T>],
    basis: &Mat<T>,
    heads: &[Vec<T>],
    loss: LossKind,
) -> (T, Mat<T>, Vec<Vec<T>>) {
    let (d, k) = (basis.rows(), basis.cols());
    let n = T::lit(datasets.len() as f64);
    let mut total = T::zero();
    let mut grad_b = Mat::zeros(d, k);
    let mut grad_w = Vec::with_capacity(datasets.len());
    let mut g_theta = vec![T::zero(); d];
    for (data, w) in datasets.iter().zip(heads) {
        let theta = basis.matvec(w);
        let task_loss = loss_grad_sum(data.inputs(), data.targets(), &theta, loss, &mut g_theta);
        let scale = T::one() / (n * T::lit(data.len() as f64));
        total = total + task_loss * scale;
        for g in g_theta.iter_mut() {
            *g = *g * scale;
        }
        grad_w.push(basis.t_matvec(&g_theta));
        for r in 0..d {
            for c in 0..k {
                grad_b[(r, c)] = grad_b[(r, c)] + g_theta[r] * w[c];
            }
        }
    }
    (total, grad_b, grad_w)
}

fn check_datasets<T: Scalar>(
    datasets: &[&Dataset<T>],
    d: usize,
    k: usize,
    loss: LossKind,
) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::invalid("multi-task ERM needs at least one dataset"));
    }
    if k == 0 || k > d {
        return Err(Error::invalid(format!(
            "need 1 <= k <= d, got d={d}, k={k}"
        )));
    }
    if let Some(bad) = datasets.iter().find(|s| s.dim() != d) {
        return Err(Error::invalid(format!(
            "dataset for task {} has d={}, expected {d}",
            bad.task_id,
            bad.dim()
        )));
    }
    if !loss.is_differentiable() {
        return Err(Error::invalid(format!(
            "{loss:?} is not differentiable; train with a surrogate loss"
        )));
    }
    Ok(())
}

/// Jointly fits a shared representation and one head per dataset.
pub fn multi_task_erm<T: Scalar>(
    datasets: &[&Dataset<T>],
    d: usize,
    k: usize,
    loss: LossKind,
    cfg: &OptimizerConfig<T>,
    seed: u64,
) -> Result<MultiTaskSolution<T>> {
    check_datasets(datasets, d, k, loss)?;
    cfg.validate()?;
    match cfg.solver {
        SolverKind::FirstOrder => first_order::multi_task(datasets, d, k, loss, cfg, seed),
        SolverKind::Newton => newton::multi_task(datasets, d, k, loss, cfg),
    }
}

/// Multi-task ERM with a single dataset.
pub fn single_task_erm<T: Scalar>(
    dataset: &Dataset<T>,
    k: usize,
    loss: LossKind,
    cfg: &OptimizerConfig<T>,
    seed: u64,
) -> Result<(SemiOrthogonalMatrix<T>, PredictionHead<T>, T)> {
    let sol = multi_task_erm(&[dataset], dataset.dim(), k, loss, cfg, seed)?;
    let head = sol.heads.into_iter().next().expect("one head");
    Ok((sol.representation, head, sol.final_objective))
}

/// Result of fitting a head on a frozen representation.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadFit<T> {
    pub head: PredictionHead<T>,
    /// Training objective of `head` (logit-form for cross-entropy).
    pub objective: T,
    pub epochs: usize,
}

/// Fits only the head on features `B̂ᵀx`; a convex problem.
pub fn frozen_rep_erm<T: Scalar>(
    dataset: &Dataset<T>,
    representation: &SemiOrthogonalMatrix<T>,
    loss: LossKind,
    cfg: &OptimizerConfig<T>,
) -> Result<HeadFit<T>> {
    check_datasets(
        &[dataset],
        representation.ambient_dim(),
        representation.rep_dim(),
        loss,
    )?;
    cfg.validate()?;
    let features = dataset.inputs().matmul(representation.matrix());
    Ok(match cfg.solver {
        SolverKind::FirstOrder => first_order::head(&features, dataset.targets(), loss, cfg),
        SolverKind::Newton => newton::head(&features, dataset.targets(), loss, cfg),
    })
}

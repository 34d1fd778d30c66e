//! Domain types: losses, semi-orthogonal representations, norm-bounded
//! heads, composite predictors and labelled datasets.

use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::scalar::{dot, norm2, Scalar};

/// Clamp applied to probabilistic predictions before the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// `¼(y′ − y)²` on identity-link predictions.
    ScaledSquared,
    /// `−y log y′ − (1 − y) log(1 − y′)` on sigmoid-link predictions.
    BinaryCrossEntropy,
    /// Sign disagreement; evaluation only.
    ZeroOne,
}

impl LossKind {
    /// Maps a linear score `wᵀBᵀx` to a prediction.
    #[inline]
    pub fn link<T: Scalar>(self, score: T) -> T {
        match self {
            LossKind::ScaledSquared => score,
            LossKind::BinaryCrossEntropy => sigmoid(score),
            LossKind::ZeroOne => {
                if score >= T::zero() {
                    T::one()
                } else {
                    -T::one()
                }
            }
        }
    }

    /// Whether the solvers can optimize this loss directly.
    pub fn is_differentiable(self) -> bool {
        !matches!(self, LossKind::ZeroOne)
    }

    /// Head norm bound of the matching linear class (`½` linear, `¼` logistic).
    pub fn default_head_bound<T: Scalar>(self) -> T {
        match self {
            LossKind::ScaledSquared => T::lit(0.5),
            LossKind::BinaryCrossEntropy | LossKind::ZeroOne => T::lit(0.25),
        }
    }

    /// Loss as a function of the score with its first and second
    /// derivatives in the score. Cross-entropy uses the logit form
    /// `softplus(s) − y·s`.
    #[inline]
    pub(crate) fn score_terms<T: Scalar>(self, score: T, target: T) -> (T, T, T) {
        match self {
            LossKind::ScaledSquared => {
                let r = score - target;
                let half = T::lit(0.5);
                (half * half * r * r, half * r, half)
            }
            LossKind::BinaryCrossEntropy => {
                let e = (-score.abs()).exp();
                let one_e = T::one() + e;
                let p = if score >= T::zero() {
                    T::one() / one_e
                } else {
                    e / one_e
                };
                let loss = score.max(T::zero()) + e.ln_1p() - target * score;
                (loss, p - target, e / (one_e * one_e))
            }
            LossKind::ZeroOne => (
                self.value_unchecked(self.link(score), target),
                T::zero(),
                T::zero(),
            ),
        }
    }

    /// Loss as a function of the score (logit form for cross-entropy).
    #[inline]
    pub(crate) fn score_loss<T: Scalar>(self, score: T, target: T) -> T {
        match self {
            LossKind::BinaryCrossEntropy => {
                score.max(T::zero()) + (-score.abs()).exp().ln_1p() - target * score
            }
            _ => self.score_terms(score, target).0,
        }
    }

    #[inline]
    pub(crate) fn value_unchecked<T: Scalar>(self, prediction: T, target: T) -> T {
        match self {
            LossKind::ScaledSquared => {
                let r = prediction - target;
                T::lit(0.25) * r * r
            }
            LossKind::BinaryCrossEntropy => {
                let lo = T::lit(BCE_CLAMP);
                let p = prediction.max(lo).min(T::one() - lo);
                -(target * p.ln()) - (T::one() - target) * (T::one() - p).ln()
            }
            LossKind::ZeroOne => {
                if (prediction > T::zero()) != (target > T::zero()) {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(s: T) -> T {
    if s >= T::zero() {
        T::one() / (T::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˢ)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(s: T) -> T {
    if s > T::zero() {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// A `d × k` matrix with orthonormal columns; the representation `x ↦ Bᵀx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat<T>", into = "Mat<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct SemiOrthogonalMatrix<T: Scalar> {
    basis: Mat<T>,
}

impl<T: Scalar> SemiOrthogonalMatrix<T> {
    /// Wraps `basis` after checking `‖BᵀB − I‖_F` against the precision tolerance.
    pub fn new(basis: Mat<T>) -> Result<Self> {
        let (d, k) = (basis.rows(), basis.cols());
        if k == 0 || k > d {
            return Err(Error::invalid(format!(
                "need 1 <= k <= d, got d={d}, k={k}"
            )));
        }
        let defect = orthonormality_defect(&basis);
        if !(defect <= T::ortho_tol()) {
            return Err(Error::invalid(format!(
                "columns are not orthonormal (defect {defect})"
            )));
        }
        Ok(Self { basis })
    }

    /// First `k` standard basis vectors of `R^d`.
    pub fn canonical(d: usize, k: usize) -> Result<Self> {
        Self::new(Mat::from_fn(d, k, |i, j| {
            if i == j {
                T::one()
            } else {
                T::zero()
            }
        }))
    }

    #[inline]
    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    #[inline]
    pub fn rep_dim(&self) -> usize {
        self.basis.cols()
    }

    #[inline]
    pub fn matrix(&self) -> &Mat<T> {
        &self.basis
    }

    pub fn into_matrix(self) -> Mat<T> {
        self.basis
    }

    /// Features `Bᵀx`.
    pub fn embed(&self, x: &[T]) -> Vec<T> {
        self.basis.t_matvec(x)
    }

    /// `Bw`, the ambient-space parameter of a head.
    pub fn lift(&self, w: &[T]) -> Vec<T> {
        self.basis.matvec(w)
    }

    pub fn orthonormality_defect(&self) -> T {
        orthonormality_defect(&self.basis)
    }
}

impl<T: Scalar> TryFrom<Mat<T>> for SemiOrthogonalMatrix<T> {
    type Error = Error;

    fn try_from(m: Mat<T>) -> Result<Self> {
        Self::new(m)
    }
}

impl<T: Scalar> From<SemiOrthogonalMatrix<T>> for Mat<T> {
    fn from(b: SemiOrthogonalMatrix<T>) -> Self {
        b.basis
    }
}

pub(crate) fn orthonormality_defect<T: Scalar>(m: &Mat<T>) -> T {
    m.t_matmul(m).sub(&Mat::identity(m.cols())).frobenius_norm()
}

/// Linear prediction head `z ↦ wᵀz` with `‖w‖ ≤ norm_bound`.
///
/// `norm_bound` may be infinite for unconstrained heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionHead<T> {
    w: Vec<T>,
    norm_bound: T,
}

impl<T: Scalar> PredictionHead<T> {
    pub fn new(w: Vec<T>, norm_bound: T) -> Result<Self> {
        if !(norm_bound > T::zero()) {
            return Err(Error::invalid("head norm bound must be positive"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite head weight"));
        }
        let n = norm2(&w);
        if n > norm_bound * (T::one() + T::lit(1e3) * T::epsilon()) {
            return Err(Error::invalid(format!(
                "head norm {n} exceeds bound {norm_bound}"
            )));
        }
        Ok(Self { w, norm_bound })
    }

    pub fn zeros(k: usize, norm_bound: T) -> Self {
        Self {
            w: vec![T::zero(); k],
            norm_bound,
        }
    }

    /// Builds a head from arbitrary weights by projecting onto the ball.
    pub fn projected(mut w: Vec<T>, norm_bound: T) -> Self {
        project_to_ball(&mut w, norm_bound);
        Self { w, norm_bound }
    }

    #[inline]
    pub fn weights(&self) -> &[T] {
        &self.w
    }

    #[inline]
    pub fn norm_bound(&self) -> T {
        self.norm_bound
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// Euclidean projection onto `{‖w‖ ≤ bound}`.
pub(crate) fn project_to_ball<T: Scalar>(w: &mut [T], bound: T) {
    if bound.is_infinite() {
        return;
    }
    let n = norm2(w);
    if n > bound {
        let s = bound / n;
        for v in w.iter_mut() {
            *v = *v * s;
        }
    }
}

/// Composite predictor `x ↦ g(wᵀBᵀx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct Predictor<T: Scalar> {
    pub representation: SemiOrthogonalMatrix<T>,
    pub head: PredictionHead<T>,
    pub loss: LossKind,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(
        representation: SemiOrthogonalMatrix<T>,
        head: PredictionHead<T>,
        loss: LossKind,
    ) -> Result<Self> {
        if representation.rep_dim() != head.dim() {
            return Err(Error::invalid(format!(
                "head has dimension {} but representation has k={}",
                head.dim(),
                representation.rep_dim()
            )));
        }
        Ok(Self {
            representation,
            head,
            loss,
        })
    }

    /// Same representation and head, evaluated under another loss.
    pub fn with_loss(&self, loss: LossKind) -> Self {
        Self {
            loss,
            ..self.clone()
        }
    }

    /// `θ = Bw`; the score of `x` is `⟨x, θ⟩`.
    pub fn effective_weights(&self) -> Vec<T> {
        self.representation.lift(self.head.weights())
    }

    pub fn score(&self, x: &[T]) -> T {
        dot(x, &self.effective_weights())
    }

    pub fn predict(&self, x: &[T]) -> T {
        self.loss.link(self.score(x))
    }
}

/// Labelled sample `{(x_j, y_j)}` from one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    inputs: Mat<T>,
    targets: Vec<T>,
    pub task_id: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Mat<T>, targets: Vec<T>, task_id: usize) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if targets.is_empty() {
            return Err(Error::invalid("dataset must contain at least one example"));
        }
        Ok(Self {
            inputs,
            targets,
            task_id,
        })
    }

    pub fn from_rows(rows: &[Vec<T>], targets: Vec<T>, task_id: usize) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("input rows of unequal length"));
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::new(Mat::from_vec(rows.len(), d, flat)?, targets, task_id)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    /// Always false; datasets hold at least one example.
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    #[inline]
    pub fn x(&self, j: usize) -> &[T] {
        self.inputs.row(j)
    }

    #[inline]
    pub fn y(&self, j: usize) -> T {
        self.targets[j]
    }

    pub fn inputs(&self) -> &Mat<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    /// Appends `other`'s examples after this dataset's.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(
                "cannot concatenate datasets of different dimension",
            ));
        }
        let mut data = self.inputs.as_slice().to_vec();
        data.extend_from_slice(other.inputs.as_slice());
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        Self::new(
            Mat::from_vec(targets.len(), self.dim(), data)?,
            targets,
            self.task_id,
        )
    }

    /// Reorders examples by `perm` (a permutation of `0..len`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for &p in perm {
            if p >= self.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("not a permutation"));
            }
        }
        if perm.len() != self.len() {
            return Err(Error::invalid("not a permutation"));
        }
        let rows: Vec<Vec<T>> = perm.iter().map(|&p| self.x(p).to_vec()).collect();
        let targets = perm.iter().map(|&p| self.y(p)).collect();
        Self::from_rows(&rows, targets, self.task_id)
    }

    /// Approximate heap footprint of the stored examples.
    pub fn size_bytes(&self) -> usize {
        (self.inputs.as_slice().len() + self.targets.len()) * std::mem::size_of::<T>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_orthonormal_basis() {
        let m = Mat::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(SemiOrthogonalMatrix::<f64>::new(m).is_err());
        assert!(SemiOrthogonalMatrix::<f64>::canonical(2, 3).is_err());
    }

    #[test]
    fn head_bound_enforced() {
        assert!(PredictionHead::new(vec![0.3, 0.4], 0.5).is_ok());
        assert!(PredictionHead::new(vec![0.3, 0.5], 0.5).is_err());
        let h = PredictionHead::projected(vec![3.0, 4.0], 0.5);
        assert!((norm2(h.weights()) - 0.5f64).abs() < 1e-15);
        let free = PredictionHead::projected(vec![3.0, 4.0], f64::INFINITY);
        assert_eq!(free.weights(), &[3.0, 4.0]);
    }

    #[test]
    fn dataset_shape_checks() {
        assert!(Dataset::<f64>::from_rows(&[], vec![], 1).is_err());
        assert!(Dataset::from_rows(&[vec![1.0, 2.0]], vec![1.0, 2.0], 1).is_err());
        let a = Dataset::from_rows(&[vec![1.0]], vec![2.0], 1).unwrap();
        let b = Dataset::from_rows(&[vec![3.0], vec![4.0]], vec![5.0, 6.0], 1).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.x(2), &[4.0]);
    }

    #[test]
    fn zero_one_link_uses_nonnegative_convention() {
        assert_eq!(LossKind::ZeroOne.link(0.0f64), 1.0);
        assert_eq!(LossKind::ZeroOne.link(-1e-9f64), -1.0);
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert_eq!(sigmoid(-800.0f64), 0.0);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

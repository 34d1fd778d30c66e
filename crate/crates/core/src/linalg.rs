//! Semi-orthogonal construction and retraction, subspace projectors,
//! principal angles, and numerical checks of the ridge (Woodbury) identity
//! and the norm-constrained subspace distance bound.

use rand_distr::{Distribution, StandardNormal};

use crate::datagen::seeded_rng;
use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::model::SemiOrthogonalMatrix;
use crate::scalar::{dot, norm2, Scalar};

/// RNG stream used for basis draws.
const BASIS_STREAM: u64 = 0;

/// Q factor of a `d × k` standard normal matrix, deterministic in `seed`.
pub fn random_semi_orthogonal<T: Scalar>(
    d: usize,
    k: usize,
    seed: u64,
) -> Result<SemiOrthogonalMatrix<T>> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!(
            "need 1 <= k <= d, got d={d}, k={k}"
        )));
    }
    let mut rng = seeded_rng(seed, BASIS_STREAM);
    let g = Mat::from_fn(d, k, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::lit(v)
    });
    retract_to_stiefel(&g)
}

/// Thin-QR retraction onto `{B : BᵀB = I}` with the positive-diagonal sign
/// convention, so the map is a deterministic function of `m`.
pub fn retract_to_stiefel<T: Scalar>(m: &Mat<T>) -> Result<SemiOrthogonalMatrix<T>> {
    let (q, _) = m.thin_qr()?;
    SemiOrthogonalMatrix::new(q)
}

/// `P_B = BBᵀ` and `P_B^⊥ = I − BBᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorPair<T> {
    pub onto: Mat<T>,
    pub complement: Mat<T>,
}

impl<T: Scalar> ProjectorPair<T> {
    pub fn new(b: &SemiOrthogonalMatrix<T>) -> Self {
        let onto = b.matrix().matmul(&b.matrix().transpose());
        let complement = Mat::identity(b.ambient_dim()).sub(&onto);
        Self { onto, complement }
    }
}

/// `P_B^⊥ u` without forming the `d × d` projector.
pub fn orthogonal_residual<T: Scalar>(b: &SemiOrthogonalMatrix<T>, u: &[T]) -> Vec<T> {
    let proj = b.lift(&b.embed(u));
    u.iter().zip(&proj).map(|(&a, &p)| a - p).collect()
}

/// Principal angles (radians, ascending) between `span(a)` and `span(b)`.
pub fn principal_angles<T: Scalar>(
    a: &SemiOrthogonalMatrix<T>,
    b: &SemiOrthogonalMatrix<T>,
) -> Result<Vec<T>> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::invalid(
            "subspaces live in different ambient dimensions",
        ));
    }
    let cross = a.matrix().t_matmul(b.matrix());
    let r = a.rep_dim().min(b.rep_dim());
    let sv = if cross.rows() >= cross.cols() {
        cross.singular_values()
    } else {
        cross.transpose().singular_values()
    };
    Ok(sv
        .into_iter()
        .take(r)
        .map(|s| s.min(T::one()).max(-T::one()).acos())
        .collect())
}

/// Both sides of `xᵀ(UUᵀ + λI)⁻¹x = min_z (1/λ)‖x − Uz‖² + ‖z‖²`.
///
/// The left side uses a direct solve of the `d × d` system; the right side
/// evaluates the objective at the ridge minimizer `(λI + UᵀU)⁻¹Uᵀx`.
pub fn ridge_identity_sides<T: Scalar>(x: &[T], u: &Mat<T>, lambda: T) -> Result<(T, T)> {
    if !(lambda > T::zero()) {
        return Err(Error::invalid("lambda must be positive"));
    }
    if u.rows() != x.len() {
        return Err(Error::invalid("x and U have different row counts"));
    }
    let d = x.len();
    let outer = u
        .matmul(&u.transpose())
        .add(&Mat::identity(d).scale(lambda));
    let lhs = dot(x, &outer.solve_spd(x)?);

    let gram = u.t_matmul(u).add(&Mat::identity(u.cols()).scale(lambda));
    let z = if u.cols() == 0 {
        Vec::new()
    } else {
        gram.solve_spd(&u.t_matvec(x))?
    };
    let fitted = if u.cols() == 0 {
        vec![T::zero(); d]
    } else {
        u.matvec(&z)
    };
    let resid: Vec<T> = x.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    let rhs = dot(&resid, &resid) / lambda + dot(&z, &z);
    Ok((lhs, rhs))
}

/// `|LHS − RHS|` of the ridge identity.
pub fn ridge_identity_residual<T: Scalar>(x: &[T], u: &Mat<T>, lambda: T) -> Result<T> {
    let (lhs, rhs) = ridge_identity_sides(x, u, lambda)?;
    Ok((lhs - rhs).abs())
}

/// Outcome of [`constrained_subspace_distance`].
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceDistance<T> {
    /// `min ‖Bw − u‖` over `lower ≤ ‖w‖ ≤ upper`.
    pub min_dist: T,
    /// `2‖P_B^⊥ u‖`.
    pub bound: T,
    /// A minimizing head.
    pub argmin: Vec<T>,
}

/// Closed-form distance from `u` to `{Bw : lower ≤ ‖w‖ ≤ upper}`.
///
/// With `z = Bᵀu`: if `‖z‖ ≥ lower` the unconstrained minimizer `z` is
/// feasible; otherwise the minimizer is `z` pushed radially out to the inner
/// sphere (any point on it when `z = 0`).
pub fn constrained_subspace_distance<T: Scalar>(
    b: &SemiOrthogonalMatrix<T>,
    u: &[T],
    lower: T,
    upper: T,
) -> Result<SubspaceDistance<T>> {
    if u.len() != b.ambient_dim() {
        return Err(Error::invalid("u has the wrong dimension"));
    }
    if !(T::zero() <= lower && lower <= upper && upper <= T::one()) {
        return Err(Error::invalid("need 0 <= lower <= upper <= 1"));
    }
    let slack = T::lit(1e3) * T::epsilon();
    let un = norm2(u);
    if un < lower - slack || un > upper + slack {
        return Err(Error::invalid(format!(
            "‖u‖ = {un} outside [{lower}, {upper}]"
        )));
    }
    let z = b.embed(u);
    let zn = norm2(&z);
    let w = if zn >= lower {
        z
    } else if zn > T::zero() {
        z.iter().map(|&v| v * lower / zn).collect()
    } else {
        let mut w = vec![T::zero(); z.len()];
        w[0] = lower;
        w
    };
    let bw = b.lift(&w);
    let diff: Vec<T> = bw.iter().zip(u).map(|(&a, &c)| a - c).collect();
    let bound = T::lit(2.0) * norm2(&orthogonal_residual(b, u));
    Ok(SubspaceDistance {
        min_dist: norm2(&diff),
        bound,
        argmin: w,
    })
}

//! Task-eluder dimension for finite representation and head classes.
//!
//! `(h, f_n)` is ε-independent of `(h, f_1), …, (h, f_{n−1})` when some
//! witness `h′` admits heads with total excess risk at most `ε` on the
//! predecessors, yet every head on `h′` has excess risk above `ε/2` on
//! `f_n`. The eluder dimension is the longest chain of such steps over all
//! centers `h`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Finite `(H, F)` with a tabulated excess-risk oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteClassPair {
    reps: usize,
    heads: usize,
    /// `E_{P_{f∘h}}[ℓ(f′∘h′) − ℓ(f∘h)]`, indexed by `(h, f, h′, f′)`.
    excess: Vec<f64>,
}

impl FiniteClassPair {
    /// Tabulates `oracle(h, f, h′, f′)` over all index quadruples.
    pub fn from_oracle(
        reps: usize,
        heads: usize,
        mut oracle: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        if reps == 0 || heads == 0 {
            return Err(Error::invalid("both classes must be non-empty"));
        }
        let mut excess = Vec::with_capacity((reps * heads).pow(2));
        for h in 0..reps {
            for f in 0..heads {
                for hp in 0..reps {
                    for fp in 0..heads {
                        let v = oracle(h, f, hp, fp);
                        if !v.is_finite() {
                            return Err(Error::invalid(format!(
                                "oracle returned {v} at ({h}, {f}, {hp}, {fp})"
                            )));
                        }
                        excess.push(v);
                    }
                }
            }
        }
        Ok(Self {
            reps,
            heads,
            excess,
        })
    }

    /// Scaled square loss under additive noise and input second moment
    /// `sigma`: excess `= (B′w′ − Bw)ᵀ Σ (B′w′ − Bw) / 4`.
    pub fn scaled_squared<T: Scalar>(
        reps: &[Mat<T>],
        heads: &[Vec<T>],
        sigma: &Mat<T>,
    ) -> Result<Self> {
        let d = sigma.rows();
        if sigma.cols() != d {
            return Err(Error::invalid("second moment must be square"));
        }
        if let Some(b) = reps.iter().find(|b| b.rows() != d) {
            return Err(Error::invalid(format!(
                "representation has {} rows, expected {d}",
                b.rows()
            )));
        }
        if let Some(w) = heads
            .iter()
            .find(|w| reps.first().is_some_and(|b| w.len() != b.cols()))
        {
            return Err(Error::invalid(format!(
                "head of length {} does not match the representations",
                w.len()
            )));
        }
        if reps.iter().any(|b| reps[0].cols() != b.cols()) {
            return Err(Error::invalid("representations must share k"));
        }
        let thetas: Vec<Vec<Vec<T>>> = reps
            .iter()
            .map(|b| heads.iter().map(|w| b.matvec(w)).collect())
            .collect();
        Self::from_oracle(reps.len(), heads.len(), |h, f, hp, fp| {
            let diff: Vec<T> = thetas[hp][fp]
                .iter()
                .zip(&thetas[h][f])
                .map(|(&a, &b)| a - b)
                .collect();
            (dot(&diff, &sigma.matvec(&diff)) * T::lit(0.25)).as_f64()
        })
    }

    pub fn num_reps(&self) -> usize {
        self.reps
    }

    pub fn num_heads(&self) -> usize {
        self.heads
    }

    pub fn excess(&self, h: usize, f: usize, hp: usize, fp: usize) -> f64 {
        self.excess[((h * self.heads + f) * self.reps + hp) * self.heads + fp]
    }

    /// `min_{f′} excess(h, f, h′, f′)` and the first minimizing `f′`.
    pub fn best_head(&self, h: usize, f: usize, hp: usize) -> (usize, f64) {
        (0..self.heads)
            .map(|fp| (fp, self.excess(h, f, hp, fp)))
            .fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            )
    }

    fn check(&self, center: usize, heads: &[usize]) -> Result<()> {
        if center >= self.reps {
            return Err(Error::invalid(format!(
                "center {center} outside {} representations",
                self.reps
            )));
        }
        if let Some(f) = heads.iter().find(|&&f| f >= self.heads) {
            return Err(Error::invalid(format!(
                "head {f} outside {} heads",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Evidence that a step is ε-independent of its predecessors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub rep: usize,
    /// `f′_i` for each predecessor.
    pub heads: Vec<usize>,
    pub predecessor_excess: Vec<f64>,
    /// `min_{f′} excess` on the new task under `rep`.
    pub escape_excess: f64,
}

impl Witness {
    pub fn predecessor_total(&self) -> f64 {
        self.predecessor_excess.iter().sum()
    }

    /// Re-evaluates both conditions of the definition against `pair`.
    pub fn verifies(
        &self,
        pair: &FiniteClassPair,
        center: usize,
        predecessors: &[usize],
        new_head: usize,
        epsilon: f64,
    ) -> bool {
        if self.heads.len() != predecessors.len() || self.rep >= pair.num_reps() {
            return false;
        }
        let total: f64 = predecessors
            .iter()
            .zip(&self.heads)
            .map(|(&f, &fp)| pair.excess(center, f, self.rep, fp))
            .sum();
        let escapes = (0..pair.num_heads())
            .all(|fp| pair.excess(center, new_head, self.rep, fp) > epsilon / 2.0);
        total <= epsilon && escapes
    }
}

/// Decides whether `(center, new_head)` is ε-independent of
/// `(center, predecessors[i])`. The predecessor sum decouples, so each
/// `f′_i` is chosen separately. Witnesses are searched in index order.
pub fn is_eps_independent(
    pair: &FiniteClassPair,
    center: usize,
    new_head: usize,
    predecessors: &[usize],
    epsilon: f64,
) -> Result<Option<Witness>> {
    pair.check(center, predecessors)?;
    pair.check(center, &[new_head])?;
    Ok(find_witness(pair, center, new_head, predecessors, epsilon))
}

fn find_witness(
    pair: &FiniteClassPair,
    center: usize,
    new_head: usize,
    predecessors: &[usize],
    epsilon: f64,
) -> Option<Witness> {
    for hp in 0..pair.num_reps() {
        let (_, escape) = pair.best_head(center, new_head, hp);
        if !(escape > epsilon / 2.0) {
            continue;
        }
        let (heads, excess): (Vec<usize>, Vec<f64>) = predecessors
            .iter()
            .map(|&f| pair.best_head(center, f, hp))
            .unzip();
        if excess.iter().sum::<f64>() <= epsilon {
            return Some(Witness {
                rep: hp,
                heads,
                predecessor_excess: excess,
                escape_excess: escape,
            });
        }
    }
    None
}

/// A chain of ε-independent tasks centered at one representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EluderCertificate {
    pub center: usize,
    pub sequence: Vec<usize>,
    /// One witness per step.
    pub witnesses: Vec<Witness>,
    pub epsilon: f64,
}

impl EluderCertificate {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Every stored witness verifies and the decision procedure agrees.
    pub fn validate(&self, pair: &FiniteClassPair) -> bool {
        if self.witnesses.len() != self.sequence.len()
            || pair.check(self.center, &self.sequence).is_err()
        {
            return false;
        }
        (0..self.sequence.len()).all(|i| {
            let (prefix, f) = (&self.sequence[..i], self.sequence[i]);
            self.witnesses[i].verifies(pair, self.center, prefix, f, self.epsilon)
                && find_witness(pair, self.center, f, prefix, self.epsilon).is_some()
        })
    }

    /// Human-readable listing of steps, witnesses and excess values.
    pub fn report(&self) -> String {
        let mut out = format!(
            "center h{} epsilon {} length {}\n",
            self.center,
            self.epsilon,
            self.len()
        );
        for (i, (f, w)) in self.sequence.iter().zip(&self.witnesses).enumerate() {
            let heads: Vec<String> = w.heads.iter().map(|h| format!("f{h}")).collect();
            let _ = writeln!(
                out,
                "step {}: f{} witness h{} [{}] predecessor excess {:.6} escape excess {:.6}",
                i + 1,
                f,
                w.rep,
                heads.join(" "),
                w.predecessor_total(),
                w.escape_excess
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    /// Longest chain over every center.
    Exhaustive,
    /// Extends by the first independent head at each step.
    Greedy { center: usize },
}

/// Node budget for exhaustive search.
pub const EXHAUSTIVE_BUDGET: usize = 1_000_000;

pub fn longest_eluding_sequence(
    pair: &FiniteClassPair,
    epsilon: f64,
    mode: SearchMode,
) -> Result<EluderCertificate> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    match mode {
        SearchMode::Greedy { center } => greedy(pair, center, epsilon),
        SearchMode::Exhaustive => {
            let mut best: Option<EluderCertificate> = None;
            let mut visited = 0;
            for center in 0..pair.num_reps() {
                let mut path = Vec::new();
                let mut witnesses = Vec::new();
                let mut longest = (Vec::new(), Vec::new());
                dfs(
                    pair,
                    center,
                    epsilon,
                    &mut path,
                    &mut witnesses,
                    &mut longest,
                    &mut visited,
                )?;
                if best.as_ref().is_none_or(|b| longest.0.len() > b.len()) {
                    best = Some(EluderCertificate {
                        center,
                        sequence: longest.0,
                        witnesses: longest.1,
                        epsilon,
                    });
                }
            }
            Ok(best.expect("at least one representation"))
        }
    }
}

fn dfs(
    pair: &FiniteClassPair,
    center: usize,
    epsilon: f64,
    path: &mut Vec<usize>,
    witnesses: &mut Vec<Witness>,
    longest: &mut (Vec<usize>, Vec<Witness>),
    visited: &mut usize,
) -> Result<()> {
    if path.len() > longest.0.len() {
        *longest = (path.clone(), witnesses.clone());
    }
    for f in 0..pair.num_heads() {
        *visited += 1;
        if *visited > EXHAUSTIVE_BUDGET {
            return Err(Error::Resource(format!(
                "exhaustive eluder search exceeded {EXHAUSTIVE_BUDGET} nodes; use greedy mode"
            )));
        }
        if let Some(w) = find_witness(pair, center, f, path, epsilon) {
            path.push(f);
            witnesses.push(w);
            dfs(pair, center, epsilon, path, witnesses, longest, visited)?;
            path.pop();
            witnesses.pop();
        }
    }
    Ok(())
}

fn greedy(pair: &FiniteClassPair, center: usize, epsilon: f64) -> Result<EluderCertificate> {
    pair.check(center, &[])?;
    let mut sequence = Vec::new();
    let mut witnesses = Vec::new();
    loop {
        let next = (0..pair.num_heads())
            .find_map(|f| find_witness(pair, center, f, &sequence, epsilon).map(|w| (f, w)));
        let Some((f, w)) = next else { break };
        sequence.push(f);
        witnesses.push(w);
        if sequence.len() > EXHAUSTIVE_BUDGET {
            return Err(Error::Resource(
                "greedy eluder chain does not terminate".into(),
            ));
        }
    }
    Ok(EluderCertificate {
        center,
        sequence,
        witnesses,
        epsilon,
    })
}

/// `Pr_{x∼N(0,I)}[sign⟨u, x⟩ ≠ sign⟨v, x⟩] = ∠(u, v)/π`.
pub fn gaussian_sign_disagreement(u: &[f64], v: &[f64]) -> f64 {
    angle(u, v) / std::f64::consts::PI
}

fn angle(u: &[f64], v: &[f64]) -> f64 {
    let c = dot(u, v) / (dot(u, u).sqrt() * dot(v, v).sqrt());
    c.clamp(-1.0, 1.0).acos()
}

/// One step of the pointwise-independence chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseStep {
    pub step: usize,
    pub lambda: f64,
    /// Largest per-predecessor excess (0 when there are none).
    pub max_predecessor_excess: f64,
    /// `∠(Bv, span B′)/π`, the least excess of any head on `B′`.
    pub escape_excess: f64,
    pub agreement_holds: bool,
    pub escape_holds: bool,
}

impl PointwiseStep {
    pub fn verified(&self) -> bool {
        self.agreement_holds && self.escape_holds
    }
}

/// Repeats the task `(B, e₁)` with `B = [e₁ … e_k]` against the witness
/// `B′ = [s, e₃, …, e_k, e_{k+1}]`, `s = e₁ cos λ + e₂ sin λ`. Under the
/// per-task maximum in place of the sum, every step is independent of its
/// predecessors, so the chain never ends.
pub fn pointwise_counterexample(
    d: usize,
    k: usize,
    epsilon: f64,
    n_steps: usize,
) -> Result<Vec<PointwiseStep>> {
    if k == 0 || d <= k {
        return Err(Error::invalid(format!("need d > k >= 1, got d={d}, k={k}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if n_steps == 0 {
        return Err(Error::invalid("need at least one step"));
    }
    let pi = std::f64::consts::PI;
    // midpoint of (πε/2, min(πε, π/2)]; beyond π/2 the subspace angle folds back
    let lambda = 0.5 * (pi * epsilon / 2.0 + (pi * epsilon).min(pi / 2.0));
    let unit = |i: usize| -> Vec<f64> { (0..d).map(|j| f64::from(u8::from(i == j))).collect() };
    let s: Vec<f64> = (0..d)
        .map(|j| match j {
            0 => lambda.cos(),
            1 => lambda.sin(),
            _ => 0.0,
        })
        .collect();
    let mut cols = vec![s];
    cols.extend((2..k).map(unit));
    if k >= 2 {
        cols.push(unit(k));
    }
    let b_prime = Mat::from_columns(&cols)?;
    let b = Mat::from_columns(&(0..k).map(unit).collect::<Vec<_>>())?;
    let v: Vec<f64> = (0..k).map(|i| f64::from(u8::from(i == 0))).collect();
    let bv = b.matvec(&v);
    let bpv = b_prime.matvec(&v);
    let projection = b_prime.matvec(&b_prime.t_matvec(&bv));
    let escape_excess = angle(&bv, &projection) / pi;

    Ok((1..=n_steps)
        .map(|step| {
            let max_predecessor_excess = (1..step)
                .map(|_| gaussian_sign_disagreement(&bpv, &bv))
                .fold(0.0, f64::max);
            PointwiseStep {
                step,
                lambda,
                max_predecessor_excess,
                escape_excess,
                agreement_holds: max_predecessor_excess <= epsilon,
                escape_holds: escape_excess > epsilon / 2.0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng, reps: usize, heads: usize) -> FiniteClassPair {
        let table: Vec<f64> = (0..(reps * heads).pow(2))
            .map(|_| rng.random::<f64>())
            .collect();
        FiniteClassPair::from_oracle(reps, heads, |h, f, hp, fp| {
            // calibrated: the true predictor has zero excess
            if (h, f) == (hp, fp) {
                0.0
            } else {
                table[((h * heads + f) * reps + hp) * heads + fp]
            }
        })
        .unwrap()
    }

    /// Enumerates every `(h′, f′_1, …, f′_{n−1})` without decoupling.
    fn brute_force(
        pair: &FiniteClassPair,
        center: usize,
        new_head: usize,
        preds: &[usize],
        eps: f64,
    ) -> bool {
        let nh = pair.num_heads();
        for hp in 0..pair.num_reps() {
            let escapes = (0..nh).all(|fp| pair.excess(center, new_head, hp, fp) > eps / 2.0);
            if !escapes {
                continue;
            }
            let total = nh.pow(preds.len() as u32);
            for code in 0..total {
                let mut c = code;
                let mut sum = 0.0;
                for &f in preds {
                    sum += pair.excess(center, f, hp, c % nh);
                    c /= nh;
                }
                if sum <= eps {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn decoupled_search_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let (reps, heads) = (rng.random_range(1..4), rng.random_range(1..4));
            let pair = random_pair(&mut rng, reps, heads);
            let eps = rng.random_range(0.05..1.5);
            let center = rng.random_range(0..reps);
            let n = rng.random_range(0..5);
            let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..heads)).collect();
            let f = rng.random_range(0..heads);
            let fast = is_eps_independent(&pair, center, f, &preds, eps).unwrap();
            assert_eq!(fast.is_some(), brute_force(&pair, center, f, &preds, eps));
            if let Some(w) = fast {
                assert!(w.verifies(&pair, center, &preds, f, eps));
            }
        }
    }

    #[test]
    fn exhaustive_chains_respect_class_size_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (reps, heads) = (rng.random_range(1..5), rng.random_range(1..5));
            let pair = random_pair(&mut rng, reps, heads);
            let eps = rng.random_range(0.05..1.0);
            let cert = longest_eluding_sequence(&pair, eps, SearchMode::Exhaustive).unwrap();
            assert!(cert.len() <= 2 * reps.min(heads), "{}", cert.report());
            assert!(cert.validate(&pair));
            let greedy = longest_eluding_sequence(
                &pair,
                eps,
                SearchMode::Greedy {
                    center: cert.center,
                },
            )
            .unwrap();
            assert!(greedy.len() <= cert.len());
            assert!(greedy.validate(&pair));
        }
    }

    #[test]
    fn single_representation_has_no_independent_steps() {
        // the only witness is the center itself, which fits every task exactly
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = random_pair(&mut rng, 1, 4);
        let cert = longest_eluding_sequence(&pair, 0.1, SearchMode::Exhaustive).unwrap();
        assert!(cert.is_empty());
    }

    #[test]
    fn tampered_certificate_fails_validation() {
        let pair = FiniteClassPair::from_oracle(2, 2, |h, f, hp, fp| {
            if (h, f) == (hp, fp) {
                0.0
            } else if h == hp {
                0.01
            } else {
                0.9
            }
        })
        .unwrap();
        let mut cert = longest_eluding_sequence(&pair, 0.1, SearchMode::Exhaustive).unwrap();
        assert!(!cert.is_empty());
        assert!(cert.validate(&pair));
        assert!(cert.report().contains("witness"));
        cert.witnesses[0].rep = cert.center;
        assert!(!cert.validate(&pair));
    }

    #[test]
    fn scaled_squared_oracle_is_quadratic_form() {
        let b0 = Mat::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b1 = Mat::from_columns(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let heads = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let sigma = Mat::from_columns(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let pair = FiniteClassPair::scaled_squared(&[b0, b1], &heads, &sigma).unwrap();
        // θ = (1,0) vs θ′ = B1·(0,2) = (2,0): Δ = (1,0), ΔᵀΣΔ/4 = 0.5
        assert!((pair.excess(0, 0, 1, 1) - 0.5).abs() < 1e-12);
        assert_eq!(pair.excess(1, 1, 1, 1), 0.0);
        assert_eq!(pair.best_head(0, 0, 0), (0, 0.0));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(FiniteClassPair::from_oracle(0, 2, |_, _, _, _| 0.0).is_err());
        assert!(FiniteClassPair::from_oracle(1, 1, |_, _, _, _| f64::NAN).is_err());
        let pair = FiniteClassPair::from_oracle(2, 2, |_, _, _, _| 0.0).unwrap();
        assert!(is_eps_independent(&pair, 2, 0, &[], 0.1).is_err());
        assert!(is_eps_independent(&pair, 0, 0, &[3], 0.1).is_err());
        assert!(longest_eluding_sequence(&pair, 0.0, SearchMode::Exhaustive).is_err());
        assert!(longest_eluding_sequence(&pair, 0.1, SearchMode::Greedy { center: 5 }).is_err());
        assert!(pointwise_counterexample(3, 3, 0.1, 5).is_err());
        assert!(pointwise_counterexample(4, 2, 1.0, 5).is_err());
    }

    #[test]
    fn exhaustive_budget_is_enforced() {
        // representation j+1 escapes only on head j, so every ordering of
        // distinct heads is a chain and the search tree grows factorially
        let n = 10;
        let pair =
            FiniteClassPair::from_oracle(
                n + 1,
                n,
                |h, f, hp, _| if h == 0 && hp == f + 1 { 0.6 } else { 0.0 },
            )
            .unwrap();
        let order: Vec<usize> = (0..n).collect();
        for i in 0..n {
            assert!(is_eps_independent(&pair, 0, order[i], &order[..i], 1.0)
                .unwrap()
                .is_some());
        }
        let greedy =
            longest_eluding_sequence(&pair, 1.0, SearchMode::Greedy { center: 0 }).unwrap();
        // each head appears twice, meeting the 2·min(|H|, |F|) bound exactly
        assert_eq!(greedy.len(), 2 * n);
        assert!(greedy.validate(&pair));
        assert!(matches!(
            longest_eluding_sequence(&pair, 1.0, SearchMode::Exhaustive),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn disagreement_is_angle_over_pi() {
        assert_eq!(gaussian_sign_disagreement(&[1.0, 0.0], &[2.0, 0.0]), 0.0);
        assert!((gaussian_sign_disagreement(&[1.0, 0.0], &[0.0, 1.0]) - 0.5).abs() < 1e-15);
        assert!((gaussian_sign_disagreement(&[1.0, 0.0], &[-1.0, 0.0]) - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (u, v) = ([1.0, 0.3, -0.2], [0.4, 1.0, 0.5]);
        let n = 200_000;
        let mut disagree = 0;
        for _ in 0..n {
            let x: Vec<f64> = (0..3)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            if (dot(&u, &x) > 0.0) != (dot(&v, &x) > 0.0) {
                disagree += 1;
            }
        }
        let mc = f64::from(disagree) / f64::from(n);
        assert!((mc - gaussian_sign_disagreement(&u, &v)).abs() < 0.005);
    }

    #[test]
    fn pointwise_chain_never_terminates() {
        for (d, k, eps) in [(2, 1, 0.1), (10, 3, 0.05), (6, 5, 0.3), (4, 2, 0.9)] {
            let steps = pointwise_counterexample(d, k, eps, 100).unwrap();
            assert_eq!(steps.len(), 100);
            assert!(
                steps.iter().all(PointwiseStep::verified),
                "d={d} k={k} eps={eps}"
            );
            let last = &steps[99];
            assert!(last.max_predecessor_excess > eps / 2.0 && last.max_predecessor_excess <= eps);
            assert_eq!(steps[0].max_predecessor_excess, 0.0);
        }
    }
}

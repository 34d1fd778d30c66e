//! Exhaustive task-eluder lengths on random finite classes under the
//! scaled-square oracle, plus the pointwise-independence chain.

use std::fmt::Write as _;

use anyhow::Result;
use lifelong_rep::datagen::seeded_rng;
use lifelong_rep::eluder::{
    longest_eluding_sequence, pointwise_counterexample, FiniteClassPair, SearchMode,
};
use lifelong_rep::linalg::random_semi_orthogonal;
use lifelong_rep::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::EluderConfig;

/// Heads are drawn uniformly from the ball of this radius.
pub const HEAD_RADIUS: f64 = 0.5;

/// Pointwise-chain settings audited by default: `(d, k, ε)`.
pub const POINTWISE_CASES: [(usize, usize, f64); 2] = [(4, 2, 0.2), (10, 3, 0.05)];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRow {
    pub pair: usize,
    pub reps: usize,
    pub heads: usize,
    pub epsilon: f64,
    pub center: usize,
    pub length: usize,
    pub bound: usize,
    pub valid: bool,
}

/// A larger scale giving a strictly longer chain on the same pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityNote {
    pub pair: usize,
    pub epsilon: f64,
    pub length: usize,
    pub larger_epsilon: f64,
    pub larger_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointwiseCase {
    pub d: usize,
    pub k: usize,
    pub epsilon: f64,
    pub steps: usize,
    pub verified_steps: usize,
    pub lambda: f64,
    pub max_predecessor_excess: f64,
    pub escape_excess: f64,
}

impl PointwiseCase {
    pub fn all_verified(&self) -> bool {
        self.verified_steps == self.steps
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EluderAudit {
    pub rows: Vec<PairRow>,
    pub monotonicity_notes: Vec<MonotonicityNote>,
    pub pointwise: Vec<PointwiseCase>,
    #[serde(skip)]
    pub reports: String,
}

impl EluderAudit {
    pub fn bound_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.length > r.bound).count()
    }

    pub fn invalid_certificates(&self) -> usize {
        self.rows.iter().filter(|r| !r.valid).count()
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("pair,reps,heads,epsilon,center,length,bound,valid\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.pair, r.reps, r.heads, r.epsilon, r.center, r.length, r.bound, r.valid
            );
        }
        s
    }

    pub fn pointwise_csv(&self) -> String {
        let mut s = String::from(
            "d,k,epsilon,steps,verified_steps,lambda,max_predecessor_excess,escape_excess\n",
        );
        for c in &self.pointwise {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.12},{:.12},{:.12}",
                c.d,
                c.k,
                c.epsilon,
                c.steps,
                c.verified_steps,
                c.lambda,
                c.max_predecessor_excess,
                c.escape_excess
            );
        }
        s
    }
}

/// Random pair with `1..=max_reps` representations (`dim × rep_dim`) and
/// `1..=max_heads` heads, identity input covariance.
pub fn random_pair(cfg: &EluderConfig, seed: u64) -> Result<FiniteClassPair> {
    let mut rng = seeded_rng(seed, 21);
    let n_reps = rng.random_range(1..=cfg.max_reps);
    let n_heads = rng.random_range(1..=cfg.max_heads);
    let reps = (0..n_reps)
        .map(|_| {
            random_semi_orthogonal::<f64>(cfg.dim, cfg.rep_dim, rng.random())
                .map(|b| b.into_matrix())
        })
        .collect::<lifelong_rep::Result<Vec<_>>>()?;
    let heads: Vec<Vec<f64>> = (0..n_heads)
        .map(|_| {
            let g: Vec<f64> = (0..cfg.rep_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let r = HEAD_RADIUS * rng.random::<f64>().powf(1.0 / cfg.rep_dim as f64);
            g.into_iter().map(|v| v * r / n).collect()
        })
        .collect();
    Ok(FiniteClassPair::scaled_squared(
        &reps,
        &heads,
        &Mat::identity(cfg.dim),
    )?)
}

pub fn eluder_audit(cfg: &EluderConfig, seed: u64) -> Result<EluderAudit> {
    let mut audit = EluderAudit::default();
    let mut eps = cfg.epsilon_list.clone();
    eps.sort_by(f64::total_cmp);
    for pair_id in 0..cfg.pairs {
        let pair = random_pair(cfg, seed.wrapping_add(pair_id as u64))?;
        let bound = 2 * pair.num_reps().min(pair.num_heads());
        let mut lengths = Vec::with_capacity(eps.len());
        for &e in &eps {
            let cert = longest_eluding_sequence(&pair, e, SearchMode::Exhaustive)?;
            let _ = writeln!(
                audit.reports,
                "pair {pair_id}: {}",
                cert.report().trim_end()
            );
            audit.rows.push(PairRow {
                pair: pair_id,
                reps: pair.num_reps(),
                heads: pair.num_heads(),
                epsilon: e,
                center: cert.center,
                length: cert.len(),
                bound,
                valid: cert.validate(&pair),
            });
            lengths.push(cert.len());
        }
        for i in 0..eps.len() {
            for j in i + 1..eps.len() {
                if lengths[j] > lengths[i] {
                    audit.monotonicity_notes.push(MonotonicityNote {
                        pair: pair_id,
                        epsilon: eps[i],
                        length: lengths[i],
                        larger_epsilon: eps[j],
                        larger_length: lengths[j],
                    });
                }
            }
        }
    }
    for (d, k, epsilon) in POINTWISE_CASES {
        let steps = pointwise_counterexample(d, k, epsilon, cfg.steps)?;
        let last = steps.last().expect("at least one step");
        audit.pointwise.push(PointwiseCase {
            d,
            k,
            epsilon,
            steps: steps.len(),
            verified_steps: steps.iter().filter(|s| s.verified()).count(),
            lambda: last.lambda,
            max_predecessor_excess: steps
                .iter()
                .map(|s| s.max_predecessor_excess)
                .fold(0.0, f64::max),
            escape_excess: last.escape_excess,
        });
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Experiment, ExperimentConfig};

    #[test]
    fn audit_respects_bound_and_revalidates() {
        let mut cfg = ExperimentConfig::defaults(Experiment::EluderAudit).eluder;
        cfg.pairs = 10;
        cfg.steps = 20;
        let audit = eluder_audit(&cfg, 3).unwrap();
        assert_eq!(audit.rows.len(), 10 * cfg.epsilon_list.len());
        assert_eq!(audit.bound_violations(), 0);
        assert_eq!(audit.invalid_certificates(), 0);
        assert!(audit.pointwise.iter().all(PointwiseCase::all_verified));
        assert!(
            audit.rows.iter().any(|r| r.length > 0),
            "audit never finds a chain"
        );
        assert_eq!(audit.rows_csv().lines().count(), 1 + audit.rows.len());
    }

    #[test]
    fn random_pairs_are_calibrated() {
        let cfg = ExperimentConfig::defaults(Experiment::EluderAudit).eluder;
        let pair = random_pair(&cfg, 8).unwrap();
        for h in 0..pair.num_reps() {
            for f in 0..pair.num_heads() {
                assert_eq!(pair.excess(h, f, h, f), 0.0);
                assert!(pair.excess(h, f, 0, 0) >= 0.0);
            }
        }
    }
}

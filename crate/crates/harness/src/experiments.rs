//! Synthetic logistic experiments: the lifelong learner and both baselines
//! over a (k, β, trial) grid, with held-out certification of every output.

use std::fmt::Write as _;

use anyhow::{anyhow, Context, Result};
use lifelong_rep::baselines::{run_baseline, BaselineKind};
use lifelong_rep::datagen::{make_task_stream, InputLaw, NoiseSpec, TaskStream};
use lifelong_rep::lifelong::{certify_outputs, run_lifelong, Certification, RunRecord, RunSummary};
use lifelong_rep::LossKind;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;

const ERM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const CERT_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    Lifelong,
    IndependentErm,
    OracleKnownRep,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lifelong => "lifelong",
            Algorithm::IndependentErm => BaselineKind::IndependentErm.as_str(),
            Algorithm::OracleKnownRep => BaselineKind::OracleKnownRep.as_str(),
        }
    }
}

/// One finished run.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub k: usize,
    pub beta: f64,
    pub trial: usize,
    pub seed: u64,
    pub summary: RunSummary,
    pub cumulative_updates: Vec<usize>,
    pub cumulative_samples: Vec<usize>,
    pub certifications: Vec<Certification>,
    /// Samples drawn per task after the last representation update.
    pub samples_after_last_update: Vec<usize>,
    pub m_tilde: usize,
    pub initial_n: usize,
    pub csv: String,
}

impl TrialResult {
    pub fn file_name(&self) -> String {
        format!(
            "runs/{}_k{}_beta{}_trial{}.csv",
            self.algorithm.name(),
            self.k,
            self.beta,
            self.trial
        )
    }

    pub fn certified_fraction(&self) -> f64 {
        fraction(
            self.certifications
                .iter()
                .filter(|c| c.within_epsilon)
                .count(),
            self.certifications.len(),
        )
    }
}

/// The logistic stream of the synthetic experiments: Gaussian inputs,
/// `Pr(y = 1 | x) = σ(⟨B*w*_t, x⟩)`, heads on the radius-β sphere.
pub fn logistic_stream(
    cfg: &ExperimentConfig,
    k: usize,
    beta: f64,
    seed: u64,
) -> Result<TaskStream<f64>> {
    Ok(make_task_stream(
        cfg.d,
        k,
        cfg.num_tasks,
        beta,
        NoiseSpec::LogisticLabel,
        InputLaw::StandardGaussian,
        LossKind::BinaryCrossEntropy,
        seed,
    )?)
}

pub fn bayes_risks(stream: &TaskStream<f64>) -> Result<Vec<f64>> {
    stream
        .tasks()
        .iter()
        .map(|t| {
            t.exact_bayes_risk()
                .ok_or_else(|| anyhow!("no closed-form Bayes risk for this stream"))
        })
        .collect()
}

pub fn run_trial(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    k: usize,
    beta: f64,
    trial: usize,
) -> Result<TrialResult> {
    let seed = cfg.trial_seed(trial);
    let policy = cfg.policy_for(k)?;
    let mut stream = logistic_stream(cfg, k, beta, seed)?;
    let kappas = bayes_risks(&stream)?;
    let erm_seed = seed ^ ERM_SALT;
    let mut record: RunRecord<f64> = match algorithm {
        Algorithm::Lifelong => run_lifelong(
            &mut stream,
            cfg.epsilon,
            &kappas,
            &policy,
            &cfg.optimizer,
            None,
            erm_seed,
        )?,
        Algorithm::IndependentErm => run_baseline(
            BaselineKind::IndependentErm,
            &mut stream,
            &policy,
            &cfg.optimizer,
            erm_seed,
        )?,
        Algorithm::OracleKnownRep => run_baseline(
            BaselineKind::OracleKnownRep,
            &mut stream,
            &policy,
            &cfg.optimizer,
            erm_seed,
        )?,
    };
    let certifications = certify_outputs(
        &record.outputs,
        &stream,
        &kappas,
        cfg.epsilon,
        cfg.heldout_size(),
        seed ^ CERT_SALT,
    )?;
    record.attach_certification(&certifications);
    Ok(TrialResult {
        algorithm,
        k,
        beta,
        trial,
        seed,
        summary: record.summary(),
        cumulative_updates: record.cumulative_updates(),
        cumulative_samples: record.cumulative_samples(),
        certifications,
        samples_after_last_update: record.samples_after_last_update(),
        m_tilde: policy.m_tilde(),
        initial_n: policy.initial_n(),
        csv: record.to_csv(),
    })
}

/// Per-(algorithm, k, β) aggregate over trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub algorithm: Algorithm,
    pub k: usize,
    pub beta: f64,
    pub trials: usize,
    pub mean_updates: f64,
    /// Population standard deviation over trials.
    pub std_updates: f64,
    pub mean_total_samples: f64,
    pub std_total_samples: f64,
    /// Fraction of (task, trial) pairs certified within ε.
    pub certified_fraction: f64,
    pub max_final_n: usize,
    pub max_doublings: usize,
}

/// Mean and σ of one quantity at every task index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub algorithm: Algorithm,
    pub k: usize,
    pub beta: f64,
    pub quantity: &'static str,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct GridOutcome {
    pub trials: Vec<TrialResult>,
    pub cells: Vec<CellSummary>,
    pub curves: Vec<Curve>,
    pub failures: Vec<String>,
}

impl GridOutcome {
    pub fn cell(&self, algorithm: Algorithm, k: usize, beta: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.k == k && c.beta == beta)
    }

    /// Completed trials of one cell in trial order.
    pub fn cell_trials(&self, algorithm: Algorithm, k: usize, beta: f64) -> Vec<&TrialResult> {
        self.trials
            .iter()
            .filter(|t| t.algorithm == algorithm && t.k == k && t.beta == beta)
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "algorithm,k,beta,trials,mean_updates,std_updates,mean_total_samples,std_total_samples,certified_fraction,max_final_N,max_doublings\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.3},{:.3},{:.6},{},{}",
                c.algorithm.name(),
                c.k,
                c.beta,
                c.trials,
                c.mean_updates,
                c.std_updates,
                c.mean_total_samples,
                c.std_total_samples,
                c.certified_fraction,
                c.max_final_n,
                c.max_doublings
            );
        }
        s
    }

    /// Long format: one row per (curve, task) with `x`, `y`, `sigma`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("algorithm,k,beta,quantity,x,y,sigma\n");
        for c in &self.curves {
            for (t, (m, sd)) in c.mean.iter().zip(&c.std).enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.6},{:.6}",
                    c.algorithm.name(),
                    c.k,
                    c.beta,
                    c.quantity,
                    t + 1,
                    m,
                    sd
                );
            }
        }
        s
    }

    pub fn certifications_csv(&self) -> String {
        let mut s = String::from("algorithm,k,beta,trial,task_id,excess_risk,within_epsilon\n");
        for t in &self.trials {
            for c in &t.certifications {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.9},{}",
                    t.algorithm.name(),
                    t.k,
                    t.beta,
                    t.trial,
                    c.task_id,
                    c.excess_risk,
                    c.within_epsilon
                );
            }
        }
        s
    }

    /// Mean ± σ of lifelong updates, rows k and columns β.
    pub fn render_table(&self, ks: &[usize], betas: &[f64]) -> String {
        let mut s = String::from("updates (incl. task 1)");
        for b in betas {
            let _ = write!(s, "\tbeta={b}");
        }
        s.push('\n');
        for &k in ks {
            let _ = write!(s, "k={k}");
            for &b in betas {
                match self.cell(Algorithm::Lifelong, k, b) {
                    Some(c) => {
                        let _ = write!(s, "\t{:.1} ± {:.2}", c.mean_updates, c.std_updates);
                    }
                    None => s.push_str("\t-"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every (k, β, algorithm, trial) job. Failed jobs are reported in
/// `failures` while the finished ones are kept.
pub fn run_grid(cfg: &ExperimentConfig, algorithms: &[Algorithm]) -> GridOutcome {
    let mut jobs = Vec::new();
    for &k in &cfg.k_list {
        for &beta in &cfg.beta_list {
            for &alg in algorithms {
                jobs.extend((0..cfg.trials).map(|i| (alg, k, beta, i)));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(alg, k, beta, i)| {
            let start = std::time::Instant::now();
            let r = run_trial(cfg, alg, k, beta, i)
                .with_context(|| format!("{} k={k} beta={beta} trial={i}", alg.name()));
            if let Ok(t) = &r {
                eprintln!(
                    "{} k={k} beta={beta} trial={i}: {} updates, {} samples ({:.1}s)",
                    alg.name(),
                    t.summary.updates,
                    t.summary.total_samples,
                    start.elapsed().as_secs_f64()
                );
            }
            r
        })
        .collect();

    let mut out = GridOutcome::default();
    for r in results {
        match r {
            Ok(t) => out.trials.push(t),
            Err(e) => out.failures.push(format!("{e:#}")),
        }
    }
    for &k in &cfg.k_list {
        for &beta in &cfg.beta_list {
            for &alg in algorithms {
                let ts = out.cell_trials(alg, k, beta);
                if ts.is_empty() {
                    continue;
                }
                let updates: Vec<f64> = ts.iter().map(|t| t.summary.updates as f64).collect();
                let samples: Vec<f64> = ts.iter().map(|t| t.summary.total_samples as f64).collect();
                let (within, total) = ts.iter().fold((0, 0), |(w, n), t| {
                    (
                        w + t.certifications.iter().filter(|c| c.within_epsilon).count(),
                        n + t.certifications.len(),
                    )
                });
                let cell = CellSummary {
                    algorithm: alg,
                    k,
                    beta,
                    trials: ts.len(),
                    mean_updates: mean(&updates),
                    std_updates: std_dev(&updates),
                    mean_total_samples: mean(&samples),
                    std_total_samples: std_dev(&samples),
                    certified_fraction: fraction(within, total),
                    max_final_n: ts.iter().map(|t| t.summary.final_n_cap).max().unwrap_or(0),
                    max_doublings: ts.iter().map(|t| t.summary.doublings).max().unwrap_or(0),
                };
                let curves = [
                    (
                        "cumulative_updates",
                        ts.iter()
                            .map(|t| to_f64(&t.cumulative_updates))
                            .collect::<Vec<_>>(),
                    ),
                    (
                        "cumulative_samples",
                        ts.iter().map(|t| to_f64(&t.cumulative_samples)).collect(),
                    ),
                ];
                for (quantity, series) in curves {
                    let (mean, std) = pointwise_stats(&series);
                    out.curves.push(Curve {
                        algorithm: alg,
                        k,
                        beta,
                        quantity,
                        mean,
                        std,
                    });
                }
                out.cells.push(cell);
            }
        }
    }
    out
}

fn to_f64(xs: &[usize]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64).collect()
}

fn pointwise_stats(series: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|t| {
            let col: Vec<f64> = series.iter().map(|s| s[t]).collect();
            (mean(&col), std_dev(&col))
        })
        .unzip()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by `n`).
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(Experiment::Curves);
        cfg.apply_text("d = 6\nk = 2\nbeta = 4\nT = 6\nepsilon = 0.1\ntrials = 2\nheldout = 2000")
            .unwrap();
        cfg
    }

    #[test]
    fn population_std_matches_reported_precision() {
        // three of ten trials at 6 updates, seven at 5
        let xs = [5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 6.0, 6.0, 6.0];
        assert!((mean(&xs) - 5.3).abs() < 1e-12);
        assert!((std_dev(&xs) - 0.21f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grid_aggregates_every_cell() {
        let cfg = small();
        let all = [
            Algorithm::Lifelong,
            Algorithm::IndependentErm,
            Algorithm::OracleKnownRep,
        ];
        let out = run_grid(&cfg, &all);
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.trials.len(), 6);
        assert_eq!(out.cells.len(), 3);
        assert_eq!(out.curves.len(), 6);
        let oracle = out.cell(Algorithm::OracleKnownRep, 2, 4.0).unwrap();
        let m_tilde = out.trials[0].m_tilde as f64;
        assert_eq!(oracle.mean_total_samples, 6.0 * m_tilde);
        assert_eq!(oracle.std_total_samples, 0.0);
        let lines = out.curves_csv().lines().count();
        assert_eq!(lines, 1 + 6 * 6);
        assert_eq!(out.certifications_csv().lines().count(), 1 + 6 * 6);
        for t in &out.trials {
            assert_eq!(t.csv.lines().count(), 1 + 6);
            assert!(t.file_name().starts_with("runs/"));
        }
        assert!(out.render_table(&[2], &[4.0]).contains("k=2"));
    }

    #[test]
    fn trials_are_deterministic() {
        let cfg = small();
        let a = run_trial(&cfg, Algorithm::Lifelong, 2, 4.0, 1).unwrap();
        let b = run_trial(&cfg, Algorithm::Lifelong, 2, 4.0, 1).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.seed, cfg.trial_seed(1));
    }
}

//! Comparison algorithms under the same sample accounting as the lifelong
//! learner: independent single-task ERM per task (ignores shared structure)
//! and head-only ERM on the true representation (knows it in advance).

use serde::{Deserialize, Serialize};

use crate::datagen::TaskStream;
use crate::erm::{frozen_rep_erm, single_task_erm, OptimizerConfig};
use crate::error::Result;
use crate::lifelong::{RunRecord, SampleSizePolicy, TaskEvent, TaskOutcome};
use crate::model::Predictor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// `m_1` examples and single-task ERM for every task.
    IndependentErm,
    /// `m̃` examples and a head fitted on `B*` for every task.
    OracleKnownRep,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::IndependentErm => "independent",
            BaselineKind::OracleKnownRep => "oracle",
        }
    }

    /// Examples drawn per task.
    pub fn samples_per_task(self, policy: &SampleSizePolicy) -> Result<usize> {
        match self {
            BaselineKind::IndependentErm => policy.m_n(1),
            BaselineKind::OracleKnownRep => Ok(policy.m_tilde()),
        }
    }
}

pub fn run_baseline<T: Scalar>(
    kind: BaselineKind,
    stream: &mut TaskStream<T>,
    policy: &SampleSizePolicy,
    cfg: &OptimizerConfig<T>,
    seed: u64,
) -> Result<RunRecord<T>> {
    cfg.validate()?;
    let loss = stream.config().loss;
    let k = stream.config().k;
    let m = kind.samples_per_task(policy)?;
    let mut outputs = Vec::with_capacity(stream.num_tasks());
    let mut events = Vec::with_capacity(stream.num_tasks());
    let mut total = 0;
    for t in 1..=stream.num_tasks() {
        let data = stream.draw(t, m)?;
        let (predictor, objective) = match kind {
            BaselineKind::IndependentErm => {
                let (rep, head, obj) =
                    single_task_erm(&data, k, loss, cfg, seed.wrapping_add(t as u64))?;
                (Predictor::new(rep, head, loss)?, obj)
            }
            BaselineKind::OracleKnownRep => {
                let b_star = stream.b_star().clone();
                let fit = frozen_rep_erm(&data, &b_star, loss, cfg)?;
                (Predictor::new(b_star, fit.head, loss)?, fit.objective)
            }
        };
        total += m;
        outputs.push(predictor);
        events.push(TaskEvent {
            task_id: t,
            outcome: TaskOutcome::Baseline,
            test_risk: None,
            threshold: None,
            n: 0,
            n_cap: 0,
            samples_drawn: m,
            cumulative_samples: total,
            memory_tasks: 0,
            erm_objective: Some(objective.as_f64()),
            heldout_excess_risk: None,
        });
    }
    let final_representation = outputs.last().expect("T >= 1").representation.clone();
    Ok(RunRecord {
        events,
        outputs,
        final_representation,
        total_samples: total,
        peak_memory_tasks: 0,
        peak_memory_samples: 0,
        peak_memory_bytes: 0,
        final_n_cap: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_task_stream, InputLaw, NoiseSpec};
    use crate::erm::SolverKind;
    use crate::lifelong::certify_outputs;
    use crate::model::LossKind;

    fn stream(seed: u64) -> TaskStream<f64> {
        make_task_stream(
            6,
            2,
            5,
            4.0,
            NoiseSpec::LogisticLabel,
            InputLaw::StandardGaussian,
            LossKind::BinaryCrossEntropy,
            seed,
        )
        .unwrap()
    }

    fn cfg() -> OptimizerConfig<f64> {
        OptimizerConfig {
            solver: SolverKind::Newton,
            head_norm_bound: Some(f64::INFINITY),
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn sample_totals_follow_the_formulas() {
        let policy = SampleSizePolicy::practical(6, 2, 0.1, 5).unwrap();
        let oracle = run_baseline(
            BaselineKind::OracleKnownRep,
            &mut stream(1),
            &policy,
            &cfg(),
            0,
        )
        .unwrap();
        assert_eq!(oracle.total_samples, 5 * policy.m_tilde());
        let indep = run_baseline(
            BaselineKind::IndependentErm,
            &mut stream(1),
            &policy,
            &cfg(),
            0,
        )
        .unwrap();
        assert_eq!(indep.total_samples, 5 * policy.m_n(1).unwrap());
        let ratio = indep.total_samples as f64 / oracle.total_samples as f64;
        assert!((ratio - 7.0).abs() <= 0.01, "ratio {ratio}");
        for rec in [&oracle, &indep] {
            assert_eq!(rec.outputs.len(), 5);
            let sum: usize = rec.events.iter().map(|e| e.samples_drawn).sum();
            assert_eq!(sum, rec.total_samples);
        }
    }

    #[test]
    fn oracle_outputs_certify() {
        let policy = SampleSizePolicy::practical(6, 2, 0.05, 5).unwrap();
        let mut s = stream(2);
        let kappas: Vec<f64> = s
            .tasks()
            .iter()
            .map(|t| t.exact_bayes_risk().unwrap())
            .collect();
        let rec = run_baseline(BaselineKind::OracleKnownRep, &mut s, &policy, &cfg(), 0).unwrap();
        assert!(rec.outputs.iter().all(|p| &p.representation == s.b_star()));
        let certs = certify_outputs(&rec.outputs, &s, &kappas, 0.05, 12_800, 3).unwrap();
        assert!(certs.iter().all(|c| c.within_epsilon), "{certs:?}");
    }
}

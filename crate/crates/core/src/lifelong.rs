//! Lifelong representation learning with multi-task ERM as a subroutine.
//!
//! Task 1 trains a representation by single-task ERM. Every later task first
//! runs a few-shot property test: fit a head on the frozen representation
//! from `m̃` examples and compare its empirical risk with `κ_t + ¾ε`. A pass
//! outputs that head. A failure draws `m_N` examples, stores them in memory,
//! and refits the representation jointly over every stored dataset. After
//! `N` failures since the last reset, `N` doubles and the memory is cleared.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::{seeded_rng, TaskStream};
use crate::erm::{frozen_rep_erm, multi_task_erm, OptimizerConfig};
use crate::error::{Error, Result};
use crate::model::{Dataset, PredictionHead, Predictor, SemiOrthogonalMatrix};
use crate::risk::empirical_risk;
use crate::scalar::Scalar;

type SizeFn = Arc<dyn Fn(usize) -> usize + Send + Sync>;

/// Which sample-size formulas to use.
#[derive(Clone)]
pub enum SampleRule {
    /// Worst-case constants with Haussler covering numbers for the linear
    /// representation and head classes.
    TheoreticalC1,
    /// `m_N = (dk + kN)·ln(1/ε)/ε²`, `m̃ = k·ln(1/ε)/ε²`.
    Practical71,
    /// Caller-supplied `N ↦ m_N` and a constant `m̃`.
    Custom { m_n: SizeFn, m_tilde: usize },
}

impl fmt::Debug for SampleRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleRule::TheoreticalC1 => f.write_str("TheoreticalC1"),
            SampleRule::Practical71 => f.write_str("Practical71"),
            SampleRule::Custom { m_tilde, .. } => write!(f, "Custom {{ m_tilde: {m_tilde} }}"),
        }
    }
}

/// Sample sizes `m_N` and `m̃` plus the initial eluder estimate.
#[derive(Clone, Debug)]
pub struct SampleSizePolicy {
    pub rule: SampleRule,
    pub epsilon: f64,
    pub delta: f64,
    pub horizon: usize,
    pub d: usize,
    pub k: usize,
    initial_n: Option<usize>,
}

impl SampleSizePolicy {
    pub fn new(
        rule: SampleRule,
        d: usize,
        k: usize,
        epsilon: f64,
        delta: f64,
        horizon: usize,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if k == 0 || k > d {
            return Err(Error::invalid(format!(
                "need 1 <= k <= d, got d={d}, k={k}"
            )));
        }
        if let SampleRule::Custom { m_tilde: 0, .. } = rule {
            return Err(Error::invalid("custom m_tilde must be at least 1"));
        }
        Ok(Self {
            rule,
            epsilon,
            delta,
            horizon,
            d,
            k,
            initial_n: None,
        })
    }

    pub fn practical(d: usize, k: usize, epsilon: f64, horizon: usize) -> Result<Self> {
        Self::new(SampleRule::Practical71, d, k, epsilon, 0.1, horizon)
    }

    pub fn theoretical(
        d: usize,
        k: usize,
        epsilon: f64,
        delta: f64,
        horizon: usize,
    ) -> Result<Self> {
        Self::new(SampleRule::TheoreticalC1, d, k, epsilon, delta, horizon)
    }

    /// Overrides the initial `N`.
    pub fn with_initial_n(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("initial N must be at least 1"));
        }
        self.initial_n = Some(n);
        Ok(self)
    }

    /// `⌈k·ln(1/ε)⌉` for the practical rule, 1 otherwise, unless overridden.
    pub fn initial_n(&self) -> usize {
        self.initial_n.unwrap_or(match self.rule {
            SampleRule::Practical71 => ((self.k as f64) * (1.0 / self.epsilon).ln())
                .ceil()
                .max(1.0) as usize,
            _ => 1,
        })
    }

    fn ln_inv_eps(&self) -> f64 {
        (1.0 / self.epsilon).ln()
    }

    /// Few-shot property test sample size.
    pub fn m_tilde(&self) -> usize {
        let (eps, k) = (self.epsilon, self.k as f64);
        let raw = match &self.rule {
            SampleRule::Practical71 => k * self.ln_inv_eps() / (eps * eps),
            SampleRule::TheoreticalC1 => {
                let log_cover_f = 2.0 * k * (256.0 * std::f64::consts::E / eps).ln();
                1024.0 / (eps * eps) * (log_cover_f + (8.0 * self.horizon as f64 / self.delta).ln())
                    + 256.0 / (eps * eps)
            }
            SampleRule::Custom { m_tilde, .. } => return *m_tilde,
        };
        ceil_size(raw)
    }

    /// Per-update sample size for eluder estimate `n_cap`.
    pub fn m_n(&self, n_cap: usize) -> Result<usize> {
        if n_cap == 0 {
            return Err(Error::invalid("N must be at least 1"));
        }
        let (eps, d, k, n) = (self.epsilon, self.d as f64, self.k as f64, n_cap as f64);
        let raw = match &self.rule {
            SampleRule::Practical71 => (d * k + k * n) * self.ln_inv_eps() / (eps * eps),
            SampleRule::TheoreticalC1 => {
                let scale_log = (128.0 * std::f64::consts::E * n / eps).ln();
                let log_cover_h = 2.0 * d * k * scale_log;
                let log_cover_f = 2.0 * k * scale_log;
                let t = self.horizon;
                let doublings = n_cap.ilog2();
                let log_binom_sum = log_sum_exp(
                    (0..=doublings)
                        .map(|i| 1usize << i)
                        .filter(|&j| j <= t)
                        .map(|j| ln_binomial(t, j)),
                );
                // ln T vanishes at T = 1; floor it at 1
                let log_t = (t as f64).ln().max(1.0);
                let confidence = (16.0 * log_t).ln() + log_binom_sum - self.delta.ln();
                256.0 * n / (eps * eps) * (log_cover_h + n * log_cover_f + confidence)
                    + 64.0 / (eps * eps)
            }
            SampleRule::Custom { m_n, .. } => return Ok(m_n(n_cap).max(1)),
        };
        Ok(ceil_size(raw))
    }
}

fn ceil_size(raw: f64) -> usize {
    raw.ceil().max(1.0) as usize
}

/// `ln C(n, r)` as a sum of logs; exact enough for `n` up to millions.
pub(crate) fn ln_binomial(n: usize, r: usize) -> f64 {
    let r = r.min(n - r);
    (1..=r).map(|i| ((n - r + i) as f64 / i as f64).ln()).sum()
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Datasets of the tasks whose property test failed since the last reset.
#[derive(Clone, Debug, Default)]
pub struct MemoryBuffer<T: Scalar> {
    entries: Vec<(usize, Dataset<T>)>,
    peak_bytes: usize,
    peak_tasks: usize,
    peak_samples: usize,
}

impl<T: Scalar> MemoryBuffer<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            peak_bytes: 0,
            peak_tasks: 0,
            peak_samples: 0,
        }
    }

    pub fn push(&mut self, task_id: usize, data: Dataset<T>) {
        self.entries.push((task_id, data));
        self.peak_bytes = self.peak_bytes.max(self.bytes());
        self.peak_tasks = self.peak_tasks.max(self.entries.len());
        self.peak_samples = self.peak_samples.max(self.samples());
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn task_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }

    pub fn datasets(&self) -> Vec<&Dataset<T>> {
        self.entries.iter().map(|(_, d)| d).collect()
    }

    pub fn samples(&self) -> usize {
        self.entries.iter().map(|(_, d)| d.len()).sum()
    }

    pub fn bytes(&self) -> usize {
        self.entries.iter().map(|(_, d)| d.size_bytes()).sum()
    }

    /// Largest `bytes()` ever held.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    pub fn peak_tasks(&self) -> usize {
        self.peak_tasks
    }

    pub fn peak_samples(&self) -> usize {
        self.peak_samples
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskOutcome {
    /// Task 1: single-task ERM on `m_N` examples.
    Initial,
    TestPassed,
    TestFailedUpdated,
    /// Failure with `n = N`: `N` doubled and memory cleared before the update.
    TestFailedDoubled,
    /// Task handled by a non-adaptive comparison algorithm.
    Baseline,
}

impl TaskOutcome {
    pub fn updated_representation(self) -> bool {
        matches!(
            self,
            TaskOutcome::Initial | TaskOutcome::TestFailedUpdated | TaskOutcome::TestFailedDoubled
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskOutcome::Initial => "initial",
            TaskOutcome::TestPassed => "passed",
            TaskOutcome::TestFailedUpdated => "failed_updated",
            TaskOutcome::TestFailedDoubled => "failed_doubled",
            TaskOutcome::Baseline => "baseline",
        }
    }
}

/// What happened on one task. Counters are recorded after the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub task_id: usize,
    pub outcome: TaskOutcome,
    /// Empirical risk of the few-shot head on its own sample; `None` for task 1.
    pub test_risk: Option<f64>,
    pub threshold: Option<f64>,
    pub n: usize,
    pub n_cap: usize,
    pub samples_drawn: usize,
    pub cumulative_samples: usize,
    pub memory_tasks: usize,
    /// Objective of the ERM that produced the new representation.
    pub erm_objective: Option<f64>,
    pub heldout_excess_risk: Option<f64>,
}

/// Learner state between tasks.
#[derive(Clone, Debug)]
pub struct LearnerState<T: Scalar> {
    pub rep_hat: SemiOrthogonalMatrix<T>,
    pub memory: MemoryBuffer<T>,
    pub n: usize,
    pub n_cap: usize,
    pub outputs: Vec<Predictor<T>>,
    pub events: Vec<TaskEvent>,
}

/// Full log of one run.
#[derive(Clone, Debug)]
pub struct RunRecord<T: Scalar> {
    pub events: Vec<TaskEvent>,
    /// `f̂_t ∘ ĥ` as output at task `t` (index `t − 1`).
    pub outputs: Vec<Predictor<T>>,
    pub final_representation: SemiOrthogonalMatrix<T>,
    pub total_samples: usize,
    pub peak_memory_tasks: usize,
    pub peak_memory_samples: usize,
    pub peak_memory_bytes: usize,
    pub final_n_cap: usize,
}

impl<T: Scalar> RunRecord<T> {
    /// Representation updates including task 1; equals the number of ERM calls.
    pub fn updates(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.outcome.updated_representation())
            .count()
    }

    pub fn doublings(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.outcome == TaskOutcome::TestFailedDoubled)
            .count()
    }

    /// Cumulative updates after each task.
    pub fn cumulative_updates(&self) -> Vec<usize> {
        self.events
            .iter()
            .scan(0, |acc, e| {
                *acc += usize::from(e.outcome.updated_representation());
                Some(*acc)
            })
            .collect()
    }

    pub fn cumulative_samples(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.cumulative_samples).collect()
    }

    /// Samples drawn on tasks after the last representation update.
    pub fn samples_after_last_update(&self) -> Vec<usize> {
        let last = self
            .events
            .iter()
            .rposition(|e| e.outcome.updated_representation())
            .unwrap_or(0);
        self.events[last + 1..]
            .iter()
            .map(|e| e.samples_drawn)
            .collect()
    }

    /// Copies held-out excess risks into the events.
    pub fn attach_certification(&mut self, certs: &[Certification]) {
        for c in certs {
            if let Some(e) = self.events.iter_mut().find(|e| e.task_id == c.task_id) {
                e.heldout_excess_risk = Some(c.excess_risk);
            }
        }
    }

    pub const CSV_HEADER: &'static str = "task_id,outcome,test_risk,threshold,n,N,samples_drawn,cumulative_samples,memory_tasks,heldout_excess_risk,erm_objective";

    /// One row per task under [`Self::CSV_HEADER`]; empty cells for absent values.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                e.task_id,
                e.outcome.as_str(),
                opt(e.test_risk),
                opt(e.threshold),
                e.n,
                e.n_cap,
                e.samples_drawn,
                e.cumulative_samples,
                e.memory_tasks,
                opt(e.heldout_excess_risk),
                opt(e.erm_objective),
            ));
        }
        out
    }

    pub fn summary(&self) -> RunSummary {
        let certified: Vec<f64> = self
            .events
            .iter()
            .filter_map(|e| e.heldout_excess_risk)
            .collect();
        RunSummary {
            tasks: self.events.len(),
            total_samples: self.total_samples,
            updates: self.updates(),
            doublings: self.doublings(),
            final_n_cap: self.final_n_cap,
            peak_memory_tasks: self.peak_memory_tasks,
            peak_memory_samples: self.peak_memory_samples,
            peak_memory_bytes: self.peak_memory_bytes,
            certified_tasks: certified.len(),
            max_excess_risk: certified.iter().copied().reduce(f64::max),
        }
    }
}

/// Run totals, serializable as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tasks: usize,
    pub total_samples: usize,
    pub updates: usize,
    pub doublings: usize,
    pub final_n_cap: usize,
    pub peak_memory_tasks: usize,
    pub peak_memory_samples: usize,
    pub peak_memory_bytes: usize,
    pub certified_tasks: usize,
    pub max_excess_risk: Option<f64>,
}

/// Result of a few-shot property test.
#[derive(Clone, Debug)]
pub struct PropertyTest<T: Scalar> {
    pub passed: bool,
    pub head: PredictionHead<T>,
    pub test_risk: f64,
    pub threshold: f64,
    pub samples: usize,
}

/// Draws `m̃` examples of `task_id`, fits a head on `rep_hat` and passes iff
/// its empirical risk on that same sample is at most `κ_t + ¾ε`.
pub fn property_test<T: Scalar>(
    stream: &mut TaskStream<T>,
    task_id: usize,
    rep_hat: &SemiOrthogonalMatrix<T>,
    kappa: f64,
    epsilon: f64,
    policy: &SampleSizePolicy,
    cfg: &OptimizerConfig<T>,
) -> Result<PropertyTest<T>> {
    if !(kappa >= 0.0) {
        return Err(Error::invalid(format!(
            "kappa must be non-negative, got {kappa}"
        )));
    }
    let m = policy.m_tilde();
    let data = stream.draw(task_id, m)?;
    let loss = stream.config().loss;
    let fit = frozen_rep_erm(&data, rep_hat, loss, cfg)?;
    let predictor = Predictor::new(rep_hat.clone(), fit.head, loss)?;
    let test_risk = empirical_risk(&predictor, &data)?.as_f64();
    let threshold = kappa + 0.75 * epsilon;
    Ok(PropertyTest {
        passed: test_risk <= threshold,
        head: predictor.head,
        test_risk,
        threshold,
        samples: m,
    })
}

/// Runs the lifelong learner over every task of `stream`.
///
/// `known_dim` fixes `N` to a known eluder dimension, which makes the
/// doubling branch unreachable. `seed` keys the ERM initializations.
#[allow(clippy::too_many_arguments)]
pub fn run_lifelong<T: Scalar>(
    stream: &mut TaskStream<T>,
    epsilon: f64,
    kappas: &[f64],
    policy: &SampleSizePolicy,
    cfg: &OptimizerConfig<T>,
    known_dim: Option<usize>,
    seed: u64,
) -> Result<RunRecord<T>> {
    let num_tasks = stream.num_tasks();
    if kappas.len() != num_tasks {
        return Err(Error::invalid(format!(
            "need one kappa per task: got {}, T = {num_tasks}",
            kappas.len()
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if known_dim == Some(0) {
        return Err(Error::invalid("known eluder dimension must be at least 1"));
    }
    cfg.validate()?;
    let loss = stream.config().loss;
    let (d, k) = (stream.config().d, stream.config().k);
    let n_cap = known_dim.unwrap_or_else(|| policy.initial_n());
    let mut erm_calls = 0u64;
    let mut next_seed = || {
        erm_calls += 1;
        seed.wrapping_add(erm_calls)
    };

    let m = policy.m_n(n_cap)?;
    let first = stream.draw(1, m)?;
    let sol = multi_task_erm(&[&first], d, k, loss, cfg, next_seed())?;
    let mut memory = MemoryBuffer::new();
    memory.push(1, first);
    let mut state = LearnerState {
        outputs: vec![sol.predictor(0, loss)],
        rep_hat: sol.representation,
        memory,
        n: 1,
        n_cap,
        events: Vec::with_capacity(num_tasks),
    };
    let mut total = m;
    state.events.push(TaskEvent {
        task_id: 1,
        outcome: TaskOutcome::Initial,
        test_risk: None,
        threshold: None,
        n: 1,
        n_cap,
        samples_drawn: m,
        cumulative_samples: total,
        memory_tasks: 1,
        erm_objective: Some(sol.final_objective.as_f64()),
        heldout_excess_risk: None,
    });

    for t in 2..=num_tasks {
        let test = property_test(
            stream,
            t,
            &state.rep_hat,
            kappas[t - 1],
            epsilon,
            policy,
            cfg,
        )?;
        let mut drawn = test.samples;
        let mut objective = None;
        let outcome = if test.passed {
            state
                .outputs
                .push(Predictor::new(state.rep_hat.clone(), test.head, loss)?);
            TaskOutcome::TestPassed
        } else {
            let outcome = if state.n == state.n_cap {
                state.n = 1;
                state.n_cap *= 2;
                state.memory.clear();
                TaskOutcome::TestFailedDoubled
            } else {
                state.n += 1;
                TaskOutcome::TestFailedUpdated
            };
            let m = policy.m_n(state.n_cap)?;
            state.memory.push(t, stream.draw(t, m)?);
            drawn += m;
            let sol = multi_task_erm(&state.memory.datasets(), d, k, loss, cfg, next_seed())?;
            objective = Some(sol.final_objective.as_f64());
            state.outputs.push(sol.predictor(sol.heads.len() - 1, loss));
            state.rep_hat = sol.representation;
            outcome
        };
        total += drawn;
        debug_assert!(1 <= state.n && state.n <= state.n_cap && state.memory.len() == state.n);
        state.events.push(TaskEvent {
            task_id: t,
            outcome,
            test_risk: Some(test.test_risk),
            threshold: Some(test.threshold),
            n: state.n,
            n_cap: state.n_cap,
            samples_drawn: drawn,
            cumulative_samples: total,
            memory_tasks: state.memory.len(),
            erm_objective: objective,
            heldout_excess_risk: None,
        });
    }

    Ok(RunRecord {
        events: state.events,
        outputs: state.outputs,
        final_representation: state.rep_hat,
        total_samples: total,
        peak_memory_tasks: state.memory.peak_tasks(),
        peak_memory_samples: state.memory.peak_samples(),
        peak_memory_bytes: state.memory.peak_bytes(),
        final_n_cap: state.n_cap,
    })
}

/// Held-out check of one output predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub task_id: usize,
    pub excess_risk: f64,
    pub within_epsilon: bool,
}

/// Default held-out size `⌈32/ε²⌉`.
pub fn default_heldout_size(epsilon: f64) -> usize {
    ceil_size(32.0 / (epsilon * epsilon))
}

/// Evaluates each output on a fresh held-out sample (not from the task tapes)
/// and reports its excess risk over `κ_t`.
pub fn certify_outputs<T: Scalar>(
    outputs: &[Predictor<T>],
    stream: &TaskStream<T>,
    kappas: &[f64],
    epsilon: f64,
    heldout_size: usize,
    seed: u64,
) -> Result<Vec<Certification>> {
    if heldout_size == 0 {
        return Err(Error::invalid("held-out size must be at least 1"));
    }
    if outputs.len() > stream.num_tasks() || kappas.len() != stream.num_tasks() {
        return Err(Error::invalid(
            "outputs and kappas must match the stream's tasks",
        ));
    }
    outputs
        .iter()
        .enumerate()
        .map(|(i, predictor)| {
            let task_id = i + 1;
            let mut rng = seeded_rng(seed, task_id as u64);
            let data = stream
                .task(task_id)?
                .sample(&mut rng, heldout_size, task_id);
            let excess_risk = empirical_risk(predictor, &data)?.as_f64() - kappas[i];
            Ok(Certification {
                task_id,
                excess_risk,
                within_epsilon: excess_risk <= epsilon,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_task_stream, InputLaw, NoiseSpec, StreamConfig};
    use crate::erm::SolverKind;
    use crate::model::LossKind;

    fn newton() -> OptimizerConfig<f64> {
        OptimizerConfig {
            solver: SolverKind::Newton,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn practical_sizes() {
        let p = SampleSizePolicy::practical(10, 3, 0.05, 50).unwrap();
        assert_eq!(p.m_tilde(), 3595);
        assert_eq!(p.m_n(9).unwrap(), 68_303);
        assert_eq!(p.initial_n(), 9);
        assert_eq!(
            SampleSizePolicy::practical(10, 8, 0.05, 50)
                .unwrap()
                .initial_n(),
            24
        );
        let e = (-1.0f64).exp();
        assert_eq!(
            SampleSizePolicy::practical(3, 1, e, 1).unwrap().m_tilde(),
            8
        );
        let k = 4;
        let q = SampleSizePolicy::practical(k, k, 0.1, 5).unwrap();
        let expect = (((k * k + k) as f64) * 10f64.ln() / 0.01).ceil() as usize;
        assert_eq!(q.m_n(1).unwrap(), expect);
    }

    #[test]
    fn theoretical_sizes_are_frozen() {
        let p = SampleSizePolicy::theoretical(10, 3, 0.05, 0.1, 50).unwrap();
        assert_eq!(p.m_tilde(), 26_947_383);
        assert_eq!(p.m_n(1).unwrap(), 60_882_287);
        assert_eq!(p.m_n(8).unwrap(), 988_537_023);
        assert_eq!(p.initial_n(), 1);
    }

    #[test]
    fn sizes_grow_with_n() {
        for rule in [SampleRule::Practical71, SampleRule::TheoreticalC1] {
            for (d, k) in [(10, 3), (5, 5), (20, 1)] {
                let p = SampleSizePolicy::new(rule.clone(), d, k, 0.1, 0.05, 30).unwrap();
                for n in 1..40 {
                    assert!(p.m_n(2 * n).unwrap() > p.m_n(n).unwrap());
                    assert!(p.m_n(n + 1).unwrap() >= p.m_n(n).unwrap());
                }
            }
        }
    }

    #[test]
    fn policy_rejects_bad_inputs() {
        assert!(SampleSizePolicy::practical(10, 3, 0.0, 50).is_err());
        assert!(SampleSizePolicy::practical(10, 3, 1.0, 50).is_err());
        assert!(SampleSizePolicy::theoretical(10, 3, 0.1, 1.5, 50).is_err());
        assert!(SampleSizePolicy::practical(10, 3, 0.1, 0).is_err());
        assert!(SampleSizePolicy::practical(10, 3, 0.1, 5)
            .unwrap()
            .m_n(0)
            .is_err());
        let custom = SampleRule::Custom {
            m_n: Arc::new(|n| 10 * n),
            m_tilde: 7,
        };
        let p = SampleSizePolicy::new(custom, 4, 2, 0.1, 0.1, 3).unwrap();
        assert_eq!((p.m_tilde(), p.m_n(3).unwrap()), (7, 30));
    }

    #[test]
    fn ln_binomial_matches_exact_counts() {
        for n in 1..40usize {
            for r in 0..=n {
                let mut exact = 1.0f64;
                for i in 0..r {
                    exact = exact * (n - i) as f64 / (i + 1) as f64;
                }
                assert!((ln_binomial(n, r) - exact.ln()).abs() <= 1e-9 * (1.0 + exact.ln().abs()));
            }
        }
    }

    fn squared_stream(heads: Vec<Vec<f64>>, seed: u64) -> TaskStream<f64> {
        TaskStream::from_config(StreamConfig {
            d: 6,
            k: 2,
            num_tasks: heads.len(),
            beta: 0.5,
            noise: NoiseSpec::noiseless(),
            input_law: InputLaw::UnitBallUniform,
            loss: LossKind::ScaledSquared,
            seed,
            heads: Some(heads),
        })
        .unwrap()
    }

    fn small_policy() -> SampleSizePolicy {
        SampleSizePolicy::new(
            SampleRule::Custom {
                m_n: Arc::new(|n| 200 + 20 * n),
                m_tilde: 60,
            },
            6,
            2,
            0.1,
            0.1,
            10,
        )
        .unwrap()
    }

    #[test]
    fn property_test_examples() {
        let mut s = squared_stream(vec![vec![0.5, 0.0]; 2], 3);
        let policy = small_policy();
        let truth = s.b_star().clone();
        let pass = property_test(&mut s, 2, &truth, 0.0, 0.1, &policy, &newton()).unwrap();
        assert!(pass.passed && pass.test_risk <= 1e-10);
        assert_eq!(pass.samples, 60);

        // representation orthogonal to θ₂: only the zero head is available
        let theta = s.task(2).unwrap().theta().to_vec();
        let mut cols = vec![theta];
        cols.extend((0..6).map(|e| {
            (0..6)
                .map(|i| f64::from(u8::from(i == e)))
                .collect::<Vec<f64>>()
        }));
        let (q, _) = crate::dense::Mat::from_columns(&cols[..3])
            .unwrap()
            .thin_qr()
            .unwrap();
        let ortho =
            SemiOrthogonalMatrix::new(crate::dense::Mat::from_fn(6, 2, |r, c| q[(r, c + 1)]))
                .unwrap();
        let fail = property_test(&mut s, 2, &ortho, 0.0, 0.001, &policy, &newton()).unwrap();
        assert!(!fail.passed && fail.test_risk > fail.threshold);

        let inflated = property_test(&mut s, 2, &ortho, 1.0, 0.01, &policy, &newton()).unwrap();
        assert!(inflated.passed);
        assert!(property_test(&mut s, 2, &ortho, -0.1, 0.01, &policy, &newton()).is_err());
    }

    #[test]
    fn single_task_run() {
        let mut s = squared_stream(vec![vec![0.3, 0.4]], 5);
        let policy = small_policy();
        let rec = run_lifelong(&mut s, 0.1, &[0.0], &policy, &newton(), None, 1).unwrap();
        assert_eq!(rec.events.len(), 1);
        assert_eq!(rec.updates(), 1);
        assert_eq!(rec.total_samples, policy.m_n(1).unwrap());
        assert!(run_lifelong(&mut s, 0.1, &[0.0, 0.0], &policy, &newton(), None, 1).is_err());
    }

    #[test]
    fn repeated_task_needs_one_update() {
        let mut s = squared_stream(vec![vec![0.3, -0.4]; 6], 8);
        let policy = small_policy();
        let rec = run_lifelong(&mut s, 0.1, &[0.0; 6], &policy, &newton(), None, 2).unwrap();
        assert_eq!(rec.updates(), 1);
        assert!(rec.events[1..]
            .iter()
            .all(|e| e.outcome == TaskOutcome::TestPassed));
        assert_eq!(
            rec.total_samples,
            policy.m_n(1).unwrap() + 5 * policy.m_tilde()
        );
    }

    /// Heads cycling through the axes of a 4-d representation, so that a
    /// small `N` is outgrown and must double.
    fn hard_stream(seed: u64) -> TaskStream<f64> {
        TaskStream::from_config(StreamConfig {
            d: 6,
            k: 4,
            num_tasks: 8,
            beta: 0.5,
            noise: NoiseSpec::noiseless(),
            input_law: InputLaw::UnitBallUniform,
            loss: LossKind::ScaledSquared,
            seed,
            heads: Some(
                (0..8)
                    .map(|t| (0..4).map(|i| if i == t % 4 { 0.5 } else { 0.0 }).collect())
                    .collect(),
            ),
        })
        .unwrap()
    }

    #[test]
    fn counters_memory_and_accounting() {
        let policy = SampleSizePolicy::new(
            SampleRule::Custom {
                m_n: Arc::new(|n| 150 + 10 * n),
                m_tilde: 60,
            },
            6,
            4,
            0.002,
            0.1,
            8,
        )
        .unwrap();
        let mut s = hard_stream(4);
        let rec = run_lifelong(&mut s, 0.002, &[0.0; 8], &policy, &newton(), None, 3).unwrap();
        let mut n_cap_prev = 1;
        let mut memory: Vec<usize> = Vec::new();
        for e in &rec.events {
            assert!(1 <= e.n && e.n <= e.n_cap);
            assert!(e.n_cap == n_cap_prev || e.n_cap == 2 * n_cap_prev);
            assert_eq!(
                e.n_cap == 2 * n_cap_prev,
                e.outcome == TaskOutcome::TestFailedDoubled
            );
            match e.outcome {
                TaskOutcome::TestFailedDoubled => memory = vec![e.task_id],
                TaskOutcome::Initial | TaskOutcome::TestFailedUpdated => memory.push(e.task_id),
                _ => {}
            }
            assert_eq!(e.memory_tasks, memory.len());
            assert_eq!(e.memory_tasks, e.n);
            n_cap_prev = e.n_cap;
        }
        assert!(rec.doublings() >= 1);
        assert!(rec.updates() <= 2 * rec.final_n_cap);
        let sum: usize = rec.events.iter().map(|e| e.samples_drawn).sum();
        assert_eq!(rec.total_samples, sum);
        assert_eq!(rec.cumulative_samples().last(), Some(&sum));
        assert_eq!(s.cursors().iter().sum::<u64>() as usize, sum);
    }

    #[test]
    fn known_dimension_matches_fixed_start() {
        let policy = SampleSizePolicy::new(
            SampleRule::Custom {
                m_n: Arc::new(|n| 150 + 10 * n),
                m_tilde: 60,
            },
            6,
            4,
            0.002,
            0.1,
            8,
        )
        .unwrap();
        let known = run_lifelong(
            &mut hard_stream(4),
            0.002,
            &[0.0; 8],
            &policy,
            &newton(),
            Some(64),
            3,
        )
        .unwrap();
        assert!(known.events.iter().all(|e| e.n_cap == 64));
        assert_eq!(known.doublings(), 0);
        let started = policy.clone().with_initial_n(64).unwrap();
        let fixed = run_lifelong(
            &mut hard_stream(4),
            0.002,
            &[0.0; 8],
            &started,
            &newton(),
            None,
            3,
        )
        .unwrap();
        assert_eq!(known.events, fixed.events);
    }

    #[test]
    fn certification_of_oracle_predictors() {
        let mut s = make_task_stream::<f64>(
            6,
            2,
            3,
            2.0,
            NoiseSpec::LogisticLabel,
            InputLaw::StandardGaussian,
            LossKind::BinaryCrossEntropy,
            4,
        )
        .unwrap();
        let kappas: Vec<f64> = s
            .tasks()
            .iter()
            .map(|t| t.exact_bayes_risk().unwrap())
            .collect();
        let outputs: Vec<_> = s.tasks().iter().map(|t| t.bayes_predictor()).collect();
        assert_eq!(default_heldout_size(0.05), 12_800);
        let certs = certify_outputs(&outputs, &s, &kappas, 0.05, 12_800, 9).unwrap();
        for c in &certs {
            assert!(c.excess_risk.abs() <= 0.03, "{c:?}");
            assert!(c.within_epsilon);
        }
        // held-out data never touches the tapes
        assert_eq!(s.cursors(), vec![0, 0, 0]);
        s.draw(1, 1).unwrap();
    }

    #[test]
    fn csv_has_one_row_per_task() {
        let mut s = squared_stream(vec![vec![0.3, -0.4]; 3], 8);
        let rec =
            run_lifelong(&mut s, 0.1, &[0.0; 3], &small_policy(), &newton(), None, 2).unwrap();
        let csv = rec.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RunRecord::<f64>::CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,initial,,,1,1,"));
        let summary = rec.summary();
        assert_eq!(summary.updates, 1);
        assert_eq!(summary.total_samples, rec.total_samples);
    }
}

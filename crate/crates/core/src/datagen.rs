//! Synthetic task streams with a planted shared representation.
//!
//! Every task owns a seeded sample tape: a ChaCha stream keyed by
//! `(stream seed, task id)` with a cursor. Drawing `m` then `m′` examples
//! yields the same examples as drawing `m + m′` at once, so multi-round
//! requests behave as reads from a pre-committed i.i.d. sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::linalg::random_semi_orthogonal;
use crate::model::{sigmoid, Dataset, LossKind, PredictionHead, Predictor, SemiOrthogonalMatrix};
use crate::risk::{population_risk_estimate, RiskEstimate};
use crate::scalar::Scalar;

/// Deterministic RNG for a `(seed, stream)` pair.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const HEAD_STREAM: u64 = 1;
const TAPE_STREAM_OFFSET: u64 = 1;

/// Shape of bounded zero-mean additive noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundedShape {
    /// Uniform on `[−√(3v), √(3v)]`; needs `v ≤ 1/12`.
    Uniform,
    /// `±√v` with equal probability; needs `v ≤ ¼`.
    TwoPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    /// `y = ⟨x, θ⟩ + η` with `E[η] = 0`, `Var η = variance`, `|η| ≤ ½`.
    Additive { variance: f64, shape: BoundedShape },
    /// `Pr(y = 1 | x) = σ(⟨x, θ⟩)`, labels in `{0, 1}`.
    LogisticLabel,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec::Additive {
            variance: 0.0,
            shape: BoundedShape::Uniform,
        }
    }

    pub fn uniform(variance: f64) -> Self {
        NoiseSpec::Additive {
            variance,
            shape: BoundedShape::Uniform,
        }
    }

    fn validate(&self) -> Result<()> {
        if let NoiseSpec::Additive { variance, shape } = *self {
            let max = match shape {
                BoundedShape::Uniform => 1.0 / 12.0,
                BoundedShape::TwoPoint => 0.25,
            };
            if !(0.0..=max).contains(&variance) {
                return Err(Error::invalid(format!(
                    "noise variance {variance} outside [0, {max}] for {shape:?} noise"
                )));
            }
        }
        Ok(())
    }

    fn compatible_with(&self, loss: LossKind) -> bool {
        matches!(
            (self, loss),
            (NoiseSpec::Additive { .. }, LossKind::ScaledSquared)
                | (
                    NoiseSpec::LogisticLabel,
                    LossKind::BinaryCrossEntropy | LossKind::ZeroOne
                )
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputLaw {
    /// Uniform on the unit ball, so `‖x‖ ≤ 1`.
    UnitBallUniform,
    /// `N(0, I_d)`.
    StandardGaussian,
}

impl InputLaw {
    fn sample<R: Rng>(self, rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        if self == InputLaw::UnitBallUniform {
            let r: f64 = rng.random::<f64>().powf(1.0 / out.len() as f64);
            let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = if n > 0.0 { r / n } else { 0.0 };
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// One task's data law: `x ∼ input_law`, `y | x` from the planted `B*w*`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDistribution<T: Scalar> {
    pub b_star: SemiOrthogonalMatrix<T>,
    pub w_star: Vec<T>,
    pub noise: NoiseSpec,
    pub input_law: InputLaw,
    pub loss: LossKind,
    theta: Vec<f64>,
}

impl<T: Scalar> TaskDistribution<T> {
    pub fn new(
        b_star: SemiOrthogonalMatrix<T>,
        w_star: Vec<T>,
        noise: NoiseSpec,
        input_law: InputLaw,
        loss: LossKind,
    ) -> Result<Self> {
        if w_star.len() != b_star.rep_dim() {
            return Err(Error::invalid(
                "w* does not match the representation dimension",
            ));
        }
        noise.validate()?;
        if !noise.compatible_with(loss) {
            return Err(Error::invalid(format!(
                "{noise:?} noise does not generate {loss:?} targets"
            )));
        }
        let theta = b_star
            .lift(&w_star)
            .into_iter()
            .map(Scalar::as_f64)
            .collect();
        Ok(Self {
            b_star,
            w_star,
            noise,
            input_law,
            loss,
            theta,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.b_star.ambient_dim()
    }

    /// `θ* = B*w*` in `f64`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `f*_t ∘ h*`, with an unconstrained head.
    pub fn bayes_predictor(&self) -> Predictor<T> {
        let head = PredictionHead::projected(self.w_star.clone(), T::infinity());
        Predictor {
            representation: self.b_star.clone(),
            head,
            loss: self.loss,
        }
    }

    /// Draws `m` examples from `rng`.
    pub fn sample<R: Rng>(&self, rng: &mut R, m: usize, task_id: usize) -> Dataset<T> {
        let d = self.ambient_dim();
        let mut x = vec![0.0f64; d];
        let mut inputs = Vec::with_capacity(m * d);
        let mut targets = Vec::with_capacity(m);
        for _ in 0..m {
            self.input_law.sample(rng, &mut x);
            let s: f64 = x.iter().zip(&self.theta).map(|(a, b)| a * b).sum();
            let y = match self.noise {
                NoiseSpec::Additive { variance, shape } => {
                    let eta = if variance == 0.0 {
                        0.0
                    } else {
                        match shape {
                            BoundedShape::Uniform => {
                                let a = (3.0 * variance).sqrt();
                                rng.random_range(-a..=a)
                            }
                            BoundedShape::TwoPoint => {
                                if rng.random::<bool>() {
                                    variance.sqrt()
                                } else {
                                    -variance.sqrt()
                                }
                            }
                        }
                    };
                    s + eta
                }
                NoiseSpec::LogisticLabel => {
                    if rng.random::<f64>() < sigmoid(s) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            inputs.extend(x.iter().map(|&v| T::lit(v)));
            targets.push(T::lit(y));
        }
        Dataset::new(
            Mat::from_vec(m, d, inputs).expect("shape"),
            targets,
            task_id,
        )
        .expect("m >= 1")
    }

    /// Closed-form Bayes risk `L(f* ∘ h*)` where one is available.
    ///
    /// Additive noise under the scaled square loss gives `variance / 4`.
    /// Logistic labels with Gaussian inputs reduce to a one-dimensional
    /// Gaussian integral over the score `⟨x, θ*⟩ ∼ N(0, ‖θ*‖²)`.
    pub fn exact_bayes_risk(&self) -> Option<f64> {
        match (self.noise, self.loss, self.input_law) {
            (NoiseSpec::Additive { variance, .. }, LossKind::ScaledSquared, _) => {
                Some(variance / 4.0)
            }
            (NoiseSpec::LogisticLabel, loss, InputLaw::StandardGaussian) => {
                let scale: f64 = self.theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                Some(logistic_gaussian_bayes_risk(scale, loss))
            }
            _ => None,
        }
    }

    /// Noise variance for additive tasks.
    pub fn noise_variance(&self) -> Option<f64> {
        match self.noise {
            NoiseSpec::Additive { variance, .. } => Some(variance),
            NoiseSpec::LogisticLabel => None,
        }
    }
}

/// `E_{s∼N(0, scale²)}[φ(s)]` where `φ` is the pointwise Bayes loss of a
/// logistic label: binary entropy (cross-entropy) or `min(σ, 1 − σ)` (0-1).
pub fn logistic_gaussian_bayes_risk(scale: f64, loss: LossKind) -> f64 {
    let phi = |s: f64| -> f64 {
        let p = sigmoid(s);
        match loss {
            LossKind::ZeroOne => p.min(1.0 - p),
            _ => {
                // entropy of Bernoulli(σ(s)) = softplus(s) − s·σ(s)
                crate::model::softplus(s) - s * p
            }
        }
    };
    if scale == 0.0 {
        return phi(0.0);
    }
    // composite Simpson on z ∈ [−12, 12]; z = 0 is a node
    let (lo, hi, intervals) = (-12.0f64, 12.0f64, 24_000usize);
    let h = (hi - lo) / intervals as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let f = |z: f64| norm * (-0.5 * z * z).exp() * phi(scale * z);
    let mut acc = f(lo) + f(hi);
    for i in 1..intervals {
        let z = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    acc * h / 3.0
}

/// Monte-Carlo Bayes risk with the closed form alongside, when known.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BayesRisk {
    pub estimate: RiskEstimate,
    pub exact: Option<f64>,
}

impl BayesRisk {
    /// Best available value: the closed form, else the estimate.
    pub fn value(&self) -> f64 {
        self.exact.unwrap_or(self.estimate.mean)
    }

    /// Whether the estimate is within five standard errors of the closed form.
    pub fn agrees(&self) -> bool {
        match self.exact {
            None => true,
            Some(e) => (self.estimate.mean - e).abs() <= 5.0 * self.estimate.std_error + 1e-12,
        }
    }
}

pub fn bayes_risk<T: Scalar>(
    task: &TaskDistribution<T>,
    mc_samples: usize,
    seed: u64,
) -> Result<BayesRisk> {
    let estimate = population_risk_estimate(&task.bayes_predictor(), task, mc_samples, seed)?;
    Ok(BayesRisk {
        estimate,
        exact: task.exact_bayes_risk(),
    })
}

/// Everything needed to regenerate a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub d: usize,
    pub k: usize,
    pub num_tasks: usize,
    pub beta: f64,
    pub noise: NoiseSpec,
    pub input_law: InputLaw,
    pub loss: LossKind,
    pub seed: u64,
    /// Explicit per-task heads replacing the random sphere draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<Vec<f64>>>,
}

/// Config plus per-task tape cursors; never the samples themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSnapshot {
    pub config: StreamConfig,
    pub cursors: Vec<u64>,
}

#[derive(Clone, Debug)]
struct Tape {
    rng: ChaCha20Rng,
    drawn: u64,
}

/// A planted sequence of tasks sharing `B*` and the input law.
#[derive(Clone, Debug)]
pub struct TaskStream<T: Scalar> {
    config: StreamConfig,
    tasks: Vec<TaskDistribution<T>>,
    tapes: Vec<Tape>,
}

impl<T: Scalar> TaskStream<T> {
    pub fn from_config(config: StreamConfig) -> Result<Self> {
        let StreamConfig {
            d,
            k,
            num_tasks,
            beta,
            ..
        } = config;
        if k == 0 || k > d {
            return Err(Error::invalid(format!(
                "need 1 <= k <= d, got d={d}, k={k}"
            )));
        }
        if num_tasks == 0 {
            return Err(Error::invalid("stream needs at least one task"));
        }
        let b_star = random_semi_orthogonal::<T>(d, k, config.seed)?;
        let heads: Vec<Vec<f64>> = match &config.heads {
            Some(h) => {
                if h.len() != num_tasks || h.iter().any(|w| w.len() != k) {
                    return Err(Error::invalid(
                        "explicit heads must be T vectors of length k",
                    ));
                }
                h.clone()
            }
            None => {
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(Error::invalid("beta must be positive"));
                }
                let mut rng = seeded_rng(config.seed, HEAD_STREAM);
                (0..num_tasks)
                    .map(|_| sphere_point(&mut rng, k, beta))
                    .collect()
            }
        };
        let tasks = heads
            .iter()
            .map(|w| {
                TaskDistribution::new(
                    b_star.clone(),
                    w.iter().map(|&v| T::lit(v)).collect(),
                    config.noise,
                    config.input_law,
                    config.loss,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let tapes = (1..=num_tasks as u64)
            .map(|t| Tape {
                rng: seeded_rng(config.seed, TAPE_STREAM_OFFSET + t),
                drawn: 0,
            })
            .collect();
        Ok(Self {
            config,
            tasks,
            tapes,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn b_star(&self) -> &SemiOrthogonalMatrix<T> {
        &self.tasks[0].b_star
    }

    /// Task `task_id` (1-based).
    pub fn task(&self, task_id: usize) -> Result<&TaskDistribution<T>> {
        task_id
            .checked_sub(1)
            .and_then(|i| self.tasks.get(i))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "task id {task_id} outside 1..={}",
                    self.tasks.len()
                ))
            })
    }

    pub fn tasks(&self) -> &[TaskDistribution<T>] {
        &self.tasks
    }

    /// Next `m` examples from task `task_id`'s tape.
    pub fn draw(&mut self, task_id: usize, m: usize) -> Result<Dataset<T>> {
        if m == 0 {
            return Err(Error::invalid("must draw at least one example"));
        }
        let idx = self.task(task_id).map(|_| task_id - 1)?;
        let tape = &mut self.tapes[idx];
        let data = self.tasks[idx].sample(&mut tape.rng, m, task_id);
        tape.drawn += m as u64;
        Ok(data)
    }

    /// Examples consumed from each tape so far.
    pub fn cursors(&self) -> Vec<u64> {
        self.tapes.iter().map(|t| t.drawn).collect()
    }

    pub fn snapshot(&self) -> StreamSnapshot {
        StreamSnapshot {
            config: self.config.clone(),
            cursors: self.cursors(),
        }
    }

    /// Rebuilds a stream and fast-forwards every tape to its cursor.
    pub fn restore(snapshot: &StreamSnapshot) -> Result<Self> {
        let mut s = Self::from_config(snapshot.config.clone())?;
        if snapshot.cursors.len() != s.num_tasks() {
            return Err(Error::invalid("snapshot cursor count does not match T"));
        }
        for (t, &c) in snapshot.cursors.iter().enumerate() {
            let mut left = c;
            while left > 0 {
                let chunk = left.min(1 << 14);
                s.draw(t + 1, chunk as usize)?;
                left -= chunk;
            }
        }
        Ok(s)
    }
}

/// Stream with `B*` from [`random_semi_orthogonal`] and heads uniform on the
/// radius-`beta` sphere, all deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn make_task_stream<T: Scalar>(
    d: usize,
    k: usize,
    num_tasks: usize,
    beta: f64,
    noise: NoiseSpec,
    input_law: InputLaw,
    loss: LossKind,
    seed: u64,
) -> Result<TaskStream<T>> {
    TaskStream::from_config(StreamConfig {
        d,
        k,
        num_tasks,
        beta,
        noise,
        input_law,
        loss,
        seed,
        heads: None,
    })
}

/// Uniform point on the radius-`radius` sphere in `R^k`.
pub(crate) fn sphere_point<R: Rng>(rng: &mut R, k: usize, radius: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-300 {
            return g.into_iter().map(|v| v * radius / n).collect();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// `y ∼ N(0, 1)` independent of `x`.
    PureNoise,
    /// `y = ⟨w*, x⟩ + N(0, 0.01)` with `w* ⊥ U`, `‖w*‖² = 0.99`.
    PlantedSignal,
}

/// Planted-signal detection instance. The restricted subspace `U` is the
/// span of the first `r` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardnessInstance {
    pub hypothesis: Hypothesis,
    pub d: usize,
    pub r: usize,
    pub n: usize,
}

pub const PLANTED_SIGNAL_ENERGY: f64 = 0.99;
pub const PLANTED_NOISE_VAR: f64 = 0.01;

impl HardnessInstance {
    pub fn new(hypothesis: Hypothesis, d: usize, r: usize, n: usize) -> Result<Self> {
        if d == 0 || 2 * r > d {
            return Err(Error::invalid(format!("need r <= d/2, got d={d}, r={r}")));
        }
        if n == 0 {
            return Err(Error::invalid("hardness sample needs n >= 1"));
        }
        Ok(Self {
            hypothesis,
            d,
            r,
            n,
        })
    }

    /// The planted `w*` for `seed` (H1 only).
    pub fn planted_signal(&self, seed: u64) -> Option<Vec<f64>> {
        match self.hypothesis {
            Hypothesis::PureNoise => None,
            Hypothesis::PlantedSignal => {
                let mut rng = seeded_rng(seed, 0);
                let tail = sphere_point(&mut rng, self.d - self.r, PLANTED_SIGNAL_ENERGY.sqrt());
                let mut w = vec![0.0; self.r];
                w.extend(tail);
                Some(w)
            }
        }
    }
}

pub fn make_hardness_sample<T: Scalar>(inst: &HardnessInstance, seed: u64) -> Result<Dataset<T>> {
    let inst = HardnessInstance::new(inst.hypothesis, inst.d, inst.r, inst.n)?;
    let w = inst.planted_signal(seed);
    let mut rng = seeded_rng(seed, 1);
    let d = inst.d;
    let mut inputs = Vec::with_capacity(inst.n * d);
    let mut targets = Vec::with_capacity(inst.n);
    let mut x = vec![0.0f64; d];
    for _ in 0..inst.n {
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let noise: f64 = StandardNormal.sample(&mut rng);
        let y = match &w {
            None => noise,
            Some(w) => {
                x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + PLANTED_NOISE_VAR.sqrt() * noise
            }
        };
        inputs.extend(x.iter().map(|&v| T::lit(v)));
        targets.push(T::lit(y));
    }
    Dataset::new(Mat::from_vec(inst.n, d, inputs)?, targets, 0)
}

/// Residual variance `min_θ E[(y − ⟨θ, x⟩)²]` estimated by least squares
/// over the given coordinates of `data` (all coordinates when `None`).
pub fn least_squares_residual_variance<T: Scalar>(
    data: &Dataset<T>,
    coords: Option<&[usize]>,
) -> Result<f64> {
    let all: Vec<usize> = (0..data.dim()).collect();
    let coords = coords.unwrap_or(&all);
    let p = coords.len();
    let n = data.len();
    if n <= p {
        return Err(Error::invalid(
            "least squares needs more examples than coordinates",
        ));
    }
    let mut gram = Mat::<f64>::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for j in 0..n {
        let x = data.x(j);
        let y = data.y(j).as_f64();
        for (a, &ca) in coords.iter().enumerate() {
            let xa = x[ca].as_f64();
            rhs[a] += xa * y;
            for (b, &cb) in coords.iter().enumerate().skip(a) {
                gram[(a, b)] += xa * x[cb].as_f64();
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let coef = if p == 0 {
        Vec::new()
    } else {
        gram.solve_spd(&rhs)?
    };
    let mut rss = 0.0;
    for j in 0..n {
        let x = data.x(j);
        let fit: f64 = coords
            .iter()
            .zip(&coef)
            .map(|(&c, b)| x[c].as_f64() * b)
            .sum();
        let r = data.y(j).as_f64() - fit;
        rss += r * r;
    }
    Ok(rss / (n - p) as f64)
}

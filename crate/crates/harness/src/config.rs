//! Experiment configuration: `key = value` files with `[section]` headers,
//! overridden field by field from the command line.
//!
//! Keys inside `[optimizer]`, `[hardness]` or `[eluder]` are addressed as
//! `section.key` in overrides. Unknown keys are errors.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use lifelong_rep::erm::{OptimizerConfig, SolverKind};
use lifelong_rep::lifelong::{SampleRule, SampleSizePolicy};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable naming the directory that experiment folders go in.
pub const OUTPUT_ROOT_VAR: &str = "LIFELONG_OUTPUT_ROOT";

#[derive(Debug, Error, PartialEq)]
#[error("{}{field}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(line: Option<usize>, field: &str, message: impl Into<String>) -> Self {
        Self {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Experiment {
    Table1,
    Curves,
    Certify,
    EluderAudit,
    HardnessDemo,
    LemmaChecks,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Table1 => "table1",
            Experiment::Curves => "curves",
            Experiment::Certify => "certify",
            Experiment::EluderAudit => "eluder",
            Experiment::HardnessDemo => "hardness",
            Experiment::LemmaChecks => "lemma-checks",
        }
    }

    /// Whether the baselines run next to the lifelong learner.
    pub fn with_baselines(self) -> bool {
        matches!(self, Experiment::Curves | Experiment::Certify)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PolicyKind {
    Practical,
    Theoretical,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardnessConfig {
    pub d_list: Vec<usize>,
    /// Restricted-subspace dimension; `None` means `d/2`.
    pub r: Option<usize>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EluderConfig {
    pub pairs: usize,
    pub max_reps: usize,
    pub max_heads: usize,
    pub dim: usize,
    pub rep_dim: usize,
    pub epsilon_list: Vec<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub k_list: Vec<usize>,
    pub beta_list: Vec<f64>,
    pub num_tasks: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    /// Explicit per-trial seeds; otherwise `seed + i`.
    pub seeds: Option<Vec<u64>>,
    pub policy: PolicyKind,
    pub optimizer: OptimizerConfig<f64>,
    /// Held-out certification size; `None` means `⌈32/ε²⌉`.
    pub heldout: Option<usize>,
    pub hardness: HardnessConfig,
    pub eluder: EluderConfig,
    /// Overrides `$LIFELONG_OUTPUT_ROOT/<experiment>` when set.
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Synthetic logistic setting: d = 10, T = 50, ε = 0.05, k ∈ {3, 5, 8},
    /// β ∈ {1, 4, 8}, 10 trials; lr 1e-3, 10⁴ epochs, patience 20.
    pub fn defaults(experiment: Experiment) -> Self {
        let optimizer = OptimizerConfig {
            solver: SolverKind::Newton,
            head_norm_bound: Some(f64::INFINITY),
            ..OptimizerConfig::default()
        };
        let hardness_trials = 200;
        Self {
            experiment,
            d: 10,
            k_list: vec![3, 5, 8],
            beta_list: vec![1.0, 4.0, 8.0],
            num_tasks: 50,
            epsilon: 0.05,
            delta: 0.1,
            trials: 10,
            seed: 0,
            seeds: None,
            policy: PolicyKind::Practical,
            optimizer,
            heldout: None,
            hardness: HardnessConfig {
                d_list: vec![400],
                r: None,
                n_grid: vec![0, 5, 20, 100, 500, 2000],
                trials: hardness_trials,
            },
            eluder: EluderConfig {
                pairs: 50,
                max_reps: 4,
                max_heads: 4,
                dim: 3,
                rep_dim: 2,
                epsilon_list: vec![0.01, 0.02, 0.05, 0.1],
                steps: 100,
            },
            output: None,
        }
    }

    pub fn from_file(experiment: Experiment, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new(
                None,
                "config",
                format!("cannot read {}: {e}", path.display()),
            )
        })?;
        let mut cfg = Self::defaults(experiment);
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(Some(line_no), line, "expected `key = value`"))?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.set(&full, value.trim()).map_err(|mut e| {
                e.line = Some(line_no);
                e
            })?;
        }
        self.validate()
    }

    /// Sets one field by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let err = |m: String| ConfigError::new(None, key, m);
        match key {
            "d" => self.d = parse(key, value)?,
            "k" => self.k_list = parse_list(key, value)?,
            "beta" => self.beta_list = parse_list(key, value)?,
            "T" | "tasks" => self.num_tasks = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "seeds" => self.seeds = Some(parse_list(key, value)?),
            "policy" => {
                self.policy = match value {
                    "practical" => PolicyKind::Practical,
                    "theoretical" => PolicyKind::Theoretical,
                    other => {
                        return Err(err(format!(
                            "unknown policy `{other}`; use practical or theoretical"
                        )))
                    }
                }
            }
            "heldout" => self.heldout = parse_optional(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "optimizer.solver" => {
                self.optimizer.solver = match value {
                    "newton" => SolverKind::Newton,
                    "adam" | "first-order" => SolverKind::FirstOrder,
                    other => {
                        return Err(err(format!("unknown solver `{other}`; use newton or adam")))
                    }
                }
            }
            "optimizer.learning_rate" => self.optimizer.learning_rate = parse(key, value)?,
            "optimizer.max_epochs" => self.optimizer.max_epochs = parse(key, value)?,
            "optimizer.patience" => self.optimizer.early_stop_patience = parse(key, value)?,
            "optimizer.tolerance" => self.optimizer.tolerance = parse(key, value)?,
            "optimizer.head_bound" => {
                self.optimizer.head_norm_bound = match value {
                    "default" => None,
                    "inf" | "none" => Some(f64::INFINITY),
                    v => Some(parse(key, v)?),
                }
            }
            "hardness.d" => self.hardness.d_list = parse_list(key, value)?,
            "hardness.r" => self.hardness.r = parse_optional(key, value)?,
            "hardness.n" => self.hardness.n_grid = parse_list(key, value)?,
            "hardness.trials" => self.hardness.trials = parse(key, value)?,
            "eluder.pairs" => self.eluder.pairs = parse(key, value)?,
            "eluder.max_reps" => self.eluder.max_reps = parse(key, value)?,
            "eluder.max_heads" => self.eluder.max_heads = parse(key, value)?,
            "eluder.dim" => self.eluder.dim = parse(key, value)?,
            "eluder.rep_dim" => self.eluder.rep_dim = parse(key, value)?,
            "eluder.epsilon" => self.eluder.epsilon_list = parse_list(key, value)?,
            "eluder.steps" => self.eluder.steps = parse(key, value)?,
            _ => return Err(err("unknown key".into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::new(None, field, msg))
            }
        };
        check(self.trials >= 1, "trials", "need at least one trial")?;
        if let Some(s) = &self.seeds {
            check(
                s.len() == self.trials,
                "seeds",
                "need exactly one seed per trial",
            )?;
        }
        check(
            !self.k_list.is_empty() && self.k_list.iter().all(|&k| 1 <= k && k <= self.d),
            "k",
            "need 1 <= k <= d",
        )?;
        check(
            !self.beta_list.is_empty() && self.beta_list.iter().all(|b| *b > 0.0 && b.is_finite()),
            "beta",
            "need positive finite values",
        )?;
        check(self.num_tasks >= 1, "T", "need at least one task")?;
        check(
            self.epsilon > 0.0 && self.epsilon < 1.0,
            "epsilon",
            "need 0 < epsilon < 1",
        )?;
        check(
            self.delta > 0.0 && self.delta < 1.0,
            "delta",
            "need 0 < delta < 1",
        )?;
        check(
            self.heldout != Some(0),
            "heldout",
            "need a positive held-out size",
        )?;
        self.optimizer
            .validate()
            .map_err(|e| ConfigError::new(None, "optimizer", e.to_string()))?;
        let h = &self.hardness;
        check(h.trials >= 1, "hardness.trials", "need at least one trial")?;
        check(
            !h.d_list.is_empty() && h.d_list.iter().all(|&d| h.r.unwrap_or(d / 2) * 2 <= d),
            "hardness.r",
            "need r <= d/2 for every d",
        )?;
        let e = &self.eluder;
        check(
            e.max_reps >= 1 && e.max_heads >= 1,
            "eluder",
            "classes must be non-empty",
        )?;
        check(
            1 <= e.rep_dim && e.rep_dim <= e.dim,
            "eluder.rep_dim",
            "need 1 <= rep_dim <= dim",
        )?;
        check(
            e.epsilon_list.iter().all(|&x| x > 0.0 && x < 1.0),
            "eluder.epsilon",
            "need values in (0, 1)",
        )?;
        check(e.steps >= 1, "eluder.steps", "need at least one step")
    }

    /// Stream seed of trial `i`; shared across (k, β) cells for paired runs.
    pub fn trial_seed(&self, i: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[i],
            None => self.seed.wrapping_add(i as u64),
        }
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials).map(|i| self.trial_seed(i)).collect()
    }

    pub fn policy_for(&self, k: usize) -> lifelong_rep::Result<SampleSizePolicy> {
        let rule = match self.policy {
            PolicyKind::Practical => SampleRule::Practical71,
            PolicyKind::Theoretical => SampleRule::TheoreticalC1,
        };
        SampleSizePolicy::new(rule, self.d, k, self.epsilon, self.delta, self.num_tasks)
    }

    pub fn heldout_size(&self) -> usize {
        self.heldout
            .unwrap_or_else(|| lifelong_rep::lifelong::default_heldout_size(self.epsilon))
    }

    /// Output directory: explicit `output`, else `$LIFELONG_OUTPUT_ROOT/<name>`,
    /// else `runs/<name>`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(p) = &self.output {
            return p.clone();
        }
        let root =
            std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(self.experiment.name())
    }

    /// Every field as `key = value` lines in a fixed order. Parsing this text
    /// back reproduces the config.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let o = &self.optimizer;
        let solver = match o.solver {
            SolverKind::Newton => "newton",
            SolverKind::FirstOrder => "adam",
        };
        let head_bound = match o.head_norm_bound {
            None => "default".to_string(),
            Some(b) if b.is_infinite() => "inf".to_string(),
            Some(b) => b.to_string(),
        };
        let policy = match self.policy {
            PolicyKind::Practical => "practical",
            PolicyKind::Theoretical => "theoretical",
        };
        let _ = writeln!(s, "# experiment: {}", self.experiment.name());
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "k = {}", join(&self.k_list));
        let _ = writeln!(s, "beta = {}", join(&self.beta_list));
        let _ = writeln!(s, "T = {}", self.num_tasks);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "delta = {}", self.delta);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(seeds) = &self.seeds {
            let _ = writeln!(s, "seeds = {}", join(seeds));
        }
        let _ = writeln!(s, "policy = {policy}");
        let _ = writeln!(
            s,
            "heldout = {}",
            self.heldout.map_or("default".into(), |h| h.to_string())
        );
        let _ = writeln!(s, "\n[optimizer]");
        let _ = writeln!(s, "solver = {solver}");
        let _ = writeln!(s, "learning_rate = {}", o.learning_rate);
        let _ = writeln!(s, "max_epochs = {}", o.max_epochs);
        let _ = writeln!(s, "patience = {}", o.early_stop_patience);
        let _ = writeln!(s, "tolerance = {}", o.tolerance);
        let _ = writeln!(s, "head_bound = {head_bound}");
        let h = &self.hardness;
        let _ = writeln!(s, "\n[hardness]");
        let _ = writeln!(s, "d = {}", join(&h.d_list));
        let _ = writeln!(s, "r = {}", h.r.map_or("default".into(), |r| r.to_string()));
        let _ = writeln!(s, "n = {}", join(&h.n_grid));
        let _ = writeln!(s, "trials = {}", h.trials);
        let e = &self.eluder;
        let _ = writeln!(s, "\n[eluder]");
        let _ = writeln!(s, "pairs = {}", e.pairs);
        let _ = writeln!(s, "max_reps = {}", e.max_reps);
        let _ = writeln!(s, "max_heads = {}", e.max_heads);
        let _ = writeln!(s, "dim = {}", e.dim);
        let _ = writeln!(s, "rep_dim = {}", e.rep_dim);
        let _ = writeln!(s, "epsilon = {}", join(&e.epsilon_list));
        let _ = writeln!(s, "steps = {}", e.steps);
        s
    }

    /// SHA-256 of [`Self::canonical_text`], hex encoded. The output path is
    /// not part of the hash.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_text().as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut acc, b| {
                let _ = write!(acc, "{b:02x}");
                acc
            })
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError::new(None, key, format!("cannot parse `{value}`: {e}")))
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if value == "default" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Table1);
        cfg.apply_text("k = 3\nbeta = 8, 4\n[optimizer]\nsolver = adam\nhead_bound = 0.25\n[hardness]\nn = 5,2000\n")
            .unwrap();
        let mut again = ExperimentConfig::defaults(Experiment::Table1);
        again.apply_text(&cfg.canonical_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.k_list, vec![3]);
        assert_eq!(cfg.beta_list, vec![8.0, 4.0]);
        assert_eq!(cfg.optimizer.solver, SolverKind::FirstOrder);
        assert_eq!(cfg.hardness.n_grid, vec![5, 2000]);
    }

    #[test]
    fn errors_name_line_and_field() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Table1);
        let e = cfg.apply_text("d = 10\n\nepsilon = abc\n").unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (Some(3), "epsilon"));
        let e = cfg.apply_text("[optimizer]\nmomentum = 0.9\n").unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (Some(2), "optimizer.momentum"));
        let e = cfg.apply_text("trials\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.to_string().starts_with("line 1: "));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Table1);
        assert!(cfg.apply_text("k = 11").is_err());
        let mut cfg = ExperimentConfig::defaults(Experiment::Table1);
        assert!(cfg.apply_text("trials = 2\nseeds = 1,2,3").is_err());
        let mut cfg = ExperimentConfig::defaults(Experiment::HardnessDemo);
        assert!(cfg.apply_text("[hardness]\nd = 10\nr = 6").is_err());
        let mut cfg = ExperimentConfig::defaults(Experiment::Table1);
        assert!(cfg.apply_text("trials = 0").is_err());
    }

    #[test]
    fn seeds_are_explicit_or_derived() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Table1);
        cfg.apply_text("seed = 7\ntrials = 3").unwrap();
        assert_eq!(cfg.trial_seeds(), vec![7, 8, 9]);
        cfg.apply_text("seeds = 4,2,9").unwrap();
        assert_eq!(cfg.trial_seeds(), vec![4, 2, 9]);
    }

    #[test]
    fn defaults_match_the_synthetic_setting() {
        let cfg = ExperimentConfig::defaults(Experiment::Table1);
        assert_eq!(
            (cfg.d, cfg.num_tasks, cfg.epsilon, cfg.trials),
            (10, 50, 0.05, 10)
        );
        assert_eq!(cfg.optimizer.learning_rate, 1e-3);
        assert_eq!(cfg.optimizer.max_epochs, 10_000);
        assert_eq!(cfg.optimizer.early_stop_patience, 20);
        assert_eq!(cfg.heldout_size(), 12_800);
        assert_eq!(cfg.policy_for(3).unwrap().initial_n(), 9);
    }
}

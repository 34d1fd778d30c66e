//! Experiment runner for lifelong representation learning: synthetic
//! logistic grids (update counts, sample curves, certification), the
//! planted-signal hardness illustration, eluder audits and lemma checks.
//!
//! Every run writes CSV artifacts, a `summary.json` and a `manifest.json`
//! holding the config hash, seeds, crate versions and a SHA-256 per file.
//! Nothing time-dependent is written, so identical configs give identical
//! bytes.

pub mod config;
pub mod eluder_audit;
pub mod experiments;
pub mod hardness;
pub mod lemmas;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{Experiment, ExperimentConfig};
use experiments::{run_grid, Algorithm};

/// A file written during a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes artifacts under one directory and remembers their digests.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, &text)
    }

    /// Writes `manifest.json` last; it lists every other file.
    pub fn write_manifest(&mut self, cfg: &ExperimentConfig, failures: &[String]) -> Result<()> {
        let mut files = self.files.clone();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = json!({
            "experiment": cfg.experiment.name(),
            "config_hash": cfg.hash(),
            "seeds": cfg.trial_seeds(),
            "versions": {
                "lifelong-rep": lifelong_rep::VERSION,
                "lifelong-harness": env!("CARGO_PKG_VERSION"),
            },
            "config": cfg.canonical_text(),
            "files": files,
            "failures": failures,
        });
        self.write_json("manifest.json", &manifest)
    }
}

/// What a run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// Failed trials or checks; completed work is still on disk.
    pub failures: Vec<String>,
    /// Human-readable digest for the terminal.
    pub report: String,
}

/// Runs `cfg.experiment` and writes its artifacts to `cfg.output_dir()`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut out = Artifacts::create(&cfg.output_dir())?;
    out.write("config.txt", &cfg.canonical_text())?;
    let (failures, report) = match cfg.experiment {
        Experiment::Table1 | Experiment::Curves | Experiment::Certify => grid(cfg, &mut out)?,
        Experiment::HardnessDemo => hardness_run(cfg, &mut out)?,
        Experiment::LemmaChecks => lemma_run(cfg, &mut out)?,
        Experiment::EluderAudit => eluder_run(cfg, &mut out)?,
    };
    out.write_manifest(cfg, &failures)?;
    Ok(RunOutcome {
        dir: out.dir().to_path_buf(),
        failures,
        report,
    })
}

fn grid(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<String>, String)> {
    let algorithms: &[Algorithm] = if cfg.experiment.with_baselines() {
        &[
            Algorithm::Lifelong,
            Algorithm::IndependentErm,
            Algorithm::OracleKnownRep,
        ]
    } else {
        &[Algorithm::Lifelong]
    };
    let result = run_grid(cfg, algorithms);
    for t in &result.trials {
        out.write(&t.file_name(), &t.csv)?;
    }
    out.write("summary.csv", &result.summary_csv())?;
    out.write("curves.csv", &result.curves_csv())?;
    out.write("certifications.csv", &result.certifications_csv())?;
    let table = result.render_table(&cfg.k_list, &cfg.beta_list);
    out.write_json(
        "summary.json",
        &json!({
            "experiment": cfg.experiment.name(),
            "config_hash": cfg.hash(),
            "cells": result.cells,
            "table": table,
            "failures": result.failures,
        }),
    )?;
    let mut report = table;
    for c in &result.cells {
        let _ = writeln!(
            report,
            "{} k={} beta={}: {:.0} samples, {:.1}% of tasks within epsilon",
            c.algorithm.name(),
            c.k,
            c.beta,
            c.mean_total_samples,
            100.0 * c.certified_fraction
        );
    }
    Ok((result.failures, report))
}

const HARDNESS_NOTE: &str =
    "illustration only: accuracy of one fixed residual-energy test, not a bound over all tests";

fn hardness_run(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<String>, String)> {
    let h = &cfg.hardness;
    let rows = hardness::hardness_demo(&h.d_list, h.r, &h.n_grid, h.trials, cfg.seed)?;
    let violations = hardness::monotonicity_violations(&rows);
    out.write("hardness.csv", &hardness::rows_csv(&rows))?;
    out.write_json(
        "summary.json",
        &json!({
            "experiment": cfg.experiment.name(),
            "config_hash": cfg.hash(),
            "note": HARDNESS_NOTE,
            "threshold": hardness::THRESHOLD,
            "rows": rows,
            "monotonicity_violations": violations,
        }),
    )?;
    let mut report = format!("{HARDNESS_NOTE}\n");
    for r in &rows {
        let _ = writeln!(
            report,
            "d={} r={} n={}: accuracy {:.3} ± {:.3}",
            r.d, r.r, r.n, r.accuracy, r.std_error
        );
    }
    Ok((Vec::new(), report))
}

fn lemma_run(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<String>, String)> {
    let checks = lemmas::lemma_checks(cfg.seed)?;
    let mut csv = String::from("check,instances,failures,max_error,tolerance,passed\n");
    let mut report = String::new();
    let mut failures = Vec::new();
    for c in &checks {
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{:e},{}",
            c.name,
            c.instances,
            c.failures,
            c.max_error,
            c.tolerance,
            c.passed()
        );
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(
            report,
            "{verdict} {} ({} instances, max error {:.3e})",
            c.name, c.instances, c.max_error
        );
        if !c.passed() {
            failures.push(format!(
                "{} failed on {} of {} instances",
                c.name, c.failures, c.instances
            ));
        }
    }
    out.write("lemma_checks.csv", &csv)?;
    out.write_json(
        "summary.json",
        &json!({ "experiment": cfg.experiment.name(), "config_hash": cfg.hash(), "checks": checks }),
    )?;
    Ok((failures, report))
}

fn eluder_run(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<String>, String)> {
    let audit = eluder_audit::eluder_audit(&cfg.eluder, cfg.seed)?;
    out.write("eluder_pairs.csv", &audit.rows_csv())?;
    out.write("pointwise.csv", &audit.pointwise_csv())?;
    out.write("certificates.txt", &audit.reports)?;
    out.write_json(
        "summary.json",
        &json!({
            "experiment": cfg.experiment.name(),
            "config_hash": cfg.hash(),
            "bound_violations": audit.bound_violations(),
            "invalid_certificates": audit.invalid_certificates(),
            "monotonicity_notes": audit.monotonicity_notes,
            "pointwise": audit.pointwise,
        }),
    )?;
    let mut failures = Vec::new();
    if audit.bound_violations() > 0 {
        failures.push(format!(
            "{} chains exceed 2·min(|H|, |F|)",
            audit.bound_violations()
        ));
    }
    if audit.invalid_certificates() > 0 {
        failures.push(format!(
            "{} certificates failed re-validation",
            audit.invalid_certificates()
        ));
    }
    for c in audit.pointwise.iter().filter(|c| !c.all_verified()) {
        failures.push(format!(
            "pointwise chain d={} k={} failed at some step",
            c.d, c.k
        ));
    }
    let longest = audit.rows.iter().map(|r| r.length).max().unwrap_or(0);
    let mut report = format!(
        "{} exhaustive searches, longest chain {longest}, {} bound violations, {} invalid certificates, {} monotonicity notes\n",
        audit.rows.len(),
        audit.bound_violations(),
        audit.invalid_certificates(),
        audit.monotonicity_notes.len()
    );
    for c in &audit.pointwise {
        let _ = writeln!(
            report,
            "pointwise d={} k={} eps={}: {}/{} steps verified, excess {:.4}, escape {:.4}",
            c.d,
            c.k,
            c.epsilon,
            c.verified_steps,
            c.steps,
            c.max_predecessor_excess,
            c.escape_excess
        );
    }
    Ok((failures, report))
}

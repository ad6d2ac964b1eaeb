use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use milift_core::metrics::RunAggregate;
use milift_core::trainer::RepeatOutcome;
use milift_core::{export_curve, TrainOutcome};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config;

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> anyhow::Result<InputDigest> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
    })
}

/// Everything needed to repeat a command: the resolved flags (also written
/// as `config.txt`, loadable with `--config`), input digests and outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub flags: BTreeMap<String, String>,
    pub resolved: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, flags: &[(&str, String)], resolved: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            flags: flags
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            resolved,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, out_dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        write_json(&out_dir.join("manifest.json"), self)?;
        let flags: Vec<(&str, String)> = self
            .flags
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        fs::write(out_dir.join("config.txt"), config::render(&flags))?;
        Ok(())
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("run_{seed}"))
}

fn write_run(dir: &Path, outcome: &TrainOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), &outcome.report)?;
    export_curve(&outcome.test_curve, dir.join("curve.csv"))?;
    outcome.model.save(dir.join("model.json"))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

/// Contents of `aggregate.json`.
#[derive(Debug, Serialize)]
pub struct AggregateFile {
    pub runs_requested: usize,
    pub completed: usize,
    pub failed: Vec<FailedRun>,
    pub test_auuc: Option<RunAggregate>,
    /// `mean±std (×0.001)`.
    pub summary: String,
}

/// Writes every run's files under `root` and returns the aggregate.
pub fn write_runs(root: &Path, outcome: &RepeatOutcome) -> anyhow::Result<AggregateFile> {
    let mut failed = Vec::new();
    for run in &outcome.runs {
        let dir = run_dir(root, run.seed);
        match &run.outcome {
            Ok(o) => write_run(&dir, o)?,
            Err(e) => {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("error.txt"), format!("{e}\n"))?;
                failed.push(FailedRun {
                    seed: run.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(AggregateFile {
        runs_requested: outcome.runs.len(),
        completed: outcome.runs.len() - failed.len(),
        failed,
        test_auuc: outcome.aggregate.clone(),
        summary: outcome.aggregate.as_ref().map_or_else(
            || "no completed runs".into(),
            |a| format!("{} (×0.001)", a.display_milli()),
        ),
    })
}

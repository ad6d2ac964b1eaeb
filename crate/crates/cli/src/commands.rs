use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use milift_core::data::ate_standard_error;
use milift_core::experiment::{ablate, sweep, Variant};
use milift_core::metrics::uplift_curve;
use milift_core::trainer::repeat_runs;
use milift_core::{
    empirical_ate, export_curve, generate_synthetic, load_table, split, write_table, Dataset,
    Split, TrainConfig, UpliftModel,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{train_flags, DataArgs, ScoreCmd, SweepCmd, SynthCmd, TrainCmd};
use crate::output::{digest, write_json, write_runs, RunManifest};

/// How a command finished when it did not fail outright.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// Some requested runs failed; the rest were written.
    Partial,
}

impl Status {
    fn from_failures(failures: usize) -> Status {
        if failures == 0 {
            Status::Complete
        } else {
            Status::Partial
        }
    }
}

struct Loaded {
    dataset: Dataset,
    description: serde_json::Value,
    inputs: Vec<crate::output::InputDigest>,
}

fn load(data: &DataArgs) -> anyhow::Result<Loaded> {
    match &data.data {
        Some(path) => {
            let schema = data.schema()?;
            let dataset =
                load_table(path, &schema).with_context(|| format!("loading {}", path.display()))?;
            Ok(Loaded {
                description: json!({ "source": "table", "path": path, "schema": schema }),
                inputs: vec![digest(path)?],
                dataset,
            })
        }
        None => {
            let cfg = data.synth.config();
            Ok(Loaded {
                dataset: generate_synthetic(&cfg)?,
                description: json!({ "source": "synthetic", "generator": cfg }),
                inputs: Vec::new(),
            })
        }
    }
}

fn prepare(
    cmd: &TrainCmd,
    name: &str,
    out: &Path,
    extra: &[(&str, String)],
) -> anyhow::Result<(Split, TrainConfig)> {
    let cfg = cmd.train.config();
    cfg.validate()?;
    if cmd.run.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let loaded = load(&cmd.data)?;
    let fractions = cmd.run.fractions()?;
    let mut flags = cmd.data.flags();
    flags.extend(train_flags(&cfg));
    flags.extend(cmd.run.flags());
    flags.extend(extra.iter().cloned());
    let mut manifest = RunManifest::new(
        name,
        &flags,
        json!({ "data": loaded.description, "train": cfg, "split": fractions, "split_seed": cmd.run.split_seed }),
    );
    manifest.inputs = loaded.inputs;
    manifest.outputs = expected_outputs(name, &cfg, cmd.run.runs);
    let splits = split(&loaded.dataset, fractions, cmd.run.split_seed)?;
    manifest.write(out)?;
    log::info!(
        "{} rows: {} train, {} valid, {} test",
        loaded.dataset.len(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
    Ok((splits, cfg))
}

fn expected_outputs(name: &str, cfg: &TrainConfig, runs: usize) -> Vec<String> {
    let runs: Vec<String> = (0..runs as u64)
        .flat_map(|i| {
            let dir = format!("run_{}", cfg.seed + i);
            ["report.json", "curve.csv", "model.json"].map(|f| format!("{dir}/{f}"))
        })
        .collect();
    match name {
        "train" => {
            let mut out = runs;
            out.push("aggregate.json".into());
            out
        }
        "sweep" => vec![
            "sweep.csv".into(),
            "sweep.json".into(),
            "cells/<bag>_<alpha>/run_<seed>/...".into(),
        ],
        _ => vec![
            "ablation.csv".into(),
            "ablation.json".into(),
            "<variant>/run_<seed>/...".into(),
        ],
    }
}

pub fn synth(cmd: &SynthCmd, out: &Path) -> anyhow::Result<Status> {
    let cfg = cmd.synth.config();
    cfg.validate()?;
    let path = cmd
        .output
        .clone()
        .unwrap_or_else(|| out.join("synthetic.csv"));
    let mut manifest = RunManifest::new("synth", &cmd.synth.flags(), json!({ "generator": cfg }));
    manifest.outputs = vec![path.display().to_string()];
    manifest.write(out)?;
    let ds = generate_synthetic(&cfg)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_table(&ds, &path, b',')?;
    let ate = empirical_ate(&ds)?;
    let se = ate_standard_error(&ds)?;
    let mean_ite = ds
        .true_ite()
        .map_or(f64::NAN, |v| v.iter().sum::<f64>() / v.len() as f64);
    println!("wrote {} rows to {}", ds.len(), path.display());
    println!("empirical ATE {ate:.6} (standard error {se:.6}); mean true ITE {mean_ite:.6}");
    println!("sha256 {}", digest(&path)?.sha256);
    Ok(Status::Complete)
}

pub fn train(cmd: &TrainCmd, out: &Path) -> anyhow::Result<Status> {
    let (splits, cfg) = prepare(cmd, "train", out, &[])?;
    let outcome = repeat_runs(&splits, &cfg, cmd.run.runs, cmd.run.jobs)?;
    let aggregate = write_runs(out, &outcome)?;
    write_json(&out.join("aggregate.json"), &aggregate)?;
    println!(
        "{} alpha={} bag={}: test AUUC {} over {}/{} runs",
        cfg.model,
        cfg.alpha,
        cfg.bag_size,
        aggregate.summary,
        aggregate.completed,
        aggregate.runs_requested
    );
    if aggregate.completed == 0 {
        bail!("every run failed; see {}", out.display());
    }
    Ok(Status::from_failures(outcome.failures))
}

fn cell_dir(out: &Path, bag_size: usize, alpha: f64) -> PathBuf {
    out.join("cells")
        .join(format!("bag{bag_size}_alpha{alpha}"))
}

pub fn sweep_grid(cmd: &SweepCmd, out: &Path) -> anyhow::Result<Status> {
    if cmd.bag_sizes.is_empty() || cmd.alphas.is_empty() {
        bail!("sweep grids must be non-empty");
    }
    let join = |v: Vec<String>| v.join(",");
    let extra = [
        (
            "bag-sizes",
            join(cmd.bag_sizes.iter().map(usize::to_string).collect()),
        ),
        (
            "alphas",
            join(cmd.alphas.iter().map(f64::to_string).collect()),
        ),
    ];
    let (splits, cfg) = prepare(&cmd.base, "sweep", out, &extra)?;
    let mut write_error = None;
    let table = sweep(
        &splits,
        &cfg,
        &cmd.bag_sizes,
        &cmd.alphas,
        cmd.base.run.runs,
        cmd.base.run.jobs,
        |cell, result| {
            if let Ok(outcome) = result {
                let dir = cell_dir(out, cell.bag_size, cell.alpha);
                let written = fs::create_dir_all(&dir)
                    .map_err(anyhow::Error::from)
                    .and_then(|_| write_runs(&dir, outcome))
                    .and_then(|agg| write_json(&dir.join("aggregate.json"), &agg));
                if let Err(e) = written {
                    write_error.get_or_insert(e);
                }
            }
            let text = cell
                .aggregate
                .as_ref()
                .map_or("failed".into(), |a| a.display_milli());
            println!("bag {} alpha {}: {text}", cell.bag_size, cell.alpha);
        },
    );
    if let Some(e) = write_error {
        return Err(e);
    }
    fs::write(out.join("sweep.csv"), table.to_csv(cfg.batch_size))?;
    write_json(&out.join("sweep.json"), &table)?;
    print!("{}", table.to_csv(cfg.batch_size));
    if table.cells.iter().all(|c| c.aggregate.is_none()) {
        bail!("every sweep cell failed");
    }
    Ok(Status::from_failures(table.failed_cells()))
}

#[derive(Serialize)]
struct AblationFile<'a> {
    table: &'a milift_core::experiment::AblationTable,
    /// Proposed at least matches random bags.
    clustering_helps: Option<bool>,
    /// The bag-loss-only variant is the worst of the three.
    base_loss_needed: Option<bool>,
}

pub fn ablation(cmd: &TrainCmd, out: &Path) -> anyhow::Result<Status> {
    let (splits, cfg) = prepare(cmd, "ablate", out, &[])?;
    let mut write_error = None;
    let table = ablate(
        &splits,
        &cfg,
        cmd.run.runs,
        cmd.run.jobs,
        |variant: Variant, result| {
            if let Ok(outcome) = result {
                let dir = out.join(variant.slug());
                let written = write_runs(&dir, outcome)
                    .and_then(|agg| write_json(&dir.join("aggregate.json"), &agg));
                if let Err(e) = written {
                    write_error.get_or_insert(e);
                }
            }
        },
    );
    if let Some(e) = write_error {
        return Err(e);
    }
    let file = AblationFile {
        table: &table,
        clustering_helps: table.clustering_helps(),
        base_loss_needed: table.base_loss_needed(),
    };
    fs::write(out.join("ablation.csv"), table.to_csv())?;
    write_json(&out.join("ablation.json"), &file)?;
    print!("{}", table.to_csv());
    let verdict = |v: Option<bool>| v.map_or("undetermined", |b| if b { "yes" } else { "no" });
    println!(
        "proposed >= w/o clustering: {}",
        verdict(file.clustering_helps)
    );
    println!("w/o base model worst: {}", verdict(file.base_loss_needed));
    let failures: usize = table.rows.iter().map(|r| r.failures).sum();
    if table.rows.iter().all(|r| r.aggregate.is_none()) {
        bail!("every ablation variant failed");
    }
    Ok(Status::from_failures(failures))
}

fn score_inputs(cmd: &ScoreCmd) -> anyhow::Result<(UpliftModel, Loaded)> {
    let model = UpliftModel::load(&cmd.model)
        .with_context(|| format!("loading model {}", cmd.model.display()))?;
    let mut loaded = load(&cmd.data)?;
    loaded.inputs.insert(0, digest(&cmd.model)?);
    if loaded.dataset.dim() != model.input_dim() {
        bail!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            loaded.dataset.dim()
        );
    }
    Ok((model, loaded))
}

pub fn eval(cmd: &ScoreCmd, out: &Path) -> anyhow::Result<Status> {
    let (model, loaded) = score_inputs(cmd)?;
    let path = cmd.output.clone().unwrap_or_else(|| out.join("eval.json"));
    let mut manifest = RunManifest::new(
        "eval",
        &cmd.data.flags(),
        json!({ "data": loaded.description }),
    );
    manifest.inputs = loaded.inputs.clone();
    manifest.outputs = vec![path.display().to_string()];
    manifest.write(out)?;
    let ds = &loaded.dataset;
    let pred = model.predict(ds.features())?;
    let curve = uplift_curve(&pred.uplift, ds.outcome(), ds.treatment(), cmd.n_points)?;
    let oracle = match ds.true_ite() {
        Some(ite) => Some(uplift_curve(ite, ds.outcome(), ds.treatment(), cmd.n_points)?.auuc),
        None => None,
    };
    let result = json!({
        "model": cmd.model,
        "model_kind": model.kind(),
        "rows": ds.len(),
        "n_points": cmd.n_points,
        "auuc": curve.auuc,
        "empirical_ate": empirical_ate(ds)?,
        "oracle_auuc": oracle,
        "inputs": loaded.inputs,
    });
    write_json(&path, &result)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(Status::Complete)
}

pub fn curve(cmd: &ScoreCmd, out: &Path) -> anyhow::Result<Status> {
    let (model, loaded) = score_inputs(cmd)?;
    let path = cmd.output.clone().unwrap_or_else(|| out.join("curve.csv"));
    let mut manifest = RunManifest::new(
        "curve",
        &cmd.data.flags(),
        json!({ "data": loaded.description }),
    );
    manifest.inputs = loaded.inputs;
    manifest.outputs = vec![path.display().to_string()];
    manifest.write(out)?;
    let ds = &loaded.dataset;
    let pred = model.predict(ds.features())?;
    let curve = uplift_curve(&pred.uplift, ds.outcome(), ds.treatment(), cmd.n_points)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    export_curve(&curve, &path)?;
    println!(
        "wrote {} points to {} (AUUC {:.6})",
        curve.points.len(),
        path.display(),
        curve.auuc
    );
    Ok(Status::Complete)
}

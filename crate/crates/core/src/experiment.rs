//! Comparison grids built on [`repeat_runs`]: bag-size × α sweeps and the
//! clustering / base-loss ablation.

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::Result;
use crate::metrics::RunAggregate;
use crate::mil::BagMode;
use crate::trainer::{repeat_runs, RepeatOutcome, TrainConfig};

/// Removes repeated values, keeping first occurrences. Returns whether any were dropped.
pub fn dedup_grid<T: PartialEq + Copy>(values: &[T]) -> (Vec<T>, bool) {
    let mut out: Vec<T> = Vec::with_capacity(values.len());
    for &v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    let dropped = out.len() != values.len();
    (out, dropped)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub bag_size: usize,
    pub alpha: f64,
    pub aggregate: Option<RunAggregate>,
    pub failures: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub bag_sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    /// Row-major: bag size outer, α inner.
    pub cells: Vec<SweepCell>,
    pub duplicates_removed: bool,
}

fn cell_text(agg: &Option<RunAggregate>, error: &Option<String>) -> String {
    match (agg, error) {
        (Some(a), _) => a.display_milli(),
        (None, Some(_)) => "failed".into(),
        (None, None) => "n/a".into(),
    }
}

impl SweepTable {
    pub fn cell(&self, bag_size: usize, alpha: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.bag_size == bag_size && c.alpha == alpha)
    }

    /// Rows are `batch_size*bag_size`, columns are α values; cells are
    /// `mean±std` in units of 10⁻³.
    pub fn to_csv(&self, batch_size: usize) -> String {
        let mut out = String::from("sizes");
        for a in &self.alphas {
            out.push_str(&format!(",alpha={a}"));
        }
        out.push('\n');
        for &b in &self.bag_sizes {
            out.push_str(&format!("{batch_size}*{b}"));
            for &a in &self.alphas {
                let c = self.cell(b, a).expect("full grid");
                out.push(',');
                out.push_str(&cell_text(&c.aggregate, &c.error));
            }
            out.push('\n');
        }
        out
    }

    pub fn failed_cells(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.error.is_some() || c.failures > 0)
            .count()
    }
}

/// Runs every (bag size, α) pair with `runs` seeds each. Per-cell failures are
/// recorded and the grid still completes. `on_cell` sees each finished cell.
pub fn sweep(
    splits: &Split,
    base: &TrainConfig,
    bag_sizes: &[usize],
    alphas: &[f64],
    runs: usize,
    jobs: usize,
    mut on_cell: impl FnMut(&SweepCell, &Result<RepeatOutcome>),
) -> SweepTable {
    let (bag_sizes, dup_b) = dedup_grid(bag_sizes);
    let (alphas, dup_a) = dedup_grid(alphas);
    if dup_b || dup_a {
        log::warn!("duplicate sweep values removed");
    }
    let mut cells = Vec::with_capacity(bag_sizes.len() * alphas.len());
    for &bag_size in &bag_sizes {
        for &alpha in &alphas {
            let cfg = TrainConfig {
                bag_size,
                alpha,
                ..base.clone()
            };
            let result = repeat_runs(splits, &cfg, runs, jobs);
            let cell = match &result {
                Ok(r) => SweepCell {
                    bag_size,
                    alpha,
                    aggregate: r.aggregate.clone(),
                    failures: r.failures,
                    error: None,
                },
                Err(e) => SweepCell {
                    bag_size,
                    alpha,
                    aggregate: None,
                    failures: runs,
                    error: Some(e.to_string()),
                },
            };
            on_cell(&cell, &result);
            cells.push(cell);
        }
    }
    SweepTable {
        bag_sizes,
        alphas,
        cells,
        duplicates_removed: dup_b || dup_a,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Clustered bags plus the base loss.
    Proposed,
    /// Randomly formed bags.
    WithoutClustering,
    /// Bag loss only, from the first step.
    WithoutBase,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::WithoutBase,
        Variant::WithoutClustering,
        Variant::Proposed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::WithoutClustering => "w/o clustering",
            Variant::WithoutBase => "w/o base model",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::WithoutClustering => "without_clustering",
            Variant::WithoutBase => "without_base",
        }
    }

    /// Derives this variant's configuration from the proposed one. Without a
    /// base loss there is nothing to warm up on, so warm-up is disabled.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Proposed => cfg.bag_mode = BagMode::Clustered,
            Variant::WithoutClustering => cfg.bag_mode = BagMode::Random,
            Variant::WithoutBase => {
                cfg.bag_mode = BagMode::Clustered;
                cfg.base_weight = 0.0;
                cfg.warmup_steps = 0;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub aggregate: Option<RunAggregate>,
    pub failures: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    /// Ordered w/o base, w/o clustering, proposed.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn mean(&self, variant: Variant) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .and_then(|r| r.aggregate.as_ref())
            .map(|a| a.mean)
    }

    /// Proposed at least matches random bags.
    pub fn clustering_helps(&self) -> Option<bool> {
        Some(self.mean(Variant::Proposed)? >= self.mean(Variant::WithoutClustering)?)
    }

    /// The bag-loss-only variant is strictly the worst of the three.
    pub fn base_loss_needed(&self) -> Option<bool> {
        let without = self.mean(Variant::WithoutBase)?;
        Some(
            without < self.mean(Variant::Proposed)?
                && without < self.mean(Variant::WithoutClustering)?,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,auuc_milli,mean,std,failures\n");
        for r in &self.rows {
            let (mean, std) = r
                .aggregate
                .as_ref()
                .map_or((String::new(), String::new()), |a| {
                    (a.mean.to_string(), a.std.to_string())
                });
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant.label(),
                cell_text(&r.aggregate, &r.error),
                mean,
                std,
                r.failures
            ));
        }
        out
    }
}

pub fn ablate(
    splits: &Split,
    base: &TrainConfig,
    runs: usize,
    jobs: usize,
    mut on_variant: impl FnMut(Variant, &Result<RepeatOutcome>),
) -> AblationTable {
    let rows = Variant::ALL
        .iter()
        .map(|&variant| {
            let result = repeat_runs(splits, &variant.configure(base), runs, jobs);
            on_variant(variant, &result);
            match result {
                Ok(r) => AblationRow {
                    variant,
                    aggregate: r.aggregate,
                    failures: r.failures,
                    error: None,
                },
                Err(e) => AblationRow {
                    variant,
                    aggregate: None,
                    failures: runs,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    AblationTable { rows }
}

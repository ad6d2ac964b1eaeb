use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use milift_core::data::{FeatureColumns, TableSchema};
use milift_core::{BagMode, ModelKind, SynthConfig, TrainConfig};

pub const OUT_ENV: &str = "MILIFT_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "milift",
    version,
    about = "Bag-regularized neural uplift modeling"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Output root.
    #[arg(long, global = true, env = OUT_ENV, default_value = "milift-out")]
    pub out_dir: PathBuf,

    /// File of `key = value` lines supplying any flag; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a randomized experiment with known individual effects.
    Synth(SynthCmd),
    /// Train repeated seeded runs and aggregate test AUUC.
    Train(TrainCmd),
    /// Run a bag size by alpha grid.
    Sweep(SweepCmd),
    /// Compare the proposed loss with random bags and with the bag loss alone.
    Ablate(TrainCmd),
    /// Score a saved model on a dataset.
    Eval(ScoreCmd),
    /// Export a saved model's uplift curve on a dataset.
    Curve(ScoreCmd),
}

pub const SUBCOMMANDS: [&str; 6] = ["synth", "train", "sweep", "ablate", "eval", "curve"];

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().n)]
    pub n: usize,
    #[arg(long, default_value_t = SynthConfig::default().d)]
    pub d: usize,
    #[arg(long, default_value_t = SynthConfig::default().base_rate)]
    pub base_rate: f64,
    #[arg(long, default_value_t = SynthConfig::default().slope, allow_hyphen_values = true)]
    pub slope: f64,
    #[arg(long, default_value_t = SynthConfig::default().tau_max, allow_hyphen_values = true)]
    pub tau_max: f64,
    #[arg(long, default_value_t = SynthConfig::default().treated_fraction)]
    pub treated_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub synth_seed: u64,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            n: self.n,
            d: self.d,
            base_rate: self.base_rate,
            slope: self.slope,
            tau_max: self.tau_max,
            treated_fraction: self.treated_fraction,
            seed: self.synth_seed,
        }
    }

    pub fn flags(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n", self.n.to_string()),
            ("d", self.d.to_string()),
            ("base-rate", self.base_rate.to_string()),
            ("slope", self.slope.to_string()),
            ("tau-max", self.tau_max.to_string()),
            ("treated-fraction", self.treated_fraction.to_string()),
            ("synth-seed", self.synth_seed.to_string()),
        ]
    }
}

#[derive(Args, Debug, Clone)]
pub struct SynthCmd {
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Dataset path; defaults to `synthetic.csv` under the output root.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Where rows come from: a delimited table, or the synthetic generator.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Delimited table with a header row; synthetic data when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, default_value = "treatment")]
    pub treatment_col: String,
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    /// Ground-truth effect column, read when present.
    #[arg(long, default_value = "true_ite")]
    pub ite_col: String,
    /// Comma-separated feature columns; every other column when omitted.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[command(flatten)]
    pub synth: SynthArgs,
}

impl DataArgs {
    pub fn schema(&self) -> anyhow::Result<TableSchema> {
        if !self.delimiter.is_ascii() {
            anyhow::bail!("delimiter must be a single ASCII character");
        }
        Ok(TableSchema {
            features: if self.features.is_empty() {
                FeatureColumns::AllRemaining
            } else {
                FeatureColumns::Named(self.features.clone())
            },
            treatment: self.treatment_col.clone(),
            outcome: self.outcome_col.clone(),
            true_ite: Some(self.ite_col.clone()),
            delimiter: self.delimiter as u8,
        })
    }

    pub fn flags(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        match &self.data {
            Some(path) => {
                out.push(("data", path.display().to_string()));
                out.push(("delimiter", self.delimiter.to_string()));
                out.push(("treatment-col", self.treatment_col.clone()));
                out.push(("outcome-col", self.outcome_col.clone()));
                out.push(("ite-col", self.ite_col.clone()));
                if !self.features.is_empty() {
                    out.push(("features", self.features.join(",")));
                }
            }
            None => out.extend(self.synth.flags()),
        }
        out
    }
}

/// Mirrors [`TrainConfig`] one flag per field.
#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value = "tarnet")]
    pub model: ModelKind,
    #[arg(long, value_delimiter = ',', default_values_t = TrainConfig::default().hidden_sizes)]
    pub hidden_sizes: Vec<usize>,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta1)]
    pub beta1: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta2)]
    pub beta2: f64,
    #[arg(long, default_value_t = TrainConfig::default().epsilon)]
    pub epsilon: f64,
    /// Weight of the bag loss after warm-up.
    #[arg(long, default_value_t = TrainConfig::default().alpha)]
    pub alpha: f64,
    /// Weight of the factual-arm loss.
    #[arg(long, default_value_t = TrainConfig::default().base_weight)]
    pub base_weight: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().bag_size)]
    pub bag_size: usize,
    #[arg(long, default_value = "clustered")]
    pub bag_mode: BagMode,
    #[arg(long, default_value_t = TrainConfig::default().max_steps)]
    pub max_steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().warmup_steps)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().eval_every)]
    pub eval_every: usize,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    pub patience: usize,
    /// First run's seed; run `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub standardize: bool,
    #[arg(long, default_value_t = TrainConfig::default().n_points)]
    pub n_points: usize,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model,
            hidden_sizes: self.hidden_sizes.clone(),
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            alpha: self.alpha,
            base_weight: self.base_weight,
            batch_size: self.batch_size,
            bag_size: self.bag_size,
            bag_mode: self.bag_mode,
            max_steps: self.max_steps,
            warmup_steps: self.warmup_steps,
            eval_every: self.eval_every,
            patience: self.patience,
            seed: self.seed,
            standardize: self.standardize,
            n_points: self.n_points,
        }
    }
}

/// Flag form of a resolved training configuration.
pub fn train_flags(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    let hidden: Vec<String> = cfg.hidden_sizes.iter().map(usize::to_string).collect();
    vec![
        ("model", cfg.model.to_string()),
        ("hidden-sizes", hidden.join(",")),
        ("learning-rate", cfg.learning_rate.to_string()),
        ("beta1", cfg.beta1.to_string()),
        ("beta2", cfg.beta2.to_string()),
        ("epsilon", cfg.epsilon.to_string()),
        ("alpha", cfg.alpha.to_string()),
        ("base-weight", cfg.base_weight.to_string()),
        ("batch-size", cfg.batch_size.to_string()),
        ("bag-size", cfg.bag_size.to_string()),
        ("bag-mode", cfg.bag_mode.to_string()),
        ("max-steps", cfg.max_steps.to_string()),
        ("warmup-steps", cfg.warmup_steps.to_string()),
        ("eval-every", cfg.eval_every.to_string()),
        ("patience", cfg.patience.to_string()),
        ("seed", cfg.seed.to_string()),
        ("standardize", cfg.standardize.to_string()),
        ("n-points", cfg.n_points.to_string()),
    ]
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Seeded repetitions.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Runs trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.6, 0.2, 0.2])]
    pub split: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl RunArgs {
    pub fn fractions(&self) -> anyhow::Result<[f64; 3]> {
        <[f64; 3]>::try_from(self.split.as_slice())
            .map_err(|_| anyhow::anyhow!("--split needs three fractions, got {}", self.split.len()))
    }

    pub fn flags(&self) -> Vec<(&'static str, String)> {
        let split: Vec<String> = self.split.iter().map(f64::to_string).collect();
        vec![
            ("runs", self.runs.to_string()),
            ("jobs", self.jobs.to_string()),
            ("split", split.join(",")),
            ("split-seed", self.split_seed.to_string()),
        ]
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone)]
pub struct SweepCmd {
    #[command(flatten)]
    pub base: TrainCmd,
    #[arg(long, value_delimiter = ',', default_values_t = vec![8, 16, 32, 64, 128])]
    pub bag_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-4, 1e-3, 1e-2])]
    pub alphas: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ScoreCmd {
    /// Saved model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = TrainConfig::default().n_points)]
    pub n_points: usize,
    /// Result path; defaults to a file under the output root.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

//! Training loop: base-only warm-up, then the bag-regularized loss with bags
//! re-formed from current predictions every step, validation-AUUC early
//! stopping, and seeded repetition.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{minibatches, Dataset, Split, Standardizer};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_runs, uplift_curve, RunAggregate, UpliftCurve, DEFAULT_CURVE_POINTS,
};
use crate::mil::{combined_loss_and_grads, BagMode, BatchRef, LossBreakdown, MilSettings};
use crate::models::{ModelKind, ModelOptimizer, UpliftModel};
use crate::nncore::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of the bag loss after warm-up.
    pub alpha: f64,
    /// Weight of the factual-arm loss; 0 trains on the bag loss alone.
    pub base_weight: f64,
    pub batch_size: usize,
    pub bag_size: usize,
    pub bag_mode: BagMode,
    pub max_steps: usize,
    /// Steps `1..=warmup_steps` train on the base loss only.
    pub warmup_steps: usize,
    pub eval_every: usize,
    /// Evaluations without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub standardize: bool,
    pub n_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Tarnet,
            hidden_sizes: vec![1024, 512, 256],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            alpha: 1e-3,
            base_weight: 1.0,
            batch_size: 1024,
            bag_size: 64,
            bag_mode: BagMode::Clustered,
            max_steps: 3000,
            warmup_steps: 600,
            eval_every: 500,
            patience: 5,
            seed: 0,
            standardize: true,
            n_points: DEFAULT_CURVE_POINTS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.warmup_steps > self.max_steps {
            return bad(format!(
                "warm-up steps {} exceed max steps {}",
                self.warmup_steps, self.max_steps
            ));
        }
        if self.max_steps == 0 {
            return bad("max steps must be positive".into());
        }
        if self.bag_size > self.batch_size {
            return bad(format!(
                "bag size {} exceeds batch size {}",
                self.bag_size, self.batch_size
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        if self.n_points < 2 {
            return bad("n_points must be at least 2".into());
        }
        self.adam().validate()?;
        self.mil_settings().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn mil_settings(&self) -> MilSettings {
        MilSettings {
            alpha: self.alpha,
            bag_size: self.bag_size,
            mode: self.bag_mode,
            base_weight: self.base_weight,
        }
    }

    /// Settings in force at `step` (1-based).
    pub fn settings_at(&self, step: usize) -> MilSettings {
        let mut s = self.mil_settings();
        if step <= self.warmup_steps {
            s.alpha = 0.0;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    /// Means over the steps since the previous evaluation.
    pub l_base: f64,
    pub l_mil: f64,
    pub l: f64,
    pub usable_bags: f64,
    pub valid_auuc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub history: Vec<HistoryEntry>,
    pub best_step: usize,
    pub best_valid_auuc: f64,
    pub test_auuc: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
    /// Batches lacking one arm entirely.
    pub single_arm_batches: usize,
    /// Post-warm-up steps in which no bag held both arms.
    pub zero_bag_steps: usize,
    pub wall_clock_s: f64,
}

impl TrainReport {
    /// JSON with the wall-clock field zeroed, for reproducibility comparisons.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wall_clock_s = 0.0;
        Ok(serde_json::to_string(&copy)?)
    }
}

/// Trained model, its report and its test-split uplift curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: UpliftModel,
    pub report: TrainReport,
    pub test_curve: UpliftCurve,
}

/// AUUC and uplift curve of `model`'s predicted uplift on `ds`.
pub fn evaluate(model: &UpliftModel, ds: &Dataset, n_points: usize) -> Result<(f64, UpliftCurve)> {
    let pred = model.predict(ds.features())?;
    let curve = uplift_curve(&pred.uplift, ds.outcome(), ds.treatment(), n_points)?;
    Ok((curve.auuc, curve))
}

#[derive(Default)]
struct Window {
    steps: usize,
    l_base: f64,
    l_mil: f64,
    l: f64,
    usable: f64,
}

impl Window {
    fn add(&mut self, loss: &LossBreakdown) {
        self.steps += 1;
        self.l_base += loss.l_base;
        self.l_mil += loss.l_mil;
        self.l += loss.l;
        self.usable += loss.usable_bags as f64;
    }

    fn entry(&self, step: usize, valid_auuc: f64) -> HistoryEntry {
        let n = self.steps.max(1) as f64;
        HistoryEntry {
            step,
            l_base: self.l_base / n,
            l_mil: self.l_mil / n,
            l: self.l / n,
            usable_bags: self.usable / n,
            valid_auuc,
        }
    }
}

fn describe_batch(indices: &[usize], loss: &LossBreakdown) -> String {
    let shown: Vec<String> = indices.iter().take(16).map(usize::to_string).collect();
    format!(
        "L_base={} L_mil={} alpha={} L={}; batch of {} rows starting [{}{}]",
        loss.l_base,
        loss.l_mil,
        loss.alpha,
        loss.l,
        indices.len(),
        shown.join(", "),
        if indices.len() > 16 { ", …" } else { "" }
    )
}

/// Trains one model on `splits.train`, early-stopping on `splits.valid` and
/// reporting on `splits.test`. The returned model is the best validation
/// checkpoint.
pub fn train(splits: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    for (name, ds) in [
        ("train", &splits.train),
        ("valid", &splits.valid),
        ("test", &splits.test),
    ] {
        if !ds.has_both_arms() {
            return Err(Error::InvalidConfig(format!(
                "{name} split lacks a treatment arm"
            )));
        }
    }
    let train = &splits.train;
    let mut model = UpliftModel::build(cfg.model, train.dim(), &cfg.hidden_sizes, cfg.seed)?;
    if cfg.standardize {
        model.set_scaler(Some(Standardizer::fit(train.features())))?;
    }
    let x_train = model.prepare_inputs(train.features())?;
    let mut optimizer = ModelOptimizer::new(&model, cfg.adam())?;
    let mut bag_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    bag_rng.set_stream(u64::MAX);

    let mut history = Vec::new();
    let mut window = Window::default();
    let mut best: Option<(f64, usize, UpliftModel)> = None;
    let mut since_improvement = 0;
    let (mut single_arm_batches, mut zero_bag_steps) = (0, 0);
    let mut stopped_early = false;
    let mut step = 0;
    let mut epoch = 0u64;

    'epochs: loop {
        let batches = minibatches(train, cfg.batch_size, cfg.seed, epoch)?;
        if batches.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "batch size {} exceeds the {} training rows",
                cfg.batch_size,
                train.len()
            )));
        }
        for batch in batches {
            step += 1;
            let x = x_train.gather_rows(&batch.indices);
            let treatment: Vec<u8> = batch
                .indices
                .iter()
                .map(|&i| train.treatment()[i])
                .collect();
            let outcome: Vec<u8> = batch.indices.iter().map(|&i| train.outcome()[i]).collect();
            let settings = cfg.settings_at(step);
            let out = combined_loss_and_grads(
                &model,
                BatchRef {
                    x: &x,
                    treatment: &treatment,
                    outcome: &outcome,
                },
                &settings,
                &mut bag_rng,
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss { diagnostic, .. } => Error::NonFiniteLoss {
                    step,
                    diagnostic: format!(
                        "{diagnostic}; batch of {} rows starting {:?}",
                        batch.indices.len(),
                        &batch.indices[..batch.indices.len().min(16)]
                    ),
                },
                other => other,
            })?;
            if !out.loss.l.is_finite() || out.grads.values().any(|g| !g.is_finite()) {
                let diagnostic = describe_batch(&batch.indices, &out.loss);
                log::error!("aborting at step {step}: {diagnostic}");
                return Err(Error::NonFiniteLoss { step, diagnostic });
            }
            single_arm_batches += out.loss.missing_arm as usize;
            if settings.alpha > 0.0 && out.loss.usable_bags == 0 {
                zero_bag_steps += 1;
            }
            optimizer.step(&mut model, &out.grads)?;
            window.add(&out.loss);

            if step % cfg.eval_every == 0 || step == cfg.max_steps {
                let (valid_auuc, _) = evaluate(&model, &splits.valid, cfg.n_points)?;
                history.push(window.entry(step, valid_auuc));
                window = Window::default();
                log::debug!("step {step}: valid AUUC {valid_auuc:.6}");
                if best.as_ref().map_or(true, |(b, _, _)| valid_auuc > *b) {
                    best = Some((valid_auuc, step, model.clone()));
                    since_improvement = 0;
                } else {
                    since_improvement += 1;
                    if since_improvement >= cfg.patience {
                        stopped_early = step < cfg.max_steps;
                        break 'epochs;
                    }
                }
            }
            if step == cfg.max_steps {
                break 'epochs;
            }
        }
        epoch += 1;
    }

    let (best_valid_auuc, best_step, best_model) = best.expect("at least one evaluation");
    let (test_auuc, test_curve) = evaluate(&best_model, &splits.test, cfg.n_points)?;
    let report = TrainReport {
        config: cfg.clone(),
        history,
        best_step,
        best_valid_auuc,
        test_auuc,
        steps_run: step,
        stopped_early,
        single_arm_batches,
        zero_bag_steps,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        model: best_model,
        report,
        test_curve,
    })
}

/// One seeded run of [`repeat_runs`].
#[derive(Debug)]
pub struct RunResult {
    pub seed: u64,
    pub outcome: Result<TrainOutcome>,
}

#[derive(Debug)]
pub struct RepeatOutcome {
    pub runs: Vec<RunResult>,
    /// Over completed runs' test AUUC; `None` if every run failed.
    pub aggregate: Option<RunAggregate>,
    pub failures: usize,
}

impl RepeatOutcome {
    pub fn test_auucs(&self) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|o| o.report.test_auuc))
            .collect()
    }
}

/// Trains with seeds `cfg.seed .. cfg.seed + n_runs` on up to `jobs` threads.
/// Results are ordered by seed and identical to sequential execution.
pub fn repeat_runs(
    splits: &Split,
    cfg: &TrainConfig,
    n_runs: usize,
    jobs: usize,
) -> Result<RepeatOutcome> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("need at least one run".into()));
    }
    cfg.validate()?;
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| cfg.seed + i).collect();
    let run_one = |seed: u64| {
        let run_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let outcome = train(splits, &run_cfg);
        if let Err(e) = &outcome {
            log::warn!("run with seed {seed} failed: {e}");
        }
        RunResult { seed, outcome }
    };
    let runs: Vec<RunResult> = if jobs <= 1 {
        seeds.into_iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        pool.install(|| seeds.into_par_iter().map(run_one).collect())
    };
    let failures = runs.iter().filter(|r| r.outcome.is_err()).count();
    let auucs: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|o| o.report.test_auuc))
        .collect();
    let aggregate = if auucs.is_empty() {
        None
    } else {
        Some(aggregate_runs(&auucs)?)
    };
    Ok(RepeatOutcome {
        runs,
        aggregate,
        failures,
    })
}

//! Uplift curves and AUUC.
//!
//! With separate ranking, treated and control rows are each sorted by score
//! (descending, ties by position). For targeting fraction `φ = k / n_points`
//! the top `⌈φ·N_T⌉` treated and top `⌈φ·N_C⌉` control rows are selected and
//!
//! ```text
//! g(φ) = φ · (positive rate of selected treated − positive rate of selected control)
//! AUUC = (1 / n_points) · Σ_k g(k / n_points)
//! ```
//!
//! `g(1)` is the empirical ATE, and scoring every row equally gives roughly
//! half of it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CURVE_POINTS: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    /// Each arm ranked on its own.
    #[default]
    Separate,
    /// One ranking over all rows; an arm with no selected rows counts as rate 0.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub phi: f64,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpliftCurve {
    pub points: Vec<CurvePoint>,
    pub auuc: f64,
}

fn check_inputs(scores: &[f64], outcome: &[u8], treatment: &[u8], n_points: usize) -> Result<()> {
    if scores.len() != outcome.len() || scores.len() != treatment.len() {
        return Err(Error::Shape(format!(
            "scores, outcome and treatment have lengths {}, {}, {}",
            scores.len(),
            outcome.len(),
            treatment.len()
        )));
    }
    if n_points < 2 {
        return Err(Error::UndefinedMetric(format!(
            "an uplift curve needs at least 2 points, got {n_points}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let treated = treatment.iter().filter(|&&t| t == 1).count();
    if treated == 0 || treated == treatment.len() {
        return Err(Error::UndefinedMetric(
            "uplift curve needs both treated and control rows".into(),
        ));
    }
    Ok(())
}

/// Positions sorted by score descending; equal scores keep position order.
fn rank_descending(scores: &[f64], rows: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut order: Vec<usize> = rows.collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// `cum[k]` = positives among the first `k` rows of `order`.
fn cumulative_positives(order: &[usize], outcome: &[u8]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(order.len() + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for &i in order {
        acc += outcome[i] as f64;
        cum.push(acc);
    }
    cum
}

/// `⌈k · n / n_points⌉` in integer arithmetic.
#[inline]
pub fn selected_count(k: usize, n: usize, n_points: usize) -> usize {
    (k * n).div_ceil(n_points)
}

#[inline]
fn rate(positives: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        positives / count as f64
    }
}

pub fn uplift_curve(
    scores: &[f64],
    outcome: &[u8],
    treatment: &[u8],
    n_points: usize,
) -> Result<UpliftCurve> {
    uplift_curve_with(scores, outcome, treatment, n_points, Ranking::Separate)
}

pub fn uplift_curve_with(
    scores: &[f64],
    outcome: &[u8],
    treatment: &[u8],
    n_points: usize,
    ranking: Ranking,
) -> Result<UpliftCurve> {
    check_inputs(scores, outcome, treatment, n_points)?;
    let mut points = Vec::with_capacity(n_points);
    match ranking {
        Ranking::Separate => {
            let treated = rank_descending(scores, (0..scores.len()).filter(|&i| treatment[i] == 1));
            let control = rank_descending(scores, (0..scores.len()).filter(|&i| treatment[i] != 1));
            let cum_t = cumulative_positives(&treated, outcome);
            let cum_c = cumulative_positives(&control, outcome);
            for k in 1..=n_points {
                let phi = k as f64 / n_points as f64;
                let m_t = selected_count(k, treated.len(), n_points);
                let m_c = selected_count(k, control.len(), n_points);
                let g = phi * (rate(cum_t[m_t], m_t) - rate(cum_c[m_c], m_c));
                points.push(CurvePoint { phi, g });
            }
        }
        Ranking::Joint => {
            let order = rank_descending(scores, 0..scores.len());
            let (mut pos_t, mut pos_c, mut n_t, mut n_c) = (vec![0.0], vec![0.0], vec![0], vec![0]);
            for &i in &order {
                let (dt, dc) = if treatment[i] == 1 { (1, 0) } else { (0, 1) };
                let y = outcome[i] as f64;
                pos_t.push(pos_t.last().unwrap() + if dt == 1 { y } else { 0.0 });
                pos_c.push(pos_c.last().unwrap() + if dc == 1 { y } else { 0.0 });
                n_t.push(n_t.last().unwrap() + dt);
                n_c.push(n_c.last().unwrap() + dc);
            }
            for k in 1..=n_points {
                let phi = k as f64 / n_points as f64;
                let m = selected_count(k, order.len(), n_points);
                let g = phi * (rate(pos_t[m], n_t[m]) - rate(pos_c[m], n_c[m]));
                points.push(CurvePoint { phi, g });
            }
        }
    }
    let auuc = points.iter().map(|p| p.g).sum::<f64>() / n_points as f64;
    Ok(UpliftCurve { points, auuc })
}

/// AUUC on the default 100-point grid.
pub fn auuc(scores: &[f64], outcome: &[u8], treatment: &[u8]) -> Result<f64> {
    Ok(uplift_curve(scores, outcome, treatment, DEFAULT_CURVE_POINTS)?.auuc)
}

/// Mean and sample standard deviation over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub values: Vec<f64>,
    pub mean: f64,
    /// `n − 1` denominator; 0 for a single run.
    pub std: f64,
    pub single_run: bool,
}

impl RunAggregate {
    /// `mean±std` scaled by 10³, three decimals.
    pub fn display_milli(&self) -> String {
        format!("{:.3}±{:.3}", self.mean * 1e3, self.std * 1e3)
    }
}

pub fn aggregate_runs(values: &[f64]) -> Result<RunAggregate> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("no runs to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RunAggregate {
        values: values.to_vec(),
        mean,
        std,
        single_run: values.len() == 1,
    })
}

/// Writes `phi,g` rows with 17 significant digits.
pub fn export_curve(curve: &UpliftCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if curve.points.len() < 2 {
        return Err(Error::UndefinedMetric(
            "curve has fewer than 2 points".into(),
        ));
    }
    let mut text = String::from("phi,g\n");
    for p in &curve.points {
        text.push_str(&format!("{:.16e},{:.16e}\n", p.phi, p.g));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_curve`]; the AUUC is recomputed from the points.
pub fn import_curve(path: impl AsRef<Path>) -> Result<UpliftCurve> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["phi", "g"] {
        return Err(Error::Parse {
            row: 0,
            message: format!("expected header phi,g, got {}", header.join(",")),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    row: i + 1,
                    message: "malformed curve row".into(),
                })
        };
        points.push(CurvePoint {
            phi: parse(0)?,
            g: parse(1)?,
        });
    }
    let auuc = points.iter().map(|p| p.g).sum::<f64>() / points.len().max(1) as f64;
    Ok(UpliftCurve { points, auuc })
}

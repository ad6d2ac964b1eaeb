//! Datasets of (features, treatment, outcome), delimited-text ingestion,
//! stratified splitting, mini-batching and a synthetic randomized experiment.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Matrix;

/// Features plus binary treatment and outcome per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    feature_names: Vec<String>,
    treatment: Vec<u8>,
    outcome: Vec<u8>,
    true_ite: Option<Vec<f64>>,
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::Parse {
            row: i + 1,
            message: format!("{what} value {} is not 0 or 1", values[i]),
        }),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(
        features: Matrix,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        true_ite: Option<Vec<f64>>,
    ) -> Result<Self> {
        let names = (0..features.cols()).map(|j| format!("f{j}")).collect();
        Self::with_names(features, names, treatment, outcome, true_ite)
    }

    pub fn with_names(
        features: Matrix,
        feature_names: Vec<String>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        true_ite: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = features.rows();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows but {} treatment and {} outcome values",
                treatment.len(),
                outcome.len()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Shape(
                "feature name count differs from column count".into(),
            ));
        }
        check_binary(&treatment, "treatment")?;
        check_binary(&outcome, "outcome")?;
        if let Some(ite) = &true_ite {
            if ite.len() != n {
                return Err(Error::Shape(
                    "true_ite length differs from row count".into(),
                ));
            }
            if let Some(i) = ite.iter().position(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("true_ite {} outside [-1, 1]", ite[i]),
                });
            }
        }
        Ok(Dataset {
            features,
            feature_names,
            treatment,
            outcome,
            true_ite,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn true_ite(&self) -> Option<&[f64]> {
        self.true_ite.as_deref()
    }

    /// `(treated, control)` row counts.
    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.treatment.iter().filter(|&&t| t == 1).count();
        (treated, self.len() - treated)
    }

    pub fn has_both_arms(&self) -> bool {
        let (t, c) = self.arm_counts();
        t > 0 && c > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.gather_rows(indices),
            feature_names: self.feature_names.clone(),
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcome: indices.iter().map(|&i| self.outcome[i]).collect(),
            true_ite: self
                .true_ite
                .as_ref()
                .map(|ite| indices.iter().map(|&i| ite[i]).collect()),
        }
    }

    /// Returns the same rows with features replaced by `features`.
    pub fn with_features(&self, features: Matrix) -> Result<Dataset> {
        if features.rows() != self.len() || features.cols() != self.dim() {
            return Err(Error::Shape(
                "replacement features have a different shape".into(),
            ));
        }
        Ok(Dataset {
            features,
            ..self.clone()
        })
    }
}

/// Difference of response rates, `mean(Y | T=1) - mean(Y | T=0)`.
pub fn empirical_ate(ds: &Dataset) -> Result<f64> {
    let (rate_t, rate_c, _, _) = arm_rates(ds)?;
    Ok(rate_t - rate_c)
}

/// Two-sample standard error of [`empirical_ate`].
pub fn ate_standard_error(ds: &Dataset) -> Result<f64> {
    let (rate_t, rate_c, n_t, n_c) = arm_rates(ds)?;
    Ok((rate_t * (1.0 - rate_t) / n_t as f64 + rate_c * (1.0 - rate_c) / n_c as f64).sqrt())
}

fn arm_rates(ds: &Dataset) -> Result<(f64, f64, usize, usize)> {
    let (mut pos_t, mut pos_c, mut n_t, mut n_c) = (0.0, 0.0, 0usize, 0usize);
    for (&t, &y) in ds.treatment.iter().zip(&ds.outcome) {
        if t == 1 {
            n_t += 1;
            pos_t += y as f64;
        } else {
            n_c += 1;
            pos_c += y as f64;
        }
    }
    if n_t == 0 || n_c == 0 {
        return Err(Error::UndefinedAte(format!(
            "{n_t} treated and {n_c} control rows"
        )));
    }
    Ok((pos_t / n_t as f64, pos_c / n_c as f64, n_t, n_c))
}

// ---------------------------------------------------------------------------
// Delimited text
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureColumns {
    /// Every column that is not the treatment, outcome or ground-truth column.
    AllRemaining,
    Named(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub features: FeatureColumns,
    pub treatment: String,
    pub outcome: String,
    /// Optional ground-truth ITE column; read when present in the header.
    pub true_ite: Option<String>,
    pub delimiter: u8,
}

impl Default for TableSchema {
    fn default() -> Self {
        TableSchema {
            features: FeatureColumns::AllRemaining,
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            true_ite: Some("true_ite".into()),
            delimiter: b',',
        }
    }
}

fn parse_binary(field: &str, row: usize, column: &str) -> Result<u8> {
    match field.trim() {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        other => Err(Error::Parse {
            row,
            message: format!("column `{column}` has non-binary value `{other}`"),
        }),
    }
}

fn parse_real(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{column}` has non-numeric value `{field}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column `{column}` has non-finite value `{field}`"),
        });
    }
    Ok(v)
}

/// Reads a header-first delimited file. Row numbers in errors count data rows from 1.
pub fn load_table(path: impl AsRef<Path>, schema: &TableSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let t_col = find(&schema.treatment)?;
    let y_col = find(&schema.outcome)?;
    let ite_col = schema
        .true_ite
        .as_deref()
        .and_then(|name| header.iter().position(|h| h == name));
    let feature_cols: Vec<usize> = match &schema.features {
        FeatureColumns::AllRemaining => (0..header.len())
            .filter(|&j| j != t_col && j != y_col && Some(j) != ite_col)
            .collect(),
        FeatureColumns::Named(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
    };
    if feature_cols.is_empty() {
        return Err(Error::InvalidConfig(
            "schema selects no feature columns".into(),
        ));
    }

    let mut values = Vec::new();
    let (mut treatment, mut outcome, mut ite) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |j: usize| record.get(j).unwrap_or("");
        for &j in &feature_cols {
            values.push(parse_real(field(j), row, &header[j])?);
        }
        treatment.push(parse_binary(field(t_col), row, &header[t_col])?);
        outcome.push(parse_binary(field(y_col), row, &header[y_col])?);
        if let Some(j) = ite_col {
            ite.push(parse_real(field(j), row, &header[j])?);
        }
    }
    let n = treatment.len();
    log::info!(
        "loaded {n} rows, {} features from {}",
        feature_cols.len(),
        path.display()
    );
    let features = Matrix::from_vec(n, feature_cols.len(), values)?;
    let names = feature_cols.iter().map(|&j| header[j].clone()).collect();
    Dataset::with_names(features, names, treatment, outcome, ite_col.map(|_| ite))
}

/// Writes `ds` with a header row; ground truth, when present, goes in a trailing `true_ite` column.
pub fn write_table(ds: &Dataset, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(file);
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.extend(["treatment", "outcome"]);
    if ds.true_ite.is_some() {
        header.push("true_ite");
    }
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        record.clear();
        record.extend(ds.features.row(i).iter().map(|v| v.to_string()));
        record.push(ds.treatment[i].to_string());
        record.push(ds.outcome[i].to_string());
        if let Some(ite) = &ds.true_ite {
            record.push(ite[i].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splitting and batching
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    /// Source row indices of train, valid and test.
    pub indices: [Vec<usize>; 3],
    pub stratified: bool,
}

/// Deals `order` into three parts, always giving the next row to the part
/// furthest behind its quota. Final sizes are within one row of `fraction * n`.
fn apportion(order: &[usize], fractions: [f64; 3], parts: &mut [Vec<usize>; 3]) {
    let mut counts = [0usize; 3];
    for (pos, &row) in order.iter().enumerate() {
        let target = (pos + 1) as f64;
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for s in 0..3 {
            let deficit = fractions[s] * target - counts[s] as f64;
            if deficit > best_deficit + 1e-9 {
                best = s;
                best_deficit = deficit;
            }
        }
        counts[best] += 1;
        parts[best].push(row);
    }
}

/// Train/validation/test split stratified on the four (treatment, outcome) cells.
///
/// Falls back to an unstratified split, with a warning, when some cell has
/// fewer rows than there are splits.
pub fn split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|&f| f.is_nan() || f <= 0.0)
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: [Vec<usize>; 4] = Default::default();
    for i in 0..ds.len() {
        cells[(ds.treatment[i] * 2 + ds.outcome[i]) as usize].push(i);
    }
    let stratified = cells.iter().all(|c| c.len() >= 3);
    let order: Vec<usize> = if stratified {
        cells
            .iter_mut()
            .flat_map(|cell| {
                cell.shuffle(&mut rng);
                cell.iter().copied()
            })
            .collect()
    } else {
        log::warn!(
            "stratification disabled: (t,y) cell sizes {:?} include a cell with fewer than 3 rows",
            cells.iter().map(Vec::len).collect::<Vec<_>>()
        );
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        all
    };
    // A single global pass keeps totals exact while consecutive cells stay proportional.
    let mut parts: [Vec<usize>; 3] = Default::default();
    apportion(&order, fractions, &mut parts);
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(Split {
        train: ds.subset(&parts[0]),
        valid: ds.subset(&parts[1]),
        test: ds.subset(&parts[2]),
        indices: parts,
        stratified,
    })
}

/// Row indices of one mini-batch and its treated fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
    /// `u_t`: treated rows divided by batch size.
    pub treated_fraction: f64,
}

/// Shuffles rows with a stream keyed by `(seed, epoch)` and cuts full batches;
/// the trailing short batch is dropped.
pub fn minibatches(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<MiniBatch>> {
    if batch_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    if batch_size > ds.len() {
        log::warn!(
            "batch size {batch_size} exceeds the {} available rows; no batches produced",
            ds.len()
        );
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks_exact(batch_size)
        .map(|chunk| {
            let treated = chunk.iter().filter(|&&i| ds.treatment[i] == 1).count();
            MiniBatch {
                indices: chunk.to_vec(),
                treated_fraction: treated as f64 / batch_size as f64,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-column affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get unit scale.
    pub fn fit(x: &Matrix) -> Standardizer {
        let (n, d) = (x.rows(), x.cols());
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Synthetic randomized experiment
// ---------------------------------------------------------------------------

/// Generator settings. Column 0 drives the control response, column 1 the
/// treatment effect, remaining columns are noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub base_rate: f64,
    pub slope: f64,
    pub tau_max: f64,
    pub treated_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 50_000,
            d: 6,
            base_rate: 0.10,
            slope: 0.02,
            tau_max: 0.06,
            treated_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn control_rate(&self, x: &[f64]) -> f64 {
        self.base_rate + self.slope * x[0]
    }

    pub fn ite(&self, x: &[f64]) -> f64 {
        self.tau_max * (2.0 * (x[1] - 0.5)).max(0.0)
    }

    /// Population mean of the ITE under uniform features.
    pub fn mean_ite(&self) -> f64 {
        self.tau_max / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("synthetic dataset needs n >= 1".into());
        }
        if self.d < 3 {
            return bad(format!("synthetic dataset needs d >= 3, got {}", self.d));
        }
        if !(0.0..=1.0).contains(&self.treated_fraction) {
            return bad(format!(
                "treated fraction {} outside [0, 1]",
                self.treated_fraction
            ));
        }
        if !(-1.0..=1.0).contains(&self.tau_max) {
            return bad(format!("tau_max {} outside [-1, 1]", self.tau_max));
        }
        let pc_lo = self.base_rate + self.slope.min(0.0);
        let pc_hi = self.base_rate + self.slope.max(0.0);
        let pt_lo = pc_lo + self.tau_max.min(0.0);
        let pt_hi = pc_hi + self.tau_max.max(0.0);
        let probs = [pc_lo, pc_hi, pt_lo, pt_hi];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!(
                "response probabilities span [{}, {}], outside [0, 1]",
                pc_lo.min(pt_lo),
                pc_hi.max(pt_hi)
            ));
        }
        Ok(())
    }
}

/// Draws a randomized experiment with known individual effects.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = Vec::with_capacity(cfg.n * cfg.d);
    let mut treatment = Vec::with_capacity(cfg.n);
    let mut outcome = Vec::with_capacity(cfg.n);
    let mut ite = Vec::with_capacity(cfg.n);
    let mut row = vec![0.0; cfg.d];
    for _ in 0..cfg.n {
        for v in row.iter_mut() {
            *v = rng.gen::<f64>();
        }
        let tau = cfg.ite(&row);
        let t = rng.gen_bool(cfg.treated_fraction) as u8;
        let p = cfg.control_rate(&row) + if t == 1 { tau } else { 0.0 };
        let y = (rng.gen::<f64>() < p) as u8;
        values.extend_from_slice(&row);
        treatment.push(t);
        outcome.push(y);
        ite.push(tau);
    }
    Dataset::new(
        Matrix::from_vec(cfg.n, cfg.d, values)?,
        treatment,
        outcome,
        Some(ite),
    )
}

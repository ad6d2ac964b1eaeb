//! Bag-level ATE regularization.
//!
//! Each mini-batch is sorted by predicted uplift and cut into equal-sized bags
//! of adjacent instances. Per bag, an inverse-propensity weighted ATE label is
//! built from observed outcomes and matched against the same weighted sum of
//! factual-arm predictions:
//!
//! ```text
//! y_bag = Σ_{i∈T} y_i / u_t − Σ_{j∈C} y_j / (1 − u_t)
//! h_bag = Σ_{i∈T} p_t,i / u_t − Σ_{j∈C} p_c,j / (1 − u_t)
//! L_mil = Σ_k (y_bag,k − h_bag,k)²
//! L     = L_base + α · L_mil
//! ```
//!
//! `u_t` is the treated fraction of the whole mini-batch. Bags holding a
//! single arm carry no label and are skipped.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{base_logit_grads, ModelGrads, UpliftModel};
use crate::nncore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagMode {
    /// Adjacent instances in predicted-uplift order.
    Clustered,
    /// Uniformly shuffled instances.
    Random,
}

impl std::fmt::Display for BagMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BagMode::Clustered => "clustered",
            BagMode::Random => "random",
        })
    }
}

impl std::str::FromStr for BagMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clustered" => Ok(BagMode::Clustered),
            "random" => Ok(BagMode::Random),
            other => Err(Error::InvalidConfig(format!("unknown bag mode `{other}`"))),
        }
    }
}

/// Disjoint, equal-sized bags over mini-batch positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagPartition {
    pub bags: Vec<Vec<usize>>,
    pub bag_size: usize,
    pub mode: BagMode,
}

/// Groups batch positions into bags of `bag_size`; the trailing
/// `len % bag_size` positions belong to no bag.
///
/// Clustered mode sorts ascending by predicted uplift with ties kept in
/// position order. `rng` is only drawn from in random mode.
pub fn cluster_bags<R: Rng + ?Sized>(
    uplift: &[f64],
    bag_size: usize,
    mode: BagMode,
    rng: &mut R,
) -> Result<BagPartition> {
    if bag_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "bag size must be at least 2, got {bag_size}"
        )));
    }
    if let Some(i) = uplift.iter().position(|u| !u.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "non-finite uplift at position {i}"
        )));
    }
    if bag_size > uplift.len() {
        log::warn!(
            "bag size {bag_size} exceeds batch size {}; no bags formed",
            uplift.len()
        );
    }
    let mut order: Vec<usize> = (0..uplift.len()).collect();
    match mode {
        BagMode::Clustered => order.sort_by(|&a, &b| uplift[a].total_cmp(&uplift[b])),
        BagMode::Random => order.shuffle(rng),
    }
    Ok(BagPartition {
        bags: order
            .chunks_exact(bag_size)
            .map(<[usize]>::to_vec)
            .collect(),
        bag_size,
        mode,
    })
}

/// Label and prediction of one bag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagStats {
    pub y_bag: f64,
    pub h_bag: f64,
    pub n_treated: usize,
    pub n_control: usize,
    /// Both arms present; otherwise `y_bag` and `h_bag` are meaningless zeros.
    pub usable: bool,
}

fn arm_counts(treatment: &[u8], bag: &[usize]) -> Result<(usize, usize)> {
    let mut n_t = 0;
    for &i in bag {
        match treatment.get(i) {
            Some(1) => n_t += 1,
            Some(_) => {}
            None => return Err(Error::Shape(format!("bag index {i} outside the batch"))),
        }
    }
    Ok((n_t, bag.len() - n_t))
}

fn check_ratio(treated_fraction: f64) -> Result<()> {
    if treated_fraction > 0.0 && treated_fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "treated fraction {treated_fraction} must lie in (0, 1) for a two-arm bag"
        )))
    }
}

/// Weighted sum of `treated` values over treated members minus the weighted
/// sum of `control` values over control members.
fn weighted_difference(
    treated: impl Fn(usize) -> f64,
    control: impl Fn(usize) -> f64,
    treatment: &[u8],
    bag: &[usize],
    treated_fraction: f64,
) -> f64 {
    let (mut sum_t, mut sum_c) = (0.0, 0.0);
    for &i in bag {
        if treatment[i] == 1 {
            sum_t += treated(i);
        } else {
            sum_c += control(i);
        }
    }
    sum_t / treated_fraction - sum_c / (1.0 - treated_fraction)
}

/// Bag ATE label from observed outcomes.
pub fn bag_label(
    outcome: &[u8],
    treatment: &[u8],
    bag: &[usize],
    treated_fraction: f64,
) -> Result<BagStats> {
    let (n_treated, n_control) = arm_counts(treatment, bag)?;
    if outcome.len() != treatment.len() {
        return Err(Error::Shape("outcome and treatment lengths differ".into()));
    }
    let usable = n_treated > 0 && n_control > 0;
    let y_bag = if usable {
        check_ratio(treated_fraction)?;
        let y = |i: usize| outcome[i] as f64;
        weighted_difference(y, y, treatment, bag, treated_fraction)
    } else {
        0.0
    };
    Ok(BagStats {
        y_bag,
        h_bag: 0.0,
        n_treated,
        n_control,
        usable,
    })
}

/// Bag ATE prediction: each member contributes its factual arm's probability.
pub fn bag_prediction(
    p_t: &[f64],
    p_c: &[f64],
    treatment: &[u8],
    bag: &[usize],
    treated_fraction: f64,
) -> Result<BagStats> {
    let (n_treated, n_control) = arm_counts(treatment, bag)?;
    if p_t.len() != treatment.len() || p_c.len() != treatment.len() {
        return Err(Error::Shape(
            "prediction and treatment lengths differ".into(),
        ));
    }
    let usable = n_treated > 0 && n_control > 0;
    let h_bag = if usable {
        check_ratio(treated_fraction)?;
        weighted_difference(|i| p_t[i], |j| p_c[j], treatment, bag, treated_fraction)
    } else {
        0.0
    };
    Ok(BagStats {
        y_bag: 0.0,
        h_bag,
        n_treated,
        n_control,
        usable,
    })
}

/// Label and prediction for every bag of `partition`.
pub fn bag_stats(
    partition: &BagPartition,
    outcome: &[u8],
    treatment: &[u8],
    p_t: &[f64],
    p_c: &[f64],
    treated_fraction: f64,
) -> Result<Vec<BagStats>> {
    partition
        .bags
        .iter()
        .map(|bag| {
            let label = bag_label(outcome, treatment, bag, treated_fraction)?;
            let pred = bag_prediction(p_t, p_c, treatment, bag, treated_fraction)?;
            Ok(BagStats {
                h_bag: pred.h_bag,
                ..label
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilLoss {
    /// Sum of squared residuals over usable bags.
    pub value: f64,
    /// `y_bag − h_bag` per bag, 0 for unusable bags.
    pub residuals: Vec<f64>,
    pub usable_bags: usize,
}

pub fn mil_loss(stats: &[BagStats]) -> MilLoss {
    let residuals: Vec<f64> = stats
        .iter()
        .map(|s| if s.usable { s.y_bag - s.h_bag } else { 0.0 })
        .collect();
    let usable_bags = stats.iter().filter(|s| s.usable).count();
    if usable_bags == 0 && !stats.is_empty() {
        log::debug!("no bag holds both arms; bag loss is zero");
    }
    MilLoss {
        value: residuals.iter().map(|r| r * r).sum(),
        residuals,
        usable_bags,
    }
}

/// Loss terms of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_base: f64,
    pub l_mil: f64,
    pub alpha: f64,
    /// Weight on `l_base`; 1 except in the bag-loss-only ablation.
    pub base_weight: f64,
    /// `base_weight · l_base + alpha · l_mil`.
    pub l: f64,
    pub usable_bags: usize,
    /// The batch lacked one arm entirely.
    pub missing_arm: bool,
}

/// Loss settings for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilSettings {
    pub alpha: f64,
    pub bag_size: usize,
    pub mode: BagMode,
    pub base_weight: f64,
}

impl MilSettings {
    pub fn base_only() -> Self {
        MilSettings {
            alpha: 0.0,
            bag_size: 2,
            mode: BagMode::Clustered,
            base_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.base_weight >= 0.0 && self.base_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "base loss weight must be >= 0, got {}",
                self.base_weight
            )));
        }
        if self.bag_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "bag size must be at least 2, got {}",
                self.bag_size
            )));
        }
        Ok(())
    }

    fn uses_bags(&self) -> bool {
        self.alpha > 0.0
    }
}

/// Inputs of one step: prepared features and the rows' labels.
#[derive(Clone, Copy, Debug)]
pub struct BatchRef<'a> {
    pub x: &'a Matrix,
    pub treatment: &'a [u8],
    pub outcome: &'a [u8],
}

impl BatchRef<'_> {
    pub fn treated_fraction(&self) -> f64 {
        let treated = self.treatment.iter().filter(|&&t| t == 1).count();
        treated as f64 / self.treatment.len().max(1) as f64
    }
}

/// Result of a combined step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: LossBreakdown,
    pub grads: ModelGrads,
    /// Bags used for the bag loss; `None` when `alpha == 0`.
    pub partition: Option<BagPartition>,
}

/// Predicts, forms bags from the current uplifts, and differentiates
/// `base_weight · L_base + α · L_mil`. The bag assignment is held fixed while
/// differentiating. With `alpha == 0` no bags are formed and `rng` is untouched.
pub fn combined_loss_and_grads<R: Rng + ?Sized>(
    model: &UpliftModel,
    batch: BatchRef<'_>,
    settings: &MilSettings,
    rng: &mut R,
) -> Result<StepOutput> {
    settings.validate()?;
    let fwd = model.forward(batch.x)?;
    check_finite(&fwd)?;
    let partition = if settings.uses_bags() {
        Some(cluster_bags(
            &fwd.uplift(),
            settings.bag_size,
            settings.mode,
            rng,
        )?)
    } else {
        None
    };
    let (loss, grads) =
        loss_and_grads_from_forward(model, &fwd, batch, settings, partition.as_ref())?;
    Ok(StepOutput {
        loss,
        grads,
        partition,
    })
}

/// [`combined_loss_and_grads`] with a caller-supplied bag assignment.
pub fn combined_loss_with_bags(
    model: &UpliftModel,
    batch: BatchRef<'_>,
    settings: &MilSettings,
    partition: &BagPartition,
) -> Result<(LossBreakdown, ModelGrads)> {
    settings.validate()?;
    let fwd = model.forward(batch.x)?;
    check_finite(&fwd)?;
    loss_and_grads_from_forward(model, &fwd, batch, settings, Some(partition))
}

fn check_finite(fwd: &crate::models::ModelForward) -> Result<()> {
    let bad = fwd
        .z_t
        .iter()
        .chain(&fwd.z_c)
        .filter(|z| !z.is_finite())
        .count();
    if bad > 0 {
        return Err(Error::NonFiniteLoss {
            step: 0,
            diagnostic: format!("{bad} non-finite logits in the forward pass"),
        });
    }
    Ok(())
}

fn loss_and_grads_from_forward(
    model: &UpliftModel,
    fwd: &crate::models::ModelForward,
    batch: BatchRef<'_>,
    settings: &MilSettings,
    partition: Option<&BagPartition>,
) -> Result<(LossBreakdown, ModelGrads)> {
    let (base, mut dz_t, mut dz_c) = base_logit_grads(fwd, batch.treatment, batch.outcome)?;
    if settings.base_weight != 1.0 {
        dz_t.iter_mut()
            .chain(dz_c.iter_mut())
            .for_each(|g| *g *= settings.base_weight);
    }
    let mut l_mil = 0.0;
    let mut usable_bags = 0;
    if let (true, Some(partition)) = (settings.uses_bags(), partition) {
        let u_t = batch.treated_fraction();
        let stats = bag_stats(
            partition,
            batch.outcome,
            batch.treatment,
            &fwd.p_t,
            &fwd.p_c,
            u_t,
        )?;
        let mil = mil_loss(&stats);
        l_mil = mil.value;
        usable_bags = mil.usable_bags;
        for ((bag, s), r) in partition.bags.iter().zip(&stats).zip(&mil.residuals) {
            if !s.usable {
                continue;
            }
            // ∂(y − h)²/∂h = −2r; ∂h/∂p_t = 1/u_t, ∂h/∂p_c = −1/(1 − u_t)
            let on_treated = settings.alpha * (-2.0 * r) / u_t;
            let on_control = settings.alpha * (2.0 * r) / (1.0 - u_t);
            for &i in bag {
                if batch.treatment[i] == 1 {
                    dz_t[i] += on_treated * fwd.p_t[i] * (1.0 - fwd.p_t[i]);
                } else {
                    dz_c[i] += on_control * fwd.p_c[i] * (1.0 - fwd.p_c[i]);
                }
            }
        }
    }
    let grads = model.backward(fwd, &dz_t, &dz_c)?;
    let loss = LossBreakdown {
        l_base: base.total,
        l_mil,
        alpha: settings.alpha,
        base_weight: settings.base_weight,
        l: settings.base_weight * base.total + settings.alpha * l_mil,
        usable_bags,
        missing_arm: base.missing_arm,
    };
    Ok((loss, grads))
}

/// Unweighted bag-sum form of the noise identity:
/// `Σ_bags (Σ_j (y + ε) − Σ_j y)²` and `Σ_bags (Σ_j ε)²`.
pub fn variance_identity_check(
    labels: &[f64],
    noise: &[f64],
    partition: &BagPartition,
) -> Result<(f64, f64)> {
    if labels.len() != noise.len() {
        return Err(Error::Shape("labels and noise differ in length".into()));
    }
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for bag in &partition.bags {
        if let Some(&i) = bag.iter().find(|&&i| i >= labels.len()) {
            return Err(Error::Shape(format!("bag index {i} outside the data")));
        }
        let noisy: f64 = bag.iter().map(|&i| labels[i] + noise[i]).sum();
        let clean: f64 = bag.iter().map(|&i| labels[i]).sum();
        let eps: f64 = bag.iter().map(|&i| noise[i]).sum();
        lhs += (noisy - clean).powi(2);
        rhs += eps * eps;
    }
    Ok((lhs, rhs))
}

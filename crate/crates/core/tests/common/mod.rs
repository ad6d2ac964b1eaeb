//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use milift_core::data::Standardizer;
use milift_core::mil::{combined_loss_with_bags, BagPartition, BatchRef, MilSettings};
use milift_core::models::{base_loss_and_grads, ModelOptimizer, UpliftModel};
use milift_core::nncore::Matrix;
use milift_core::{cluster_bags, BagMode, ModelKind};
use milift_core::{minibatches, Split, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Mean negative log-likelihood of the selected rows, straight from the definition.
fn arm_nll(p: &[f64], y: &[u8], keep: impl Fn(usize) -> bool) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for i in 0..p.len() {
        if keep(i) {
            let q = p[i].clamp(1e-7, 1.0 - 1e-7);
            total -= if y[i] == 1 { q.ln() } else { (1.0 - q).ln() };
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// `base_weight · L_base + alpha · Σ_bags (y_bag − h_bag)²` written out directly.
pub fn reference_loss(
    p_t: &[f64],
    p_c: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    alpha: f64,
    base_weight: f64,
    bags: Option<&BagPartition>,
) -> f64 {
    let base =
        arm_nll(p_t, outcome, |i| treatment[i] == 1) + arm_nll(p_c, outcome, |i| treatment[i] == 0);
    let mut mil = 0.0;
    if let Some(bags) = bags {
        let u = treatment.iter().filter(|&&t| t == 1).count() as f64 / treatment.len() as f64;
        for bag in &bags.bags {
            let nt = bag.iter().filter(|&&i| treatment[i] == 1).count();
            if nt == 0 || nt == bag.len() {
                continue;
            }
            let mut y_bag = 0.0;
            let mut h_bag = 0.0;
            for &i in bag {
                if treatment[i] == 1 {
                    y_bag += outcome[i] as f64 / u;
                    h_bag += p_t[i] / u;
                } else {
                    y_bag -= outcome[i] as f64 / (1.0 - u);
                    h_bag -= p_c[i] / (1.0 - u);
                }
            }
            mil += (y_bag - h_bag).powi(2);
        }
    }
    base_weight * base + alpha * mil
}

/// Central differences of `loss` over every parameter of `model`, in the
/// same order as `ModelGrads::values`.
pub fn finite_difference(model: &UpliftModel, loss: impl Fn(&UpliftModel) -> f64) -> Vec<f64> {
    let mut probe = model.clone();
    let mut out = Vec::new();
    for k in 0..model.networks().len() {
        for l in 0..model.networks()[k].layers().len() {
            for part in 0..2 {
                let len = {
                    let layer = &model.networks()[k].layers()[l];
                    if part == 0 {
                        layer.weights.as_slice().len()
                    } else {
                        layer.bias.len()
                    }
                };
                for idx in 0..len {
                    let mut eval = |delta: f64| {
                        let layer = &mut probe.networks_mut()[k].layers_mut()[l];
                        let slot = if part == 0 {
                            &mut layer.weights.as_mut_slice()[idx]
                        } else {
                            &mut layer.bias[idx]
                        };
                        let orig = *slot;
                        *slot = orig + delta;
                        let v = loss(&probe);
                        let layer = &mut probe.networks_mut()[k].layers_mut()[l];
                        if part == 0 {
                            layer.weights.as_mut_slice()[idx] = orig;
                        } else {
                            layer.bias[idx] = orig;
                        }
                        v
                    };
                    let plus = eval(FD_STEP);
                    let minus = eval(-FD_STEP);
                    out.push((plus - minus) / (2.0 * FD_STEP));
                }
            }
        }
    }
    out
}

/// Worst relative error between analytic and numeric gradients.
pub fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    if std::env::var("FD_DEBUG").is_ok() {
        for (i, (a, b)) in analytic.iter().zip(numeric).enumerate() {
            if relative_error(*a, *b) > FD_TOLERANCE {
                eprintln!("param {i}: analytic {a:e} numeric {b:e}");
            }
        }
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Balanced-ish random labels with both arms present.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> (Vec<u8>, Vec<u8>) {
    loop {
        let t: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.5) as u8).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        let nt = t.iter().filter(|&&v| v == 1).count();
        if nt > 0 && nt < n {
            return (t, y);
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// AUUC by materializing every selection: a row is selected at grid point
/// `k` when fewer than `⌈k·N_arm/n_points⌉` rows of its arm outrank it.
pub fn brute_force_auuc(scores: &[f64], outcome: &[u8], treatment: &[u8], n_points: usize) -> f64 {
    let n = scores.len();
    let outranks = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    let mut total = 0.0;
    for k in 1..=n_points {
        let phi = k as f64 / n_points as f64;
        let mut rates = [0.0; 2];
        for (slot, arm) in [(0usize, 1u8), (1, 0)] {
            let members: Vec<usize> = (0..n).filter(|&i| treatment[i] == arm).collect();
            let take = (k * members.len()).div_ceil(n_points);
            let selected: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| members.iter().filter(|&&j| outranks(j, i)).count() < take)
                .collect();
            assert_eq!(selected.len(), take);
            let positives: f64 = selected.iter().map(|&i| outcome[i] as f64).sum();
            rates[slot] = positives / take as f64;
        }
        total += phi * (rates[0] - rates[1]);
    }
    total / n_points as f64
}

/// Random nonzero biases. Zero biases put a ReLU exactly on its kink
/// whenever the layer below is fully inactive, where central differences
/// do not estimate the derivative.
pub fn jitter_biases(net: &mut milift_core::nncore::Network, rng: &mut ChaCha8Rng) {
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.2..0.2);
        }
    }
}

pub fn jitter_model(model: &mut UpliftModel, rng: &mut ChaCha8Rng) {
    for net in model.networks_mut() {
        jitter_biases(net, rng);
    }
}

/// Worst relative gradient error of one seeded combined-loss case with
/// frozen clustered bags.
pub fn combined_gradient_error(kind: ModelKind, case: u64) -> f64 {
    let mut rng = rng(1000 + case);
    let d = rng.gen_range(2..=5);
    let n = 16;
    let hidden = [rng.gen_range(3..=8), rng.gen_range(2..=8)];
    let mut model = UpliftModel::build(kind, d, &hidden, case).unwrap();
    jitter_model(&mut model, &mut rng);
    let x = random_matrix(&mut rng, n, d);
    let (t, y) = random_labels(&mut rng, n);
    let settings = MilSettings {
        alpha: rng.gen_range(0.01..0.5),
        bag_size: 4,
        mode: BagMode::Clustered,
        base_weight: 1.0,
    };
    let fwd = model.forward(&x).unwrap();
    let bags = cluster_bags(&fwd.uplift(), 4, BagMode::Clustered, &mut rng).unwrap();
    let batch = BatchRef {
        x: &x,
        treatment: &t,
        outcome: &y,
    };
    let (_, grads) = combined_loss_with_bags(&model, batch, &settings, &bags).unwrap();
    // DDR's treatment input is a constant: hold it at the unperturbed control prediction.
    let feed = fwd.p_c.clone();
    let numeric = finite_difference(&model, |m| {
        let f = m.forward_with_feed(&x, Some(&feed)).unwrap();
        reference_loss(&f.p_t, &f.p_c, &t, &y, settings.alpha, 1.0, Some(&bags))
    });
    worst_relative_error(&grads.values().collect::<Vec<_>>(), &numeric)
}

pub fn model_bits(model: &UpliftModel) -> Vec<u64> {
    model
        .networks()
        .iter()
        .flat_map(|n| n.layers().iter())
        .flat_map(|l| {
            l.weights
                .as_slice()
                .iter()
                .chain(&l.bias)
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Trains with nothing but the factual-arm loss: a plain Adam loop over the same batch schedule.
pub fn base_only_reference(sp: &Split, cfg: &TrainConfig) -> UpliftModel {
    let train = &sp.train;
    let mut model =
        UpliftModel::build(cfg.model, train.dim(), &cfg.hidden_sizes, cfg.seed).unwrap();
    model
        .set_scaler(Some(Standardizer::fit(train.features())))
        .unwrap();
    let x = model.prepare_inputs(train.features()).unwrap();
    let mut opt = ModelOptimizer::new(&model, cfg.adam()).unwrap();
    let mut step = 0;
    for epoch in 0.. {
        for b in minibatches(train, cfg.batch_size, cfg.seed, epoch).unwrap() {
            let t: Vec<u8> = b.indices.iter().map(|&i| train.treatment()[i]).collect();
            let y: Vec<u8> = b.indices.iter().map(|&i| train.outcome()[i]).collect();
            let (_, g) = base_loss_and_grads(&model, &x.gather_rows(&b.indices), &t, &y).unwrap();
            opt.step(&mut model, &g).unwrap();
            step += 1;
            if step == cfg.max_steps {
                return model;
            }
        }
    }
    unreachable!()
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use milift_core::data::Dataset;
use milift_core::experiment::Variant;
use milift_core::metrics::uplift_curve;
use milift_core::mil::{bag_label, bag_prediction, variance_identity_check};
use milift_core::nncore::Matrix;
use milift_core::trainer::{repeat_runs, RepeatOutcome};
use milift_core::{
    cluster_bags, empirical_ate, generate_synthetic, split, train, BagMode, ModelKind, Split,
    SynthConfig, TrainConfig,
};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradient_fidelity() -> Verdict {
    let mut worst: f64 = 0.0;
    for kind in ModelKind::ALL {
        for case in 0..20 {
            worst = worst.max(combined_gradient_error(kind, 100 + case));
        }
    }
    verdict(
        worst < FD_TOLERANCE,
        format!("80 cases over TM/TARNET/DDR/SDR, worst relative error {worst:.2e} (tol 1e-4)"),
    )
}

fn bag_arithmetic() -> Verdict {
    let a = bag_label(&[1, 0, 0, 0], &[1, 1, 0, 0], &[0, 1, 2, 3], 0.5)
        .unwrap()
        .y_bag;
    let b = bag_label(&[1, 1, 0, 1], &[1, 1, 1, 0], &[0, 1, 2, 3], 0.75)
        .unwrap()
        .y_bag;
    let p_t = [0.6, 0.4, 0.0, 0.0];
    let p_c = [0.0, 0.0, 0.5, 0.3];
    let h = bag_prediction(&p_t, &p_c, &[1, 1, 0, 0], &[0, 1, 2, 3], 0.5)
        .unwrap()
        .h_bag;
    let pass =
        (a - 2.0).abs() <= 1e-12 && (b + 4.0 / 3.0).abs() <= 1e-12 && (h - 0.4).abs() <= 1e-12;
    verdict(pass, format!("y_bag {a}, y_bag {b}, h_bag {h}"))
}

fn noise_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let mut r = rng(case);
        let n = r.gen_range(8..200);
        let labels: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let noise: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let bag_size = r.gen_range(2..8);
        let mode = if case % 2 == 0 {
            BagMode::Clustered
        } else {
            BagMode::Random
        };
        let p = cluster_bags(&labels, bag_size, mode, &mut r).unwrap();
        let (lhs, rhs) = variance_identity_check(&labels, &noise, &p).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    verdict(
        worst <= 1e-12,
        format!("100 cases, worst |lhs - rhs| {worst:.2e}"),
    )
}

fn unbiased_bag_label() -> Verdict {
    let mut r = rng(64);
    let n = 64;
    let rate_c: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..0.3)).collect();
    let rate_t: Vec<f64> = rate_c.iter().map(|c| c + r.gen_range(0.0..0.05)).collect();
    let truth: f64 = rate_t.iter().zip(&rate_c).map(|(t, c)| t - c).sum();
    let bag: Vec<usize> = (0..n).collect();
    let u_t = 0.5;
    let draws = 20_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut taken = 0;
    while taken < draws {
        let t: Vec<u8> = (0..n).map(|_| r.gen_bool(u_t) as u8).collect();
        let y: Vec<u8> = (0..n)
            .map(|i| r.gen_bool(if t[i] == 1 { rate_t[i] } else { rate_c[i] }) as u8)
            .collect();
        let s = bag_label(&y, &t, &bag, u_t).unwrap();
        if s.usable {
            sum += s.y_bag;
            sum_sq += s.y_bag * s.y_bag;
            taken += 1;
        }
    }
    let m = draws as f64;
    let mean = sum / m;
    let se = ((sum_sq / m - mean * mean) * m / (m - 1.0) / m).sqrt();
    let z = (mean - truth).abs() / se;
    verdict(
        z <= 3.0,
        format!(
            "{draws} assignments, mean {mean:.4} vs summed ITE {truth:.4}, {z:.2} standard errors"
        ),
    )
}

fn auuc_oracle() -> Verdict {
    let mut mismatches = 0;
    for case in 0..50 {
        let mut r = rng(5000 + case);
        let n = r.gen_range(2..=30);
        let (t, y) = random_labels(&mut r, n);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(-3..3))).collect();
        let n_points = r.gen_range(2..=100);
        let fast = uplift_curve(&scores, &y, &t, n_points).unwrap().auuc;
        if fast != brute_force_auuc(&scores, &y, &t, n_points) {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("50 datasets of <= 30 rows with ties, {mismatches} mismatches"),
    )
}

fn published_rates() -> Verdict {
    let ate = |treated: usize, control: usize| {
        let n = 100_000;
        let t: Vec<u8> = (0..2 * n).map(|i| (i < n) as u8).collect();
        let y: Vec<u8> = (0..2 * n)
            .map(|i| {
                if i < n {
                    (i < treated) as u8
                } else {
                    (i - n < control) as u8
                }
            })
            .collect();
        let x = Matrix::zeros(2 * n, 1);
        empirical_ate(&Dataset::new(x, t, y, None).unwrap()).unwrap()
    };
    let lenta = ate(11_012, 10_257);
    let criteo = ate(4_854, 3_820);
    let pass = format!("{lenta:.5}") == "0.00755"
        && format!("{criteo:.5}") == "0.01034"
        && (lenta - 0.00755).abs() < 1e-12
        && (criteo - 0.01034).abs() < 1e-12;
    verdict(
        pass,
        format!("0.11012-0.10257 -> {lenta:.5}, 0.04854-0.03820 -> {criteo:.5}"),
    )
}

fn random_baseline(ds: &Dataset) -> Verdict {
    let scores = vec![0.0; ds.len()];
    let auuc = uplift_curve(&scores, ds.outcome(), ds.treatment(), 100)
        .unwrap()
        .auuc;
    let ate = empirical_ate(ds).unwrap();
    let expected = ate * 101.0 / 200.0;
    let rel = (auuc - expected).abs() / expected.abs();
    verdict(
        rel <= 0.10,
        format!("constant-score AUUC {auuc:.6} vs ATE*101/200 = {expected:.6} (relative gap {rel:.3}, tol 0.10)"),
    )
}

/// Desk-scale protocol shared by the directional comparisons.
fn desk_config(kind: ModelKind, alpha: f64) -> TrainConfig {
    TrainConfig {
        model: kind,
        hidden_sizes: vec![64, 32],
        alpha,
        batch_size: 1024,
        bag_size: 64,
        max_steps: 3000,
        warmup_steps: 600,
        eval_every: 300,
        patience: 5,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn five_seeds(sp: &Split, cfg: &TrainConfig) -> RepeatOutcome {
    repeat_runs(sp, cfg, 5, 1).unwrap()
}

fn mean_of(out: &RepeatOutcome) -> f64 {
    let v = out.test_auucs();
    assert_eq!(v.len(), 5, "a desk-scale run failed");
    v.iter().sum::<f64>() / v.len() as f64
}

fn show(out: &RepeatOutcome) -> String {
    out.aggregate
        .as_ref()
        .map_or("-".into(), |a| a.display_milli())
}

fn mil_direction(sp: &Split, proposed: &RepeatOutcome) -> Verdict {
    let tarnet = five_seeds(sp, &desk_config(ModelKind::Tarnet, 0.0));
    let tm = five_seeds(sp, &desk_config(ModelKind::Tm, 0.0));
    let tm_mil = five_seeds(sp, &desk_config(ModelKind::Tm, 1e-3));
    let pass = mean_of(proposed) >= mean_of(&tarnet) && mean_of(&tm_mil) >= mean_of(&tm);
    verdict(
        pass,
        format!(
            "AUUC x1e-3: TARNET {} -> +MIL {}; TM {} -> +MIL {}",
            show(&tarnet),
            show(proposed),
            show(&tm),
            show(&tm_mil)
        ),
    )
}

fn ablation_direction(sp: &Split, proposed: &RepeatOutcome) -> Verdict {
    let base = desk_config(ModelKind::Tarnet, 1e-3);
    let random = five_seeds(sp, &Variant::WithoutClustering.configure(&base));
    let no_base = five_seeds(sp, &Variant::WithoutBase.configure(&base));
    let (p, r, b) = (mean_of(proposed), mean_of(&random), mean_of(&no_base));
    let pass = p >= r && b < p && b < r;
    verdict(
        pass,
        format!(
            "AUUC x1e-3: proposed {}, w/o clustering {}, w/o base model {}",
            show(proposed),
            show(&random),
            show(&no_base)
        ),
    )
}

fn reduction_and_determinism(sp: &Split) -> Verdict {
    let mut failures = Vec::new();
    for kind in ModelKind::ALL {
        let cfg = TrainConfig {
            max_steps: 400,
            warmup_steps: 100,
            eval_every: 100,
            ..desk_config(kind, 1e-3)
        };
        // One evaluation at the end makes the returned checkpoint the final model.
        let zero_cfg = TrainConfig {
            alpha: 0.0,
            eval_every: cfg.max_steps,
            ..cfg.clone()
        };
        let zero = train(sp, &zero_cfg).unwrap();
        if model_bits(&zero.model) != model_bits(&base_only_reference(sp, &zero_cfg)) {
            failures.push(format!("{kind:?} alpha=0"));
        }
        let a = train(sp, &cfg).unwrap();
        let b = train(sp, &cfg).unwrap();
        if a.report.deterministic_json().unwrap() != b.report.deterministic_json().unwrap() {
            failures.push(format!("{kind:?} rerun"));
        }
    }
    let detail = if failures.is_empty() {
        "alpha=0 equals base-only training and reruns are bitwise identical for all four models"
            .to_string()
    } else {
        format!("mismatches: {}", failures.join(", "))
    };
    verdict(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, limit_s: f64, run: &mut dyn FnMut() -> Verdict| {
        let started = Instant::now();
        let v = run();
        let secs = started.elapsed().as_secs_f64();
        let within = secs <= limit_s;
        let pass = v.pass && within;
        if !pass {
            failed += 1;
        }
        let timing = if within {
            String::new()
        } else {
            format!(" [over the {limit_s:.0} s budget]")
        };
        println!(
            "{} criterion {id}: {name}: {}{timing} ({secs:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            v.detail
        );
    };

    report(1, "gradient fidelity", 30.0, &mut gradient_fidelity);
    report(
        2,
        "bag label and prediction arithmetic",
        1.0,
        &mut bag_arithmetic,
    );
    report(3, "bag noise identity", 5.0, &mut noise_identity);
    report(4, "bag label unbiasedness", 60.0, &mut unbiased_bag_label);
    report(5, "AUUC brute-force equivalence", 10.0, &mut auuc_oracle);
    report(6, "published group-rate ATEs", 1.0, &mut published_rates);

    let ds = generate_synthetic(&SynthConfig::default()).unwrap();
    report(7, "random-targeting anchor", 30.0, &mut || {
        random_baseline(&ds)
    });

    let sp = split(&ds, [0.6, 0.2, 0.2], 0).unwrap();
    let started = Instant::now();
    let proposed = five_seeds(&sp, &desk_config(ModelKind::Tarnet, 1e-3));
    let shared = started.elapsed().as_secs_f64();
    report(
        8,
        "bag loss helps both two-model baselines",
        15.0 * 60.0 - shared,
        &mut || mil_direction(&sp, &proposed),
    );
    report(9, "ablation ordering", 20.0 * 60.0 - shared, &mut || {
        ablation_direction(&sp, &proposed)
    });
    report(10, "alpha=0 reduction and determinism", 300.0, &mut || {
        reduction_and_determinism(&sp)
    });

    println!("{} of 10 criteria failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

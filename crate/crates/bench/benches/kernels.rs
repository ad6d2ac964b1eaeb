use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use milift_core::mil::{combined_loss_and_grads, BatchRef, MilSettings};
use milift_core::{auuc, cluster_bags, BagMode, Matrix, ModelKind, UpliftModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 1024;
const DIM: usize = 12;

fn batch(rng: &mut ChaCha8Rng) -> (Matrix, Vec<u8>, Vec<u8>) {
    let x = Matrix::from_vec(
        BATCH,
        DIM,
        (0..BATCH * DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let t = (0..BATCH).map(|_| rng.gen_bool(0.5) as u8).collect();
    let y = (0..BATCH).map(|_| rng.gen_bool(0.1) as u8).collect();
    (x, t, y)
}

fn training_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (x, t, y) = batch(&mut rng);
    let settings = MilSettings {
        alpha: 1e-3,
        bag_size: 64,
        mode: BagMode::Clustered,
        base_weight: 1.0,
    };
    let mut group = c.benchmark_group("step_1024");
    group.sample_size(10);
    for kind in ModelKind::ALL {
        let model = UpliftModel::build(kind, DIM, &[256, 128, 64], 0).unwrap();
        group.bench_function(kind.name(), |b| {
            b.iter(|| {
                let batch = BatchRef {
                    x: &x,
                    treatment: &t,
                    outcome: &y,
                };
                combined_loss_and_grads(&model, batch, &settings, &mut rng).unwrap()
            })
        });
    }
    group.finish();
}

fn bagging(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let uplift: Vec<f64> = (0..BATCH).map(|_| rng.gen_range(-0.1..0.1)).collect();
    c.bench_function("cluster_bags_1024x64", |b| {
        b.iter(|| cluster_bags(black_box(&uplift), 64, BagMode::Clustered, &mut rng).unwrap())
    });
}

fn metric(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let t: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.5) as u8).collect();
    let y: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.1) as u8).collect();
    c.bench_function("auuc_100k", |b| {
        b.iter_batched(
            || (0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>(),
            |scores| auuc(&scores, &y, &t).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, training_step, bagging, metric);
criterion_main!(benches);

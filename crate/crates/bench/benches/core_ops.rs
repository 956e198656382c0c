use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gazeloc::grid::{heatmap_to_annotation, GridAnnotation};
use gazeloc::losses::{grad_logits, loss_total, Example, ExampleStatus, GridLogits, LabelStatus, LossConfig};
use gazeloc::metrics::auc;
use gazeloc::{FixationRecord, RenderConfig};

fn bench_render(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fixations: Vec<(FixationRecord, f64)> = (0..12)
        .map(|_| {
            (
                FixationRecord {
                    x: rng.random_range(0.0..256.0),
                    y: rng.random_range(0.0..256.0),
                    t_start: 0.0,
                    t_end: 1.0,
                },
                rng.random_range(0.1..0.6),
            )
        })
        .collect();
    let config = RenderConfig::new(12.0).unwrap();
    c.bench_function("render_heatmap_256", |b| {
        b.iter(|| gazeloc::gaze_heatmap::render_heatmap(&fixations, 256, 256, &config))
    });
}

fn bench_losses(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let side = 32;
    let n_labels = 10;
    let values: Vec<f64> = (0..n_labels * side * side)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    let statuses: Vec<LabelStatus> = (0..n_labels)
        .map(|k| match k % 3 {
            0 => LabelStatus::Annotated {
                cells: GridAnnotation::from_cells(
                    side,
                    (0..side * side).map(|i| i % 7 == 0).collect(),
                )
                .unwrap(),
                positive: true,
            },
            1 => LabelStatus::UnannotatedPositive,
            _ => LabelStatus::UnannotatedNegative,
        })
        .collect();
    let batch = vec![Example {
        logits: GridLogits::from_values(n_labels, side, values).unwrap(),
        status: ExampleStatus::new(statuses),
    }];
    let cfg = LossConfig::default();
    c.bench_function("loss_total_10x32x32", |b| b.iter(|| loss_total(&batch, &cfg).unwrap()));
    c.bench_function("grad_logits_10x32x32", |b| b.iter(|| grad_logits(&batch, &cfg).unwrap()));
}

fn bench_pooling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<f64> = (0..512 * 512).map(|_| rng.random_range(0.0..1.0)).collect();
    let heatmap = gazeloc::Heatmap::from_values(512, 512, values).unwrap();
    c.bench_function("heatmap_to_annotation_512_to_32", |b| {
        b.iter(|| heatmap_to_annotation(&heatmap, 32, 0.15).unwrap())
    });
}

fn bench_auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<bool> = (0..5000).map(|_| rng.random_bool(0.3)).collect();
    c.bench_function("auc_5000", |b| {
        b.iter_batched(
            || (scores.clone(), labels.clone()),
            |(s, l)| auc(&s, &l).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_render, bench_losses, bench_pooling, bench_auc);
criterion_main!(benches);

//! A deliberately small differentiable model: one linear scorer per label
//! over per-cell patch features (mean, max, variance of the synthetic
//! feature image inside the cell), trained by full-batch gradient descent
//! on the combined localization loss. It exists to exercise the loss and
//! evaluation machinery end to end and to compare the three supervision
//! arms: image-level labels only, gaze-extracted annotations, and
//! ground-truth ellipse annotations.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze_heatmap::{
    aggregate_mentions, mention_window, render_heatmap, select_fixations, Heatmap, RenderConfig,
};
use crate::grid::{
    heatmap_to_annotation, rasterize_label_ellipses, upscale_nearest, BinaryMask, GridAnnotation,
};
use crate::labeler::{is_image_positive, label_report, LabelId, RuleSet};
use crate::losses::{
    grad_logits, loss_total, sigmoid, Example, ExampleStatus, GridLogits, LabelStatus, LossConfig,
};
use crate::metrics::{
    auc, confidence_interval, sweep_thresholds, validate_threshold, AucEntry,
    ConfidenceInterval, IoUEntry,
};
use crate::synth::SynthSession;

/// Number of features per cell: mean, max, variance.
pub const FEATURES_PER_CELL: usize = 3;

/// Which annotation source supervises training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupervisionArm {
    /// Image-level labels only.
    Unannotated,
    /// Gaze-extracted grid annotations on positives.
    EtAnnotated,
    /// Ground-truth ellipse grid annotations on positives.
    EllipseAnnotated,
}

impl SupervisionArm {
    pub const ALL: [SupervisionArm; 3] = [
        SupervisionArm::Unannotated,
        SupervisionArm::EtAnnotated,
        SupervisionArm::EllipseAnnotated,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SupervisionArm::Unannotated => "unannotated",
            SupervisionArm::EtAnnotated => "et",
            SupervisionArm::EllipseAnnotated => "ellipse",
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub supervision: SupervisionArm,
    pub loss: LossConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(supervision: SupervisionArm, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            supervision,
            loss: LossConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        self.loss.validate()
    }
}

/// A linear per-label scorer over standardized cell features:
/// logit(cell, label) = w_label . ((features(cell) - shift) * scale)
/// + b_label. The standardization constants are estimated from the
/// training set; raw mean/max/variance live on wildly different scales
/// and plain gradient descent needs them balanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub labels: Vec<LabelId>,
    pub grid_side: usize,
    /// One weight row per label.
    pub weights: Vec<[f64; FEATURES_PER_CELL]>,
    pub biases: Vec<f64>,
    pub feature_shift: [f64; FEATURES_PER_CELL],
    pub feature_scale: [f64; FEATURES_PER_CELL],
}

impl ToyModel {
    fn init(labels: Vec<LabelId>, grid_side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..labels.len())
            .map(|_| {
                [
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                ]
            })
            .collect();
        let biases = (0..labels.len()).map(|_| rng.random_range(-0.01..0.01)).collect();
        ToyModel {
            labels,
            grid_side,
            weights,
            biases,
            feature_shift: [0.0; FEATURES_PER_CELL],
            feature_scale: [1.0; FEATURES_PER_CELL],
        }
    }

    /// Per-feature mean and inverse standard deviation over every cell of
    /// the training set.
    fn fit_standardization(&mut self, examples: &[TrainExample]) {
        let mut count = 0usize;
        let mut sums = [0.0f64; FEATURES_PER_CELL];
        let mut sq_sums = [0.0f64; FEATURES_PER_CELL];
        for example in examples {
            for f in &example.features {
                for k in 0..FEATURES_PER_CELL {
                    sums[k] += f[k];
                    sq_sums[k] += f[k] * f[k];
                }
            }
            count += example.features.len();
        }
        if count == 0 {
            return;
        }
        let n = count as f64;
        for k in 0..FEATURES_PER_CELL {
            let mean = sums[k] / n;
            let variance = (sq_sums[k] / n - mean * mean).max(0.0);
            self.feature_shift[k] = mean;
            self.feature_scale[k] = if variance > 1e-18 {
                1.0 / variance.sqrt()
            } else {
                1.0
            };
        }
    }

    /// Standardized feature vector of one cell.
    fn standardized(&self, f: &[f64; FEATURES_PER_CELL]) -> [f64; FEATURES_PER_CELL] {
        let mut out = [0.0; FEATURES_PER_CELL];
        for k in 0..FEATURES_PER_CELL {
            out[k] = (f[k] - self.feature_shift[k]) * self.feature_scale[k];
        }
        out
    }

    /// Grid logits for one example's cell features.
    pub fn logits(&self, features: &[[f64; FEATURES_PER_CELL]]) -> GridLogits {
        let cells = self.grid_side * self.grid_side;
        debug_assert_eq!(features.len(), cells);
        let mut values = Vec::with_capacity(self.labels.len() * cells);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for f in features {
                let z = self.standardized(f);
                values.push(w[0] * z[0] + w[1] * z[1] + w[2] * z[2] + b);
            }
        }
        GridLogits::from_values(self.labels.len(), self.grid_side, values)
            .expect("finite parameters produce finite logits")
    }

    /// Per-label probability heatmap at grid resolution.
    pub fn probability_grid(&self, logits: &GridLogits, label_index: usize) -> Heatmap {
        let values = logits
            .label_logits(label_index)
            .iter()
            .map(|&g| sigmoid(g))
            .collect();
        Heatmap::from_values(self.grid_side, self.grid_side, values).expect("square grid")
    }
}

/// One prepared training/evaluation example.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    /// Per-cell (mean, max, variance) of the feature image.
    pub features: Vec<[f64; FEATURES_PER_CELL]>,
    pub gold_positive: BTreeSet<LabelId>,
    /// Gaze-extracted grid annotation per positive label, when available.
    pub et_annotation: BTreeMap<LabelId, GridAnnotation>,
    /// Ellipse-derived grid annotation per positive label.
    pub ellipse_annotation: BTreeMap<LabelId, GridAnnotation>,
    /// Full-resolution ellipse masks for IoU evaluation.
    pub ellipse_masks: BTreeMap<LabelId, BinaryMask>,
}

/// Per-cell mean, max and population variance of the feature image, using
/// the same pixel-to-cell bucket map as pooling.
pub fn cell_features(features: &Heatmap, grid_side: usize) -> Vec<[f64; FEATURES_PER_CELL]> {
    let cells = grid_side * grid_side;
    let mut sum = vec![0.0f64; cells];
    let mut sum_sq = vec![0.0f64; cells];
    let mut max = vec![f64::NEG_INFINITY; cells];
    let mut count = vec![0usize; cells];
    for y in 0..features.height() {
        let row = y * grid_side / features.height();
        for x in 0..features.width() {
            let col = x * grid_side / features.width();
            let v = features.get(x, y);
            let cell = row * grid_side + col;
            sum[cell] += v;
            sum_sq[cell] += v * v;
            max[cell] = max[cell].max(v);
            count[cell] += 1;
        }
    }
    (0..cells)
        .map(|cell| {
            let n = count[cell] as f64;
            let mean = sum[cell] / n;
            [mean, max[cell], sum_sq[cell] / n - mean * mean]
        })
        .collect()
}

/// Extraction settings shared by dataset preparation and the CLI.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionConfig {
    pub render: RenderConfig,
    pub grid_side: usize,
    pub threshold: f64,
}

/// Builds the per-label aggregated gaze heatmaps of one session.
pub fn session_label_heatmaps(
    session: &crate::ingest::Session,
    rules: &RuleSet,
    render: &RenderConfig,
) -> BTreeMap<LabelId, Heatmap> {
    let report = label_report(session, rules);
    let mut out = BTreeMap::new();
    for (label, finding) in report {
        if !is_image_positive(&finding, rules) || finding.positive_mentions.is_empty() {
            continue;
        }
        let maps: Vec<Heatmap> = finding
            .positive_mentions
            .iter()
            .map(|mention| {
                let window =
                    mention_window(mention, &session.sentences, render, session.recording_start);
                let selected = select_fixations(&session.fixations, window);
                render_heatmap(
                    &selected,
                    session.width as usize,
                    session.height as usize,
                    render,
                )
            })
            .collect();
        let aggregated = aggregate_mentions(&maps).expect("same session dimensions");
        out.insert(label, aggregated);
    }
    out
}

/// Prepares synthetic sessions for training: cell features, gaze and
/// ellipse annotations, and evaluation masks.
pub fn prepare_examples(
    sessions: &[SynthSession],
    rules: &RuleSet,
    extraction: &ExtractionConfig,
) -> Result<Vec<TrainExample>> {
    sessions
        .par_iter()
        .map(|synth| {
            let width = synth.session.width as usize;
            let height = synth.session.height as usize;
            let features = cell_features(&synth.features, extraction.grid_side);

            let mut et_annotation = BTreeMap::new();
            for (label, heatmap) in
                session_label_heatmaps(&synth.session, rules, &extraction.render)
            {
                let grid =
                    heatmap_to_annotation(&heatmap, extraction.grid_side, extraction.threshold)?;
                et_annotation.insert(label, grid);
            }

            let mut ellipse_annotation = BTreeMap::new();
            let mut ellipse_masks = BTreeMap::new();
            let labels_with_ellipses: BTreeSet<LabelId> =
                synth.ellipses.iter().map(|e| e.label.clone()).collect();
            for label in labels_with_ellipses {
                let label_ellipses: Vec<_> = synth
                    .ellipses
                    .iter()
                    .filter(|e| e.label == label)
                    .cloned()
                    .collect();
                let mask = rasterize_label_ellipses(&label_ellipses, width, height)?;
                let as_heatmap = Heatmap::from_values(
                    width,
                    height,
                    mask.bits().iter().map(|&b| f64::from(u8::from(b))).collect(),
                )?;
                // Binary masks pool to {0, 1}; any positive threshold below
                // one marks cells touched by the ellipse.
                let grid = heatmap_to_annotation(
                    &as_heatmap,
                    extraction.grid_side,
                    extraction.threshold,
                )?;
                ellipse_annotation.insert(label.clone(), grid);
                ellipse_masks.insert(label, mask);
            }

            Ok(TrainExample {
                image_id: synth.session.image_id.clone(),
                width,
                height,
                features,
                gold_positive: synth.gold_positive.clone(),
                et_annotation,
                ellipse_annotation,
                ellipse_masks,
            })
        })
        .collect()
}

/// Builds the per-label supervision for one example under an arm.
///
/// Annotated arms annotate the whole image: positives carry their
/// annotation cells, negatives an empty grid. A positive lacking its
/// annotation (no usable gaze, say) falls back to unannotated-positive.
fn example_status(
    example: &TrainExample,
    labels: &[LabelId],
    grid_side: usize,
    arm: SupervisionArm,
) -> ExampleStatus {
    let statuses = labels
        .iter()
        .map(|label| {
            let positive = example.gold_positive.contains(label);
            let annotation = match arm {
                SupervisionArm::Unannotated => None,
                SupervisionArm::EtAnnotated => example.et_annotation.get(label),
                SupervisionArm::EllipseAnnotated => example.ellipse_annotation.get(label),
            };
            match (arm, positive, annotation) {
                (SupervisionArm::Unannotated, true, _) => LabelStatus::UnannotatedPositive,
                (SupervisionArm::Unannotated, false, _) => LabelStatus::UnannotatedNegative,
                (_, true, Some(cells)) => LabelStatus::Annotated {
                    cells: cells.clone(),
                    positive: true,
                },
                (_, true, None) => LabelStatus::UnannotatedPositive,
                (_, false, _) => LabelStatus::Annotated {
                    cells: GridAnnotation::empty(grid_side),
                    positive: false,
                },
            }
        })
        .collect();
    ExampleStatus::new(statuses)
}

/// Full-batch gradient descent. The per-epoch step halves (up to 30 times)
/// whenever it would raise the loss by more than 1e-9, so the recorded
/// trace is non-increasing within that tolerance.
pub fn train(
    examples: &[TrainExample],
    labels: &[LabelId],
    grid_side: usize,
    config: &TrainConfig,
) -> Result<(ToyModel, Vec<f64>)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let mut model = ToyModel::init(labels.to_vec(), grid_side, config.seed);
    model.fit_standardization(examples);
    let statuses: Vec<ExampleStatus> = examples
        .iter()
        .map(|e| example_status(e, labels, grid_side, config.supervision))
        .collect();

    let batch_of = |model: &ToyModel| -> Vec<Example> {
        examples
            .iter()
            .zip(&statuses)
            .map(|(example, status)| Example {
                logits: model.logits(&example.features),
                status: status.clone(),
            })
            .collect()
    };

    let mut trace = Vec::with_capacity(config.epochs + 1);
    let mut loss = loss_total(&batch_of(&model), &config.loss)?;
    trace.push(loss);

    for epoch in 0..config.epochs {
        let batch = batch_of(&model);
        let grads = grad_logits(&batch, &config.loss)?;

        // Chain rule through the linear map: d/dw = sum_cells grad * z
        // (standardized features), d/db = sum_cells grad.
        let mut weight_grads = vec![[0.0f64; FEATURES_PER_CELL]; labels.len()];
        let mut bias_grads = vec![0.0f64; labels.len()];
        for (example, grad) in examples.iter().zip(&grads) {
            for label_index in 0..labels.len() {
                let cell_grads = grad.label_logits(label_index);
                let wg = &mut weight_grads[label_index];
                for (g, f) in cell_grads.iter().zip(&example.features) {
                    let z = model.standardized(f);
                    wg[0] += g * z[0];
                    wg[1] += g * z[1];
                    wg[2] += g * z[2];
                    bias_grads[label_index] += g;
                }
            }
        }

        let mut step = config.learning_rate;
        let mut accepted = false;
        for _ in 0..30 {
            let mut candidate = model.clone();
            for label_index in 0..labels.len() {
                for (w, g) in candidate.weights[label_index]
                    .iter_mut()
                    .zip(&weight_grads[label_index])
                {
                    *w -= step * g;
                }
                candidate.biases[label_index] -= step * bias_grads[label_index];
            }
            let candidate_loss = loss_total(&batch_of(&candidate), &config.loss)
                .map_err(|_| Error::DivergedLoss { epoch })?;
            if candidate_loss <= loss + 1e-9 {
                model = candidate;
                loss = candidate_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // The gradient step cannot descend further at any tried scale;
            // the model is at numerical convergence.
            trace.push(loss);
            continue;
        }
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        trace.push(loss);
    }
    Ok((model, trace))
}

/// One (arm, seed) evaluation row.
#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mean_iou: Option<f64>,
    pub mean_auc: Option<f64>,
    pub per_label_iou: BTreeMap<LabelId, Option<IoUEntry>>,
    pub per_label_auc: BTreeMap<LabelId, Option<AucEntry>>,
    pub final_loss: f64,
}

/// Aggregated arm results.
#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub arm: String,
    pub seeds: Vec<SeedOutcome>,
    pub iou_mean: Option<f64>,
    pub iou_min: Option<f64>,
    pub iou_max: Option<f64>,
    pub auc_mean: Option<f64>,
    /// Normal-approximation interval over seeds; present with >= 2 seeds.
    pub iou_ci: Option<ConfidenceInterval>,
    pub auc_ci: Option<ConfidenceInterval>,
    pub ci_method: &'static str,
}

/// Comparison of supervision arms over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct ArmsReport {
    pub arms: Vec<ArmReport>,
}

/// Splits examples deterministically by index: half train, a quarter
/// validates thresholds, a quarter tests.
pub fn split_examples(
    examples: &[TrainExample],
) -> (Vec<&TrainExample>, Vec<&TrainExample>, Vec<&TrainExample>) {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        match i % 4 {
            2 => validation.push(e),
            3 => test.push(e),
            _ => train.push(e),
        }
    }
    (train, validation, test)
}

/// Evaluates one trained model: per-label AUC of the soft-OR image scores
/// on the test split, and per-label IoU of the upscaled probability grid
/// against the ellipse masks at a threshold validated on the validation
/// split.
pub fn evaluate_model(
    model: &ToyModel,
    validation: &[&TrainExample],
    test: &[&TrainExample],
    loss_config: &LossConfig,
) -> (BTreeMap<LabelId, Option<IoUEntry>>, BTreeMap<LabelId, Option<AucEntry>>) {
    let model_heatmap = |example: &TrainExample, label_index: usize| {
        let logits = model.logits(&example.features);
        let grid = model.probability_grid(&logits, label_index);
        upscale_nearest(&grid, example.width, example.height).expect("grid fits image")
    };

    let mut per_label_iou = BTreeMap::new();
    let mut per_label_auc = BTreeMap::new();
    for (label_index, label) in model.labels.iter().enumerate() {
        // Threshold from validation positives.
        let val_pairs: Vec<(Heatmap, BinaryMask)> = validation
            .iter()
            .filter_map(|e| {
                e.ellipse_masks
                    .get(label)
                    .map(|mask| (model_heatmap(e, label_index), mask.clone()))
            })
            .collect();
        let test_pairs: Vec<(Heatmap, BinaryMask)> = test
            .iter()
            .filter_map(|e| {
                e.ellipse_masks
                    .get(label)
                    .map(|mask| (model_heatmap(e, label_index), mask.clone()))
            })
            .collect();

        let iou_entry = if val_pairs.is_empty() || test_pairs.is_empty() {
            None
        } else {
            let (maps, masks): (Vec<Heatmap>, Vec<BinaryMask>) = val_pairs.into_iter().unzip();
            match validate_threshold(&maps, &masks, &sweep_thresholds()) {
                Ok((threshold, _)) => {
                    let mut sum = 0.0;
                    for (heatmap, mask) in &test_pairs {
                        let prediction =
                            crate::metrics::apply_validated_threshold(heatmap, threshold);
                        sum += crate::metrics::iou(&prediction, mask).expect("same dimensions");
                    }
                    Some(IoUEntry {
                        best_threshold: threshold,
                        iou: sum / test_pairs.len() as f64,
                        n_positives: test_pairs.len(),
                    })
                }
                Err(_) => None,
            }
        };
        per_label_iou.insert(label.clone(), iou_entry);

        // AUC over test image-level scores, ranked on the log-evidence
        // scale (a strictly increasing transform of the soft-OR output, so
        // the AUC is the same wherever the probability has headroom, and
        // confidently positive images stay distinguishable where it
        // saturates).
        let mut scores = Vec::with_capacity(test.len());
        let mut gold = Vec::with_capacity(test.len());
        for example in test {
            let logits = model.logits(&example.features);
            scores.push(crate::losses::image_evidence(&logits, label_index, loss_config));
            gold.push(example.gold_positive.contains(label));
        }
        let n_pos = gold.iter().filter(|&&g| g).count();
        let auc_entry = auc(&scores, &gold).ok().map(|value| AucEntry {
            auc: value,
            n_pos,
            n_neg: gold.len() - n_pos,
        });
        per_label_auc.insert(label.clone(), auc_entry);
    }
    (per_label_iou, per_label_auc)
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Trains and evaluates the requested arms over the given seeds. Every
/// (arm, seed) pair regenerates nothing: the same prepared examples are
/// shared, only initialization and supervision change.
pub fn evaluate_arms(
    examples: &[TrainExample],
    labels: &[LabelId],
    grid_side: usize,
    arms: &[SupervisionArm],
    seeds: &[u64],
    base: &TrainConfig,
) -> Result<ArmsReport> {
    let (train_split, validation, test) = split_examples(examples);

    let mut reports = Vec::with_capacity(arms.len());
    for &arm in arms {
        let outcomes: Result<Vec<SeedOutcome>> = seeds
            .par_iter()
            .map(|&seed| {
                let config = TrainConfig {
                    supervision: arm,
                    seed,
                    ..base.clone()
                };
                let train_refs: Vec<TrainExample> =
                    train_split.iter().map(|e| (*e).clone()).collect();
                let (model, trace) = train(&train_refs, labels, grid_side, &config)?;
                let (per_label_iou, per_label_auc) =
                    evaluate_model(&model, &validation, &test, &config.loss);
                let ious: Vec<f64> = per_label_iou
                    .values()
                    .filter_map(|e| e.as_ref().map(|e| e.iou))
                    .collect();
                let aucs: Vec<f64> = per_label_auc
                    .values()
                    .filter_map(|e| e.as_ref().map(|e| e.auc))
                    .collect();
                Ok(SeedOutcome {
                    seed,
                    mean_iou: mean_of(&ious),
                    mean_auc: mean_of(&aucs),
                    per_label_iou,
                    per_label_auc,
                    final_loss: *trace.last().expect("non-empty trace"),
                })
            })
            .collect();
        let outcomes = outcomes?;

        let seed_ious: Vec<f64> = outcomes.iter().filter_map(|o| o.mean_iou).collect();
        let seed_aucs: Vec<f64> = outcomes.iter().filter_map(|o| o.mean_auc).collect();
        reports.push(ArmReport {
            arm: arm.name().to_string(),
            iou_mean: mean_of(&seed_ious),
            iou_min: seed_ious.iter().copied().reduce(f64::min),
            iou_max: seed_ious.iter().copied().reduce(f64::max),
            auc_mean: mean_of(&seed_aucs),
            iou_ci: confidence_interval(&seed_ious),
            auc_ci: confidence_interval(&seed_aucs),
            ci_method: "normal_approximation",
            seeds: outcomes,
        });
    }
    Ok(ArmsReport { arms: reports })
}

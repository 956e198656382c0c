//! Localization losses over grid logits.
//!
//! The image-level prediction for a label is a soft OR over its grid
//! cells: `1 - prod_j (1 - sigmoid(logit_j))`. Training combines three
//! multiple-instance terms (annotated cells, unannotated positives,
//! unannotated negatives) with a pixel cross-entropy map term gated on
//! annotated-positive labels.
//!
//! Every product factor is affinely clamped into `[c^(1/n), 1]`, where `n`
//! is that product's factor count, so products of different lengths share
//! the common minimum `c` (the balanced range normalization; `c = 0.0056738`
//! reproduces the classic `[0.98, 1]` clamp at 256 factors). Products are
//! evaluated as sums of logs, which makes underflow impossible for any
//! finite logit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridAnnotation;

/// Per-cell, per-label logits for one image: `labels x side x side`,
/// label-major, row-major within a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLogits {
    n_labels: usize,
    side: usize,
    values: Vec<f64>,
}

impl GridLogits {
    pub fn zeros(n_labels: usize, side: usize) -> Self {
        GridLogits {
            n_labels,
            side,
            values: vec![0.0; n_labels * side * side],
        }
    }

    pub fn from_values(n_labels: usize, side: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_labels * side * side {
            return Err(Error::DimensionMismatch {
                expected: (n_labels, side * side),
                got: (values.len(), 1),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        Ok(GridLogits { n_labels, side, values })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cells_per_label(&self) -> usize {
        self.side * self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// The logits of one label, row-major.
    pub fn label_logits(&self, label_index: usize) -> &[f64] {
        let cells = self.cells_per_label();
        &self.values[label_index * cells..(label_index + 1) * cells]
    }
}

/// Supervision available for one label of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelStatus {
    /// Localization annotation present; `cells` marks evidence cells
    /// (empty for a negative annotated image) and `positive` is the
    /// image-level label.
    Annotated { cells: GridAnnotation, positive: bool },
    /// No localization, image-level positive.
    UnannotatedPositive,
    /// No localization, image-level negative.
    UnannotatedNegative,
}

/// Per-label statuses for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStatus {
    statuses: Vec<LabelStatus>,
}

impl ExampleStatus {
    pub fn new(statuses: Vec<LabelStatus>) -> Self {
        ExampleStatus { statuses }
    }

    pub fn labels(&self) -> &[LabelStatus] {
        &self.statuses
    }

    pub fn len(&self) -> usize {
        self.statuses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statuses.is_empty()
    }
}

/// One batch element: logits plus supervision.
#[derive(Debug, Clone)]
pub struct Example {
    pub logits: GridLogits,
    pub status: ExampleStatus,
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of annotated-image terms.
    pub lambda_annotated: f64,
    /// Weight of the map (pixel cross-entropy) term.
    pub lambda_multitask: f64,
    /// Common product minimum for the balanced range normalization.
    pub range_constant: f64,
    /// Disable to use plain, unclamped factors.
    pub normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_annotated: 3.0,
            lambda_multitask: 300.0,
            range_constant: 0.0056738,
            normalize: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_annotated < 0.0 || self.lambda_multitask < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        if !(self.range_constant > 0.0 && self.range_constant < 1.0) {
            return Err(Error::InvalidConfig(
                "range_constant must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }

    /// Lower clamp for a product of `factor_count` factors:
    /// `range_constant^(1/factor_count)`.
    fn lower_clamp(&self, factor_count: usize) -> f64 {
        debug_assert!(factor_count >= 1);
        self.range_constant.powf(1.0 / factor_count as f64)
    }
}

/// Numerically stable sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(sigmoid(x))`.
fn ln_sigmoid(x: f64) -> f64 {
    // ln sigma(x) = -softplus(-x) = -(max(-x, 0) + ln(1 + exp(-|x|)))
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

/// Clamps a probability into `[c^(1/factor_count), 1]` before it enters a
/// product of `factor_count` factors. The upper endpoint is fixed:
/// `normalize_factor(1, ..) == 1`.
pub fn normalize_factor(p: f64, factor_count: usize, range_constant: f64) -> f64 {
    let lower = range_constant.powf(1.0 / factor_count as f64);
    lower + (1.0 - lower) * p
}

/// `ln` of one product factor. `logit_sign` selects between the
/// `sigmoid(logit)` factor (+1) and the `1 - sigmoid(logit)` factor (-1).
fn ln_factor(logit: f64, logit_sign: f64, lower_clamp: Option<f64>) -> f64 {
    match lower_clamp {
        // ln(L + (1-L) * sigma(sign * logit)); sigma stays stable at the
        // extremes, the clamp keeps the argument >= L > 0.
        Some(lower) => (lower + (1.0 - lower) * sigmoid(logit_sign * logit)).ln(),
        None => ln_sigmoid(logit_sign * logit),
    }
}

/// d/d logit of [`ln_factor`].
fn ln_factor_grad(logit: f64, logit_sign: f64, lower_clamp: Option<f64>) -> f64 {
    let s = sigmoid(logit);
    let slope = s * sigmoid(-logit); // sigma'(logit)
    match lower_clamp {
        Some(lower) => {
            let p = sigmoid(logit_sign * logit);
            logit_sign * (1.0 - lower) * slope / (lower + (1.0 - lower) * p)
        }
        // d/dx ln sigma(x) = sigma(-x); chain through the sign.
        None => {
            if logit_sign > 0.0 {
                sigmoid(-logit)
            } else {
                -s
            }
        }
    }
}

fn clamp_for(cfg: &LossConfig, factor_count: usize) -> Option<f64> {
    (cfg.normalize && factor_count > 0).then(|| cfg.lower_clamp(factor_count))
}

/// `ln` of the all-cells-negative product for one label:
/// `sum_j ln norm(1 - sigmoid(logit_j))`.
fn complement_log_product(logits: &[f64], cfg: &LossConfig) -> f64 {
    let clamp = clamp_for(cfg, logits.len());
    logits.iter().map(|&g| ln_factor(g, -1.0, clamp)).sum()
}

/// Floor that keeps `-ln(C)` finite when rounding collapses the soft-OR
/// output to exactly zero (possible for saturated logits even though the
/// exact value is positive for any finite input).
const PROBABILITY_FLOOR: f64 = f64::MIN_POSITIVE;

/// Image-level soft-OR prediction for one label:
/// `1 - prod_j norm(1 - sigmoid(logit_j))`, the product over all grid
/// cells evaluated in log space.
pub fn predict_image(logits: &GridLogits, label_index: usize, cfg: &LossConfig) -> f64 {
    let log_product = complement_log_product(logits.label_logits(label_index), cfg);
    -log_product.exp_m1()
}

/// The soft-OR prediction on an unclamped log scale:
/// `-sum_j ln norm(1 - sigmoid(logit_j)) = -ln(1 - C)`. Strictly increasing
/// in the prediction, so rankings (and AUC) are unchanged, but confident
/// images stay distinguishable where the probability itself saturates
/// at 1.
pub fn image_evidence(logits: &GridLogits, label_index: usize, cfg: &LossConfig) -> f64 {
    -complement_log_product(logits.label_logits(label_index), cfg)
}

/// Loss for an annotated image: negative log of the product of
/// on-annotation `sigmoid` factors and off-annotation complement factors.
/// Each of the two products is normalized with its own factor count. An
/// empty annotation degenerates to the all-negative product alone.
pub fn loss_annotated(
    logits: &GridLogits,
    label_index: usize,
    annotation: &GridAnnotation,
    cfg: &LossConfig,
) -> Result<f64> {
    let label_logits = logits.label_logits(label_index);
    if annotation.cells().len() != label_logits.len() {
        return Err(Error::DimensionMismatch {
            expected: (logits.side(), logits.side()),
            got: (annotation.side(), annotation.side()),
        });
    }
    let on_count = annotation.count_true();
    let off_count = label_logits.len() - on_count;
    let on_clamp = clamp_for(cfg, on_count);
    let off_clamp = clamp_for(cfg, off_count);

    let mut log_sum = 0.0;
    for (&logit, &on) in label_logits.iter().zip(annotation.cells()) {
        log_sum += if on {
            ln_factor(logit, 1.0, on_clamp)
        } else {
            ln_factor(logit, -1.0, off_clamp)
        };
    }
    Ok(-log_sum)
}

/// Loss for an unannotated positive image: `-ln` of the soft-OR output.
pub fn loss_unannotated_pos(logits: &GridLogits, label_index: usize, cfg: &LossConfig) -> f64 {
    let log_product = complement_log_product(logits.label_logits(label_index), cfg);
    -(-log_product.exp_m1()).max(PROBABILITY_FLOOR).ln()
}

/// Loss for an unannotated negative image: `-ln` of the all-cells-negative
/// product.
pub fn loss_unannotated_neg(logits: &GridLogits, label_index: usize, cfg: &LossConfig) -> f64 {
    -complement_log_product(logits.label_logits(label_index), cfg)
}

/// The multiple-instance term for a batch: the mean over all
/// (image, label) pairs of the status-appropriate per-label loss, with
/// annotated terms weighted by `lambda_annotated`.
pub fn loss_mil(batch: &[Example], cfg: &LossConfig) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for example in batch {
        if example.status.len() != example.logits.n_labels() {
            return Err(Error::DimensionMismatch {
                expected: (example.logits.n_labels(), 0),
                got: (example.status.len(), 0),
            });
        }
        for (label_index, status) in example.status.labels().iter().enumerate() {
            sum += match status {
                LabelStatus::Annotated { cells, .. } => {
                    cfg.lambda_annotated * loss_annotated(&example.logits, label_index, cells, cfg)?
                }
                LabelStatus::UnannotatedPositive => {
                    loss_unannotated_pos(&example.logits, label_index, cfg)
                }
                LabelStatus::UnannotatedNegative => {
                    loss_unannotated_neg(&example.logits, label_index, cfg)
                }
            };
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    let loss = sum / count as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(loss)
}

/// Pixel-level cross-entropy between map logits and binary targets,
/// averaged over all labels and cells, gated on labels that are annotated
/// and positive (`targets[k] = Some(..)` with `positives[k] = true`).
/// Labels without a positive annotation contribute zero but still count in
/// the label mean.
pub fn loss_multitask(
    map_logits: &GridLogits,
    targets: &[Option<&GridAnnotation>],
    positives: &[bool],
) -> Result<f64> {
    if targets.len() != map_logits.n_labels() || positives.len() != map_logits.n_labels() {
        return Err(Error::DimensionMismatch {
            expected: (map_logits.n_labels(), 0),
            got: (targets.len(), positives.len()),
        });
    }
    let cells = map_logits.cells_per_label();
    let mut sum = 0.0;
    for (label_index, (target, &positive)) in targets.iter().zip(positives).enumerate() {
        let (Some(annotation), true) = (target, positive) else {
            continue;
        };
        if annotation.cells().len() != cells {
            return Err(Error::DimensionMismatch {
                expected: (map_logits.side(), map_logits.side()),
                got: (annotation.side(), annotation.side()),
            });
        }
        let logits = map_logits.label_logits(label_index);
        let mut label_sum = 0.0;
        for (&logit, &on) in logits.iter().zip(annotation.cells()) {
            // t ln sigma(z) + (1-t) ln(1 - sigma(z)), stable in both tails.
            label_sum += if on { ln_sigmoid(logit) } else { ln_sigmoid(-logit) };
        }
        sum += label_sum / cells as f64;
    }
    let loss = -sum / map_logits.n_labels() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(loss)
}

/// Map term for one batch example, wiring targets from annotated-positive
/// statuses; the toy pipeline uses the grid logits themselves as the map
/// output.
fn example_multitask(example: &Example) -> Result<f64> {
    let targets: Vec<Option<&GridAnnotation>> = example
        .status
        .labels()
        .iter()
        .map(|s| match s {
            LabelStatus::Annotated { cells, positive: true } => Some(cells),
            _ => None,
        })
        .collect();
    let positives: Vec<bool> = targets.iter().map(Option::is_some).collect();
    loss_multitask(&example.logits, &targets, &positives)
}

/// Combined loss: MIL term plus `lambda_multitask` times the map term
/// (itself averaged over the batch).
pub fn loss_total(batch: &[Example], cfg: &LossConfig) -> Result<f64> {
    let mil = loss_mil(batch, cfg)?;
    if cfg.lambda_multitask == 0.0 || batch.is_empty() {
        return Ok(mil);
    }
    let mut map_sum = 0.0;
    for example in batch {
        map_sum += example_multitask(example)?;
    }
    let loss = mil + cfg.lambda_multitask * map_sum / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(loss)
}

/// Analytic gradient of [`loss_total`] with respect to every logit,
/// shaped like the batch's `GridLogits`.
pub fn grad_logits(batch: &[Example], cfg: &LossConfig) -> Result<Vec<GridLogits>> {
    let pair_count: usize = batch.iter().map(|e| e.status.len()).sum();
    let mut grads = Vec::with_capacity(batch.len());
    for example in batch {
        if example.status.len() != example.logits.n_labels() {
            return Err(Error::DimensionMismatch {
                expected: (example.logits.n_labels(), 0),
                got: (example.status.len(), 0),
            });
        }
        let cells = example.logits.cells_per_label();
        let mut grad = GridLogits::zeros(example.logits.n_labels(), example.logits.side());
        for (label_index, status) in example.status.labels().iter().enumerate() {
            let label_logits = example.logits.label_logits(label_index);
            let out = &mut grad.values_mut()[label_index * cells..(label_index + 1) * cells];
            let mil_scale = 1.0 / pair_count as f64;
            match status {
                LabelStatus::Annotated { cells: annotation, positive } => {
                    if annotation.cells().len() != cells {
                        return Err(Error::DimensionMismatch {
                            expected: (example.logits.side(), example.logits.side()),
                            got: (annotation.side(), annotation.side()),
                        });
                    }
                    let on_count = annotation.count_true();
                    let on_clamp = clamp_for(cfg, on_count);
                    let off_clamp = clamp_for(cfg, cells - on_count);
                    let scale = cfg.lambda_annotated * mil_scale;
                    for ((g, &logit), &on) in
                        out.iter_mut().zip(label_logits).zip(annotation.cells())
                    {
                        let (sign, clamp) = if on { (1.0, on_clamp) } else { (-1.0, off_clamp) };
                        *g += -scale * ln_factor_grad(logit, sign, clamp);
                    }
                    // Map-term contribution for annotated positives; the
                    // map logits are the grid logits in this pipeline.
                    if *positive && cfg.lambda_multitask > 0.0 {
                        let map_scale = cfg.lambda_multitask
                            / (batch.len() * example.logits.n_labels() * cells) as f64;
                        for ((g, &logit), &on) in
                            out.iter_mut().zip(label_logits).zip(annotation.cells())
                        {
                            let target = f64::from(u8::from(on));
                            *g += map_scale * (sigmoid(logit) - target);
                        }
                    }
                }
                LabelStatus::UnannotatedPositive => {
                    let clamp = clamp_for(cfg, cells);
                    let log_product = complement_log_product(label_logits, cfg);
                    let prediction = -log_product.exp_m1();
                    // Inside the floor the loss is flat, so the gradient is
                    // zero there.
                    let ratio = if prediction > PROBABILITY_FLOOR {
                        log_product.exp() / prediction
                    } else {
                        0.0
                    };
                    for (g, &logit) in out.iter_mut().zip(label_logits) {
                        *g += mil_scale * ratio * ln_factor_grad(logit, -1.0, clamp);
                    }
                }
                LabelStatus::UnannotatedNegative => {
                    let clamp = clamp_for(cfg, cells);
                    for (g, &logit) in out.iter_mut().zip(label_logits) {
                        *g += -mil_scale * ln_factor_grad(logit, -1.0, clamp);
                    }
                }
            }
        }
        if grad.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Central finite differences of [`loss_total`] over every logit in the
/// batch; the independent reference the analytic gradient is checked
/// against (also used by the CLI gradient check).
pub fn finite_difference_grad(batch: &[Example], cfg: &LossConfig, step: f64) -> Result<Vec<GridLogits>> {
    let mut grads = Vec::with_capacity(batch.len());
    let mut work: Vec<Example> = batch.to_vec();
    for example_index in 0..batch.len() {
        let n_labels = batch[example_index].logits.n_labels();
        let side = batch[example_index].logits.side();
        let mut grad = GridLogits::zeros(n_labels, side);
        for i in 0..n_labels * side * side {
            let original = batch[example_index].logits.values()[i];
            work[example_index].logits.values_mut()[i] = original + step;
            let plus = loss_total(&work, cfg)?;
            work[example_index].logits.values_mut()[i] = original - step;
            let minus = loss_total(&work, cfg)?;
            work[example_index].logits.values_mut()[i] = original;
            grad.values_mut()[i] = (plus - minus) / (2.0 * step);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Worst relative disagreement between two gradient sets, with an absolute
/// guard of 1e-7 under which disagreement is ignored (finite-difference
/// noise dominates there).
pub fn max_relative_gradient_error(analytic: &[GridLogits], reference: &[GridLogits]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, r) in analytic.iter().zip(reference) {
        for (&x, &y) in a.values().iter().zip(r.values()) {
            let diff = (x - y).abs();
            if diff <= 1e-7 {
                continue;
            }
            worst = worst.max(diff / x.abs().max(y.abs()));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unnormalized() -> LossConfig {
        LossConfig {
            normalize: false,
            lambda_multitask: 0.0,
            ..LossConfig::default()
        }
    }

    fn logits_1(values: Vec<f64>) -> GridLogits {
        let side = (values.len() as f64).sqrt() as usize;
        GridLogits::from_values(1, side, values).unwrap()
    }

    /// Logit whose sigmoid is p.
    fn logit_of(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn normalize_factor_reference_range() {
        // 256 factors reproduce the [0.98, 1] clamp.
        assert_abs_diff_eq!(normalize_factor(0.0, 256, 0.0056738), 0.98, epsilon = 1e-6);
        // One factor clamps at the constant itself; p = 1 is a fixed point.
        assert_abs_diff_eq!(normalize_factor(0.0, 1, 0.0056738), 0.0056738);
        for n in [1usize, 3, 17, 256, 1024] {
            assert_eq!(normalize_factor(1.0, n, 0.0056738), 1.0);
        }
    }

    #[test]
    fn lower_clamp_power_identity() {
        // (c^(1/n))^n == c: products of any length share the same minimum.
        let cfg = LossConfig::default();
        for n in [1usize, 4, 64, 256, 1024] {
            let lower = cfg.lower_clamp(n);
            assert_abs_diff_eq!(lower.powi(n as i32), cfg.range_constant, epsilon = 1e-9);
        }
    }

    #[test]
    fn predict_image_examples() {
        let cfg = unnormalized();
        // No evidence anywhere.
        assert_eq!(predict_image(&logits_1(vec![-1e9; 4]), 0, &cfg), 0.0);
        // One cell at probability one half.
        assert_abs_diff_eq!(predict_image(&logits_1(vec![0.0]), 0, &cfg), 0.5, epsilon = 1e-15);
        // Two live cells at one half: 1 - 0.25.
        let l = logits_1(vec![0.0, 0.0, -1e9, -1e9]);
        assert_abs_diff_eq!(predict_image(&l, 0, &cfg), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn predict_image_monotone_in_logits() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let values: Vec<f64> = (0..9).map(|_| rng.random_range(-4.0..4.0)).collect();
            let base = predict_image(&logits_1(values.clone()), 0, &cfg);
            let mut bumped = values.clone();
            let idx = rng.random_range(0..9);
            bumped[idx] += rng.random_range(0.01..0.5);
            let higher = predict_image(&logits_1(bumped), 0, &cfg);
            assert!(higher > base, "soft OR must increase in every logit");
        }
    }

    #[test]
    fn annotated_loss_examples() {
        let cfg = unnormalized();

        // Perfect fit on a fully-annotated grid.
        let full = GridAnnotation::from_cells(2, vec![true; 4]).unwrap();
        let loss = loss_annotated(&logits_1(vec![1e9; 4]), 0, &full, &cfg).unwrap();
        assert_eq!(loss, 0.0);

        // Single annotated cell at probability one half.
        let one = GridAnnotation::from_cells(1, vec![true]).unwrap();
        let loss = loss_annotated(&logits_1(vec![0.0]), 0, &one, &cfg).unwrap();
        assert_abs_diff_eq!(loss, -(0.5f64.ln()), epsilon = 1e-12);

        // Empty annotation with confident negatives.
        let none = GridAnnotation::empty(2);
        let loss = loss_annotated(&logits_1(vec![-1e9; 4]), 0, &none, &cfg).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn annotated_empty_equals_unannotated_neg() {
        // With B empty the annotated loss degenerates to the all-negative
        // product (normalization off).
        let cfg = unnormalized();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let values: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let l = logits_1(values);
            let a = loss_annotated(&l, 0, &GridAnnotation::empty(4), &cfg).unwrap();
            let b = loss_unannotated_neg(&l, 0, &cfg);
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn annotated_full_equals_all_positive_targets() {
        let cfg = unnormalized();
        let values: Vec<f64> = vec![0.3, -0.7, 1.2, 0.0];
        let l = logits_1(values.clone());
        let full = GridAnnotation::from_cells(2, vec![true; 4]).unwrap();
        let loss = loss_annotated(&l, 0, &full, &cfg).unwrap();
        let expected: f64 = values.iter().map(|&g| -ln_sigmoid(g)).sum();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
    }

    #[test]
    fn unannotated_pos_examples() {
        let cfg = unnormalized();
        assert_eq!(loss_unannotated_pos(&logits_1(vec![1e9]), 0, &cfg), 0.0);
        let l = logits_1(vec![0.0, 0.0, -1e9, -1e9]);
        assert_abs_diff_eq!(
            loss_unannotated_pos(&l, 0, &cfg),
            -(0.75f64.ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn unannotated_pos_saturated_hits_balanced_floor() {
        // Fully confident positives: every complement factor sits at its
        // lower clamp, the product equals the range constant, and the loss
        // tends to -ln(1 - c).
        let cfg = LossConfig::default();
        for cells in [1usize, 4, 16] {
            let side = (cells as f64).sqrt() as usize;
            let values = vec![1e9; side * side];
            let l = GridLogits::from_values(1, side, values).unwrap();
            let loss = loss_unannotated_pos(&l, 0, &cfg);
            assert_abs_diff_eq!(loss, -(1.0 - cfg.range_constant).ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn unannotated_neg_examples() {
        let cfg = unnormalized();
        assert_eq!(loss_unannotated_neg(&logits_1(vec![-1e9; 4]), 0, &cfg), 0.0);
        assert_abs_diff_eq!(
            loss_unannotated_neg(&logits_1(vec![0.0]), 0, &cfg),
            -(0.5f64.ln()),
            epsilon = 1e-12
        );

        // Saturated wrong answer with normalization on: the whole product
        // bottoms out at the range constant.
        let cfg = LossConfig::default();
        let l = logits_1(vec![1e9; 16]);
        assert_abs_diff_eq!(
            loss_unannotated_neg(&l, 0, &cfg),
            -cfg.range_constant.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn losses_stay_finite_for_extreme_logits() {
        // Both normalization settings must survive fully saturated logits.
        for cfg in [LossConfig::default(), unnormalized()] {
            for v in [-1e9, -40.0, 0.0, 40.0, 1e9] {
                let l = logits_1(vec![v; 16]);
                let ann = GridAnnotation::from_cells(
                    4,
                    (0..16).map(|i| i % 2 == 0).collect(),
                )
                .unwrap();
                assert!(loss_annotated(&l, 0, &ann, &cfg).unwrap().is_finite());
                assert!(loss_unannotated_pos(&l, 0, &cfg).is_finite());
                assert!(loss_unannotated_neg(&l, 0, &cfg).is_finite());
            }
        }
    }

    #[test]
    fn bounds_with_normalization_on() {
        // Per-product log terms are bounded below by ln(c); the annotated
        // loss by -2 ln(c).
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let values: Vec<f64> = (0..16).map(|_| rng.random_range(-60.0..60.0)).collect();
            let l = logits_1(values);
            let cells: Vec<bool> = (0..16).map(|_| rng.random_bool(0.4)).collect();
            let ann = GridAnnotation::from_cells(4, cells).unwrap();
            let bound = -2.0 * cfg.range_constant.ln();
            let loss = loss_annotated(&l, 0, &ann, &cfg).unwrap();
            assert!(loss <= bound + 1e-9, "loss {loss} exceeds bound {bound}");
            assert!(loss_unannotated_neg(&l, 0, &cfg) <= -cfg.range_constant.ln() + 1e-9);
        }
    }

    #[test]
    fn mil_averages_over_image_label_pairs() {
        let cfg = LossConfig {
            lambda_annotated: 3.0,
            lambda_multitask: 0.0,
            normalize: false,
            ..LossConfig::default()
        };
        // Two labels: one annotated, one unannotated-negative with zero
        // loss -> total is lambda * annotated / 2.
        let l = GridLogits::from_values(2, 1, vec![0.0, -1e9]).unwrap();
        let ann = GridAnnotation::from_cells(1, vec![true]).unwrap();
        let status = ExampleStatus::new(vec![
            LabelStatus::Annotated { cells: ann.clone(), positive: true },
            LabelStatus::UnannotatedNegative,
        ]);
        let batch = vec![Example { logits: l.clone(), status }];
        let expected = 3.0 * -(0.5f64.ln()) / 2.0;
        assert_abs_diff_eq!(loss_mil(&batch, &cfg).unwrap(), expected, epsilon = 1e-12);

        // lambda_annotated = 0 silences annotated examples.
        let cfg0 = LossConfig { lambda_annotated: 0.0, ..cfg };
        let status = ExampleStatus::new(vec![
            LabelStatus::Annotated { cells: ann, positive: true },
            LabelStatus::UnannotatedNegative,
        ]);
        let batch = vec![Example { logits: l, status }];
        assert_eq!(loss_mil(&batch, &cfg0).unwrap(), 0.0);
    }

    #[test]
    fn mil_zero_loss_example() {
        let cfg = unnormalized();
        let batch = vec![Example {
            logits: logits_1(vec![-1e9; 4]),
            status: ExampleStatus::new(vec![LabelStatus::UnannotatedNegative]),
        }];
        assert_eq!(loss_mil(&batch, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn multitask_examples() {
        // Perfectly separated logits: zero loss.
        let ann = GridAnnotation::from_cells(2, vec![true, false, false, true]).unwrap();
        let values: Vec<f64> = ann
            .cells()
            .iter()
            .map(|&on| if on { 1e9 } else { -1e9 })
            .collect();
        let l = logits_1(values);
        let loss = loss_multitask(&l, &[Some(&ann)], &[true]).unwrap();
        assert_eq!(loss, 0.0);

        // Single pixel, target 1, logit 0.
        let one = GridAnnotation::from_cells(1, vec![true]).unwrap();
        let l = logits_1(vec![0.0]);
        assert_abs_diff_eq!(
            loss_multitask(&l, &[Some(&one)], &[true]).unwrap(),
            -(0.5f64.ln()),
            epsilon = 1e-12
        );

        // Nothing gated: zero.
        let l = logits_1(vec![3.0]);
        assert_eq!(loss_multitask(&l, &[None], &[false]).unwrap(), 0.0);
    }

    #[test]
    fn total_combines_terms() {
        let one = GridAnnotation::from_cells(1, vec![true]).unwrap();
        let status = ExampleStatus::new(vec![LabelStatus::Annotated {
            cells: one,
            positive: true,
        }]);
        let batch = vec![Example { logits: logits_1(vec![0.0]), status }];

        let mut cfg = LossConfig { normalize: false, ..LossConfig::default() };
        cfg.lambda_annotated = 1.0;
        cfg.lambda_multitask = 0.0;
        let mil_only = loss_total(&batch, &cfg).unwrap();
        assert_abs_diff_eq!(mil_only, -(0.5f64.ln()), epsilon = 1e-12);

        cfg.lambda_multitask = 300.0;
        let with_map = loss_total(&batch, &cfg).unwrap();
        // Map term: same -ln(0.5) for the one gated cell.
        assert_abs_diff_eq!(
            with_map,
            -(0.5f64.ln()) + 300.0 * -(0.5f64.ln()),
            epsilon = 1e-9
        );
    }

    #[test]
    fn gradient_hand_example() {
        // Single-cell unannotated positive at sigma = 0.5: dL/dlogit = -0.5.
        let cfg = unnormalized();
        let batch = vec![Example {
            logits: logits_1(vec![0.0]),
            status: ExampleStatus::new(vec![LabelStatus::UnannotatedPositive]),
        }];
        let grads = grad_logits(&batch, &cfg).unwrap();
        assert_abs_diff_eq!(grads[0].values()[0], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn gradient_zero_at_perfect_fit() {
        let cfg = unnormalized();
        let ann = GridAnnotation::from_cells(2, vec![true, false, true, false]).unwrap();
        let values: Vec<f64> = ann
            .cells()
            .iter()
            .map(|&on| if on { 1e9 } else { -1e9 })
            .collect();
        let batch = vec![Example {
            logits: logits_1(values),
            status: ExampleStatus::new(vec![LabelStatus::Annotated {
                cells: ann,
                positive: true,
            }]),
        }];
        let grads = grad_logits(&batch, &cfg).unwrap();
        assert!(grads[0].values().iter().all(|&g| g == 0.0));
    }

    fn random_batch(rng: &mut ChaCha8Rng, n_labels: usize, side: usize) -> Vec<Example> {
        let n_images = rng.random_range(1..4);
        (0..n_images)
            .map(|_| {
                let cells = side * side;
                let values: Vec<f64> = (0..n_labels * cells)
                    .map(|_| rng.random_range(-4.0..4.0))
                    .collect();
                let statuses: Vec<LabelStatus> = (0..n_labels)
                    .map(|_| match rng.random_range(0..3) {
                        0 => {
                            let bits: Vec<bool> =
                                (0..cells).map(|_| rng.random_bool(0.3)).collect();
                            LabelStatus::Annotated {
                                cells: GridAnnotation::from_cells(side, bits).unwrap(),
                                positive: rng.random_bool(0.5),
                            }
                        }
                        1 => LabelStatus::UnannotatedPositive,
                        _ => LabelStatus::UnannotatedNegative,
                    })
                    .collect();
                Example {
                    logits: GridLogits::from_values(n_labels, side, values).unwrap(),
                    status: ExampleStatus::new(statuses),
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for lambda_multitask in [0.0, 300.0] {
            for normalize in [true, false] {
                let cfg = LossConfig {
                    lambda_multitask,
                    normalize,
                    ..LossConfig::default()
                };
                for _ in 0..5 {
                    let batch = random_batch(&mut rng, 3, 4);
                    let analytic = grad_logits(&batch, &cfg).unwrap();
                    let numeric = finite_difference_grad(&batch, &cfg, 1e-5).unwrap();
                    let err = max_relative_gradient_error(&analytic, &numeric);
                    assert!(err < 1e-4, "gradient mismatch: {err}");
                }
            }
        }
    }

    #[test]
    fn logit_of_is_sigmoid_inverse() {
        for p in [0.01, 0.25, 0.5, 0.9] {
            assert_abs_diff_eq!(sigmoid(logit_of(p)), p, epsilon = 1e-12);
        }
    }
}

//! gazeloc: label-specific localization annotations from eye tracking.
//!
//! The crate turns eye-tracking recordings of radiology readings
//! (fixations plus a timestamped dictation transcript) into per-label
//! localization heatmaps, and provides the full numerical stack needed to
//! train and evaluate localization models against them:
//!
//! - `ingest` loads and validates the on-disk session formats;
//! - `labeler` detects label mentions in sentences with negation scoping
//!   and grouping onto the study label set;
//! - `gaze_heatmap` selects fixations in a temporal window around each
//!   mention and renders duration-weighted Gaussian heatmaps;
//! - `grid` converts between heatmaps, coarse cell grids and binary masks;
//! - `losses` implements the soft-OR multiple-instance and multi-task map
//!   losses with balanced range normalization and analytic gradients;
//! - `metrics` scores localization (validated-threshold IoU) and
//!   classification (Mann-Whitney AUC);
//! - `window_search` reruns the two-stage search over accumulation
//!   windows;
//! - `synth` generates seeded synthetic sessions with known ground truth;
//! - `toy_trainer` trains a small linear model to compare supervision
//!   sources end to end.

pub mod error;
pub mod gaze_heatmap;
pub mod grid;
pub mod ingest;
pub mod labeler;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod toy_trainer;
pub mod window_search;

pub use error::{Error, Result};
pub use gaze_heatmap::{Heatmap, RenderConfig, TimeWindow};
pub use grid::{BinaryMask, GridAnnotation, DEFAULT_GRID_SIDE, DEFAULT_HEATMAP_THRESHOLD};
pub use ingest::{EllipseAnnotation, FixationRecord, Sentence, Session, TimedWord};
pub use labeler::{LabelId, LabelMention, Polarity, RuleSet};
pub use losses::{Example, ExampleStatus, GridLogits, LabelStatus, LossConfig};
pub use synth::{SynthConfig, SynthSession};
pub use toy_trainer::{SupervisionArm, ToyModel, TrainConfig};
pub use window_search::{EndRule, StartRule, WindowSpec};

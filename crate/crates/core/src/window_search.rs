//! Search over fixation-accumulation window rules.
//!
//! Stage 1 scores the full cross product of start rules (three of them
//! carrying a coarse time delay of 2.5, 5 or 7.5 seconds) and end rules.
//! Stage 2 keeps the winning rule shape and sweeps a finer
//! 0.5..5 s delay grid. Each candidate is scored by the mean IoU of its
//! extracted heatmaps against the ground-truth ellipse masks, binarized at
//! a threshold validated per candidate on a held-out split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze_heatmap::{render_heatmap, select_fixations, RenderConfig, TimeWindow};
use crate::grid::{rasterize_label_ellipses, BinaryMask};
use crate::ingest::{EllipseAnnotation, Session};
use crate::labeler::{label_report, LabelMention, RuleSet};
use crate::metrics::{apply_validated_threshold, iou, sweep_thresholds, validate_threshold};

/// Where a candidate window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartRule {
    /// max(mention-sentence start - delay, previous-sentence start).
    MentionSentenceMinusTimeClampedPrev,
    /// max(first mention end - delay, previous-sentence start).
    FirstMentionMinusTimeClampedPrev,
    /// max(mention-sentence end - delay, previous-sentence start).
    EndSentenceMinusTimeClampedPrev,
    /// Start of the report's first sentence.
    FirstReportSentence,
    /// Start of the previous sentence.
    PrevSentenceStart,
    /// End of the previous sentence.
    PrevSentenceEnd,
    /// Start of the mentioning sentence.
    MentionSentenceStart,
    /// Start of the recording for this image.
    RecordingStart,
}

impl StartRule {
    pub const ALL: [StartRule; 8] = [
        StartRule::MentionSentenceMinusTimeClampedPrev,
        StartRule::FirstMentionMinusTimeClampedPrev,
        StartRule::EndSentenceMinusTimeClampedPrev,
        StartRule::FirstReportSentence,
        StartRule::PrevSentenceStart,
        StartRule::PrevSentenceEnd,
        StartRule::MentionSentenceStart,
        StartRule::RecordingStart,
    ];

    /// Whether this rule uses a time delay.
    pub fn is_delayed(&self) -> bool {
        matches!(
            self,
            StartRule::MentionSentenceMinusTimeClampedPrev
                | StartRule::FirstMentionMinusTimeClampedPrev
                | StartRule::EndSentenceMinusTimeClampedPrev
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            StartRule::MentionSentenceMinusTimeClampedPrev => "mention_sentence_minus_time",
            StartRule::FirstMentionMinusTimeClampedPrev => "first_mention_minus_time",
            StartRule::EndSentenceMinusTimeClampedPrev => "end_sentence_minus_time",
            StartRule::FirstReportSentence => "first_report_sentence",
            StartRule::PrevSentenceStart => "prev_sentence_start",
            StartRule::PrevSentenceEnd => "prev_sentence_end",
            StartRule::MentionSentenceStart => "mention_sentence_start",
            StartRule::RecordingStart => "recording_start",
        }
    }
}

/// Where a candidate window ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndRule {
    MentionSentenceStart,
    MentionSentenceEnd,
    FirstMentionEnd,
    LastMentionEnd,
}

impl EndRule {
    pub const ALL: [EndRule; 4] = [
        EndRule::MentionSentenceStart,
        EndRule::MentionSentenceEnd,
        EndRule::FirstMentionEnd,
        EndRule::LastMentionEnd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EndRule::MentionSentenceStart => "mention_sentence_start",
            EndRule::MentionSentenceEnd => "mention_sentence_end",
            EndRule::FirstMentionEnd => "first_mention_end",
            EndRule::LastMentionEnd => "last_mention_end",
        }
    }
}

/// One candidate accumulation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start_rule: StartRule,
    /// Delay in seconds; meaningful only for delayed start rules.
    pub time_delay: f64,
    pub end_rule: EndRule,
}

impl WindowSpec {
    /// Serialized form used in search reports.
    pub fn describe(&self) -> String {
        if self.start_rule.is_delayed() {
            format!(
                "{}[{}s]->{}",
                self.start_rule.name(),
                self.time_delay,
                self.end_rule.name()
            )
        } else {
            format!("{}->{}", self.start_rule.name(), self.end_rule.name())
        }
    }

    /// The window this rule produces for one mention, or `None` when the
    /// end falls before the start (such windows are discarded; zero
    /// duration is kept).
    pub fn window_for(&self, mention: &LabelMention, session: &Session) -> Option<TimeWindow> {
        let sentence = &session.sentences[mention.sentence_index];
        let previous_start = if mention.sentence_index == 0 {
            session.recording_start
        } else {
            session.sentences[mention.sentence_index - 1].t_start()
        };
        let previous_end = if mention.sentence_index == 0 {
            session.recording_start
        } else {
            session.sentences[mention.sentence_index - 1].t_end()
        };
        let t_start = match self.start_rule {
            StartRule::MentionSentenceMinusTimeClampedPrev => {
                (sentence.t_start() - self.time_delay).max(previous_start)
            }
            StartRule::FirstMentionMinusTimeClampedPrev => {
                (mention.t_first_mention_end - self.time_delay).max(previous_start)
            }
            StartRule::EndSentenceMinusTimeClampedPrev => {
                (sentence.t_end() - self.time_delay).max(previous_start)
            }
            StartRule::FirstReportSentence => session
                .sentences
                .first()
                .map_or(session.recording_start, |s| s.t_start()),
            StartRule::PrevSentenceStart => previous_start,
            StartRule::PrevSentenceEnd => previous_end,
            StartRule::MentionSentenceStart => sentence.t_start(),
            StartRule::RecordingStart => session.recording_start,
        };
        let t_end = match self.end_rule {
            EndRule::MentionSentenceStart => sentence.t_start(),
            EndRule::MentionSentenceEnd => sentence.t_end(),
            EndRule::FirstMentionEnd => mention.t_first_mention_end,
            EndRule::LastMentionEnd => mention.t_last_mention_end,
        };
        (t_end >= t_start).then_some(TimeWindow { t_start, t_end })
    }
}

/// Coarse stage-1 delays.
pub const STAGE1_DELAYS: [f64; 3] = [2.5, 5.0, 7.5];
/// Fine stage-2 delay grid.
pub const STAGE2_DELAYS: [f64; 13] = [
    0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0,
];

/// The cross product of start rules and end rules. Delayed start rules are
/// expanded once per delay and dropped entirely when `delays` is empty.
pub fn enumerate_candidates(delays: &[f64]) -> Vec<WindowSpec> {
    let mut specs = Vec::new();
    for start_rule in StartRule::ALL {
        let rule_delays: &[f64] = if start_rule.is_delayed() { delays } else { &[0.0] };
        for &time_delay in rule_delays {
            for end_rule in EndRule::ALL {
                specs.push(WindowSpec {
                    start_rule,
                    time_delay,
                    end_rule,
                });
            }
        }
    }
    specs
}

/// A session bundled with its mention list and per-label ground-truth
/// masks, precomputed once per search.
pub struct ScoringSession<'a> {
    session: &'a Session,
    /// Positive mentions with the rasterized mask of their label.
    mentions: Vec<(LabelMention, BinaryMask)>,
}

/// Builds scoring sessions: runs the labeler, keeps positive mentions of
/// labels that have ground-truth ellipses, and rasterizes the ellipse
/// union per label.
pub fn prepare_sessions<'a>(
    sessions: &'a [(Session, Vec<EllipseAnnotation>)],
    rules: &RuleSet,
) -> Vec<ScoringSession<'a>> {
    sessions
        .iter()
        .map(|(session, ellipses)| {
            let report = label_report(session, rules);
            let mut mentions = Vec::new();
            for (label, finding) in &report {
                let label_ellipses: Vec<EllipseAnnotation> = ellipses
                    .iter()
                    .filter(|e| &e.label == label)
                    .cloned()
                    .collect();
                if label_ellipses.is_empty() {
                    continue;
                }
                let mask = rasterize_label_ellipses(
                    &label_ellipses,
                    session.width as usize,
                    session.height as usize,
                )
                .expect("ground-truth ellipses rasterize to non-empty masks");
                for mention in &finding.positive_mentions {
                    mentions.push((mention.clone(), mask.clone()));
                }
            }
            ScoringSession { session, mentions }
        })
        .collect()
}

/// Scored candidate.
#[derive(Debug, Clone, Serialize)]
pub struct SpecScore {
    pub spec: WindowSpec,
    pub mean_iou: f64,
    pub threshold: f64,
    pub n_mentions: usize,
}

/// Scores one candidate: renders a heatmap per mention window, validates a
/// threshold on the validation split, then reports the mean IoU over the
/// scoring split at that threshold. Mentions whose window is discarded
/// (negative duration) do not contribute.
pub fn score_spec(
    spec: &WindowSpec,
    validation: &[ScoringSession<'_>],
    scoring: &[ScoringSession<'_>],
    render: &RenderConfig,
) -> Result<SpecScore> {
    let rendered = |sessions: &[ScoringSession<'_>]| {
        let mut heatmaps = Vec::new();
        let mut masks = Vec::new();
        for scoring_session in sessions {
            for (mention, mask) in &scoring_session.mentions {
                let Some(window) = spec.window_for(mention, scoring_session.session) else {
                    continue;
                };
                let selected = select_fixations(&scoring_session.session.fixations, window);
                let heatmap = render_heatmap(
                    &selected,
                    scoring_session.session.width as usize,
                    scoring_session.session.height as usize,
                    render,
                );
                heatmaps.push(heatmap);
                masks.push(mask.clone());
            }
        }
        (heatmaps, masks)
    };

    let (val_maps, val_masks) = rendered(validation);
    if val_maps.is_empty() {
        return Err(Error::NoPositiveExamples);
    }
    let (threshold, _) = validate_threshold(&val_maps, &val_masks, &sweep_thresholds())?;

    let (score_maps, score_masks) = rendered(scoring);
    let n_mentions = score_maps.len();
    let mean_iou = if n_mentions == 0 {
        0.0
    } else {
        let mut sum = 0.0;
        for (heatmap, mask) in score_maps.iter().zip(&score_masks) {
            sum += iou(&apply_validated_threshold(heatmap, threshold), mask)?;
        }
        sum / n_mentions as f64
    };
    Ok(SpecScore {
        spec: *spec,
        mean_iou,
        threshold,
        n_mentions,
    })
}

/// Ranks candidates by mean IoU, descending; ties keep enumeration order.
fn rank(mut scored: Vec<SpecScore>) -> Vec<SpecScore> {
    scored.sort_by(|a, b| b.mean_iou.partial_cmp(&a.mean_iou).expect("IoU is finite"));
    scored
}

/// Runs the search. Sessions alternate between the threshold-validation
/// split (even indices) and the scoring split (odd indices). Stage 1 ranks
/// the full coarse cross product; stage 2 re-ranks the stage-1 winner's
/// rule shape over the fine delay grid (a non-delayed winner makes stage 2
/// a single-candidate pass).
pub fn search(
    sessions: &[(Session, Vec<EllipseAnnotation>)],
    rules: &RuleSet,
    render: &RenderConfig,
    stage: u8,
) -> Result<Vec<SpecScore>> {
    let prepared = prepare_sessions(sessions, rules);
    let mut validation = Vec::new();
    let mut scoring = Vec::new();
    for (i, s) in prepared.into_iter().enumerate() {
        if i % 2 == 0 {
            validation.push(s);
        } else {
            scoring.push(s);
        }
    }

    let run_stage = |specs: &[WindowSpec]| -> Result<Vec<SpecScore>> {
        let scored: Result<Vec<SpecScore>> = specs
            .par_iter()
            .map(|spec| score_spec(spec, &validation, &scoring, render))
            .collect();
        Ok(rank(scored?))
    };

    let stage1 = run_stage(&enumerate_candidates(&STAGE1_DELAYS))?;
    match stage {
        1 => Ok(stage1),
        2 => {
            let winner = stage1.first().ok_or(Error::NoPositiveExamples)?;
            let specs: Vec<WindowSpec> = if winner.spec.start_rule.is_delayed() {
                STAGE2_DELAYS
                    .iter()
                    .map(|&time_delay| WindowSpec {
                        start_rule: winner.spec.start_rule,
                        time_delay,
                        end_rule: winner.spec.end_rule,
                    })
                    .collect()
            } else {
                vec![winner.spec]
            };
            run_stage(&specs)
        }
        other => Err(Error::InvalidConfig(format!(
            "stage must be 1 or 2, got {other}"
        ))),
    }
}

//! Acceptance suite: every numbered check below pins one contract of the
//! toolkit at its stated tolerance and prints a pass line. Run with
//! `cargo test -p gazeloc --test acceptance -- --nocapture` to see them.

use gazeloc::gaze_heatmap::{mention_window, render_heatmap, RenderConfig, TimeWindow};
use gazeloc::labeler::{default_rules, is_image_positive, label_report, LabelMention, Polarity};
use gazeloc::losses::{
    finite_difference_grad, grad_logits, max_relative_gradient_error, normalize_factor, Example,
    ExampleStatus, GridLogits, LabelStatus, LossConfig,
};
use gazeloc::metrics::{auc, auc_brute_force};
use gazeloc::synth::{generate, SynthConfig};
use gazeloc::toy_trainer::{
    evaluate_arms, prepare_examples, ExtractionConfig, SupervisionArm, TrainConfig,
};
use gazeloc::window_search::{search, StartRule};
use gazeloc::{
    EllipseAnnotation, FixationRecord, GridAnnotation, LabelId, Sentence, Session, TimedWord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn pass(name: &str, detail: &str) {
    println!("ACCEPTANCE {name}: PASS ({detail})");
}

/// Balanced range normalization: 256 factors reproduce the [0.98, 1]
/// clamp, and the per-factor lower bound powers back to the range constant
/// for any factor count.
#[test]
fn a1_balanced_range_normalization_identity() {
    let c = 0.0056738;
    let at_256 = normalize_factor(0.0, 256, c);
    assert!(
        (at_256 - 0.98).abs() < 1e-6,
        "lower clamp at 256 factors: {at_256}"
    );
    for n in [1usize, 4, 64, 1024] {
        let lower = normalize_factor(0.0, n, c);
        let back = lower.powi(n as i32);
        assert!(
            (back - c).abs() < 1e-9,
            "clamp^{n} = {back}, expected {c}"
        );
    }
    pass(
        "1 balanced-range normalization",
        &format!("clamp(256)={at_256:.8}, power identity within 1e-9"),
    );
}

fn random_instance(rng: &mut ChaCha8Rng, n_labels: usize, side: usize) -> Example {
    let cells = side * side;
    let values: Vec<f64> = (0..n_labels * cells)
        .map(|_| rng.random_range(-4.0..4.0))
        .collect();
    let statuses: Vec<LabelStatus> = (0..n_labels)
        .map(|label| match (label + rng.random_range(0..3)) % 3 {
            0 => {
                let bits: Vec<bool> = (0..cells).map(|_| rng.random_bool(0.3)).collect();
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
}

/// Analytic gradients of the combined loss match central finite
/// differences on randomized instances covering all three supervision
/// states and both map-term weights.
#[test]
fn a2_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..100 {
        let cfg = LossConfig {
            lambda_multitask: if i % 2 == 0 { 300.0 } else { 0.0 },
            ..LossConfig::default()
        };
        let batch = vec![random_instance(&mut rng, 3, 4)];
        let analytic = grad_logits(&batch, &cfg).unwrap();
        let numeric = finite_difference_grad(&batch, &cfg, 1e-5).unwrap();
        let err = max_relative_gradient_error(&analytic, &numeric);
        worst = worst.max(err);
        assert!(err < 1e-4, "instance {i}: relative error {err}");
        checked += 1;
    }
    pass(
        "2 gradient correctness",
        &format!("{checked} randomized instances, worst relative error {worst:.2e}"),
    );
}

/// The mention window equals the shorter of the two candidate windows
/// (previous-sentence start vs fixed lead before the sentence), exactly,
/// on randomized sentence layouts.
#[test]
fn a3_window_rule_matches_two_candidate_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let recording_start = rng.random_range(-4.0..4.0);
        let mut t = recording_start + rng.random_range(0.0..3.0);
        let n = rng.random_range(1..7);
        let mut sentences = Vec::new();
        for index in 0..n {
            let start = t;
            let end = start + rng.random_range(0.4..4.0);
            sentences.push(Sentence {
                index,
                words: vec![
                    TimedWord { text: "w".into(), t_start: start, t_end: start + 0.1 },
                    TimedWord { text: "v".into(), t_start: end - 0.1, t_end: end },
                ],
            });
            t = end + rng.random_range(0.0..3.0);
        }
        let idx = rng.random_range(0..n);
        let mention_end =
            rng.random_range(sentences[idx].t_start()..=sentences[idx].t_end());
        let lead = rng.random_range(0.0..4.0);
        let config = RenderConfig::new(1.0).unwrap().with_window_lead(lead).unwrap();
        let mention = LabelMention {
            label: LabelId::new("Opacity"),
            sentence_index: idx,
            polarity: Polarity::Positive,
            t_first_mention_end: mention_end,
            t_last_mention_end: mention_end,
            matched_span: (0, 1),
        };

        let got = mention_window(&mention, &sentences, &config, recording_start);

        let previous_start = if idx == 0 {
            recording_start
        } else {
            sentences[idx - 1].t_start()
        };
        let candidates = [
            TimeWindow { t_start: previous_start, t_end: mention_end },
            TimeWindow {
                t_start: sentences[idx].t_start() - lead,
                t_end: mention_end,
            },
        ];
        let oracle = if candidates[0].duration() <= candidates[1].duration() {
            candidates[0]
        } else {
            candidates[1]
        };
        assert_eq!(
            got.t_start.to_bits(),
            oracle.t_start.to_bits(),
            "trial {trial}: start mismatch"
        );
        assert_eq!(got.t_end.to_bits(), oracle.t_end.to_bits());
    }
    pass("3 window-rule oracle", "1000 randomized layouts, bit-exact");
}

/// Stage-2 window search on sessions generated with a 1.5 s dictation lead
/// recovers a delay adjacent to it. The search also has to pick a
/// delay-bearing start rule in stage 1 for stage 2 to sweep.
#[test]
fn a4_window_search_recovers_planted_delay() {
    let rules = default_rules();
    let mut config = SynthConfig::new(20, 200);
    config.image_size = 96;
    config.labels = vec![
        LabelId::new("Pneumothorax"),
        LabelId::new("ECS"),
        LabelId::new("Fracture"),
    ];
    config.lead_time = 1.5;
    config.dwell_noise = 0.1;
    config.distractor_fixation_rate = 0.2;
    let sessions = generate(&config, &rules).unwrap();
    let pairs: Vec<(Session, Vec<EllipseAnnotation>)> = sessions
        .into_iter()
        .map(|s| (s.session, s.ellipses))
        .collect();
    let render = RenderConfig::new(5.0).unwrap();

    let stage2 = search(&pairs, &rules, &render, 2).unwrap();
    let winner = &stage2[0];
    assert!(
        winner.spec.start_rule.is_delayed(),
        "stage-1 winner must carry a delay, got {}",
        winner.spec.describe()
    );
    assert!(
        [1.25, 1.5, 1.75].contains(&winner.spec.time_delay),
        "winning delay {} not adjacent to the planted 1.5 s lead (spec {})",
        winner.spec.time_delay,
        winner.spec.describe()
    );
    pass(
        "4 extraction-delay recovery",
        &format!(
            "winner {} with mean IoU {:.4}",
            winner.spec.describe(),
            winner.mean_iou
        ),
    );
}

/// Training the toy model with ellipse annotations beats gaze annotations,
/// which beat image-level labels alone, with non-overlapping per-seed IoU
/// ranges; the arms' AUCs stay within 0.05 of each other.
#[test]
fn a5_supervision_arms_order_correctly() {
    let rules = default_rules();
    let corpus_labels = ["Pneumothorax", "ECS", "Fracture"];
    let seeds = [1u64, 2, 3, 4, 5];

    // Per arm: per-seed mean IoU / AUC across the three one-label corpora.
    let mut iou: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    let mut auc_values: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for &seed in &seeds {
        let mut per_arm_iou: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
        let mut per_arm_auc: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
        for (corpus_index, label) in corpus_labels.iter().enumerate() {
            let mut config = SynthConfig::new(seed * 1000 + corpus_index as u64, 140);
            config.image_size = 128;
            config.labels = vec![LabelId::new(*label)];
            config.dwell_noise = 0.2;
            config.distractor_fixation_rate = 0.25;
            config.positive_rate = 0.55;
            config.blob_intensity = 0.9;
            config.blob_intensity_spread = 0.35;
            config.core_radius_fraction = 0.82;
            config.rim_texture = 0.3;
            config.halo_radius_scale = 2.2;
            config.halo_intensity_ratio = 0.68;
            config.decoy_rate = 0.8;
            config.dwell_radius_fraction = 0.5;
            let sessions = generate(&config, &rules).unwrap();
            let extraction = ExtractionConfig {
                render: RenderConfig::new(4.0).unwrap(),
                grid_side: 32,
                threshold: 0.15,
            };
            let examples = prepare_examples(&sessions, &rules, &extraction).unwrap();
            let base = TrainConfig {
                epochs: 150,
                learning_rate: 0.3,
                ..TrainConfig::new(SupervisionArm::Unannotated, seed)
            };
            let report = evaluate_arms(
                &examples,
                &config.labels,
                32,
                &SupervisionArm::ALL,
                &[seed],
                &base,
            )
            .unwrap();
            for arm in &report.arms {
                let key = match arm.arm.as_str() {
                    "unannotated" => "unannotated",
                    "et" => "et",
                    _ => "ellipse",
                };
                per_arm_iou.entry(key).or_default().push(arm.iou_mean.unwrap());
                per_arm_auc.entry(key).or_default().push(arm.auc_mean.unwrap());
            }
        }
        for (arm, values) in per_arm_iou {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            iou.entry(arm).or_default().push(mean);
        }
        for (arm, values) in per_arm_auc {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            auc_values.entry(arm).or_default().push(mean);
        }
    }

    let range = |values: &[f64]| {
        (
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let ellipse = range(&iou["ellipse"]);
    let et = range(&iou["et"]);
    let unannotated = range(&iou["unannotated"]);
    assert!(
        ellipse.0 > et.1,
        "ellipse range {ellipse:?} overlaps gaze range {et:?}"
    );
    assert!(
        et.0 > unannotated.1,
        "gaze range {et:?} overlaps unannotated range {unannotated:?}"
    );

    let mean = |values: &[f64]| values.iter().sum::<f64>() / values.len() as f64;
    let aucs = [
        mean(&auc_values["ellipse"]),
        mean(&auc_values["et"]),
        mean(&auc_values["unannotated"]),
    ];
    let mut max_gap: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            max_gap = max_gap.max((aucs[i] - aucs[j]).abs());
        }
    }
    assert!(max_gap < 0.05, "AUC gap {max_gap} across arms {aucs:?}");

    pass(
        "5 supervision ordering",
        &format!(
            "IoU ellipse {:.3}-{:.3} > gaze {:.3}-{:.3} > unannotated {:.3}-{:.3}; AUC gap {:.3}",
            ellipse.0, ellipse.1, et.0, et.1, unannotated.0, unannotated.1, max_gap
        ),
    );
}

/// The rank-based AUC equals the all-pairs statistic exactly, ties
/// included.
#[test]
fn a6_auc_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..500 {
        let n = rng.random_range(2..=50);
        // Coarse score grid to force plenty of ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..=12) as f64 / 12.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let fast = auc(&scores, &labels).unwrap();
        let slow = auc_brute_force(&scores, &labels).unwrap();
        assert_eq!(
            fast.to_bits(),
            slow.to_bits(),
            "trial {trial}: {fast} != {slow}"
        );
    }
    pass("6 AUC oracle equivalence", "500 random inputs, exact match");
}

/// Rendering properties: unit peak after normalization, invariance to
/// duration rescaling, and the analytic Gaussian falloff at one standard
/// deviation.
#[test]
fn a7_heatmap_rendering_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sigma = 16.0;
    let config = RenderConfig::new(sigma).unwrap();
    for _ in 0..100 {
        // A probe fixation far to the left, clutter far to the right.
        let n = rng.random_range(1..8);
        let mut selected: Vec<(FixationRecord, f64)> = (0..n)
            .map(|_| {
                (
                    FixationRecord {
                        x: rng.random_range(330.0..480.0),
                        y: rng.random_range(20.0..236.0),
                        t_start: 0.0,
                        t_end: 1.0,
                    },
                    rng.random_range(0.05..3.0),
                )
            })
            .collect();
        let probe_weight = rng.random_range(0.05..3.0);
        selected.push((
            FixationRecord { x: 100.0, y: 128.0, t_start: 0.0, t_end: 1.0 },
            probe_weight,
        ));

        let map = render_heatmap(&selected, 512, 256, &config);
        assert!((map.max_value() - 1.0).abs() < 1e-12, "max {}", map.max_value());

        // Scaling all durations leaves the normalized map unchanged.
        let scale = rng.random_range(0.01..100.0);
        let scaled: Vec<(FixationRecord, f64)> =
            selected.iter().map(|(f, w)| (*f, w * scale)).collect();
        let scaled_map = render_heatmap(&scaled, 512, 256, &config);
        for (a, b) in map.values().iter().zip(scaled_map.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        // Falloff at one standard deviation from the isolated probe peak.
        let peak = map.get(100, 128);
        let at_sigma = map.get(116, 128);
        let expected = (-0.5f64).exp() * peak;
        assert!(
            (at_sigma - expected).abs() < 1e-9,
            "falloff {at_sigma} vs {expected}"
        );
    }
    pass(
        "7 heatmap properties",
        "100 random fixation sets: peak, scaling, falloff all within tolerance",
    );
}

/// The labeler recovers the generator's gold labels exactly on a synthetic
/// corpus whose sentences are built from the rule table's own phrases,
/// negated distractor sentences included.
#[test]
fn a8_labeler_round_trip_on_synthetic_corpus() {
    let rules = default_rules();
    let config = SynthConfig::new(8, 200);
    let sessions = generate(&config, &rules).unwrap();

    let mut true_positives = 0usize;
    let mut false_positives = 0usize;
    let mut false_negatives = 0usize;
    let mut negated_sentences = 0usize;
    for synth in &sessions {
        let report = label_report(&synth.session, &rules);
        let detected: BTreeSet<LabelId> = report
            .iter()
            .filter(|(_, finding)| is_image_positive(finding, &rules))
            .map(|(label, _)| label.clone())
            .collect();
        negated_sentences += report
            .values()
            .filter(|f| f.polarity == Polarity::Negative)
            .count();
        true_positives += detected.intersection(&synth.gold_positive).count();
        false_positives += detected.difference(&synth.gold_positive).count();
        false_negatives += synth.gold_positive.difference(&detected).count();
    }
    assert!(true_positives > 100, "corpus too sparse: {true_positives} positives");
    assert!(negated_sentences > 50, "expected negated distractor sentences");
    assert_eq!(false_positives, 0, "labeler produced false positives");
    assert_eq!(false_negatives, 0, "labeler missed gold positives");
    pass(
        "8 labeler round-trip",
        &format!(
            "200 reports: {true_positives} TP, 0 FP, 0 FN ({negated_sentences} negated findings)"
        ),
    );
}

/// The search's candidate enumeration and the paper-shaped window rule
/// stay available to stage 2 (regression guard for the delay recovery).
#[test]
fn stage1_delayed_rules_present() {
    let specs = gazeloc::window_search::enumerate_candidates(&gazeloc::window_search::STAGE1_DELAYS);
    assert_eq!(specs.len(), 56);
    assert!(specs
        .iter()
        .any(|s| s.start_rule == StartRule::MentionSentenceMinusTimeClampedPrev));
}

/// Zero-noise sessions: fixations selected by the extraction window land
/// inside the mentioned ellipse, and the binarized extraction overlaps the
/// ground truth by at least half on average.
#[test]
fn zero_noise_extraction_recovers_ellipses() {
    let rules = default_rules();
    let mut config = SynthConfig::new(99, 40);
    config.image_size = 128;
    config.labels = vec![
        LabelId::new("Pneumothorax"),
        LabelId::new("ECS"),
        LabelId::new("Fracture"),
    ];
    config.dwell_noise = 0.0;
    config.distractor_fixation_rate = 0.0;
    let sessions = generate(&config, &rules).unwrap();
    let render = RenderConfig::new(6.0).unwrap();

    let mut ious = Vec::new();
    for synth in &sessions {
        let heatmaps =
            gazeloc::toy_trainer::session_label_heatmaps(&synth.session, &rules, &render);
        for (label, heatmap) in &heatmaps {
            let ellipses: Vec<EllipseAnnotation> = synth
                .ellipses
                .iter()
                .filter(|e| &e.label == label)
                .cloned()
                .collect();
            assert!(!ellipses.is_empty());
            let mask = gazeloc::grid::rasterize_label_ellipses(&ellipses, 128, 128).unwrap();
            let prediction = gazeloc::grid::binarize_mask(heatmap, 0.15);
            ious.push(gazeloc::metrics::iou(&prediction, &mask).unwrap());
        }
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    let min = ious.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(
        mean >= 0.5,
        "mean zero-noise extraction IoU {mean:.3} below 0.5 (n={})",
        ious.len()
    );
    assert!(min > 0.3, "worst extraction IoU {min:.3}");

    // The paper-shaped window beats accumulating from the recording start
    // to the sentence start.
    let pairs: Vec<(Session, Vec<EllipseAnnotation>)> = sessions
        .into_iter()
        .map(|s| (s.session, s.ellipses))
        .collect();
    let prepared = gazeloc::window_search::prepare_sessions(&pairs, &rules);
    let (validation, scoring): (Vec<_>, Vec<_>) = {
        let mut v = Vec::new();
        let mut s = Vec::new();
        for (i, item) in prepared.into_iter().enumerate() {
            if i % 2 == 0 {
                v.push(item);
            } else {
                s.push(item);
            }
        }
        (v, s)
    };
    let chosen = gazeloc::WindowSpec {
        start_rule: StartRule::MentionSentenceMinusTimeClampedPrev,
        time_delay: 1.5,
        end_rule: gazeloc::EndRule::LastMentionEnd,
    };
    let naive = gazeloc::WindowSpec {
        start_rule: StartRule::RecordingStart,
        time_delay: 0.0,
        end_rule: gazeloc::EndRule::MentionSentenceStart,
    };
    let chosen_score =
        gazeloc::window_search::score_spec(&chosen, &validation, &scoring, &render).unwrap();
    let naive_score =
        gazeloc::window_search::score_spec(&naive, &validation, &scoring, &render).unwrap();
    assert!(
        chosen_score.mean_iou > naive_score.mean_iou,
        "lead-based window {:.3} should beat whole-recording window {:.3}",
        chosen_score.mean_iou,
        naive_score.mean_iou
    );
}

//! Deterministic generator of synthetic reading sessions with known ground
//! truth.
//!
//! Each session plants an ellipse per positive label, dictates a sentence
//! built from the rule table's own phrases, and emits gaze that dwells
//! inside the ellipse starting a configurable lead before the sentence.
//! Between sentences the gaze wanders; wander slots emit fixations at the
//! distractor rate. A synthetic feature image (noise background plus a
//! bright blob per ellipse, intensity stepped per label) gives the toy
//! model a learnable signal.
//!
//! All randomness comes from one seeded ChaCha8 stream with a fixed draw
//! order (per session: positives, ellipse geometry, distractor picks,
//! sentence order, scan fixations, then per sentence words before gaze,
//! finally the feature image), so identical configs produce byte-identical
//! corpora on every platform.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::prelude::IndexedRandom;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze_heatmap::Heatmap;
use crate::ingest::{
    write_ellipses, write_session, EllipseAnnotation, FixationRecord, Sentence, Session, TimedWord,
};
use crate::labeler::{LabelId, RuleSet};

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sessions: usize,
    /// Square image side in pixels.
    pub image_size: u32,
    /// Candidate study labels; each session marks a random subset positive.
    pub labels: Vec<LabelId>,
    /// Seconds of in-ellipse dwell before the dictating sentence starts.
    pub lead_time: f64,
    /// Probability that a dwell fixation lands uniformly instead of inside
    /// the ellipse.
    pub dwell_noise: f64,
    /// Probability that an inter-sentence wander slot emits a fixation.
    pub distractor_fixation_rate: f64,
    /// Peak feature intensity of planted blobs.
    pub blob_intensity: f64,
    /// Probability that a label is positive in a session.
    pub positive_rate: f64,
    /// Allow at most one positive label per session. With this set,
    /// `positive_rate` is the probability that the session has a positive
    /// label at all.
    pub single_positive: bool,
    /// Per-ellipse core intensity is drawn from
    /// `[blob_intensity - spread, blob_intensity]`.
    pub blob_intensity_spread: f64,
    /// Fraction of the ellipse radius occupied by the bright core. Below
    /// 1.0, the rest of the annotated extent is a faint rim: the lesion's
    /// conspicuous center does not span the whole drawn region.
    pub core_radius_fraction: f64,
    /// Downward per-pixel texture depth inside the core.
    pub core_texture: f64,
    /// Peak of the per-pixel uniform texture in the rim band between the
    /// core and the annotated boundary; keep near the background level so
    /// the rim is a weak-margin signal.
    pub rim_texture: f64,
    /// Radius multiplier of a context halo beyond the annotated extent;
    /// 1.0 disables it.
    pub halo_radius_scale: f64,
    /// Context halo intensity as a fraction of its core's intensity.
    pub halo_intensity_ratio: f64,
    /// Probability that a session without positives carries decoy spots:
    /// small bright smooth ellipses with no halo, no gaze and no
    /// dictation. Decoys make core brightness alone a false image-level
    /// cue.
    pub decoy_rate: f64,
    /// Fraction of the ellipse radius gaze dwells within; fixations
    /// concentrate on the conspicuous center rather than the full
    /// annotated extent.
    pub dwell_radius_fraction: f64,
    /// Peak of the per-pixel uniform background noise.
    pub background_noise: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, n_sessions: usize) -> Self {
        SynthConfig {
            seed,
            n_sessions,
            image_size: 128,
            labels: crate::labeler::labels::ALL
                .iter()
                .map(|l| LabelId::new(*l))
                .collect(),
            lead_time: 1.5,
            dwell_noise: 0.05,
            distractor_fixation_rate: 0.2,
            blob_intensity: 0.8,
            positive_rate: 0.45,
            single_positive: false,
            blob_intensity_spread: 0.0,
            core_radius_fraction: 1.0,
            core_texture: 0.0,
            rim_texture: 0.0,
            halo_radius_scale: 1.0,
            halo_intensity_ratio: 0.0,
            decoy_rate: 0.0,
            dwell_radius_fraction: 0.85,
            background_noise: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.dwell_noise)
            || !in_unit(self.distractor_fixation_rate)
            || !in_unit(self.positive_rate)
        {
            return Err(Error::InvalidConfig("rates must lie in [0, 1]".into()));
        }
        if self.lead_time < 0.0 {
            return Err(Error::InvalidConfig("lead_time must be >= 0".into()));
        }
        if self.image_size < 32 {
            return Err(Error::InvalidConfig("image_size must be >= 32".into()));
        }
        if self.labels.is_empty() {
            return Err(Error::InvalidConfig("labels must not be empty".into()));
        }
        if !(self.blob_intensity > 0.0 && self.blob_intensity <= 1.0) {
            return Err(Error::InvalidConfig("blob_intensity must lie in (0, 1]".into()));
        }
        if !(0.0..=self.blob_intensity).contains(&self.blob_intensity_spread) {
            return Err(Error::InvalidConfig(
                "blob_intensity_spread must lie in [0, blob_intensity]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::InvalidConfig("decoy_rate must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.core_radius_fraction) {
            return Err(Error::InvalidConfig(
                "core_radius_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rim_texture) || !(0.0..1.0).contains(&self.core_texture) {
            return Err(Error::InvalidConfig("textures must lie in [0, 1)".into()));
        }
        if self.halo_radius_scale < 1.0 || !(0.0..1.0).contains(&self.halo_intensity_ratio) {
            return Err(Error::InvalidConfig(
                "need halo_radius_scale >= 1 and halo_intensity_ratio in [0, 1)".into(),
            ));
        }
        if !(0.0 < self.dwell_radius_fraction && self.dwell_radius_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "dwell_radius_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.background_noise) {
            return Err(Error::InvalidConfig(
                "background_noise must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One generated session with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub session: Session,
    pub ellipses: Vec<EllipseAnnotation>,
    pub gold_positive: BTreeSet<LabelId>,
    pub features: Heatmap,
}

/// The dictation phrase used for a study label: the first rule whose
/// grouping maps exactly onto `{label}`, else the first rule containing
/// the label. Grouped co-labels are handled by [`phrase_closure`].
fn canonical_phrase<'r>(label: &LabelId, rules: &'r RuleSet) -> Option<&'r [String]> {
    let exact = rules.labels.iter().find(|r| {
        rules
            .grouping
            .get(&r.name)
            .is_some_and(|targets| targets.len() == 1 && &targets[0] == label)
    });
    let fallback = || {
        rules.labels.iter().find(|r| {
            rules
                .grouping
                .get(&r.name)
                .is_some_and(|targets| targets.contains(label))
        })
    };
    exact
        .or_else(fallback)
        .and_then(|r| r.match_phrases.first())
        .map(Vec::as_slice)
}

/// Study labels a phrase activates: every rule owning a match phrase that
/// occurs contiguously inside `tokens` contributes its grouping targets.
/// Static phrase-table reasoning, independent of the detection engine.
pub fn phrase_closure(tokens: &[String], rules: &RuleSet) -> BTreeSet<LabelId> {
    let mut closure = BTreeSet::new();
    for rule in &rules.labels {
        let fires = rule.match_phrases.iter().any(|phrase| {
            !phrase.is_empty()
                && phrase.len() <= tokens.len()
                && (0..=tokens.len() - phrase.len())
                    .any(|s| (0..phrase.len()).all(|i| tokens[s + i] == phrase[i]))
        });
        if fires {
            if let Some(targets) = rules.grouping.get(&rule.name) {
                closure.extend(targets.iter().cloned());
            }
        }
    }
    closure
}

const FILLER: [&str; 8] = ["there", "is", "a", "the", "noted", "image", "region", "at"];

struct SentencePlan {
    /// Positive sentences carry the primary label index; negated ones None.
    positive: Option<usize>,
    tokens: Vec<String>,
}

/// Generates the corpus. Determinism contract: same config, same bytes.
pub fn generate(config: &SynthConfig, rules: &RuleSet) -> Result<Vec<SynthSession>> {
    config.validate()?;
    let phrases: Vec<&[String]> = config
        .labels
        .iter()
        .map(|label| {
            canonical_phrase(label, rules).ok_or_else(|| {
                Error::InvalidConfig(format!("no rule phrase produces label {label}"))
            })
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sessions = Vec::with_capacity(config.n_sessions);
    for session_index in 0..config.n_sessions {
        sessions.push(generate_session(
            config,
            rules,
            &phrases,
            session_index,
            &mut rng,
        )?);
    }
    Ok(sessions)
}

fn generate_session(
    config: &SynthConfig,
    rules: &RuleSet,
    phrases: &[&[String]],
    session_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SynthSession> {
    let size = f64::from(config.image_size);
    let n_labels = config.labels.len();

    // 1. Positive primaries.
    let positives: Vec<usize> = if config.single_positive {
        if rng.random_bool(config.positive_rate) {
            vec![rng.random_range(0..n_labels)]
        } else {
            Vec::new()
        }
    } else {
        (0..n_labels)
            .filter(|_| rng.random_bool(config.positive_rate))
            .collect()
    };

    // 2. Ellipse geometry and core intensity per primary.
    let mut ellipse_geometry: BTreeMap<usize, (f64, f64, f64, f64)> = BTreeMap::new();
    let mut core_intensity: BTreeMap<usize, f64> = BTreeMap::new();
    for &label_index in &positives {
        let rx = rng.random_range(0.12 * size..0.18 * size);
        let ry = rng.random_range(0.12 * size..0.18 * size);
        let cx = rng.random_range(rx + 2.0..size - rx - 2.0);
        let cy = rng.random_range(ry + 2.0..size - ry - 2.0);
        ellipse_geometry.insert(label_index, (cx, cy, rx, ry));
        let dimming = if config.blob_intensity_spread > 0.0 {
            rng.random_range(0.0..config.blob_intensity_spread)
        } else {
            0.0
        };
        core_intensity.insert(label_index, config.blob_intensity - dimming);
    }

    // 3. Negated distractor sentences for a subset of negative labels.
    let negated: Vec<usize> = (0..n_labels)
        .filter(|i| !positives.contains(i))
        .filter(|_| rng.random_bool(0.4))
        .collect();

    // 3b. Decoy patches in sessions without positives: small bright
    // rectangles aligned to the default pooling granularity, so the total
    // evidence mass of a decoy session stays well below a true positive
    // and no cell mixes decoy with background.
    let mut decoys: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    if positives.is_empty() && config.decoy_rate > 0.0 && rng.random_bool(config.decoy_rate) {
        let snap = (config.image_size as usize / 32).max(1);
        let cells = config.image_size as usize / snap;
        let n_decoys = 1 + usize::from(rng.random_bool(0.5));
        for _ in 0..n_decoys {
            let w = rng.random_range(2..4usize);
            let h = rng.random_range(2..4usize);
            let x0 = rng.random_range(1..cells - w) * snap;
            let y0 = rng.random_range(1..cells - h) * snap;
            let dimming = if config.blob_intensity_spread > 0.0 {
                rng.random_range(0.0..config.blob_intensity_spread)
            } else {
                0.0
            };
            decoys.push((x0, y0, w * snap, h * snap, config.blob_intensity - dimming));
        }
    }

    // 4. Sentence order.
    let mut plans: Vec<SentencePlan> = Vec::new();
    for &label_index in &positives {
        // Bimodal lead-in: the phrase lands either right away or deep into
        // the sentence, so no fixed offset from the first mention can stand
        // in for the sentence start.
        let before = if rng.random_bool(0.5) {
            rng.random_range(0..3usize)
        } else {
            rng.random_range(7..10usize)
        };
        let after = rng.random_range(0..3usize);
        let mut tokens: Vec<String> = Vec::new();
        for _ in 0..before {
            tokens.push(FILLER.choose(rng).expect("filler pool").to_string());
        }
        tokens.extend(phrases[label_index].iter().cloned());
        for _ in 0..after {
            tokens.push(FILLER.choose(rng).expect("filler pool").to_string());
        }
        plans.push(SentencePlan {
            positive: Some(label_index),
            tokens,
        });
    }
    for &label_index in &negated {
        let mut tokens = vec!["no".to_string()];
        tokens.extend(phrases[label_index].iter().cloned());
        plans.push(SentencePlan {
            positive: None,
            tokens,
        });
    }
    plans.shuffle(rng);

    // 5. Initial scan: gaze all over the image, nothing dictated yet.
    let mut fixations: Vec<FixationRecord> = Vec::new();
    let mut t = 0.0f64;
    for _ in 0..8 {
        let duration = rng.random_range(0.25..0.5);
        let gap = rng.random_range(0.02..0.08);
        let x = rng.random_range(0.0..size);
        let y = rng.random_range(0.0..size);
        fixations.push(FixationRecord {
            x,
            y,
            t_start: t,
            t_end: t + duration,
        });
        t += duration + gap;
    }

    // 6. Sentences: words first (the dwell extent needs the sentence end),
    // then wander and dwell gaze.
    let mut sentences: Vec<Sentence> = Vec::new();
    for (sentence_index, plan) in plans.iter().enumerate() {
        let silence = rng.random_range(config.lead_time + 1.0..config.lead_time + 2.5);
        let sentence_start = t + silence;

        let mut words = Vec::with_capacity(plan.tokens.len());
        let mut word_t = sentence_start;
        for token in &plan.tokens {
            let duration = rng.random_range(0.25..0.45);
            words.push(TimedWord {
                text: token.clone(),
                t_start: word_t,
                t_end: word_t + duration,
            });
            word_t += duration + rng.random_range(0.03..0.1);
        }
        let sentence_end = words.last().expect("non-empty sentence").t_end;

        let dwell_geometry = plan.positive.map(|label_index| ellipse_geometry[&label_index]);
        let dwell_start = match dwell_geometry {
            Some(_) => sentence_start - config.lead_time,
            // Negated sentences get no dedicated dwell; wander continues
            // until the sentence ends.
            None => sentence_end,
        };

        // Wander from the end of the previous activity up to the dwell.
        let mut wander_t = t;
        while wander_t < dwell_start {
            let duration = rng.random_range(0.25..0.5f64).min(dwell_start - wander_t);
            let gap = rng.random_range(0.02..0.06);
            let emit = rng.random_bool(config.distractor_fixation_rate);
            if emit && duration > 0.05 {
                let x = rng.random_range(0.0..size);
                let y = rng.random_range(0.0..size);
                fixations.push(FixationRecord {
                    x,
                    y,
                    t_start: wander_t,
                    t_end: wander_t + duration,
                });
            }
            wander_t += duration + gap;
        }

        // Dwell inside the ellipse from the lead point to the sentence end.
        if let Some((cx, cy, rx, ry)) = dwell_geometry {
            let mut dwell_t = dwell_start;
            while dwell_t < sentence_end {
                let duration = rng.random_range(0.2..0.38f64).min(sentence_end - dwell_t + 0.05);
                let gap = rng.random_range(0.02..0.06);
                let noisy = rng.random_bool(config.dwell_noise);
                let (x, y) = if noisy {
                    (rng.random_range(0.0..size), rng.random_range(0.0..size))
                } else {
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    let radius = rng.random_range(0.0..1.0f64).sqrt() * config.dwell_radius_fraction;
                    (
                        (cx + rx * radius * angle.cos()).clamp(0.0, size - 1.0),
                        (cy + ry * radius * angle.sin()).clamp(0.0, size - 1.0),
                    )
                };
                fixations.push(FixationRecord {
                    x,
                    y,
                    t_start: dwell_t,
                    t_end: dwell_t + duration,
                });
                dwell_t += duration + gap;
            }
        }

        sentences.push(Sentence {
            index: sentence_index,
            words,
        });
        t = sentence_end.max(fixations.last().map_or(sentence_end, |f| f.t_end));
    }

    // Gold: grouping closure of every dictated positive phrase.
    let mut gold_positive = BTreeSet::new();
    for &label_index in &positives {
        gold_positive.extend(phrase_closure(phrases[label_index], rules));
    }

    // Ellipse rows for every gold label a primary's phrase activates.
    let mut ellipses = Vec::new();
    for &label_index in &positives {
        let (cx, cy, rx, ry) = ellipse_geometry[&label_index];
        for target in phrase_closure(phrases[label_index], rules) {
            ellipses.push(EllipseAnnotation {
                label: target,
                cx,
                cy,
                rx,
                ry,
            });
        }
    }

    // 7. Feature image: noise background, a bright core per ellipse, and
    // (when configured) a dimmer halo ring around each core.
    let pixel_count = (config.image_size as usize).pow(2);
    let mut values: Vec<f64> = (0..pixel_count)
        .map(|_| rng.random_range(0.0..config.background_noise))
        .collect();
    let width = config.image_size as usize;
    for &label_index in &positives {
        let (cx, cy, rx, ry) = ellipse_geometry[&label_index];
        let core = core_intensity[&label_index];
        let halo = core * config.halo_intensity_ratio;
        let core_r2 = config.core_radius_fraction * config.core_radius_fraction;
        let halo_r2 = config.halo_radius_scale * config.halo_radius_scale;
        for y in 0..width {
            let dy = (y as f64 + 0.5 - cy) / ry;
            for x in 0..width {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let r2 = dx * dx + dy * dy;
                if r2 > halo_r2 {
                    continue;
                }
                let v = &mut values[y * width + x];
                if r2 <= core_r2 {
                    // Bright center, textured downward.
                    let dip = if config.core_texture > 0.0 {
                        rng.random_range(0.0..config.core_texture)
                    } else {
                        -rng.random_range(0.0..0.05)
                    };
                    *v = v.max(core - dip);
                } else if r2 <= 1.0 {
                    // Faint rim out to the annotated boundary.
                    if config.rim_texture > 0.0 {
                        *v = v.max(rng.random_range(0.0..config.rim_texture));
                    }
                } else if halo > 0.0 {
                    // Context halo beyond the annotated extent.
                    *v = v.max(halo + rng.random_range(0.0..0.05));
                }
            }
        }
    }
    // Decoys: bright, smooth, small.
    for &(x0, y0, w, h, intensity) in &decoys {
        for y in y0..(y0 + h).min(width) {
            for x in x0..(x0 + w).min(width) {
                let v = &mut values[y * width + x];
                *v = v.max(intensity + rng.random_range(0.0..0.05));
            }
        }
    }
    let features = Heatmap::from_values(
        config.image_size as usize,
        config.image_size as usize,
        values,
    )?;

    let session = Session {
        image_id: format!("session_{session_index:04}"),
        width: config.image_size,
        height: config.image_size,
        recording_start: 0.0,
        fixations,
        sentences,
    };
    Ok(SynthSession {
        session,
        ellipses,
        gold_positive,
        features,
    })
}

/// Writes a corpus as one directory per session holding the standard
/// ingest files plus `features.csv`.
pub fn write_corpus(sessions: &[SynthSession], out_dir: &Path) -> Result<()> {
    for synth in sessions {
        let dir = out_dir.join(&synth.session.image_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_session(
            &synth.session,
            &dir.join("fixations.csv"),
            &dir.join("transcript.json"),
            &dir.join("meta.json"),
        )?;
        write_ellipses(&synth.ellipses, &dir.join("ellipses.csv"))?;
        synth.features.write_csv(&dir.join("features.csv"))?;
    }
    Ok(())
}

//! Loading and validation of on-disk session data.
//!
//! A session directory holds three files describing one reading:
//! `fixations.csv` (gaze), `transcript.json` (timestamped dictation split
//! into sentences) and `meta.json` (image id, dimensions, clock origin).
//! Ground-truth abnormality regions live in `ellipses.csv`.
//!
//! All timestamps are seconds relative to the `recording_start` declared in
//! the meta file. Coordinates are original-image pixels; nothing is resized
//! at ingest. Sentence segmentation is taken verbatim from the transcript
//! file; the toolkit never re-splits text itself.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::LabelId;

/// One period of stabilized gaze: position in image pixels (origin
/// top-left), start and end time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationRecord {
    pub x: f64,
    pub y: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl FixationRecord {
    /// Fixation duration in seconds.
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// A dictated token with its utterance interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    pub t_start: f64,
    pub t_end: f64,
}

/// One transcript sentence: an ordered run of timed words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub words: Vec<TimedWord>,
}

impl Sentence {
    /// Start of the first word.
    pub fn t_start(&self) -> f64 {
        self.words.first().map_or(0.0, |w| w.t_start)
    }

    /// End of the last word.
    pub fn t_end(&self) -> f64 {
        self.words.last().map_or(0.0, |w| w.t_end)
    }
}

/// One chest x-ray reading: fixations plus the dictated transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub recording_start: f64,
    pub fixations: Vec<FixationRecord>,
    pub sentences: Vec<Sentence>,
}

/// A hand-drawn ground-truth abnormality region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseAnnotation {
    pub label: LabelId,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct TranscriptFile {
    sentences: Vec<Vec<TimedWord>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct MetaFile {
    image_id: String,
    width: u32,
    height: u32,
    recording_start: f64,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Splits CSV content into data rows, checking the expected header.
/// Returns (1-based line number, row) pairs. Only the final trailing
/// newline is tolerated; an interior blank line is a malformed row.
fn csv_rows<'a>(path: &Path, content: &'a str, header: &str) -> Result<Vec<(usize, &'a str)>> {
    let mut lines = content.split('\n').enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end_matches('\r') == header => {}
        Some((_, first)) => {
            return Err(malformed(
                path,
                1,
                1,
                format!("expected header {header:?}, got {first:?}"),
            ));
        }
        None => return Err(malformed(path, 1, 1, "empty file")),
    }
    let mut rows = Vec::new();
    let mut pending_blank: Option<usize> = None;
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            // Legal only as the trailing newline; flagged if anything follows.
            if let Some(prev) = pending_blank {
                return Err(malformed(path, prev + 1, 1, "blank line"));
            }
            pending_blank = Some(idx);
            continue;
        }
        if let Some(prev) = pending_blank.take() {
            return Err(malformed(path, prev + 1, 1, "blank line"));
        }
        rows.push((idx + 1, line));
    }
    Ok(rows)
}

fn parse_f64(path: &Path, line: usize, column: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| malformed(path, line, column, format!("{field:?}: {e}")))
}

/// Loads and validates one session from its three files.
///
/// The fixation file must have the header `x,y,t_start,t_end`; the
/// transcript and meta files are JSON (see the crate README for the exact
/// shapes). Every invariant of [`Session`] is checked: fixation time order,
/// image bounds, the recording-start lower bound, word ordering inside
/// sentences and disjoint, ordered sentences.
pub fn load_session(
    fixations_path: &Path,
    transcript_path: &Path,
    meta_path: &Path,
) -> Result<Session> {
    let meta: MetaFile = parse_json(meta_path)?;
    if meta.width == 0 || meta.height == 0 {
        return Err(Error::InvalidConfig(format!(
            "{}: image dimensions must be positive",
            meta_path.display()
        )));
    }

    let fixations = load_fixations(
        fixations_path,
        meta.width,
        meta.height,
        meta.recording_start,
    )?;
    let sentences = load_transcript(transcript_path, meta.recording_start)?;

    Ok(Session {
        image_id: meta.image_id,
        width: meta.width,
        height: meta.height,
        recording_start: meta.recording_start,
        fixations,
        sentences,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let content = read_to_string(path)?;
    serde_json::from_str(&content).map_err(|e| malformed(path, e.line(), e.column(), e.to_string()))
}

fn load_fixations(
    path: &Path,
    width: u32,
    height: u32,
    recording_start: f64,
) -> Result<Vec<FixationRecord>> {
    let content = read_to_string(path)?;
    let rows = csv_rows(path, &content, "x,y,t_start,t_end")?;
    let mut fixations = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(malformed(
                path,
                line,
                1,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let x = parse_f64(path, line, 1, fields[0])?;
        let y = parse_f64(path, line, 2, fields[1])?;
        let t_start = parse_f64(path, line, 3, fields[2])?;
        let t_end = parse_f64(path, line, 4, fields[3])?;
        if !(t_end > t_start) {
            return Err(Error::NonMonotonicTime {
                path: path.to_path_buf(),
                line,
                message: format!("fixation ends at {t_end} but starts at {t_start}"),
            });
        }
        if t_start < recording_start {
            return Err(Error::OutOfBoundsFixation {
                path: path.to_path_buf(),
                line,
                message: format!("starts at {t_start}, before recording start {recording_start}"),
            });
        }
        if !(0.0..f64::from(width)).contains(&x) || !(0.0..f64::from(height)).contains(&y) {
            return Err(Error::OutOfBoundsFixation {
                path: path.to_path_buf(),
                line,
                message: format!("({x}, {y}) outside {width}x{height}"),
            });
        }
        fixations.push(FixationRecord { x, y, t_start, t_end });
    }
    Ok(fixations)
}

fn load_transcript(path: &Path, recording_start: f64) -> Result<Vec<Sentence>> {
    let file: TranscriptFile = parse_json(path)?;
    let mut sentences = Vec::with_capacity(file.sentences.len());
    let mut previous_end = recording_start;
    for (index, words) in file.sentences.into_iter().enumerate() {
        if words.is_empty() {
            return Err(Error::EmptySentence {
                path: path.to_path_buf(),
                index,
            });
        }
        let mut previous_start = f64::NEG_INFINITY;
        for word in &words {
            if word.t_end < word.t_start {
                return Err(Error::NonMonotonicTime {
                    path: path.to_path_buf(),
                    line: index + 1,
                    message: format!("word {:?} ends before it starts", word.text),
                });
            }
            if word.t_start < previous_start {
                return Err(Error::NonMonotonicTime {
                    path: path.to_path_buf(),
                    line: index + 1,
                    message: format!("word {:?} starts before its predecessor", word.text),
                });
            }
            previous_start = word.t_start;
        }
        let sentence = Sentence { index, words };
        if sentence.t_start() < previous_end {
            return Err(Error::NonMonotonicTime {
                path: path.to_path_buf(),
                line: index + 1,
                message: format!(
                    "sentence {index} starts at {} before {previous_end}",
                    sentence.t_start()
                ),
            });
        }
        previous_end = sentence.t_end();
        sentences.push(sentence);
    }
    Ok(sentences)
}

/// Loads ground-truth ellipses. Several rows may carry the same label; they
/// are kept as separate ellipses and OR-combined into one mask downstream.
pub fn load_ellipses(path: &Path) -> Result<Vec<EllipseAnnotation>> {
    let content = read_to_string(path)?;
    let rows = csv_rows(path, &content, "label,cx,cy,rx,ry")?;
    let mut ellipses = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(
                path,
                line,
                1,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let label = LabelId::new(fields[0].trim());
        let cx = parse_f64(path, line, 2, fields[1])?;
        let cy = parse_f64(path, line, 3, fields[2])?;
        let rx = parse_f64(path, line, 4, fields[3])?;
        let ry = parse_f64(path, line, 5, fields[4])?;
        if !(rx > 0.0) || !(ry > 0.0) {
            return Err(Error::NonPositiveRadius {
                path: path.to_path_buf(),
                line,
            });
        }
        ellipses.push(EllipseAnnotation { label, cx, cy, rx, ry });
    }
    Ok(ellipses)
}

/// Serializes a session back into its three files, byte-for-byte reloadable:
/// floats are written in shortest round-trip form, so a load/save/load cycle
/// reproduces every field bit-exactly.
pub fn write_session(
    session: &Session,
    fixations_path: &Path,
    transcript_path: &Path,
    meta_path: &Path,
) -> Result<()> {
    let mut csv = String::from("x,y,t_start,t_end\n");
    for f in &session.fixations {
        writeln!(csv, "{},{},{},{}", f.x, f.y, f.t_start, f.t_end).expect("string write");
    }
    fs::write(fixations_path, csv).map_err(|e| Error::io(fixations_path, e))?;

    let transcript = TranscriptFile {
        sentences: session.sentences.iter().map(|s| s.words.clone()).collect(),
    };
    write_json(transcript_path, &transcript)?;

    let meta = MetaFile {
        image_id: session.image_id.clone(),
        width: session.width,
        height: session.height,
        recording_start: session.recording_start,
    };
    write_json(meta_path, &meta)
}

/// Writes ellipses in the `label,cx,cy,rx,ry` format.
pub fn write_ellipses(ellipses: &[EllipseAnnotation], path: &Path) -> Result<()> {
    let mut csv = String::from("label,cx,cy,rx,ry\n");
    for e in ellipses {
        writeln!(csv, "{},{},{},{},{}", e.label, e.cx, e.cy, e.rx, e.ry).expect("string write");
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value).expect("serializable");
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

//! Label-specific gaze heatmaps.
//!
//! For every positive mention the fixations inside a temporal window are
//! accumulated into a heatmap: a Gaussian per fixation, amplitude weighted
//! by the fixation's overlap with the window, standard deviation of one
//! visual degree, normalized to peak 1. Windows follow the shortest of two
//! candidates: from the start of the previous sentence, or from a fixed
//! lead (default 1.5 s) before the mentioning sentence, both ending at the
//! last mention of the sentence.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FixationRecord, Sentence};
use crate::labeler::LabelMention;

/// A closed time interval in session seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t_start: f64,
    pub t_end: f64,
}

impl TimeWindow {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// A row-major float map over image pixels, values in `[0, 1]` once
/// normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Heatmap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (values.len(), 1),
            });
        }
        Ok(Heatmap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.values[y * self.width + x] = value;
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Writes the `# width height` header followed by one comma-separated
    /// row per line. Floats use shortest round-trip formatting; values
    /// below 1e-4 switch to exponent notation so far Gaussian tails don't
    /// print hundreds of leading zeros.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 8);
        writeln!(out, "# {} {}", self.width, self.height).expect("string write");
        for row in self.values.chunks(self.width) {
            let mut first = true;
            for &v in row {
                if !first {
                    out.push(',');
                }
                if v != 0.0 && v.abs() < 1e-4 {
                    write!(out, "{v:e}").expect("string write");
                } else {
                    write!(out, "{v}").expect("string write");
                }
                first = false;
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header = match lines.next() {
            Some((_, Ok(line))) => line,
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: 1,
                    column: 1,
                    message: "empty file".into(),
                })
            }
        };
        let malformed = |line: usize, column: usize, message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            column,
            message,
        };
        let dims: Vec<usize> = header
            .strip_prefix("# ")
            .map(|rest| rest.split(' ').filter_map(|p| p.parse().ok()).collect())
            .unwrap_or_default();
        let [width, height] = dims[..] else {
            return Err(malformed(1, 1, format!("bad header {header:?}")));
        };
        let mut values = Vec::with_capacity(width * height);
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            for (col, field) in line.split(',').enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|e| malformed(idx + 1, col + 1, format!("{field:?}: {e}")))?;
                values.push(v);
            }
        }
        if values.len() != width * height {
            return Err(malformed(
                1,
                1,
                format!("expected {} values, got {}", width * height, values.len()),
            ));
        }
        Ok(Heatmap { width, height, values })
    }

    /// 8-bit PGM (P2) export for quick visualization; values are
    /// `round(255 * v)`.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.values.chunks(self.width) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                write!(out, "{}", (255.0 * v).round() as u32).expect("string write");
                first = false;
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Rendering geometry and window parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Gaussian standard deviation: one visual degree expressed in pixels.
    /// Depends entirely on the recording geometry; 50 px/degree is a
    /// typical desktop calibration.
    pub pixels_per_degree: f64,
    /// Seconds of gaze accumulated before the mentioning sentence starts.
    pub window_lead: f64,
    /// Skip Gaussian contributions beyond four standard deviations from
    /// the fixation. Off by default; the full-image evaluation is exact.
    pub truncate_4_sigma: bool,
}

impl RenderConfig {
    pub const DEFAULT_WINDOW_LEAD: f64 = 1.5;

    pub fn new(pixels_per_degree: f64) -> Result<Self> {
        if !(pixels_per_degree > 0.0) {
            return Err(Error::InvalidConfig(
                "pixels_per_degree must be positive".into(),
            ));
        }
        Ok(RenderConfig {
            pixels_per_degree,
            window_lead: Self::DEFAULT_WINDOW_LEAD,
            truncate_4_sigma: false,
        })
    }

    pub fn with_window_lead(mut self, lead: f64) -> Result<Self> {
        if lead < 0.0 {
            return Err(Error::InvalidConfig("window_lead must be >= 0".into()));
        }
        self.window_lead = lead;
        Ok(self)
    }
}

/// The fixation-accumulation window for one mention.
///
/// Start: the later of (mention-sentence start minus the configured lead)
/// and the previous sentence's start, i.e. the shorter of the two
/// candidate windows. For the first sentence the previous-sentence bound is
/// replaced by `recording_start`. End: the last mention in the sentence.
pub fn mention_window(
    mention: &LabelMention,
    sentences: &[Sentence],
    config: &RenderConfig,
    recording_start: f64,
) -> TimeWindow {
    let sentence = &sentences[mention.sentence_index];
    let previous_start = if mention.sentence_index == 0 {
        recording_start
    } else {
        sentences[mention.sentence_index - 1].t_start()
    };
    TimeWindow {
        t_start: (sentence.t_start() - config.window_lead).max(previous_start),
        t_end: mention.t_last_mention_end,
    }
}

/// Fixations overlapping the window, each with its overlap duration.
/// Touching intervals (zero overlap) are excluded; partial overlaps are
/// kept and weighted by the overlapping seconds.
pub fn select_fixations(
    fixations: &[FixationRecord],
    window: TimeWindow,
) -> Vec<(FixationRecord, f64)> {
    fixations
        .iter()
        .filter_map(|f| {
            let overlap = f.t_end.min(window.t_end) - f.t_start.max(window.t_start);
            (overlap > 0.0).then_some((*f, overlap))
        })
        .collect()
}

/// Renders duration-weighted Gaussians over the selected fixations and
/// normalizes the result to a maximum of 1. An empty selection yields the
/// zero map.
///
/// Values are evaluated at integer pixel coordinates, so a fixation at
/// (100, 100) peaks exactly at pixel (100, 100). The Gaussian is separable;
/// rows and columns are precomputed per fixation, which keeps the exact
/// `exp(-(dx^2+dy^2)/(2 sigma^2))` product while doing O(w+h) exponentials.
pub fn render_heatmap(
    selected: &[(FixationRecord, f64)],
    width: usize,
    height: usize,
    config: &RenderConfig,
) -> Heatmap {
    let mut map = Heatmap::zeros(width, height);
    let sigma = config.pixels_per_degree;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let radius = 4.0 * sigma;

    let mut col_factors = vec![0.0f64; width];
    let mut row_factors = vec![0.0f64; height];
    for (fixation, weight) in selected {
        let (x_lo, x_hi, y_lo, y_hi) = if config.truncate_4_sigma {
            (
                (fixation.x - radius).floor().max(0.0) as usize,
                ((fixation.x + radius).ceil() as usize + 1).min(width),
                (fixation.y - radius).floor().max(0.0) as usize,
                ((fixation.y + radius).ceil() as usize + 1).min(height),
            )
        } else {
            (0, width, 0, height)
        };
        for (x, factor) in col_factors[x_lo..x_hi].iter_mut().enumerate() {
            let dx = (x + x_lo) as f64 - fixation.x;
            *factor = (-dx * dx * inv_two_sigma_sq).exp();
        }
        for (y, factor) in row_factors[y_lo..y_hi].iter_mut().enumerate() {
            let dy = (y + y_lo) as f64 - fixation.y;
            *factor = (-dy * dy * inv_two_sigma_sq).exp();
        }
        for y in y_lo..y_hi {
            let row_weight = weight * row_factors[y];
            let row = &mut map.values[y * width + x_lo..y * width + x_hi];
            for (x, value) in row.iter_mut().enumerate() {
                *value += row_weight * col_factors[x_lo + x];
            }
        }
    }

    let max = map.max_value();
    if max > 0.0 {
        for v in &mut map.values {
            *v /= max;
        }
    }
    map
}

/// Element-wise maximum across per-mention heatmaps.
pub fn aggregate_mentions(heatmaps: &[Heatmap]) -> Result<Heatmap> {
    let Some(first) = heatmaps.first() else {
        return Err(Error::InvalidConfig(
            "cannot aggregate zero heatmaps".into(),
        ));
    };
    let mut out = first.clone();
    for map in &heatmaps[1..] {
        if !out.same_shape(map) {
            return Err(Error::DimensionMismatch {
                expected: (out.width, out.height),
                got: (map.width, map.height),
            });
        }
        for (acc, v) in out.values.iter_mut().zip(&map.values) {
            *acc = acc.max(*v);
        }
    }
    Ok(out)
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use gazeloc::grid::rasterize_label_ellipses;
use gazeloc::labeler::{is_image_positive, label_report};
use gazeloc::metrics::{
    auc, summarize, sweep_thresholds, validate_threshold, AucEntry, IoUEntry, MacroSummary,
};
use gazeloc::{Heatmap, LabelId};
use serde::Serialize;

use crate::corpus::{load_corpus, load_rules};
use crate::Cli;

#[derive(Debug, Args)]
pub struct EvalIouArgs {
    /// Directory written by `extract` (one subdirectory per session).
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Directory of session subdirectories with ellipses.csv ground truth.
    #[arg(long)]
    pub sessions: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalAucArgs {
    /// CSV of image-level scores: header `image_id,label,score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Directory of session subdirectories; gold labels come from the
    /// labeler run on their transcripts.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Rule file; defaults to the built-in table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Serialize)]
struct IouReport {
    per_label: BTreeMap<String, IoUEntry>,
    macro_summary: MacroSummary,
}

#[derive(Serialize)]
struct AucReport {
    per_label: BTreeMap<String, AucEntry>,
    macro_summary: MacroSummary,
}

fn write_metrics_csv(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut csv = String::from("label,metric,value\n");
    for (label, value) in rows {
        writeln!(csv, "{label},{value}").expect("string write");
    }
    std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

pub fn run_iou(args: &EvalIouArgs, cli: &Cli) -> Result<ExitCode> {
    let corpus = load_corpus(&args.sessions, false)?;

    // Collect (heatmap, mask) validation pairs per label across sessions.
    let mut pairs: BTreeMap<LabelId, (Vec<Heatmap>, Vec<gazeloc::BinaryMask>)> = BTreeMap::new();
    for item in &corpus {
        let session_dir = args.heatmaps.join(&item.session.image_id);
        if !session_dir.is_dir() {
            continue;
        }
        let labels: std::collections::BTreeSet<LabelId> =
            item.ellipses.iter().map(|e| e.label.clone()).collect();
        for label in labels {
            let heatmap_path = session_dir.join(format!("{}.heatmap.csv", label.file_stem()));
            if !heatmap_path.is_file() {
                continue;
            }
            let heatmap = Heatmap::read_csv(&heatmap_path)?;
            let ellipses: Vec<_> = item
                .ellipses
                .iter()
                .filter(|e| e.label == label)
                .cloned()
                .collect();
            let mask = rasterize_label_ellipses(
                &ellipses,
                item.session.width as usize,
                item.session.height as usize,
            )?;
            let entry = pairs.entry(label).or_default();
            entry.0.push(heatmap);
            entry.1.push(mask);
        }
    }
    if pairs.is_empty() {
        bail!("no (heatmap, ellipse) pairs found; run extract first");
    }

    let thresholds = sweep_thresholds();
    let mut per_label = BTreeMap::new();
    let mut for_macro = BTreeMap::new();
    for (label, (heatmaps, masks)) in &pairs {
        let (best_threshold, iou) = validate_threshold(heatmaps, masks, &thresholds)?;
        for_macro.insert(label.clone(), Some(iou));
        per_label.insert(
            label.to_string(),
            IoUEntry {
                best_threshold,
                iou,
                n_positives: heatmaps.len(),
            },
        );
    }
    let macro_summary = summarize(&for_macro);

    super::ensure_dir(&cli.out_dir)?;
    let json_path = cli.out_dir.join("metrics.json");
    super::write_json(
        &json_path,
        &IouReport {
            per_label: per_label.clone(),
            macro_summary: macro_summary.clone(),
        },
    )?;
    let mut rows: Vec<(String, String)> = Vec::new();
    for (label, entry) in &per_label {
        rows.push((label.clone(), format!("iou,{}", entry.iou)));
        rows.push((label.clone(), format!("best_threshold,{}", entry.best_threshold)));
        rows.push((label.clone(), format!("n_positives,{}", entry.n_positives)));
    }
    if let Some(mean) = macro_summary.mean {
        rows.push(("macro".into(), format!("iou,{mean}")));
    }
    write_metrics_csv(&cli.out_dir.join("metrics.csv"), &rows)?;

    println!(
        "validated IoU over {} labels -> {} (macro {:.4})",
        per_label.len(),
        json_path.display(),
        macro_summary.mean.unwrap_or(f64::NAN)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn run_auc(args: &EvalAucArgs, cli: &Cli) -> Result<ExitCode> {
    let rules = load_rules(&args.rules)?;
    let corpus = load_corpus(&args.sessions, false)?;

    // Gold image-level positives from the labeler.
    let mut gold: BTreeMap<String, std::collections::BTreeSet<LabelId>> = BTreeMap::new();
    for item in &corpus {
        let findings = label_report(&item.session, &rules);
        let positives = findings
            .iter()
            .filter(|(_, f)| is_image_positive(f, &rules))
            .map(|(l, _)| l.clone())
            .collect();
        gold.insert(item.session.image_id.clone(), positives);
    }

    // Scores CSV: image_id,label,score.
    let content = std::fs::read_to_string(&args.scores)
        .with_context(|| format!("reading {}", args.scores.display()))?;
    let mut scores: BTreeMap<LabelId, Vec<(String, f64)>> = BTreeMap::new();
    for (idx, line) in content.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            bail!("{}:{}: expected image_id,label,score", args.scores.display(), idx + 1);
        }
        let score: f64 = fields[2]
            .parse()
            .with_context(|| format!("{}:{}: bad score", args.scores.display(), idx + 1))?;
        scores
            .entry(LabelId::new(fields[1]))
            .or_default()
            .push((fields[0].to_string(), score));
    }

    let mut per_label = BTreeMap::new();
    let mut for_macro = BTreeMap::new();
    for (label, rows) in &scores {
        let mut values = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (image_id, score) in rows {
            let Some(positives) = gold.get(image_id) else {
                bail!("scores reference unknown image {image_id}");
            };
            values.push(*score);
            labels.push(positives.contains(label));
        }
        match auc(&values, &labels) {
            Ok(value) => {
                let n_pos = labels.iter().filter(|&&l| l).count();
                for_macro.insert(label.clone(), Some(value));
                per_label.insert(
                    label.to_string(),
                    AucEntry {
                        auc: value,
                        n_pos,
                        n_neg: labels.len() - n_pos,
                    },
                );
            }
            Err(gazeloc::Error::DegenerateLabels { .. }) => {
                for_macro.insert(label.clone(), None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let macro_summary = summarize(&for_macro);

    super::ensure_dir(&cli.out_dir)?;
    let json_path = cli.out_dir.join("metrics.json");
    super::write_json(
        &json_path,
        &AucReport {
            per_label: per_label.clone(),
            macro_summary: macro_summary.clone(),
        },
    )?;
    let mut rows: Vec<(String, String)> = Vec::new();
    for (label, entry) in &per_label {
        rows.push((label.clone(), format!("auc,{}", entry.auc)));
        rows.push((label.clone(), format!("n_pos,{}", entry.n_pos)));
        rows.push((label.clone(), format!("n_neg,{}", entry.n_neg)));
    }
    if let Some(mean) = macro_summary.mean {
        rows.push(("macro".into(), format!("auc,{mean}")));
    }
    write_metrics_csv(&cli.out_dir.join("metrics.csv"), &rows)?;

    println!(
        "AUC over {} labels ({} absent) -> {} (macro {:.4})",
        per_label.len(),
        macro_summary.absent.len(),
        json_path.display(),
        macro_summary.mean.unwrap_or(f64::NAN)
    );
    Ok(ExitCode::SUCCESS)
}

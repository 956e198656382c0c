use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use gazeloc::grid::heatmap_to_annotation;
use gazeloc::toy_trainer::session_label_heatmaps;
use gazeloc::RenderConfig;
use rayon::prelude::*;

use crate::corpus::{load_corpus, load_rules};
use crate::Cli;

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of session subdirectories.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Rule file; defaults to the built-in table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Gaussian standard deviation: one visual degree in pixels.
    #[arg(long, default_value_t = 6.0)]
    pub pixels_per_degree: f64,
    /// Seconds of gaze accumulated before the mentioning sentence.
    #[arg(long, default_value_t = 1.5)]
    pub lead: f64,
    /// Binarization threshold for the grid annotation.
    #[arg(long, default_value_t = 0.15)]
    pub threshold: f64,
    /// Grid side for the annotation.
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    /// Also export each heatmap as an 8-bit PGM image.
    #[arg(long)]
    pub pgm: bool,
}

pub fn run(args: &ExtractArgs, cli: &Cli) -> Result<ExitCode> {
    let rules = load_rules(&args.rules)?;
    let render = RenderConfig::new(args.pixels_per_degree)?.with_window_lead(args.lead)?;
    let corpus = load_corpus(&args.sessions, false)?;
    let extract_dir = cli.out_dir.join("extract");
    super::ensure_dir(&extract_dir)?;

    let written: Result<Vec<usize>> = corpus
        .par_iter()
        .map(|item| {
            let heatmaps = session_label_heatmaps(&item.session, &rules, &render);
            if heatmaps.is_empty() {
                return Ok(0);
            }
            let session_dir = extract_dir.join(&item.session.image_id);
            super::ensure_dir(&session_dir)?;
            let mut files = 0;
            for (label, heatmap) in &heatmaps {
                let stem = label.file_stem();
                heatmap.write_csv(&session_dir.join(format!("{stem}.heatmap.csv")))?;
                let grid = heatmap_to_annotation(heatmap, args.grid, args.threshold)?;
                grid.write_csv(&session_dir.join(format!("{stem}.grid.csv")))?;
                if args.pgm {
                    heatmap.write_pgm(&session_dir.join(format!("{stem}.pgm")))?;
                }
                files += 1;
            }
            Ok(files)
        })
        .collect();
    let written: usize = written?.iter().sum();

    println!(
        "extracted {written} label heatmaps from {} sessions into {}",
        corpus.len(),
        extract_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

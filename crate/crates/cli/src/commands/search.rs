use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;
use gazeloc::window_search::search;
use gazeloc::RenderConfig;

use crate::corpus::{load_corpus, load_rules};
use crate::Cli;

#[derive(Debug, Args)]
pub struct SearchWindowsArgs {
    /// Directory of session subdirectories (with ellipses.csv ground truth).
    #[arg(long)]
    pub sessions: PathBuf,
    /// 1 = coarse cross product; 2 = fine delay sweep of the stage-1 winner.
    #[arg(long, default_value_t = 1)]
    pub stage: u8,
    /// Rule file; defaults to the built-in table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Gaussian standard deviation: one visual degree in pixels.
    #[arg(long, default_value_t = 6.0)]
    pub pixels_per_degree: f64,
}

pub fn run(args: &SearchWindowsArgs, cli: &Cli) -> Result<ExitCode> {
    let rules = load_rules(&args.rules)?;
    let render = RenderConfig::new(args.pixels_per_degree)?;
    let corpus = load_corpus(&args.sessions, false)?;
    let pairs: Vec<_> = corpus
        .into_iter()
        .map(|item| (item.session, item.ellipses))
        .collect();

    let ranking = search(&pairs, &rules, &render, args.stage)?;

    let mut csv = String::from("rank,spec,start_rule,time_delay,end_rule,mean_iou,threshold,n_mentions\n");
    for (rank, score) in ranking.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            rank + 1,
            score.spec.describe(),
            score.spec.start_rule.name(),
            score.spec.time_delay,
            score.spec.end_rule.name(),
            score.mean_iou,
            score.threshold,
            score.n_mentions
        )
        .expect("string write");
    }
    super::ensure_dir(&cli.out_dir)?;
    let path = cli.out_dir.join("search-report.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;

    let winner = ranking.first().expect("non-empty ranking");
    println!(
        "stage {} winner: {} (mean IoU {:.4} over {} mentions) -> {}",
        args.stage,
        winner.spec.describe(),
        winner.mean_iou,
        winner.n_mentions,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use gazeloc::synth::{generate, write_corpus, SynthConfig};
use gazeloc::LabelId;

use crate::corpus::load_rules;
use crate::Cli;

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Number of sessions to generate.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 128)]
    pub image_size: u32,
    /// Comma-separated study labels; defaults to the full built-in set.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Seconds of in-ellipse dwell before the dictating sentence.
    #[arg(long, default_value_t = 1.5)]
    pub lead: f64,
    /// Probability a dwell fixation lands away from the ellipse.
    #[arg(long, default_value_t = 0.05)]
    pub dwell_noise: f64,
    /// Probability an inter-sentence wander slot emits a fixation.
    #[arg(long, default_value_t = 0.2)]
    pub distractor_rate: f64,
    /// Peak feature intensity of planted blobs.
    #[arg(long, default_value_t = 0.8)]
    pub blob_intensity: f64,
    /// Probability a label is positive in a session.
    #[arg(long, default_value_t = 0.45)]
    pub positive_rate: f64,
    /// Rule file; defaults to the built-in table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

pub fn run(args: &GenSynthArgs, cli: &Cli) -> Result<ExitCode> {
    let rules = load_rules(&args.rules)?;
    let mut config = SynthConfig::new(cli.seed, args.n);
    config.image_size = args.image_size;
    config.lead_time = args.lead;
    config.dwell_noise = args.dwell_noise;
    config.distractor_fixation_rate = args.distractor_rate;
    config.blob_intensity = args.blob_intensity;
    config.positive_rate = args.positive_rate;
    if !args.labels.is_empty() {
        config.labels = args.labels.iter().map(LabelId::new).collect();
    }

    let sessions = generate(&config, &rules)?;
    let sessions_dir = cli.out_dir.join("sessions");
    super::ensure_dir(&sessions_dir)?;
    write_corpus(&sessions, &sessions_dir)?;

    let positives: usize = sessions.iter().map(|s| s.gold_positive.len()).sum();
    println!(
        "generated {} sessions ({} positive label instances) under {}",
        sessions.len(),
        positives,
        sessions_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use gazeloc::labeler::{is_image_positive, label_report, Polarity};
use serde::Serialize;

use crate::corpus::{load_corpus, load_rules};
use crate::Cli;

#[derive(Debug, Args)]
pub struct LabelReportArgs {
    /// Directory of session subdirectories.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Rule file; defaults to the built-in table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Serialize)]
struct SessionLabels {
    image_id: String,
    labels: BTreeMap<String, LabelEntry>,
}

#[derive(Serialize)]
struct LabelEntry {
    polarity: String,
    image_positive: bool,
    positive_mentions: usize,
}

pub fn run(args: &LabelReportArgs, cli: &Cli) -> Result<ExitCode> {
    let rules = load_rules(&args.rules)?;
    let corpus = load_corpus(&args.sessions, false)?;

    let mut report = Vec::with_capacity(corpus.len());
    let mut positives = 0usize;
    for item in &corpus {
        let findings = label_report(&item.session, &rules);
        let labels = findings
            .iter()
            .map(|(label, finding)| {
                let positive = is_image_positive(finding, &rules);
                positives += usize::from(positive);
                (
                    label.to_string(),
                    LabelEntry {
                        polarity: match finding.polarity {
                            Polarity::Positive => "positive".into(),
                            Polarity::Negative => "negative".into(),
                            Polarity::Uncertain => "uncertain".into(),
                        },
                        image_positive: positive,
                        positive_mentions: finding.positive_mentions.len(),
                    },
                )
            })
            .collect();
        report.push(SessionLabels {
            image_id: item.session.image_id.clone(),
            labels,
        });
    }

    super::ensure_dir(&cli.out_dir)?;
    let path = cli.out_dir.join("label-report.json");
    super::write_json(&path, &report)?;
    println!(
        "labeled {} sessions ({} positive label decisions) -> {}",
        corpus.len(),
        positives,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

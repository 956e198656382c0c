//! Batch front end for the gazeloc pipeline.
//!
//! Every command reads its inputs from files, writes its outputs to files
//! under `--out-dir`, and prints only a short human-readable summary to
//! stdout. All randomness flows from `--seed`; `--jobs` changes wall time,
//! never output bytes.

mod commands;
mod corpus;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gazeloc", version, about = "Eye-tracking localization annotation toolkit")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; affects speed only, outputs are byte-identical.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Directory all outputs are written into.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic session corpus with known ground truth.
    GenSynth(commands::gen::GenSynthArgs),
    /// Extract per-label heatmaps and grid annotations from sessions.
    Extract(commands::extract::ExtractArgs),
    /// Detect label mentions per session and write a polarity report.
    LabelReport(commands::label_report::LabelReportArgs),
    /// Rank fixation-accumulation window rules by extraction IoU.
    SearchWindows(commands::search::SearchWindowsArgs),
    /// Validated-threshold IoU of extracted heatmaps against ellipses.
    EvalIou(commands::eval::EvalIouArgs),
    /// Per-label AUC of image-level scores against labeler ground truth.
    EvalAuc(commands::eval::EvalAucArgs),
    /// Train the toy model under one or more supervision arms.
    TrainToy(commands::train::TrainToyArgs),
    /// Check analytic loss gradients against finite differences.
    GradCheck(commands::grad::GradCheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build();
    let pool = match pool {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let result = pool.install(|| match &cli.command {
        Command::GenSynth(args) => commands::gen::run(args, &cli),
        Command::Extract(args) => commands::extract::run(args, &cli),
        Command::LabelReport(args) => commands::label_report::run(args, &cli),
        Command::SearchWindows(args) => commands::search::run(args, &cli),
        Command::EvalIou(args) => commands::eval::run_iou(args, &cli),
        Command::EvalAuc(args) => commands::eval::run_auc(args, &cli),
        Command::TrainToy(args) => commands::train::run(args, &cli),
        Command::GradCheck(args) => commands::grad::run(args, &cli),
    });

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Malformed or missing input data exits 2; anything else 1.
            let code = if e
                .downcast_ref::<gazeloc::Error>()
                .is_some_and(is_input_error)
            {
                2
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}

fn is_input_error(e: &gazeloc::Error) -> bool {
    use gazeloc::Error;
    matches!(
        e,
        Error::MalformedRow { .. }
            | Error::NonMonotonicTime { .. }
            | Error::OutOfBoundsFixation { .. }
            | Error::NonPositiveRadius { .. }
            | Error::EmptySentence { .. }
            | Error::Io { .. }
    )
}

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use gazeloc::synth::SynthSession;
use gazeloc::toy_trainer::{
    evaluate_arms, prepare_examples, ExtractionConfig, SupervisionArm, TrainConfig,
};
use gazeloc::{LossConfig, RenderConfig};

use crate::corpus::{load_corpus, load_rules};
use crate::Cli;

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Directory of session subdirectories (needs features.csv and
    /// ellipses.csv).
    #[arg(long)]
    pub sessions: PathBuf,
    /// Arms to train: all, unannotated, et, ellipse (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub arms: Vec<String>,
    /// Training seeds (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long, default_value_t = 6.0)]
    pub pixels_per_degree: f64,
    #[arg(long, default_value_t = 0.15)]
    pub threshold: f64,
    #[arg(long, default_value_t = 3.0)]
    pub lambda_annotated: f64,
    #[arg(long, default_value_t = 300.0)]
    pub lambda_multitask: f64,
    /// Rule file; defaults to the built-in table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

fn parse_arms(names: &[String]) -> Result<Vec<SupervisionArm>> {
    let mut arms = Vec::new();
    for name in names {
        match name.as_str() {
            "all" => return Ok(SupervisionArm::ALL.to_vec()),
            "unannotated" => arms.push(SupervisionArm::Unannotated),
            "et" => arms.push(SupervisionArm::EtAnnotated),
            "ellipse" => arms.push(SupervisionArm::EllipseAnnotated),
            other => bail!("unknown arm {other:?} (expected all, unannotated, et, ellipse)"),
        }
    }
    Ok(arms)
}

pub fn run(args: &TrainToyArgs, cli: &Cli) -> Result<ExitCode> {
    let arms = parse_arms(&args.arms)?;
    if args.seeds.is_empty() {
        bail!("need at least one seed");
    }
    let rules = load_rules(&args.rules)?;
    let corpus = load_corpus(&args.sessions, true)?;

    // Rebuild SynthSession-shaped inputs from disk.
    let mut sessions = Vec::with_capacity(corpus.len());
    for item in corpus {
        let Some(features) = item.features else {
            bail!("{} lacks features.csv", item.dir.display());
        };
        let findings = gazeloc::labeler::label_report(&item.session, &rules);
        let gold_positive = findings
            .iter()
            .filter(|(_, f)| gazeloc::labeler::is_image_positive(f, &rules))
            .map(|(l, _)| l.clone())
            .collect();
        sessions.push(SynthSession {
            session: item.session,
            ellipses: item.ellipses,
            gold_positive,
            features,
        });
    }

    let labels = rules.study_labels();
    // Restrict to labels that actually occur, so tiny corpora train fast.
    let labels: Vec<_> = labels
        .into_iter()
        .filter(|l| sessions.iter().any(|s| s.gold_positive.contains(l)))
        .collect();
    if labels.is_empty() {
        bail!("no positive labels in the corpus");
    }

    let extraction = ExtractionConfig {
        render: RenderConfig::new(args.pixels_per_degree)?,
        grid_side: args.grid,
        threshold: args.threshold,
    };
    let examples = prepare_examples(&sessions, &rules, &extraction)?;

    let base = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        supervision: SupervisionArm::Unannotated,
        loss: LossConfig {
            lambda_annotated: args.lambda_annotated,
            lambda_multitask: args.lambda_multitask,
            ..LossConfig::default()
        },
        seed: cli.seed,
    };
    let report = evaluate_arms(&examples, &labels, args.grid, &arms, &args.seeds, &base)?;

    super::ensure_dir(&cli.out_dir)?;
    let report_path = cli.out_dir.join("arms-report.json");
    super::write_json(&report_path, &report)?;

    // Per-(arm, seed) image scores for eval-auc: retrain cheaply reusing
    // the stored per-seed outcomes is not possible, so emit scores from a
    // dedicated training pass per arm on the first seed.
    for arm in &arms {
        let config = TrainConfig {
            supervision: *arm,
            seed: args.seeds[0],
            ..base.clone()
        };
        let (model, _) = gazeloc::toy_trainer::train(&examples, &labels, args.grid, &config)?;
        let mut csv = String::from("image_id,label,score\n");
        for example in &examples {
            let logits = model.logits(&example.features);
            for (label_index, label) in labels.iter().enumerate() {
                let score = gazeloc::losses::image_evidence(&logits, label_index, &config.loss);
                writeln!(csv, "{},{},{}", example.image_id, label, score).expect("string write");
            }
        }
        let path = cli.out_dir.join(format!("scores-{}.csv", arm.name()));
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }

    for arm in &report.arms {
        println!(
            "{:<12} mean IoU {} mean AUC {}",
            arm.arm,
            arm.iou_mean.map_or("n/a".into(), |v| format!("{v:.4}")),
            arm.auc_mean.map_or("n/a".into(), |v| format!("{v:.4}")),
        );
    }
    println!("report -> {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

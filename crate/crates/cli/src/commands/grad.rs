use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use gazeloc::grid::GridAnnotation;
use gazeloc::losses::{
    finite_difference_grad, grad_logits, max_relative_gradient_error, Example, ExampleStatus,
    GridLogits, LabelStatus, LossConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::Cli;

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Number of randomized instances to check.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Grid side of the random instances.
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    /// Labels per instance.
    #[arg(long, default_value_t = 3)]
    pub labels: usize,
    /// Relative-error tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Corrupt the analytic gradient to verify the check catches it.
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Serialize)]
struct GradCheckReport {
    checked: usize,
    failures: usize,
    worst_relative_error: f64,
    tolerance: f64,
}

fn random_example(rng: &mut ChaCha8Rng, n_labels: usize, side: usize) -> Example {
    let cells = side * side;
    let values: Vec<f64> = (0..n_labels * cells)
        .map(|_| rng.random_range(-4.0..4.0))
        .collect();
    let statuses: Vec<LabelStatus> = (0..n_labels)
        .map(|_| match rng.random_range(0..3) {
            0 => {
                let bits: Vec<bool> = (0..cells).map(|_| rng.random_bool(0.3)).collect();
                LabelStatus::Annotated {
                    cells: GridAnnotation::from_cells(side, bits).expect("square grid"),
                    positive: rng.random_bool(0.5),
                }
            }
            1 => LabelStatus::UnannotatedPositive,
            _ => LabelStatus::UnannotatedNegative,
        })
        .collect();
    Example {
        logits: GridLogits::from_values(n_labels, side, values).expect("finite values"),
        status: ExampleStatus::new(statuses),
    }
}

pub fn run(args: &GradCheckArgs, cli: &Cli) -> Result<ExitCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut failures = 0usize;
    let mut worst: f64 = 0.0;

    for i in 0..args.n {
        // Alternate the loss settings so both the map term and the raw
        // products are exercised.
        let cfg = LossConfig {
            lambda_multitask: if i % 2 == 0 { 300.0 } else { 0.0 },
            normalize: i % 4 < 2,
            ..LossConfig::default()
        };
        let batch = vec![random_example(&mut rng, args.labels, args.grid)];
        let mut analytic = grad_logits(&batch, &cfg)?;
        if args.inject_bug {
            let values = analytic[0].values_mut();
            values[0] += 0.5;
        }
        let reference = finite_difference_grad(&batch, &cfg, 1e-5)?;
        let err = max_relative_gradient_error(&analytic, &reference);
        worst = worst.max(err);
        if err >= args.tolerance {
            failures += 1;
        }
    }

    super::ensure_dir(&cli.out_dir)?;
    let report = GradCheckReport {
        checked: args.n,
        failures,
        worst_relative_error: worst,
        tolerance: args.tolerance,
    };
    super::write_json(&cli.out_dir.join("grad-check.json"), &report)?;

    println!(
        "{} gradient checks, {} failures (worst relative error {:.3e})",
        args.n, failures, worst
    );
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msvp_core::harness::{self, ExperimentConfig, Suite, SuiteOptions};
use msvp_core::{CheckpointError, Error};
use numcore::gradcheck::{self, GradCheckStatus};

/// MS-VP workbench: train, ablate, report and inspect visual-prompt models.
#[derive(Parser)]
#[command(name = "msvp", version)]
struct Cli {
    /// Dataset root holding mnist/, fashion_mnist/ and cifar10/.
    #[arg(long, global = true, env = "MSVP_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a configuration key, e.g. `--set train.epochs=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run every cell of a named experiment suite, resuming finished cells.
    Suite {
        /// main_results, scale_ablation, fusion_ablation or backbone_comparison.
        name: Suite,
        /// Cap on training and test images per cell.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Re-run cells that already have a report.
        #[arg(long)]
        force: bool,
        /// Allow the full 150-epoch CIFAR-10 cells.
        #[arg(long)]
        confirm_long: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Build report.md and per-table CSVs from a suite output directory.
    Report { dir: PathBuf },
    /// GradCAM heatmaps for test images of a trained checkpoint.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test-set indices (repeatable or comma-separated).
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        index: Vec<usize>,
        /// Target class; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
        /// Capture layer; defaults to the backbone's last stage.
        #[arg(long)]
        layer: Option<String>,
        /// Output directory; defaults to `gradcam/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        shapes: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unsupported(_) | Error::Tensor(_) => 1,
        Error::Checkpoint(CheckpointError::Registry { .. } | CheckpointError::Shape { .. }) => 1,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 2,
        Error::NonFinite { .. } => 3,
    }
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let data_dir = harness::data_dir(cli.data_dir.as_deref());
    match cli.command {
        Command::Run { config, set } => {
            let mut overrides = Vec::new();
            if let Some(d) = &cli.data_dir {
                overrides.push(format!("data.dir={}", d.display()));
            }
            overrides.extend(set);
            let cfg = ExperimentConfig::from_file(&config, &overrides)?;
            let out = harness::run_experiment(&cfg, &mut |m| log(m))?;
            let s = &out.report.summary;
            println!(
                "{} {} {}: test_acc={:.4} best_epoch={} params={} (+{} msvp, {:.4}%) -> {}",
                s.dataset,
                s.backbone,
                s.variant,
                s.test_acc,
                s.best_epoch,
                s.params_total,
                s.params_msvp,
                s.delta_pct,
                out.dir.display()
            );
        }
        Command::Suite { name, subset, epochs, seed, force, confirm_long, out } => {
            let opts = SuiteOptions { out_dir: out, data_dir, subset, epochs, seed, force, confirm_long };
            let outcome = harness::run_suite(name, &opts, &mut |m| log(m))?;
            print!("{}", outcome.table.to_text());
            for f in &outcome.files {
                log(&format!("wrote {}", f.display()));
            }
        }
        Command::Report { dir } => {
            let (md, files) = harness::emit_report(&dir)?;
            print!("{md}");
            for f in &files {
                log(&format!("wrote {}", f.display()));
            }
        }
        Command::Gradcam { checkpoint, index, class, layer, out } => {
            let out = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(&PathBuf::from(".")).join("gradcam"));
            let maps = harness::gradcam_from_checkpoint(&checkpoint, &data_dir, &index, class, layer.as_deref(), &out)?;
            for (i, map, files) in maps {
                let names: Vec<String> = files.iter().map(|f| f.display().to_string()).collect();
                println!("index {i}: class {} at {} -> {}", map.target_class, map.layer, names.join(", "));
            }
        }
        Command::Gradcheck { seed, shapes } => {
            let cases = gradcheck::run_suite(seed, shapes, gradcheck::DEFAULT_EPS, gradcheck::DEFAULT_TOLERANCE);
            let mut failed = 0;
            for c in &cases {
                let status = match &c.report.status {
                    GradCheckStatus::Pass => "PASS".to_string(),
                    GradCheckStatus::Fail => "FAIL".to_string(),
                    GradCheckStatus::Invalid(why) => format!("INVALID ({why})"),
                };
                if !c.report.passed() {
                    failed += 1;
                }
                println!("{:<24} {:<40} max_rel={:.3e} {status}", c.op, format!("{:?}", c.shapes), c.report.max_rel_error);
            }
            println!("{} of {} cases passed", cases.len() - failed, cases.len());
            if failed > 0 {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

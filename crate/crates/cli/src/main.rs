use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use fairgen_core::adapters::{run_conformance, ExternalCommand};
use fairgen_core::config::{AuditConfig, Preset};
use fairgen_core::pipeline::{self, OutputLayout, RunOptions};
use fairgen_core::Error;

/// Fairness audits on balanced synthetic cohorts.
#[derive(Parser)]
#[command(name = "fairgen", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines) applied over the preset.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Base settings: desk (minutes on a laptop) or full (larger training budget).
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Worker threads for training and generation (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the balanced manifest and print its row count.
    Manifest(Common),
    /// Train the generator on ground-truth renders.
    Train(Common),
    /// Sample one image per manifest row.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Keep images that already exist.
        #[arg(long)]
        resume: bool,
    },
    /// Run every configured classifier over the images.
    Evaluate(Common),
    /// Write audit reports from the stored predictions.
    Report(Common),
    /// Train, build the manifest, generate, evaluate and report.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Check an external classifier against the wire protocol.
    Conformance {
        /// Command line, run through `sh -c`.
        #[arg(long)]
        command: String,
        #[arg(long)]
        workdir: Option<PathBuf>,
        /// Seconds to wait for each reply.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        /// Directory for the probe images.
        #[arg(long, default_value = "conformance")]
        scratch: PathBuf,
    },
}

fn load(common: &Common) -> Result<AuditConfig, Error> {
    let preset: Preset = common.preset.parse()?;
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = AuditConfig::parse(&text, preset)?;
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn opts(common: &Common, resume: bool) -> RunOptions {
    RunOptions {
        workers: common.workers,
        resume,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Manifest(c) => {
            let cfg = load(&c)?;
            let m = pipeline::run_manifest(&cfg)?;
            let n = m.rows.len();
            println!("{n} {}", if n == 1 { "row" } else { "rows" });
            println!(
                "wrote {}",
                OutputLayout::new(&cfg.output).manifest().display()
            );
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let outcome = pipeline::run_train(&cfg, &opts(&c, false))?;
            let last = outcome.loss_trace.last().copied().unwrap_or(f64::NAN);
            println!("{} steps, final loss {last:.4}", outcome.loss_trace.len());
            println!(
                "wrote {}",
                OutputLayout::new(&cfg.output).checkpoint().display()
            );
        }
        Command::Generate { common, resume } => {
            let cfg = load(&common)?;
            let n = pipeline::run_generate(&cfg, &opts(&common, resume))?;
            println!("{n} images generated");
        }
        Command::Evaluate(c) => {
            let cfg = load(&c)?;
            for (name, records) in pipeline::run_evaluate(&cfg)? {
                println!("{name}: {} predictions", records.len());
            }
        }
        Command::Report(c) => {
            let cfg = load(&c)?;
            print_reports(&pipeline::run_report(&cfg)?);
        }
        Command::Audit { common, resume } => {
            let cfg = load(&common)?;
            let (reports, summary) = pipeline::run_audit(&cfg, &opts(&common, resume))?;
            print_reports(&reports);
            println!(
                "{} rows, config {}",
                summary.rows,
                &summary.config_hash[..16]
            );
            println!(
                "wrote {}",
                OutputLayout::new(&cfg.output).summary().display()
            );
        }
        Command::Conformance {
            command,
            workdir,
            timeout,
            scratch,
        } => {
            if !(timeout > 0.0 && timeout.is_finite()) {
                return Err(Error::Config(format!("timeout {timeout} must be positive")));
            }
            let cmd = ExternalCommand {
                command,
                workdir,
                timeout: Duration::from_secs_f64(timeout),
            };
            let report = run_conformance(&cmd, &scratch).map_err(|source| Error::Adapter {
                classifier: cmd.command.clone(),
                source,
            })?;
            print!("{report}");
            if !report.passed() {
                return Err(Error::Validation(
                    "classifier does not conform to the protocol".into(),
                ));
            }
        }
    }
    Ok(())
}

fn print_reports(reports: &[fairgen_core::fairmetrics::AuditReport]) {
    for r in reports {
        for d in &r.disparities {
            println!(
                "{:<20} {:<10} max {:.4} ({}) min {:.4} ({}) dp {:.4}",
                r.model_id,
                d.attribute.title(),
                d.max_accuracy,
                d.argmax_group,
                d.min_accuracy,
                d.argmin_group,
                d.dp
            );
        }
    }
}

/// 2: bad configuration or vocabulary. 4: validation or compatibility
/// failure. 3: anything else.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Vocabulary(_) => 2,
        Error::Validation(_) | Error::Compatibility(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

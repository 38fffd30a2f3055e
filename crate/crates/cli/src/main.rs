use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lingscrub::{configure_threads, emit_report, run_pipeline, write_synth_dataset, PipelineConfig, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Validate,
    Remove,
    Probe,
    Align,
    Encode,
    Stats,
    Trend,
    /// Every analysis stage, then the report.
    Run,
    /// Report tables from finished stages.
    Report,
    /// Write a synthetic dataset and its pipeline config.
    Synth,
}

/// Remove linguistic properties from language-model features and measure the
/// effect on probing and brain alignment.
#[derive(Debug, Parser)]
#[command(name = "lingscrub", version)]
struct Cli {
    #[arg(value_enum)]
    stage: Command,
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set removal.lambda=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = PipelineConfig::load(&cli.config, &cli.overrides)?;
    let single = |s: Stage| run_pipeline(&cfg, &[s]).map(|summary| report_summary(&summary));
    match cli.stage {
        Command::Validate => single(Stage::Validate)?,
        Command::Remove => single(Stage::Remove)?,
        Command::Probe => single(Stage::Probe)?,
        Command::Align => single(Stage::Align)?,
        Command::Encode => single(Stage::Encode)?,
        Command::Stats => single(Stage::Stats)?,
        Command::Trend => single(Stage::Trend)?,
        Command::Run => {
            report_summary(&run_pipeline(&cfg, &Stage::ALL)?);
            for p in emit_report(&cfg.output_dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Report => {
            for p in emit_report(&cfg.output_dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Synth => {
            cfg.check_parameters()?;
            let path = write_synth_dataset(&cfg)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn report_summary(summary: &lingscrub::RunSummary) {
    for s in &summary.executed {
        println!("{s}: done");
    }
    for s in &summary.skipped {
        println!("{s}: up to date, skipped");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rmtlab::{run_with_threads, ExperimentConfig, ExperimentKind, RunError};

/// Run a random-matrix experiment and write its artifacts.
#[derive(Debug, Parser)]
#[command(name = "rmtlab", version)]
struct Cli {
    experiment: ExperimentKind,
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| RunError::Validation(vec![format!("reading {}: {e}", path.display())]))?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| RunError::Validation(vec![format!("parsing {}: {e}", path.display())]))?
        }
        None => ExperimentConfig::from_json("{}").expect("empty config parses"),
    };
    match cfg.experiment {
        Some(kind) if kind != cli.experiment => {
            return Err(RunError::Validation(vec![format!(
                "config declares experiment {} but {} was requested",
                kind.name(),
                cli.experiment.name()
            )]))
        }
        _ => cfg.experiment = Some(cli.experiment),
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.out = Some(cli.out.clone());
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| run_with_threads(&cfg));
    match result {
        Ok(report) => {
            println!("{} seed={} config_hash={}", report.experiment, report.seed, report.config_hash);
            for m in &report.metrics {
                match m.se {
                    Some(se) => println!("  {} = {:.6e} ± {:.2e}", m.name, m.value, se),
                    None => println!("  {} = {:.6e}", m.name, m.value),
                }
            }
            for c in &report.criteria {
                println!("  {}", c.summary_line());
            }
            println!("  artifacts: {} ({:.1}s)", report.artifacts.join(", "), report.wall_clock_seconds);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rmtlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

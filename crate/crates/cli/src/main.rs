use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use octelast::config::PipelineConfig;
use octelast::pipeline;
use octelast::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Phantom,
    Forward,
    Estimate,
    Recover,
    Pipeline,
}

/// Synthetic OCT elastography: simulate a deformation experiment and invert
/// it for displacement and shear modulus.
#[derive(Debug, Parser)]
#[command(name = "octelast", version)]
struct Cli {
    command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use an N x N grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Worker threads for per-pixel work (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// With `forward`: run the manufactured-solution convergence study.
    #[arg(long)]
    mms: bool,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    match cli.command {
        Command::Forward if cli.mms => {
            let rec = pipeline::run_mms(cfg)?;
            for (l, o) in rec.levels.iter().skip(1).zip(&rec.orders) {
                println!("mms n={} l2_error={:e} observed_order={:.3}", l.n, l.l2_error, o);
            }
            Ok(())
        }
        _ if cli.mms => Err(Error::Config("--mms only applies to the forward command".into())),
        Command::Phantom => print_json(&pipeline::run_phantom(cfg)?),
        Command::Forward => print_json(&pipeline::run_forward(cfg)?),
        Command::Estimate => print_json(&pipeline::run_estimate(cfg)?),
        Command::Recover => print_json(&pipeline::run_recover(cfg)?),
        Command::Pipeline => {
            let s = pipeline::run_pipeline(cfg)?;
            let m = &s.metrics;
            println!("divergence_ratio       {:e}", m.divergence_ratio);
            println!("initializer_error      {:.6}", m.initializer_error);
            println!("displacement_error     {:.6}", m.displacement_error);
            println!("discrepancy_reduction  {:.3}", m.discrepancy_reduction);
            println!("mu_error_inverse_crime {:.6}", m.mu_error_inverse_crime);
            println!("mu_error_pipeline      {:.6}", m.mu_error_pipeline);
            println!("summary written to {}", cfg.output_dir.join("summary.json").display());
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?.with_overrides(cli.seed, cli.grid, cli.out.clone())?;
    match cli.threads {
        None => execute(cli, &cfg),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| execute(cli, &cfg)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OCTELAST_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("octelast: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_flags() {
        let cli = Cli::try_parse_from([
            "octelast", "pipeline", "--config", "c.json", "--out", "o", "--seed", "3", "--grid", "64", "--threads", "2",
        ])
        .unwrap();
        assert_eq!(cli.command, Command::Pipeline);
        assert_eq!((cli.seed, cli.grid, cli.threads), (Some(3), Some(64), Some(2)));
        assert!(!cli.mms);
        assert!(Cli::try_parse_from(["octelast", "forward", "--config", "c.json", "--mms"]).unwrap().mms);
        assert!(Cli::try_parse_from(["octelast", "solve", "--config", "c.json"]).is_err());
        assert!(Cli::try_parse_from(["octelast", "phantom"]).is_err());
    }
}

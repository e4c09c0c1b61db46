mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use output::ErrorRecord;

#[derive(Parser)]
#[command(name = "qtorus", version, about = "Higher-order semiclassical spectra and torus dynamics for 1D integrable systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Highest power of ℏ kept: 0, 2 or 4
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(["0", "2", "4"]))]
    order: Option<String>,
    /// Comma-separated ℏ values
    #[arg(long, global = true, value_delimiter = ',')]
    hbar: Option<Vec<f64>>,
    /// Worker threads
    #[arg(long, global = true, env = "QTORUS_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Quantized levels per ℏ, with reference comparison
    Spectrum,
    /// Error-vs-ℏ slopes
    Converge,
    /// Torus mode evolution and phase accuracy
    Dynamics,
    /// Invariant checks
    Verify,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, cli.command) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Command::Verify) => config::default_quartic(),
        (None, _) => anyhow::bail!("--config is required"),
    };
    if let Some(o) = &cli.order {
        cfg.order = o.parse()?;
    }
    if let Some(h) = &cli.hbar {
        cfg.hbar = h.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<PathBuf> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    let cfg = load(cli)?;
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Spectrum => commands::spectrum(&cfg, &out)?,
        Command::Converge => commands::converge(&cfg, &out)?,
        Command::Dynamics => commands::dynamics(&cfg, &out)?,
        Command::Verify => {
            commands::verify(&cfg, &out)?;
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            let rec = ErrorRecord::from_error(&e);
            eprintln!("{}", serde_json::to_string(&rec).unwrap_or_else(|_| format!("{{\"status\":\"error\",\"message\":{:?}}}", e.to_string())));
            if let Some(dir) = cli.out.as_ref().filter(|d| d.is_dir()) {
                let _ = output::write_json(&dir.join("error.json"), &rec);
            }
            ExitCode::from(1)
        }
    }
}

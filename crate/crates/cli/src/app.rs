use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{self, Format, RunConfig};
use crate::error::CliError;
use crate::output::{self, Sink};
use crate::{commands, system};

#[derive(Parser, Debug)]
#[command(name = "morsecell", version, about = "Numerical Morse theory: stationary points, invariant manifolds, transversality and cell maps")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides output.directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated output formats: csv, json, mesh, svg.
    #[arg(long, global = true, value_name = "LIST")]
    format: Option<String>,
    /// Seed for randomized sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Progress messages on stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Stationary points, Morse indices, adapted-norm rates and the connection graph.
    Analyze,
    /// Local invariant manifold by the graph transform, with its convergence trace.
    Manifold,
    /// Transversality measure along sampled heteroclinic orbits.
    Transversality,
    /// Sampled cell map of a stationary point with continuity diagnostics.
    Cellmap,
    /// Perturbed non-cell experiment with its certificates.
    Counterexample,
    /// Group-law residuals of the juxtaposed flow.
    Juxt,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Manifold => "manifold",
            Command::Transversality => "transversality",
            Command::Cellmap => "cellmap",
            Command::Counterexample => "counterexample",
            Command::Juxt => "juxt",
        }
    }
}

const DEFAULT_OUT: &str = "morsecell-out";

fn formats(cli: &Cli, cfg: &RunConfig) -> Result<BTreeSet<Format>, CliError> {
    if let Some(list) = &cli.format {
        return list.split(',').filter(|s| !s.trim().is_empty()).map(Format::parse).collect();
    }
    Ok(cfg.output.formats.clone().map_or_else(|| Format::ALL.into_iter().collect(), |v| v.into_iter().collect()))
}

fn run(cli: &Cli, out_dir: &mut PathBuf) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::validation("--config PATH is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = config::parse(&text)?;
    if cli.out.is_none() {
        if let Some(dir) = &cfg.output.directory {
            *out_dir = dir.clone();
        }
    }
    let formats = formats(cli, &cfg)?;
    if formats.is_empty() {
        return Err(CliError::validation("no output format selected"));
    }
    let loaded = system::load(&cfg)?;
    let sink = Sink::new(out_dir.clone(), formats, cli.verbose)?;
    let mut ctx = commands::Context { cfg: &cfg, loaded, seed: cli.seed, sink, verbose: cli.verbose };
    match cli.command {
        Command::Analyze => commands::analyze(&mut ctx),
        Command::Manifold => commands::manifold(&mut ctx),
        Command::Transversality => commands::transversality(&mut ctx),
        Command::Cellmap => commands::cellmap(&mut ctx),
        Command::Counterexample => commands::counterexample(&mut ctx),
        Command::Juxt => commands::juxt(&mut ctx),
    }?;
    for p in ctx.sink.written() {
        println!("{}", p.display());
    }
    Ok(())
}

/// Parses the arguments, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match run(&cli, &mut out_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("morsecell {}: {e}", cli.command.name());
            match output::write_diagnostics(&out_dir, &e.diagnostics(cli.command.name())) {
                Ok(p) => eprintln!("diagnostics written to {}", p.display()),
                Err(io) => eprintln!("could not write diagnostics: {io}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

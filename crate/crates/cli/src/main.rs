//! `mdsearch` command-line front end.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{section_of, Config, Loaded};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "mdsearch",
    version,
    about = "Search with measurement-dependent noise",
    after_help = "Every config key can also be given as a flag of the same name, e.g. `--queries 24` or `--model=gaussian_pair`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config with [channel], [scheme] and [sim] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Monte Carlo trials.
    #[arg(long, global = true)]
    trials: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write the (q, I(q, q)) curve.
    MiCurve,
    /// Optimal query size and related capacities.
    Optimize,
    /// Error exponents of all schemes on a shared rate grid.
    Exponents,
    /// Monte Carlo simulation of the configured scheme.
    Simulate,
    /// Exhaustive checks of the trajectory count and intersection bounds.
    BoundsAudit,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::MiCurve => "mi-curve",
            Command::Optimize => "optimize",
            Command::Exponents => "exponents",
            Command::Simulate => "simulate",
            Command::BoundsAudit => "bounds-audit",
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    config: &'a Config,
    seed: u64,
    version: &'static str,
    started: String,
    finished: String,
    outputs: Vec<String>,
}

type Overrides = Vec<(String, String)>;

/// Splits config-key flags out of `argv`; clap sees the rest.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        };
        if section_of(&name).is_none() || name == "seed" || name == "trials" {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Config(format!("option --{name} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn load(cli: &Cli, mut overrides: Overrides) -> Result<Loaded, CliError> {
    let mut loaded = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            Loaded::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => Loaded::parse("")?,
    };
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(t) = cli.trials {
        overrides.push(("trials".into(), t.to_string()));
    }
    loaded.apply_overrides(&overrides)?;
    Ok(loaded)
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        paths.push(path.display().to_string());
    }
    Ok(paths)
}

fn run(cli: Cli, overrides: Overrides) -> Result<(), CliError> {
    let started = chrono::Utc::now().to_rfc3339();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("option --threads: must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let loaded = load(&cli, overrides)?;
    let config = loaded.resolved()?;
    let files = match cli.command {
        Command::MiCurve => commands::mi_curve_cmd(&loaded, &config)?,
        Command::Optimize => commands::optimize_cmd(&loaded, &config)?,
        Command::Exponents => commands::exponents_cmd(&loaded, &config)?,
        Command::Simulate => commands::simulate_cmd(&loaded, &config)?,
        Command::BoundsAudit => commands::bounds_audit_cmd(&loaded, &config)?,
    };
    let outputs = write_all(&cli.out, &files)?;
    let manifest = RunManifest {
        command: cli.command.name(),
        config: &config,
        seed: config.sim.seed.unwrap_or(0),
        version: env!("CARGO_PKG_VERSION"),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        outputs: outputs.clone(),
    };
    let manifest_path = cli.out.join(format!("{}.manifest.json", cli.command.name()));
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(&manifest_path, body + "\n")?;
    for p in outputs {
        println!("{p}");
    }
    println!("{}", manifest_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let result = split_overrides(std::env::args().collect()).and_then(|(rest, overrides)| {
        let cli = Cli::try_parse_from(rest).map_err(|e| {
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    std::process::exit(0)
                }
                _ => CliError::Config(String::new()),
            }
        })?;
        run(cli, overrides)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn overrides_are_split_from_clap_flags() {
        let (rest, ov) = split_overrides(args("mdsearch simulate --queries 24 --seed 3 --out d --grid-step=0.002")).unwrap();
        assert_eq!(rest, args("mdsearch simulate --seed 3 --out d"));
        assert_eq!(ov, vec![("queries".into(), "24".into()), ("grid_step".into(), "0.002".into())]);
        assert!(split_overrides(args("mdsearch simulate --queries")).is_err());
    }

    #[test]
    fn command_names_match_clap() {
        for (c, s) in [
            (Command::MiCurve, "mi-curve"),
            (Command::BoundsAudit, "bounds-audit"),
            (Command::Optimize, "optimize"),
        ] {
            let cli = Cli::try_parse_from(["mdsearch", s]).unwrap();
            assert_eq!(cli.command, c);
            assert_eq!(c.name(), s);
        }
    }
}

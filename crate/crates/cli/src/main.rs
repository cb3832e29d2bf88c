//! `vlsnr train|eval|ablate|rank|synth --config PATH [--key value ...]`
//!
//! Log verbosity follows `RUST_LOG` (default `info`).

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use vlsnr::config::RunConfig;
use vlsnr::experiment;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Train,
    Eval,
    Ablate,
    Rank,
    Synth,
}

#[derive(Debug, Parser)]
#[command(name = "vlsnr", version, about = "Multimodal time-aware news recommender")]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,

    /// Config overrides as `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            bail!("expected `--key value`, found `{flag}`");
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.replace('-', "_"), v.to_string()));
            continue;
        }
        let value = it.next().with_context(|| format!("`--{key}` needs a value"))?;
        out.push((key.replace('-', "_"), value.clone()));
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    let overrides = parse_overrides(&cli.overrides)?;
    let cfg = RunConfig::load(&cli.config, &overrides)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train => {
            experiment::cmd_train(&cfg, &mut out)?;
        }
        Command::Eval => {
            experiment::cmd_eval(&cfg, &mut out)?;
        }
        Command::Ablate => {
            experiment::cmd_ablate(&cfg, &mut out)?;
        }
        Command::Rank => {
            experiment::cmd_rank(&cfg, &mut out)?;
        }
        Command::Synth => experiment::cmd_synth(&cfg, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_accept_both_forms() {
        let args: Vec<String> = ["--epochs", "0", "--user-mode=gru", "--learning_rate", "-1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            parse_overrides(&args).unwrap(),
            vec![
                ("epochs".into(), "0".into()),
                ("user_mode".into(), "gru".into()),
                ("learning_rate".into(), "-1".into())
            ]
        );
        assert!(parse_overrides(&["epochs".to_string()]).is_err());
        assert!(parse_overrides(&["--epochs".to_string()]).is_err());
    }
}

mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Format};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cogrowth_core::Error),
    /// A computed check exceeded its tolerance; the output is still written.
    #[error("{0}")]
    Tolerance(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use cogrowth_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) => 2,
            CliError::Core(E::ResourceCap { .. }) => 3,
            CliError::Core(E::InvalidParameter(_) | E::Spec(_) | E::UnknownLetter { .. } | E::IndexOutOfRange { .. }) => 2,
            CliError::Core(_) | CliError::Tolerance(_) => 1,
        }
    }
}

/// What a command produced: a JSON document and an equivalent table.
pub struct Output {
    pub json: serde_json::Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Set when a check failed; reported after the output is written.
    pub failure: Option<String>,
}

fn render(out: &Output, format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(&out.json).map_err(|e| CliError::Config(e.to_string()))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&out.header)?;
            for row in &out.rows {
                w.write_record(row)?;
            }
            w.into_inner().map_err(|e| CliError::Io(e.into_error()))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let caps = commands::Caps::from_env()?;
    let out = commands::dispatch(cli.command, &caps)?;
    let bytes = render(&out, cli.format)?;
    match &cli.output {
        Some(path) => std::fs::write(path, &bytes)?,
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    match out.failure {
        Some(msg) => Err(CliError::Tolerance(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

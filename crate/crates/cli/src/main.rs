mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use crate::config::{Cli, RunConfig};
use crate::error::CliError;

/// `out.csv` for a single series, `out-0.csv`, `out-1.csv`, ... otherwise.
fn csv_paths(base: &Path, count: usize) -> Vec<PathBuf> {
    if count == 1 {
        return vec![base.to_path_buf()];
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    (0..count).map(|i| base.with_file_name(format!("{stem}-{i}.{ext}"))).collect()
}

fn emit(cfg: &RunConfig, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    // A closed pipe (`varode ... | head`) is not an error for the run.
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    if let Some(path) = &cfg.json {
        std::fs::write(path, format!("{text}\n"))?;
    }
    Ok(())
}

fn execute(cfg: &RunConfig) -> Result<(), CliError> {
    match commands::run(cfg) {
        Ok(out) => {
            if let Some(base) = &cfg.csv {
                for (path, body) in csv_paths(base, out.csv.len()).iter().zip(&out.csv) {
                    std::fs::write(path, body)?;
                }
            }
            emit(cfg, &out.json)
        }
        Err(CliError::Integration { message, partial }) => {
            let mut value = if partial.is_object() { partial } else { json!({"input": cfg.text}) };
            value["error"] = json!(message);
            emit(cfg, &value)?;
            Err(CliError::Integration { message, partial: Value::Null })
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = RunConfig::from_command(cli.command).and_then(|cfg| execute(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_naming() {
        assert_eq!(csv_paths(Path::new("out/w.csv"), 1), vec![PathBuf::from("out/w.csv")]);
        assert_eq!(
            csv_paths(Path::new("out/w.csv"), 2),
            vec![PathBuf::from("out/w-0.csv"), PathBuf::from("out/w-1.csv")]
        );
    }
}

//! Failure classification and atomic result emission.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use crate::{CommonArgs, Format};

/// A command failure mapped onto a process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation, config document, or input file; exit code 1.
    Usage(String),
    /// Numerical or output failure after a valid setup; exit code 2.
    Runtime(String),
}

impl Failure {
    /// Process exit code for this failure class.
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    /// Human-readable description.
    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

/// Wraps an error as a usage/config failure (exit 1).
pub fn usage(err: impl Display) -> Failure {
    Failure::Usage(err.to_string())
}

/// Wraps an error as a runtime failure (exit 2).
pub fn runtime(err: impl Display) -> Failure {
    Failure::Runtime(err.to_string())
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by an atomic rename, so failures never leave partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(runtime)?;
    tmp.write_all(bytes).map_err(runtime)?;
    tmp.flush().map_err(runtime)?;
    tmp.persist(path).map_err(|e| runtime(e.error))?;
    Ok(())
}

/// Emits one result in both formats.
///
/// With `--out` the CSV and JSON files `{stem}.csv` / `{stem}.json` are both
/// written into the directory and their paths echoed; without it the result
/// is printed to stdout in the requested `--format`.
pub fn emit(
    args: &CommonArgs,
    stem: &str,
    csv: &str,
    json: &serde_json::Value,
) -> Result<(), Failure> {
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(runtime)?;
            let csv_path = dir.join(format!("{stem}.csv"));
            write_atomic(&csv_path, csv.as_bytes())?;
            let mut json_text = serde_json::to_string_pretty(json).map_err(runtime)?;
            json_text.push('\n');
            let json_path = dir.join(format!("{stem}.json"));
            write_atomic(&json_path, json_text.as_bytes())?;
            println!("wrote {}", csv_path.display());
            println!("wrote {}", json_path.display());
        }
        None => match args.format {
            Format::Csv => print!("{csv}"),
            Format::Json => {
                let text = serde_json::to_string_pretty(json).map_err(runtime)?;
                println!("{text}");
            }
        },
    }
    Ok(())
}

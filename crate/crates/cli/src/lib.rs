//! Experiment runner for `oni-core`: named reproductions that write CSV
//! tables and a `manifest.txt` describing the resolved run.

pub mod experiments;
pub mod spec;
pub mod table;

use std::fmt::Write as _;

use oni_core::rng::{NORMAL_ALGORITHM, RNG_ALGORITHM};
use thiserror::Error;

pub use experiments::Outcome;
pub use spec::{parse_args, Experiment, ExperimentSpec};
pub use table::{emit_csv, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BAD_SPEC: i32 = 64;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] oni_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadSpec(_) | CliError::Core(oni_core::Error::Config(_)) => EXIT_BAD_SPEC,
            CliError::Io(_) | CliError::Core(oni_core::Error::Io(_)) => EXIT_IO,
            CliError::Core(_) => EXIT_VALIDATION,
        }
    }
}

/// Result of [`run_experiment`].
#[derive(Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub outcome: Option<Outcome>,
    pub message: Option<String>,
}

fn manifest(spec: &ExperimentSpec, outcome: &Outcome, status: &str) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "experiment={}", spec.experiment);
    let _ = writeln!(m, "seed={}", spec.seed);
    let _ = writeln!(m, "out_dir={}", spec.out_dir.display());
    let _ = writeln!(m, "rng={RNG_ALGORITHM}");
    let _ = writeln!(m, "normal={NORMAL_ALGORITHM}");
    let _ = writeln!(m, "version={}", env!("CARGO_PKG_VERSION"));
    for (k, v) in &spec.params {
        let _ = writeln!(m, "param.{k}={v}");
    }
    let _ = writeln!(m, "files={}", outcome.files.join(","));
    let _ = writeln!(m, "status={status}");
    m
}

/// Runs one experiment into `spec.out_dir` and writes its manifest.
pub fn run_experiment(spec: &ExperimentSpec) -> RunReport {
    let result = std::fs::create_dir_all(&spec.out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", spec.out_dir.display())))
        .and_then(|_| experiments::run(spec));
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            return RunReport {
                exit_code: e.exit_code(),
                outcome: None,
                message: Some(e.to_string()),
            }
        }
    };
    let (code, status, message) = match outcome.failures.first() {
        None => (EXIT_OK, "ok", None),
        Some(first) => (
            EXIT_VALIDATION,
            "validation_failed",
            Some(format!("validation failed: {first}")),
        ),
    };
    if let Err(e) = std::fs::write(spec.out_dir.join("manifest.txt"), manifest(spec, &outcome, status)) {
        return RunReport {
            exit_code: EXIT_IO,
            outcome: Some(outcome),
            message: Some(format!("writing manifest: {e}")),
        };
    }
    RunReport {
        exit_code: code,
        outcome: Some(outcome),
        message,
    }
}

/// Parses arguments (without the program name), runs, and returns the exit
/// code.
pub fn main_with_args<S: AsRef<str>>(args: &[S]) -> i32 {
    if args
        .first()
        .is_some_and(|a| matches!(a.as_ref(), "-h" | "--help" | "help"))
    {
        println!("{}", spec::USAGE);
        return EXIT_OK;
    }
    let spec = match parse_args(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}\n{}", spec::USAGE);
            return e.exit_code();
        }
    };
    let report = run_experiment(&spec);
    if let Some(msg) = &report.message {
        eprintln!("{msg}");
    }
    if let Some(o) = &report.outcome {
        for f in &o.files {
            println!("{}", spec.out_dir.join(f).display());
        }
    }
    report.exit_code
}

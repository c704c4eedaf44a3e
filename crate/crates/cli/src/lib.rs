//! Batch driver: JSON experiment configs in, JSON reports and CSV samples out.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod csv;
pub mod report;

use report::{ErrorInfo, Report};

/// Marker left in the output directory when a run fails.
pub const FAILED_MARKER: &str = ".failed";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("SchemaError at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("UnknownField at {path}")]
    UnknownField { path: String },

    #[error("invalid JSON: {0}")]
    Json(String),

    #[error("cannot read config: {0}")]
    ConfigRead(String),

    #[error("cannot read input: {0}")]
    Input(String),

    #[error("sample file line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("cannot write output: {0}")]
    Output(String),

    #[error(transparent)]
    Compute(#[from] geostein::Error),
}

impl CliError {
    /// 2 for configuration errors, 1 for everything raised while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } | CliError::UnknownField { .. } | CliError::Json(_) | CliError::ConfigRead(_) => 2,
            _ => 1,
        }
    }

    /// Variant name; library errors report their own variant.
    pub fn kind(&self) -> String {
        let debug = match self {
            CliError::Schema { .. } => return "SchemaError".into(),
            CliError::Compute(e) => format!("{e:?}"),
            other => format!("{other:?}"),
        };
        debug.chars().take_while(|c| c.is_ascii_alphanumeric()).collect()
    }
}

pub(crate) fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug)]
pub struct Options {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Runs one experiment and returns the process exit code.
pub fn execute(opts: &Options) -> i32 {
    let start = Instant::now();
    if let Err(e) = fs::create_dir_all(&opts.out) {
        eprintln!("error: cannot create {}: {e}", opts.out.display());
        return 1;
    }
    let marker = opts.out.join(FAILED_MARKER);
    let _ = fs::remove_file(&marker);

    let parsed = fs::read_to_string(&opts.config)
        .map_err(|e| CliError::ConfigRead(format!("{}: {e}", opts.config.display())))
        .and_then(|text| config::parse_config(&text))
        .map(|mut c| {
            if let Some(seed) = opts.seed {
                c.seed = seed;
            }
            c
        });
    let (cfg, outcome) = match parsed {
        Ok(c) => {
            let r = commands::run(&c, &opts.out);
            (Some(c), r)
        }
        Err(e) => (None, Err(e)),
    };

    let mut report = Report {
        schema: report::SCHEMA_ID,
        status: "ok",
        command: cfg.as_ref().map(|c| c.command.name().to_string()),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.as_ref().map(|c| c.seed),
        threads: rayon::current_num_threads(),
        wall_clock_seconds: 0.0,
        config: cfg,
        payload: None,
        error: None,
    };
    let code = match outcome {
        Ok(payload) => {
            report.payload = Some(payload);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            report.status = "error";
            report.error = Some(ErrorInfo { kind: e.kind(), message: e.to_string(), exit_code: e.exit_code() });
            e.exit_code()
        }
    };
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    let written = write_atomic(&opts.out.join(REPORT_FILE), &report::to_json(&report));
    let code = match written {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    if code != 0 {
        let reason = report.error.as_ref().map(|e| e.message.clone()).unwrap_or_default();
        let _ = fs::write(&marker, format!("{reason}\n"));
    }
    code
}

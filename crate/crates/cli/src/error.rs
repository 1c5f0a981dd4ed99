use std::path::PathBuf;

use serde_json::{json, Value};
use thiserror::Error;
use wlcox_core::WlError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Input table problem; `line` is the 1-based line in the CSV file.
    #[error("{}{}{}: {message}", file.display(), line.map(|l| format!(", line {l}")).unwrap_or_default(), column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Schema {
        file: PathBuf,
        line: Option<u64>,
        column: Option<String>,
        message: String,
    },

    #[error("{}: {source}", file.display())]
    Json {
        file: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: invalid configuration at `{path}`: {reason}", file.display())]
    Config {
        file: PathBuf,
        path: String,
        reason: String,
    },

    #[error(transparent)]
    Model(WlError),
}

impl CliError {
    /// 1 for input, output and configuration problems, 2 for model failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(_) => 2,
            _ => 1,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Schema { .. } => "schema",
            CliError::Json { .. } => "json",
            CliError::Config { .. } => "config",
            CliError::Model(_) => "model",
        }
    }

    /// Wraps a core error raised while processing `file`; configuration
    /// errors keep their path into the file.
    pub fn from_core(file: impl Into<PathBuf>, e: WlError) -> Self {
        match e {
            WlError::Config { path, reason } => CliError::Config {
                file: file.into(),
                path,
                reason,
            },
            other => CliError::Model(other),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut error = json!({
            "class": self.class(),
            "message": self.to_string(),
        });
        let details = match self {
            CliError::Schema { line, column, .. } => json!({ "line": line, "column": column }),
            CliError::Json { source, .. } => {
                json!({ "line": source.line(), "column": source.column() })
            }
            CliError::Config { path, .. } => json!({ "path": path }),
            CliError::Model(e) => {
                error["kind"] = json!(e.kind());
                model_details(e)
            }
            CliError::Io { .. } => json!({}),
        };
        error["details"] = details;
        json!({
            "schema_version": crate::report::SCHEMA_VERSION,
            "status": "error",
            "error": error,
        })
    }
}

fn model_details(e: &WlError) -> Value {
    match e {
        WlError::Overflow { subject } => json!({ "subject": subject }),
        WlError::EmptyRiskSet { time } => json!({ "time": time }),
        WlError::SingularInformation { direction } => json!({ "direction": direction }),
        WlError::MonotoneLikelihood { direction, trace } => {
            json!({ "direction": direction, "trace": trace })
        }
        WlError::NonConvergence { trace } => json!({ "trace": trace }),
        WlError::Stratum { stratum, reason } => json!({ "stratum": stratum, "reason": reason }),
        WlError::ProbabilityFloor { subject, pi, floor } => {
            json!({ "subject": subject, "pi": pi, "floor": floor })
        }
        WlError::Logistic { reason, trace } => json!({ "reason": reason, "trace": trace }),
        WlError::Config { path, reason } => json!({ "path": path, "reason": reason }),
        WlError::InvalidInput(m) | WlError::RankDeficient(m) => json!({ "reason": m }),
        WlError::NoEvents => json!({}),
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

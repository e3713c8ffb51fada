use std::fmt;

use thiserror::Error;

use crate::geometry::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cone rejected: {message}")]
    ConeRejected {
        face: Option<usize>,
        message: String,
        report: Box<ValidationReport>,
    },

    #[error("point outside the cone: min <x, n_i> = {min_inner:e} below -{tolerance:e}")]
    OutsideCone { min_inner: f64, tolerance: f64 },

    #[error("path starts outside the cone: min <psi(0), n_i> = {min_inner:e}")]
    StartOutside { min_inner: f64 },

    #[error("facet enumeration supports dimension <= {limit}, got {dim}")]
    DimensionLimit { dim: usize, limit: usize },

    #[error("constraint cone spanned by -d_i is not full-dimensional")]
    DegenerateCone,

    #[error("complementarity solver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("model rejected: {0}")]
    ModelRejected(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("incompatible stage geometries: {0}")]
    Incompatible(String),

    #[error("{}", ConfigErrors(.0))]
    Config(Vec<ConfigError>),

    #[error("malformed input file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Parse,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Self {
            kind: ConfigErrorKind::Parse,
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn validate(line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            kind: ConfigErrorKind::Validate,
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ConfigErrorKind::Parse => "PARSE",
            ConfigErrorKind::Validate => "VALIDATE",
        };
        match self.line {
            Some(line) => write!(f, "{kind} (line {line}): {}", self.message),
            None => write!(f, "{kind}: {}", self.message),
        }
    }
}

struct ConfigErrors<'a>(&'a [ConfigError]);

impl fmt::Display for ConfigErrors<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

//! Mapping of failures to process exit codes.

use std::fmt;

use macrocause::Error;

pub const FAILURE: u8 = 1;
/// Input data or a checked property failed validation.
pub const VALIDATION: u8 = 2;
/// Bad arguments or configuration.
pub const CONFIG: u8 = 3;

/// A check that ran to completion and failed.
#[derive(Debug)]
pub struct ValidationFailure(pub String);

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

/// A configuration file that could not be read or parsed.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn library_code(e: &Error) -> u8 {
    match e {
        Error::Stage { stage: "config", .. } => CONFIG,
        Error::Stage { source, .. } => library_code(source),
        Error::InvalidArgument(_) | Error::ResourceLimit { .. } => CONFIG,
        Error::Format { .. }
        | Error::DimensionMismatch { .. }
        | Error::SampleSize(_)
        | Error::UndefinedConditional(_)
        | Error::InfeasibleConstraints { .. } => VALIDATION,
        Error::Io { .. } | Error::Json(_) => FAILURE,
    }
}

pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if cause.is::<ValidationFailure>() {
            return VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return library_code(e);
        }
    }
    FAILURE
}

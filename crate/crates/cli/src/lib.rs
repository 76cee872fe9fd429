//! Command implementations behind the `skillflow` binary.
//!
//! Every command echoes its full configuration and seed into each artifact
//! it writes, so any output can be reproduced byte-for-byte by re-running
//! the embedded configuration (plots are exempt from byte-exactness, data
//! files are not).
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric failure, 5 degenerate
//! input.

pub mod args;
pub mod commands;
pub mod plot;
pub mod report;

use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed override honored by every command.
pub const SEED_ENV_VAR: &str = "SKILLFLOW_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Degenerate(_) => 5,
        }
    }
}

impl From<skillflow_core::synth::SynthError> for CliError {
    fn from(e: skillflow_core::synth::SynthError) -> Self {
        use skillflow_core::synth::SynthError;
        match e {
            SynthError::Io { .. } | SynthError::Format { .. } => CliError::Io(e.to_string()),
            SynthError::BadSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<skillflow_core::skillbank::SkillBankError> for CliError {
    fn from(e: skillflow_core::skillbank::SkillBankError) -> Self {
        use skillflow_core::skillbank::SkillBankError;
        match e {
            SkillBankError::Io { .. } | SkillBankError::Format { .. } => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<skillflow_core::transform::TransformError> for CliError {
    fn from(e: skillflow_core::transform::TransformError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<skillflow_core::diffusion::DiffusionError> for CliError {
    fn from(e: skillflow_core::diffusion::DiffusionError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<skillflow_core::geometry::GeometryError> for CliError {
    fn from(e: skillflow_core::geometry::GeometryError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Resolves the effective seed: the environment variable wins over the flag.
pub fn effective_seed(flag_seed: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV_VAR}={v} is not a valid seed"))),
        Err(_) => Ok(flag_seed),
    }
}

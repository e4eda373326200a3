use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid timing parameters: {0}")]
    Timing(String),
    #[error("invalid subarray layout: {0}")]
    Layout(String),
    #[error("invalid row mapping: {0}")]
    Mapping(String),
    #[error("invalid fault profile: {0}")]
    Profile(String),
    #[error("invalid TRR configuration: {0}")]
    Trr(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AddressError {
    #[error("{field} {value} out of range (limit {limit})")]
    OutOfRange {
        field: &'static str,
        value: u64,
        limit: u64,
    },
}

/// A timing rule broken by a command, named after the parameter it violates.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("timing violation {parameter} at command {index} (t={time_ns} ns): {detail}")]
pub struct TimingViolation {
    pub index: usize,
    pub time_ns: f64,
    pub parameter: &'static str,
    pub detail: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error(transparent)]
    Timing(#[from] TimingViolation),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("data length {got} words does not match row width {expected} words")]
    DataLength { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("infeasible anchors: {0}")]
    Infeasible(String),
    #[error("unknown anchor `{0}`")]
    UnknownAnchor(String),
    #[error("anchor file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

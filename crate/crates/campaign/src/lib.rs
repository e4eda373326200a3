//! Desk-scale reproductions of read-disturbance characterization experiments.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analysis;
pub mod bypass;
pub mod csv;
pub mod ecc;
pub mod measure;
pub mod run;
pub mod selection;
pub mod spec;

use hbmlab_core::{ConfigError, DeviceError};

pub use run::{run_ber, run_hc, wcdp_select, BerRecord, HcRecord};
pub use selection::{RowSelection, Scale};
pub use spec::{CampaignSpec, Experiment};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("invalid campaign: {0}")]
    Spec(String),
    #[error("{hammers} hammers at tAggON {taggon_ns} ns outlast the refresh window; enable retention subtraction")]
    RetentionWindow { hammers: u64, taggon_ns: f64 },
    #[error("bypass synthesis: {0}")]
    Synthesis(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

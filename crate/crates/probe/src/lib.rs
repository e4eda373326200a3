//! Black-box probes run against a device's command/read surface: retention
//! profiling, inference of the undocumented TRR mechanism through the
//! retention side channel, and recovery of row adjacency and subarray bounds.
//!
//! Every probe takes a [`ProbePort`]; nothing here can see a device's
//! configuration.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use hbmlab_core::{DeviceError, ProbePort, RefreshMode};
use thiserror::Error;

pub mod report;
pub mod retention;
pub mod structure;
pub mod trr;

pub use report::{findings_csv, Finding, TrrFindings};
pub use retention::{profile_retention, RetentionMap, RetentionParams};
pub use structure::{find_subarray_bounds, reverse_map, sizes_from_bounds, Adjacency, AdjacencyParams};
pub use trr::{infer_sampler_rules, infer_trr, infer_trr_period, infer_victim_span, SideChannel, TrrProbeParams};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("refresh must be disabled while probing, device is in {0:?} mode")]
    RefreshEnabled(RefreshMode),
    #[error("no TRR detected within {0} REF phases")]
    NoTrr(u32),
    #[error("not enough side-channel rows: {0}")]
    SideChannel(String),
    #[error("{0} is undetermined")]
    Undetermined(&'static str),
    #[error("invalid probe parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

pub(crate) fn require_refresh_disabled<P: ProbePort + ?Sized>(port: &P) -> Result<(), ProbeError> {
    match port.refresh_mode() {
        RefreshMode::Disabled => Ok(()),
        m => Err(ProbeError::RefreshEnabled(m)),
    }
}

pub(crate) const PS_PER_MS: u64 = 1_000_000_000;

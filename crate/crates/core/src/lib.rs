//! Command-level HBM2 device model with read-disturbance faults and an
//! in-DRAM target row refresh mechanism.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod calibrate;
pub mod cell;
pub mod device;
pub mod error;
pub mod geometry;
pub mod hash;
pub mod port;
pub mod profile;
pub mod search;
pub mod timing;
pub mod trr;

pub use cell::{CellFaultState, FaultModel, Orientation};
pub use device::{Device, DeviceConfig, Event, HammerReport, RefreshMode};
pub use error::{AddressError, CalibrationError, ConfigError, DeviceError, TimingViolation};
pub use geometry::{Address, BankId, Geometry, RowMapping, SubarrayLayout};
pub use port::{BlackBox, ProbePort};
pub use profile::{DataPattern, FaultProfile};
pub use timing::{compute_act_budget, validate_trace, Command, CommandKind, TimingParams};
pub use trr::{TrrConfig, TrrState};

/// Fresh fault state of one cell at a logical address.
pub fn cell_params(config: &DeviceConfig, addr: &Address, bit: u32) -> Result<CellFaultState, ConfigError> {
    let model = FaultModel::new(
        config.profile.clone(),
        config.geometry.clone(),
        config.layout(),
        config.mapping,
        config.seed,
    )?;
    Ok(model.cell_params(addr, bit))
}

//! The command/read surface handed to black-box probes.

use crate::device::{Device, HammerReport, RefreshMode};
use crate::error::DeviceError;
use crate::geometry::{BankId, Geometry};
use crate::profile::byte_word;
use crate::timing::TimingParams;

/// What a host can do to a device it does not know the internals of: issue
/// activations and refreshes, move data in and out, and let time pass.
pub trait ProbePort {
    fn geometry(&self) -> &Geometry;
    fn timing(&self) -> &TimingParams;
    fn refresh_mode(&self) -> RefreshMode;
    fn now_ps(&self) -> u64;
    fn write_row(&mut self, bank: BankId, row: u32, data: &[u64]) -> Result<(), DeviceError>;
    fn read_row(&mut self, bank: BankId, row: u32) -> Result<Vec<u64>, DeviceError>;
    fn hammer(
        &mut self,
        bank: BankId,
        rows: &[u32],
        repeats: u64,
        t_on_ps: u64,
    ) -> Result<HammerReport, DeviceError>;
    fn refresh(&mut self, channel: u32, pseudo_channel: u32) -> Result<(), DeviceError>;
    fn wait(&mut self, ps: u64);

    fn fill_row(&mut self, bank: BankId, row: u32, byte: u8) -> Result<(), DeviceError> {
        let data = vec![byte_word(byte); self.geometry().words_per_row()];
        self.write_row(bank, row, &data)
    }
}

/// Wraps a device so that only the `ProbePort` surface is reachable.
pub struct BlackBox<'a>(&'a mut Device);

impl<'a> BlackBox<'a> {
    pub fn new(device: &'a mut Device) -> Self {
        Self(device)
    }
}

impl ProbePort for BlackBox<'_> {
    fn geometry(&self) -> &Geometry {
        self.0.geometry()
    }
    fn timing(&self) -> &TimingParams {
        self.0.timing()
    }
    fn refresh_mode(&self) -> RefreshMode {
        self.0.refresh_mode()
    }
    fn now_ps(&self) -> u64 {
        self.0.now_ps()
    }
    fn write_row(&mut self, bank: BankId, row: u32, data: &[u64]) -> Result<(), DeviceError> {
        self.0.write_row(bank, row, data)
    }
    fn read_row(&mut self, bank: BankId, row: u32) -> Result<Vec<u64>, DeviceError> {
        self.0.read_row(bank, row)
    }
    fn hammer(
        &mut self,
        bank: BankId,
        rows: &[u32],
        repeats: u64,
        t_on_ps: u64,
    ) -> Result<HammerReport, DeviceError> {
        self.0.hammer(bank, rows, repeats, t_on_ps)
    }
    fn refresh(&mut self, channel: u32, pseudo_channel: u32) -> Result<(), DeviceError> {
        self.0.refresh(channel, pseudo_channel).map(|_| ())
    }
    fn wait(&mut self, ps: u64) {
        self.0.wait(ps)
    }
}

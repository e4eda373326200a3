//! Per-row minimal failing retention time, found by writing a row, letting
//! time pass without refresh and reading it back.

use hbmlab_core::{BankId, ProbePort};

use crate::{require_refresh_disabled, ProbeError, PS_PER_MS};

const BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetentionParams {
    pub step_ms: u64,
    pub cap_ms: u64,
    /// A row fails at a wait if any of these trials shows a flipped bit.
    pub trials: u32,
    /// Byte every profiled row is filled with. Later side-channel use must
    /// write the same byte, since only charged cells leak.
    pub fill: u8,
}

impl Default for RetentionParams {
    fn default() -> Self {
        Self { step_ms: 64, cap_ms: 256, trials: 5, fill: 0xFF }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetentionMap {
    pub bank: BankId,
    pub step_ms: u64,
    pub cap_ms: u64,
    pub fill: u8,
    /// (row, smallest failing wait in ms); `None` means above the cap.
    pub rows: Vec<(u32, Option<u64>)>,
}

impl RetentionMap {
    pub fn time_of(&self, row: u32) -> Option<Option<u64>> {
        self.rows.iter().find(|&&(r, _)| r == row).map(|&(_, t)| t)
    }

    /// Rows whose failing time is exactly `t_ms`, ascending.
    pub fn rows_at(&self, t_ms: u64) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .rows
            .iter()
            .filter(|&&(_, t)| t == Some(t_ms))
            .map(|&(r, _)| r)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn min_time(&self) -> Option<u64> {
        self.rows.iter().filter_map(|&(_, t)| t).min()
    }
}

pub fn profile_retention<P: ProbePort>(
    port: &mut P,
    bank: BankId,
    rows: &[u32],
    params: &RetentionParams,
) -> Result<RetentionMap, ProbeError> {
    require_refresh_disabled(port)?;
    if params.step_ms == 0 || params.trials == 0 || params.cap_ms < params.step_ms {
        return Err(ProbeError::Parameter(format!("bad retention parameters {params:?}")));
    }
    let words = port.geometry().words_per_row();
    let expected = vec![hbmlab_core::profile::byte_word(params.fill); words];
    let mut result: Vec<(u32, Option<u64>)> = rows.iter().map(|&r| (r, None)).collect();
    // small batches keep the rows' cell state warm in the device across trials
    for batch in result.chunks_mut(BATCH) {
        let mut pending: Vec<usize> = (0..batch.len()).collect();
        let mut t = params.step_ms;
        while t <= params.cap_ms && !pending.is_empty() {
            let mut failed = vec![false; pending.len()];
            for _ in 0..params.trials {
                for &i in &pending {
                    port.write_row(bank, batch[i].0, &expected)?;
                }
                port.wait(t * PS_PER_MS);
                for (k, &i) in pending.iter().enumerate() {
                    failed[k] |= port.read_row(bank, batch[i].0)? != expected;
                }
            }
            let mut still = Vec::with_capacity(pending.len());
            for (k, &i) in pending.iter().enumerate() {
                if failed[k] {
                    batch[i].1 = Some(t);
                } else {
                    still.push(i);
                }
            }
            pending = still;
            t += params.step_ms;
        }
    }
    Ok(RetentionMap {
        bank,
        step_ms: params.step_ms,
        cap_ms: params.cap_ms,
        fill: params.fill,
        rows: result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hbmlab_core::{BlackBox, Device, DeviceConfig, RefreshMode};

    #[test]
    fn refuses_auto_refresh() {
        let mut cfg = DeviceConfig::miniature(64, 256);
        cfg.refresh = RefreshMode::Auto;
        let mut dev = Device::new(cfg).unwrap();
        let err = profile_retention(&mut BlackBox::new(&mut dev), BankId::new(0, 0, 0), &[3], &RetentionParams::default());
        assert!(matches!(err, Err(ProbeError::RefreshEnabled(RefreshMode::Auto))));
    }

    #[test]
    fn times_are_step_multiples() {
        let cfg = DeviceConfig::miniature(128, 1024);
        let mut dev = Device::new(cfg).unwrap();
        let rows: Vec<u32> = (8..72).collect();
        let map = profile_retention(&mut BlackBox::new(&mut dev), BankId::new(0, 0, 0), &rows, &RetentionParams::default()).unwrap();
        assert_eq!(map.rows.len(), rows.len());
        assert!(map.rows.iter().filter_map(|r| r.1).all(|t| t % 64 == 0 && (64..=256).contains(&t)));
    }
}

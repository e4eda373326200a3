//! Single-row measurements: initialize a victim's neighborhood, hammer, read back.
//!
//! Every measurement rewrites all rows it depends on, so repetitions and search
//! steps can run back to back on one device and match a fresh device exactly.

use std::cell::RefCell;

use hbmlab_core::cell::RETENTION_STEP_PS;
use hbmlab_core::profile::byte_word;
use hbmlab_core::search::{search_first, SearchParams};
use hbmlab_core::{BankId, DataPattern, Device, DeviceError};

/// Neighbors written on each side of a victim.
pub const NEIGHBORHOOD: u32 = 8;

/// Logical rows hammered around `victim` (one or two).
pub fn aggressors(rows_per_bank: u32, victim: u32) -> Vec<u32> {
    let mut a = Vec::with_capacity(2);
    if victim > 0 {
        a.push(victim - 1);
    }
    if victim + 1 < rows_per_bank {
        a.push(victim + 1);
    }
    a
}

/// Writes V±[2:8], then V±1, then the victim last so it starts unexposed.
pub fn init_neighborhood(dev: &mut Device, bank: BankId, victim: u32, pattern: DataPattern) -> Result<(), DeviceError> {
    let rows = dev.geometry().rows_per_bank;
    for d in (2..=NEIGHBORHOOD).rev() {
        for r in [victim.checked_sub(d), victim.checked_add(d).filter(|&r| r < rows)]
            .into_iter()
            .flatten()
        {
            dev.fill_row(bank, r, pattern.far_byte())?;
        }
    }
    for r in aggressors(rows, victim) {
        dev.fill_row(bank, r, pattern.aggressor_byte())?;
    }
    dev.fill_row(bank, victim, pattern.victim_byte())
}

/// One measurement condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub pattern: DataPattern,
    pub hammers: u64,
    pub t_on_ps: u64,
    pub trial: u64,
    /// Remove cells that also fail in a hammer-free pass of the same duration.
    pub subtract_retention: bool,
}

fn act_time(dev: &Device, bank: BankId) -> u64 {
    dev.bank_state(bank).last_act_ps.unwrap_or(0)
}

/// Flip map of the victim after one double-sided hammer run.
pub fn hammer_flips(dev: &mut Device, bank: BankId, victim: u32, c: &Condition) -> Result<Vec<u64>, DeviceError> {
    dev.set_trial(c.trial);
    init_neighborhood(dev, bank, victim, c.pattern)?;
    let written = act_time(dev, bank);
    let agg = aggressors(dev.geometry().rows_per_bank, victim);
    if c.hammers > 0 {
        dev.hammer(bank, &agg, c.hammers, c.t_on_ps)?;
    }
    let data = dev.read_row(bank, victim)?;
    let elapsed = act_time(dev, bank) - written;
    let expected = byte_word(c.pattern.victim_byte());
    let mut flips: Vec<u64> = data.iter().map(|w| w ^ expected).collect();
    if c.subtract_retention && elapsed > RETENTION_STEP_PS {
        let retention = retention_flips(dev, bank, victim, c.pattern, elapsed)?;
        for (f, r) in flips.iter_mut().zip(retention) {
            *f &= !r;
        }
    }
    Ok(flips)
}

/// Flip map of the victim read `elapsed_ps` after writing it, nothing hammered.
pub fn retention_flips(
    dev: &mut Device,
    bank: BankId,
    victim: u32,
    pattern: DataPattern,
    elapsed_ps: u64,
) -> Result<Vec<u64>, DeviceError> {
    dev.fill_row(bank, victim, pattern.victim_byte())?;
    let written = act_time(dev, bank);
    dev.wait_until(written + elapsed_ps);
    let data = dev.read_row(bank, victim)?;
    let expected = byte_word(pattern.victim_byte());
    Ok(data.iter().map(|w| w ^ expected).collect())
}

pub fn popcount(map: &[u64]) -> u32 {
    map.iter().map(|w| w.count_ones()).sum()
}

/// Smallest hammer count (per aggressor) at which at least `n` cells flip, for
/// one trial. `floor` is a count known to flip fewer than `n` cells.
pub fn search_nth(
    dev: &mut Device,
    bank: BankId,
    victim: u32,
    base: &Condition,
    n: u32,
    params: &SearchParams,
    floor: u64,
) -> Result<Option<u64>, DeviceError> {
    let err = RefCell::new(None);
    let found = search_first(params, floor, |h| {
        if err.borrow().is_some() {
            return true;
        }
        let c = Condition { hammers: h, ..*base };
        match hammer_flips(dev, bank, victim, &c) {
            Ok(f) => popcount(&f) >= n,
            Err(e) => {
                *err.borrow_mut() = Some(e);
                true
            }
        }
    });
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(found),
    }
}

/// HC₁..HCₙ for one trial; each search starts where the previous one ended so the
/// sequence is nondecreasing. Entries past the cap are `None`.
pub fn hc_sequence(
    dev: &mut Device,
    bank: BankId,
    victim: u32,
    base: &Condition,
    n: u32,
    params: &SearchParams,
) -> Result<Vec<Option<u64>>, DeviceError> {
    let mut out = Vec::with_capacity(n as usize);
    let mut prev: Option<u64> = None;
    for i in 1..=n {
        let hc = match prev {
            None if i == 1 => search_nth(dev, bank, victim, base, i, params, 0)?,
            None => None,
            Some(p) => {
                let p2 = SearchParams { start: p, ..*params };
                search_nth(dev, bank, victim, base, i, &p2, p - 1)?
            }
        };
        out.push(hc);
        prev = hc;
    }
    Ok(out)
}

/// Elementwise minimum over repetitions; `None` only where every repetition hit the cap.
pub fn min_over_reps(per_rep: &[Vec<Option<u64>>]) -> Vec<Option<u64>> {
    let n = per_rep.iter().map(Vec::len).max().unwrap_or(0);
    (0..n)
        .map(|i| per_rep.iter().filter_map(|r| r.get(i).copied().flatten()).min())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hbmlab_core::{DeviceConfig, FaultProfile};

    fn device(profile: FaultProfile) -> Device {
        let mut cfg = DeviceConfig::miniature(64, 256);
        cfg.profile = profile;
        Device::new(cfg).unwrap()
    }

    #[test]
    fn aggressors_at_edges() {
        assert_eq!(aggressors(64, 0), vec![1]);
        assert_eq!(aggressors(64, 63), vec![62]);
        assert_eq!(aggressors(64, 10), vec![9, 11]);
    }

    #[test]
    fn degenerate_threshold_double_sided() {
        // every cell has threshold 1000 exposure units: 500 hammers per aggressor
        let mut dev = device(FaultProfile::degenerate(1000.0));
        let b = BankId::new(0, 0, 0);
        let base = Condition {
            pattern: DataPattern::Checkered0,
            hammers: 0,
            t_on_ps: 29_000,
            trial: 0,
            subtract_retention: false,
        };
        let hc = search_nth(&mut dev, b, 20, &base, 1, &SearchParams::default(), 0).unwrap();
        let hc = hc.unwrap();
        assert!((500..500 + 256).contains(&hc), "{hc}");
        let exact = search_nth(&mut dev, b, 20, &base, 1, &SearchParams::exact(1 << 20), 0).unwrap();
        assert_eq!(exact, Some(500));
        let at = hammer_flips(&mut dev, b, 20, &Condition { hammers: 500, ..base }).unwrap();
        // every charged cell flips: half the bits under the balanced orientation
        assert!(popcount(&at) > 80 && popcount(&at) < 176);
        let below = hammer_flips(&mut dev, b, 20, &Condition { hammers: 499, ..base }).unwrap();
        assert_eq!(popcount(&below), 0);
    }

    #[test]
    fn no_disturbance_never_flips() {
        let mut dev = device(FaultProfile::no_disturbance());
        let b = BankId::new(0, 0, 0);
        let c = Condition {
            pattern: DataPattern::Rowstripe1,
            hammers: 256 * 1024,
            t_on_ps: 29_000,
            trial: 0,
            subtract_retention: false,
        };
        assert_eq!(popcount(&hammer_flips(&mut dev, b, 30, &c).unwrap()), 0);
    }

    #[test]
    fn sequence_is_nondecreasing() {
        let mut dev = device(FaultProfile::default());
        let b = BankId::new(0, 0, 0);
        let base = Condition {
            pattern: DataPattern::Rowstripe1,
            hammers: 0,
            t_on_ps: 29_000,
            trial: 1,
            subtract_retention: true,
        };
        let params = SearchParams { cap: 4 << 20, ..SearchParams::default() };
        let seq = hc_sequence(&mut dev, b, 33, &base, 10, &params).unwrap();
        let vals: Vec<u64> = seq.iter().flatten().copied().collect();
        assert!(!vals.is_empty());
        assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{seq:?}");
        assert_eq!(min_over_reps(&[seq.clone(), seq.clone()]), seq);
    }
}

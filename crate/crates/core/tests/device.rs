//! Device behaviour through the public command interface.

use hbmlab_core::profile::byte_word;
use hbmlab_core::{
    BankId, Command, DataPattern, Device, DeviceConfig, DeviceError, Event, FaultProfile, RefreshMode, RowMapping,
    TrrConfig,
};
use proptest::prelude::*;

const BANK: BankId = BankId { channel: 0, pseudo_channel: 0, bank: 0 };

fn mini(rows: u32, seed: u64) -> DeviceConfig {
    let mut cfg = DeviceConfig::miniature(rows, 1024);
    cfg.seed = seed;
    cfg.trr = TrrConfig::disabled();
    cfg
}

fn prepare(cfg: &DeviceConfig) -> Device {
    let mut dev = Device::new(cfg.clone()).unwrap();
    for r in 0..cfg.geometry.rows_per_bank {
        let p = if r % 2 == 0 { DataPattern::Checkered0 } else { DataPattern::Checkered1 };
        dev.fill_row(BANK, r, p.victim_byte()).unwrap();
    }
    dev
}

#[test]
fn bulk_hammer_matches_explicit_commands() {
    let cfg = DeviceConfig { mapping: RowMapping::GroupSwap { group: 1 }, ..mini(64, 11) };
    let aggressors = [20, 22];
    let (repeats, t_on) = (90_000, 2 * cfg.timing.ras_ps());

    let mut bulk = prepare(&cfg);
    let report = bulk.hammer(BANK, &aggressors, repeats, t_on).unwrap();

    let mut explicit = prepare(&cfg);
    let period = cfg.timing.act_period_ps(t_on);
    for i in 0..repeats * 2 {
        let t = report.start_ps + i * period;
        let row = aggressors[(i % 2) as usize];
        explicit.issue(Command::act(t, BANK, row)).unwrap();
        explicit.issue(Command::pre(t + t_on, BANK, row)).unwrap();
    }
    assert_eq!(explicit.now_ps(), bulk.now_ps());
    assert_eq!(explicit.activation_count(), bulk.activation_count());
    let mut flipped = 0;
    for r in 0..64 {
        let (a, b) = (bulk.exposure(BANK, r).unwrap(), explicit.exposure(BANK, r).unwrap());
        assert!((a - b).abs() <= 1e-9 * a.max(1.0), "row {r}: {a} vs {b}");
        let (da, db) = (bulk.peek_row(BANK, r).unwrap(), explicit.peek_row(BANK, r).unwrap());
        assert_eq!(da, db, "row {r}");
        let p = if r % 2 == 0 { DataPattern::Checkered0 } else { DataPattern::Checkered1 };
        flipped += da.iter().map(|w| (w ^ byte_word(p.victim_byte())).count_ones()).sum::<u32>();
    }
    assert!(flipped > 0, "the comparison should include flipped rows");
}

#[test]
fn row_summary_bounds_every_cell() {
    let cfg = mini(32, 4);
    let dev = Device::new(cfg.clone()).unwrap();
    let model = dev.model();
    for phys in 0..32 {
        let s = model.row_summary(BANK, phys);
        let cells: Vec<_> = (0..cfg.geometry.row_size_bits).map(|b| model.cell_at(BANK, phys, b)).collect();
        let min_hc = cells.iter().map(|c| c.hc_threshold).fold(f64::INFINITY, f64::min);
        assert!(s.min_effective <= min_hc, "row {phys}");
        assert!(s.min_effective >= min_hc * (1.0 - 1e-6), "row {phys}: {} vs {min_hc}", s.min_effective);
        let min_ret = cells.iter().map(|c| c.retention_time_ms).fold(f64::INFINITY, f64::min);
        assert_eq!(s.first_retention_step as f64 * 64.0, min_ret, "row {phys}");
    }
}

#[test]
fn auto_refresh_issues_one_ref_per_interval() {
    let cfg = DeviceConfig { refresh: RefreshMode::Auto, ..mini(1024, 2) };
    let mut dev = Device::new(cfg.clone()).unwrap();
    dev.wait(3 * cfg.timing.refw_ps());
    let want = 3 * cfg.timing.refs_per_window();
    assert!(dev.ref_count().abs_diff(want) <= 1, "{} vs {want}", dev.ref_count());
}

#[test]
fn strict_timing_rejects_and_permissive_reports() {
    let early = [Command::act(0, BANK, 5), Command::pre(10_000, BANK, 5)];
    let mut strict = Device::new(mini(64, 1)).unwrap();
    strict.issue(early[0]).unwrap();
    assert!(matches!(strict.issue(early[1]), Err(DeviceError::Timing(_))));

    let mut loose = Device::new(DeviceConfig { strict_timing: false, ..mini(64, 1) }).unwrap();
    loose.issue(early[0]).unwrap();
    let events = loose.issue(early[1]).unwrap();
    assert!(events.iter().any(|e| matches!(e, Event::Violation(v) if v.parameter == "tRAS")));
    assert_eq!(loose.violations().len(), 1);
}

#[test]
fn untouched_rows_read_zero_and_writes_read_back() {
    let mut dev = Device::new(mini(64, 3)).unwrap();
    assert!(dev.read_row(BANK, 9).unwrap().iter().all(|&w| w == 0));
    let data: Vec<u64> = (0..16).map(|i| 0x0123_4567_89AB_CDEF ^ i).collect();
    dev.write_row(BANK, 9, &data).unwrap();
    assert_eq!(dev.read_row(BANK, 9).unwrap(), data);
}

#[test]
fn disturbance_free_rows_only_lose_data_to_retention() {
    let cfg = DeviceConfig { profile: FaultProfile::no_disturbance(), ..mini(64, 8) };
    let mut dev = prepare(&cfg);
    dev.hammer(BANK, &[30, 32], 500_000, cfg.timing.ras_ps()).unwrap();
    assert!(dev.exposure(BANK, 31).unwrap() > 0.0);
    let w = byte_word(DataPattern::Checkered1.victim_byte());
    assert_eq!(dev.count_flips(BANK, 31, &vec![w; 16]).unwrap(), 0);
}

proptest! {
    #[test]
    fn mappings_are_bijections(group in 1u32..64, blocks in 1u32..16) {
        let rows = 2 * group * blocks;
        let m = RowMapping::GroupSwap { group };
        let mut seen = vec![false; rows as usize];
        for r in 0..rows {
            let p = m.to_physical(r, rows).unwrap();
            prop_assert!(!seen[p as usize]);
            seen[p as usize] = true;
            prop_assert_eq!(m.to_logical(p, rows).unwrap(), r);
        }
    }
}

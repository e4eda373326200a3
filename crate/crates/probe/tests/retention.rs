use hbmlab_core::{BankId, BlackBox, Device, DeviceConfig, Orientation};
use hbmlab_probe::{profile_retention, RetentionParams};

#[test]
fn matches_the_weakest_charged_cell() {
    let mut cfg = DeviceConfig::miniature(512, 2048);
    cfg.seed = 9;
    let mut dev = Device::new(cfg).unwrap();
    let bank = BankId::new(0, 0, 0);
    let rows: Vec<u32> = (100..400).collect();
    let params = RetentionParams { cap_ms: 512, ..RetentionParams::default() };
    let map = profile_retention(&mut BlackBox::new(&mut dev), bank, &rows, &params).unwrap();
    let model = dev.model().clone();
    let mut seen_128 = false;
    for &(row, t) in &map.rows {
        // fill 0xFF charges exactly the true cells
        let truth = (0..2048)
            .map(|bit| model.cell_at(bank, row, bit))
            .filter(|c| c.orientation == Orientation::TrueCell)
            .map(|c| c.retention_time_ms)
            .fold(f64::INFINITY, f64::min);
        let expect = (truth <= 512.0).then_some(truth as u64);
        assert_eq!(t, expect, "row {row}");
        seen_128 |= t == Some(128);
    }
    assert!(seen_128);
}

#[test]
fn reproducible_for_a_seed() {
    let run = || {
        let mut cfg = DeviceConfig::miniature(256, 1024);
        cfg.seed = 4;
        let mut dev = Device::new(cfg).unwrap();
        let rows: Vec<u32> = (0..256).collect();
        profile_retention(&mut BlackBox::new(&mut dev), BankId::new(0, 0, 0), &rows, &RetentionParams::default()).unwrap()
    };
    assert_eq!(run(), run());
}

use hbmlab_campaign::measure::{hammer_flips, popcount, Condition};
use hbmlab_campaign::{run_ber, run_hc, CampaignError, CampaignSpec, Experiment, RowSelection, Scale};
use hbmlab_core::search::SearchParams;
use hbmlab_core::timing::ns_to_ps;
use hbmlab_core::{DataPattern, Device, DeviceConfig};

fn cfg() -> DeviceConfig {
    DeviceConfig { seed: 1, ..DeviceConfig::default() }
}

fn small(exp: Experiment, rows: u32) -> CampaignSpec {
    let c = cfg();
    let mut s = CampaignSpec::defaults(exp, &c.geometry, Scale::Desk, 9);
    s.rows = RowSelection::new(vec![0, 5], vec![1], vec![3], rows);
    s
}

#[test]
fn thread_count_does_not_change_records() {
    let mut spec = small(Experiment::Ber, 3);
    spec.repetitions = 2;
    let one = run_ber(&cfg(), &spec, 1).unwrap();
    let four = run_ber(&cfg(), &spec, 4).unwrap();
    assert_eq!(one.len(), 2 * 3 * 4);
    assert_eq!(one, four);
}

#[test]
fn exact_hcfirst_is_the_first_flipping_count() {
    let mut spec = small(Experiment::Hcfirst, 3);
    spec.patterns = vec![DataPattern::Rowstripe0, DataPattern::Checkered1];
    spec.repetitions = 1;
    spec.search = SearchParams::exact(1 << 20);
    let recs = run_hc(&cfg(), &spec, 1).unwrap();
    let mut dev = Device::new(cfg()).unwrap();
    for r in &recs {
        let h = r.first().expect("every desk row flips below the cap");
        let at = |hammers| Condition { pattern: r.pattern, hammers, t_on_ps: ns_to_ps(29.0), trial: 0, subtract_retention: true };
        assert_eq!(popcount(&hammer_flips(&mut dev, r.bank, r.row, &at(h - 1)).unwrap()), 0, "{r:?}");
        assert!(popcount(&hammer_flips(&mut dev, r.bank, r.row, &at(h)).unwrap()) > 0, "{r:?}");
    }
}

#[test]
fn hcnth_starts_at_hcfirst_and_never_decreases() {
    let mut nth = small(Experiment::Hcnth, 2);
    nth.repetitions = 2;
    nth.search = SearchParams::exact(4 << 20);
    let mut first = nth.clone();
    first.experiment = Experiment::Hcfirst;
    let a = run_hc(&cfg(), &nth, 1).unwrap();
    let b = run_hc(&cfg(), &first, 1).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.hc.len(), 10);
        assert_eq!(x.hc[0], y.hc[0], "{x:?}");
        let seq: Vec<u64> = x.hc.iter().map(|h| h.unwrap_or(u64::MAX)).collect();
        assert!(seq.windows(2).all(|w| w[0] <= w[1]), "{seq:?}");
    }
}

#[test]
fn longer_on_time_never_needs_more_hammers() {
    let mut spec = small(Experiment::RowpressHcfirst, 3);
    spec.taggon_ns = vec![29.0, 500.0, 7800.0];
    spec.refresh_window_cap = false;
    spec.retention_subtraction = true;
    let recs = run_hc(&cfg(), &spec, 1).unwrap();
    for w in recs.chunks(3) {
        let hc: Vec<u64> = w.iter().map(|r| r.first().unwrap_or(u64::MAX)).collect();
        assert!(hc[0] >= hc[1] && hc[1] >= hc[2], "{hc:?}");
    }
}

#[test]
fn out_of_range_selection_is_a_spec_error() {
    let mut spec = small(Experiment::Ber, 3);
    spec.rows.banks = vec![99];
    assert!(matches!(run_ber(&cfg(), &spec, 1), Err(CampaignError::Spec(_))));
}

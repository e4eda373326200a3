//! Characterization campaigns: BER, HCfirst, HCnth and their tAggON sweeps.

use hbmlab_core::calibrate::FitPopulation;
use hbmlab_core::search::SearchParams;
use hbmlab_core::timing::ns_to_ps;
use hbmlab_core::{BankId, DataPattern, Device, DeviceConfig, RefreshMode};
use rayon::prelude::*;

use crate::measure::{hammer_flips, hc_sequence, min_over_reps, popcount, Condition};
use crate::spec::{CampaignSpec, Experiment};
use crate::CampaignError;

#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub bank: BankId,
    pub row: u32,
    pub pattern: DataPattern,
    pub hc: u64,
    pub taggon_ns: f64,
    /// Mean over repetitions.
    pub bitflips: f64,
    pub ber: f64,
    pub per_rep: Vec<u32>,
    /// Raw flip maps per repetition, kept only when requested.
    pub flip_maps: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HcRecord {
    pub bank: BankId,
    pub row: u32,
    pub pattern: DataPattern,
    pub taggon_ns: f64,
    /// HC₁..HCₙ, minimum over repetitions; `None` above the search cap.
    pub hc: Vec<Option<u64>>,
    pub per_rep: Vec<Vec<Option<u64>>>,
}

impl HcRecord {
    pub fn first(&self) -> Option<u64> {
        self.hc.first().copied().flatten()
    }
}

/// Runs `f` over `items` on `jobs` threads; output order follows `items`.
pub fn par_map<T: Sync, R: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> Result<R, CampaignError> + Sync + Send,
) -> Result<Vec<R>, CampaignError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CampaignError::Spec(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Characterization runs with refresh off, as on the tester.
fn characterization_device(cfg: &DeviceConfig) -> Result<Device, CampaignError> {
    let mut c = cfg.clone();
    c.refresh = RefreshMode::Disabled;
    Ok(Device::new(c)?)
}

fn grid(cfg: &DeviceConfig, spec: &CampaignSpec) -> Result<Vec<(BankId, u32, DataPattern)>, CampaignError> {
    spec.validate(&cfg.geometry, &cfg.timing)?;
    let rows = spec.rows.rows(&cfg.geometry);
    Ok(rows
        .into_iter()
        .flat_map(|(b, r)| spec.patterns.iter().map(move |&p| (b, r, p)))
        .collect())
}

pub fn run_ber(cfg: &DeviceConfig, spec: &CampaignSpec, jobs: usize) -> Result<Vec<BerRecord>, CampaignError> {
    let cells = grid(cfg, spec)?;
    let bits = cfg.geometry.row_size_bits as f64;
    let per_cell = par_map(jobs, &cells, |&(bank, row, pattern)| {
        let mut dev = characterization_device(cfg)?;
        let mut out = Vec::new();
        for &t in &spec.taggon_ns {
            for &hc in &spec.hammer_counts {
                let mut per_rep = Vec::new();
                let mut maps = Vec::new();
                for rep in 0..spec.repetitions {
                    let c = Condition {
                        pattern,
                        hammers: hc,
                        t_on_ps: ns_to_ps(t),
                        trial: rep as u64,
                        subtract_retention: spec.retention_subtraction,
                    };
                    let f = hammer_flips(&mut dev, bank, row, &c)?;
                    per_rep.push(popcount(&f));
                    if spec.keep_flip_maps {
                        maps.push(f);
                    }
                }
                let bitflips = per_rep.iter().map(|&n| n as f64).sum::<f64>() / per_rep.len() as f64;
                out.push(BerRecord {
                    bank,
                    row,
                    pattern,
                    hc,
                    taggon_ns: t,
                    bitflips,
                    ber: bitflips / bits,
                    per_rep,
                    flip_maps: maps,
                });
            }
        }
        Ok(out)
    })?;
    let mut records: Vec<BerRecord> = per_cell.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        (a.bank, a.row, a.pattern.index(), a.hc)
            .cmp(&(b.bank, b.row, b.pattern.index(), b.hc))
            .then(a.taggon_ns.total_cmp(&b.taggon_ns))
    });
    Ok(records)
}

/// Search parameters for one tAggON: optionally capped to one refresh window.
pub fn search_for(cfg: &DeviceConfig, spec: &CampaignSpec, t_on_ns: f64) -> SearchParams {
    let mut s = spec.search;
    if spec.refresh_window_cap {
        let period = cfg.timing.act_period_ps(ns_to_ps(t_on_ns));
        let fit = (cfg.timing.refw_ps() / (2 * period)).max(1);
        s.cap = s.cap.min(fit);
        s.start = s.start.min(s.cap);
    }
    s
}

/// HCfirst (or HC₁..HCₙ for HCnth) per row, pattern and tAggON.
pub fn run_hc(cfg: &DeviceConfig, spec: &CampaignSpec, jobs: usize) -> Result<Vec<HcRecord>, CampaignError> {
    let cells = grid(cfg, spec)?;
    let n = match spec.experiment {
        Experiment::Hcnth => spec.nth,
        _ => 1,
    };
    let per_cell = par_map(jobs, &cells, |&(bank, row, pattern)| {
        let mut dev = characterization_device(cfg)?;
        let mut out = Vec::new();
        for &t in &spec.taggon_ns {
            let params = search_for(cfg, spec, t);
            let mut per_rep = Vec::new();
            for rep in 0..spec.repetitions {
                let base = Condition {
                    pattern,
                    hammers: 0,
                    t_on_ps: ns_to_ps(t),
                    trial: rep as u64,
                    subtract_retention: spec.retention_subtraction,
                };
                per_rep.push(hc_sequence(&mut dev, bank, row, &base, n, &params)?);
            }
            out.push(HcRecord {
                bank,
                row,
                pattern,
                taggon_ns: t,
                hc: min_over_reps(&per_rep),
                per_rep,
            });
        }
        Ok(out)
    })?;
    let mut records: Vec<HcRecord> = per_cell.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        (a.bank, a.row, a.pattern.index())
            .cmp(&(b.bank, b.row, b.pattern.index()))
            .then(a.taggon_ns.total_cmp(&b.taggon_ns))
    });
    Ok(records)
}

/// Population over the rows of `spec`, for fitting a profile to this campaign.
pub fn fit_population(cfg: &DeviceConfig, spec: &CampaignSpec) -> FitPopulation {
    FitPopulation {
        geometry: cfg.geometry,
        layout: cfg.layout(),
        mapping: cfg.mapping,
        seed: cfg.seed,
        victims: spec.rows.rows(&cfg.geometry),
        trials: spec.repetitions,
        search: spec.search,
        rowpress_pattern: spec.patterns.first().copied().unwrap_or(DataPattern::Checkered0),
    }
}

/// Worst-case data pattern per row: lowest HCfirst, then highest BER, then
/// canonical pattern order. Rows missing any pattern are an error.
pub fn wcdp_select(hc: &[HcRecord], ber: &[BerRecord]) -> Result<Vec<(BankId, u32, DataPattern)>, CampaignError> {
    use std::collections::BTreeMap;
    let mut rows: BTreeMap<(BankId, u32), [(Option<Option<u64>>, Option<f64>); 4]> = BTreeMap::new();
    for r in hc {
        rows.entry((r.bank, r.row)).or_insert([(None, None); 4])[r.pattern.index()].0 = Some(r.first());
    }
    for r in ber {
        rows.entry((r.bank, r.row)).or_insert([(None, None); 4])[r.pattern.index()].1 = Some(r.ber);
    }
    let mut out = Vec::new();
    for ((bank, row), pats) in rows {
        let mut best: Option<(DataPattern, u64, f64)> = None;
        for p in DataPattern::ALL {
            let (Some(h), Some(b)) = pats[p.index()] else {
                return Err(CampaignError::Spec(format!(
                    "row {row} of {bank:?} lacks data for pattern {p}"
                )));
            };
            let h = h.unwrap_or(u64::MAX);
            let better = match best {
                None => true,
                Some((_, bh, bb)) => h < bh || (h == bh && b > bb),
            };
            if better {
                best = Some((p, h, b));
            }
        }
        out.push((bank, row, best.expect("four patterns").0));
    }
    Ok(out)
}

//! Many-sided patterns that keep true aggressors out of the TRR sampler by
//! activating dummy rows first in every refresh interval.

use hbmlab_core::profile::byte_word;
use hbmlab_core::timing::validate_trace;
use hbmlab_core::{BankId, Command, DataPattern, Device, DeviceConfig, Geometry, RefreshMode, TimingParams};

use crate::measure::{aggressors, init_neighborhood, popcount};
use crate::run::par_map;
use crate::CampaignError;

/// Closest distance between a victim and its dummy rows.
pub const DUMMY_DISTANCE: u32 = 16;
const DUMMY_SPACING: u32 = 3;

/// Activations per interval of one bypass configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BypassPlan {
    pub dummies: u32,
    pub agg_hc: u32,
    /// Activations of each dummy row per interval.
    pub per_dummy: u32,
}

impl BypassPlan {
    pub fn new(dummies: u32, agg_hc: u32, budget: u64) -> Result<Self, CampaignError> {
        let needed = 2 * agg_hc as u64 + dummies as u64;
        if needed > budget {
            return Err(CampaignError::Synthesis(format!(
                "{dummies} dummies and {agg_hc} hammers per aggressor need {needed} activations, budget is {budget}"
            )));
        }
        if agg_hc == 0 {
            return Err(CampaignError::Synthesis("agg_hc must be positive".into()));
        }
        let per_dummy = if dummies == 0 {
            0
        } else {
            ((budget - 2 * agg_hc as u64) / dummies as u64) as u32
        };
        Ok(Self {
            dummies,
            agg_hc,
            per_dummy,
        })
    }

    pub fn activations(&self) -> u64 {
        2 * self.agg_hc as u64 + self.dummies as u64 * self.per_dummy as u64
    }
}

/// Dummy rows for `victim`: at least `DUMMY_DISTANCE` rows away, spaced so their
/// own victims do not overlap.
pub fn dummy_rows(rows_per_bank: u32, victim: u32, dummies: u32) -> Vec<u32> {
    let span = DUMMY_DISTANCE + DUMMY_SPACING * dummies;
    let up = victim + span < rows_per_bank;
    (0..dummies)
        .map(|j| {
            let d = DUMMY_DISTANCE + DUMMY_SPACING * j;
            if up {
                victim + d
            } else {
                victim - d
            }
        })
        .collect()
}

/// Command trace of `intervals` refresh intervals on one bank: dummies round
/// robin, then alternating double-sided aggressors, then one REF.
pub fn synthesize_bypass(
    timing: &TimingParams,
    bank: BankId,
    plan: &BypassPlan,
    victim: u32,
    rows_per_bank: u32,
    intervals: u64,
) -> Result<Vec<Command>, CampaignError> {
    let agg = aggressors(rows_per_bank, victim);
    if agg.len() != 2 {
        return Err(CampaignError::Synthesis(format!("victim {victim} lacks two neighbors")));
    }
    let dummies = dummy_rows(rows_per_bank, victim, plan.dummies);
    let (refi, rfc, rc, ras) = (timing.refi_ps(), timing.rfc_ps(), timing.rc_ps(), timing.ras_ps());
    if plan.activations() * rc + rfc > refi {
        return Err(CampaignError::Synthesis("plan does not fit one refresh interval".into()));
    }
    let mut seq = Vec::with_capacity(plan.activations() as usize);
    for _ in 0..plan.per_dummy {
        seq.extend_from_slice(&dummies);
    }
    for _ in 0..plan.agg_hc {
        seq.extend_from_slice(&agg);
    }
    let mut trace = Vec::with_capacity(((2 * seq.len() + 1) as u64 * intervals) as usize);
    for k in 0..intervals {
        let start = k * refi;
        for (i, &row) in seq.iter().enumerate() {
            let t = start + i as u64 * rc;
            trace.push(Command::act(t, bank, row));
            trace.push(Command::pre(t + ras, bank, row));
        }
        trace.push(Command::refresh(start + refi - rfc, bank.channel, bank.pseudo_channel));
    }
    Ok(trace)
}

/// Synthesizes and strictly validates a trace.
pub fn synthesize_checked(
    cfg: &DeviceConfig,
    bank: BankId,
    plan: &BypassPlan,
    victim: u32,
    intervals: u64,
) -> Result<Vec<Command>, CampaignError> {
    let trace = synthesize_bypass(&cfg.timing, bank, plan, victim, cfg.geometry.rows_per_bank, intervals)?;
    let violations = validate_trace(&trace, &cfg.timing, &cfg.geometry);
    if let Some(v) = violations.first() {
        return Err(CampaignError::Synthesis(format!("trace violates timing: {v}")));
    }
    Ok(trace)
}

/// One victim per bank across the whole device, at varied bank positions.
pub fn bypass_victims(g: &Geometry, count: usize) -> Vec<(BankId, u32)> {
    let span = g.rows_per_bank.saturating_sub(96).max(1);
    g.banks()
        .take(count)
        .enumerate()
        .map(|(i, b)| (b, 24 + (100 + 97 * i as u32) % span))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BypassRecord {
    pub dummies: u32,
    pub agg_hc: u32,
    pub bank: BankId,
    pub row: u32,
    pub bitflips: u32,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BypassSpec {
    pub dummies: Vec<u32>,
    pub agg_hc: Vec<u32>,
    pub victims: usize,
    /// Refresh intervals per run; two refresh windows by default.
    pub intervals: u64,
    pub pattern: DataPattern,
}

impl BypassSpec {
    pub fn defaults(timing: &TimingParams) -> Self {
        Self {
            dummies: (1..=8).collect(),
            agg_hc: vec![18, 24, 30, 34],
            victims: 128,
            intervals: 2 * timing.refs_per_window(),
            pattern: DataPattern::Checkered0,
        }
    }
}

/// Runs every (dummies, agg_hc) cell on its own device hosting all victims in
/// parallel banks, with host-issued REFs every tREFI under strict timing.
pub fn run_bypass_campaign(cfg: &DeviceConfig, spec: &BypassSpec, jobs: usize) -> Result<Vec<BypassRecord>, CampaignError> {
    let budget = hbmlab_core::compute_act_budget(&cfg.timing)?;
    let mut cells = Vec::new();
    for &d in &spec.dummies {
        for &a in &spec.agg_hc {
            cells.push(BypassPlan::new(d, a, budget as u64)?);
        }
    }
    let victims = bypass_victims(&cfg.geometry, spec.victims);
    if victims.len() < spec.victims {
        return Err(CampaignError::Spec(format!(
            "{} victims need as many banks; the device has {}",
            spec.victims,
            victims.len()
        )));
    }
    let per_cell = par_map(jobs, &cells, |plan| run_cell(cfg, spec, plan, &victims))?;
    let mut out: Vec<BypassRecord> = per_cell.into_iter().flatten().collect();
    out.sort_by_key(|r| (r.dummies, r.agg_hc, r.bank, r.row));
    Ok(out)
}

fn run_cell(
    cfg: &DeviceConfig,
    spec: &BypassSpec,
    plan: &BypassPlan,
    victims: &[(BankId, u32)],
) -> Result<Vec<BypassRecord>, CampaignError> {
    let mut c = cfg.clone();
    c.refresh = RefreshMode::Manual;
    c.strict_timing = true;
    let mut dev = Device::new(c)?;
    let g = cfg.geometry;
    let rows = g.rows_per_bank;
    let t = &cfg.timing;
    // every bank in a pseudo channel must reach the REF with its budget spent
    if plan.activations() * t.rc_ps() + t.rfc_ps() > t.refi_ps() {
        return Err(CampaignError::Synthesis("plan does not fit one refresh interval".into()));
    }
    let mut work = Vec::with_capacity(victims.len());
    for &(bank, v) in victims {
        init_neighborhood(&mut dev, bank, v, spec.pattern)?;
        work.push((bank, v, dummy_rows(rows, v, plan.dummies), aggressors(rows, v)));
    }
    dev.sync();
    let refi = t.refi_ps();
    let base = dev.now_ps().div_ceil(refi) * refi;
    let mut pchs: Vec<(u32, u32)> = victims
        .iter()
        .map(|(b, _)| (b.channel, b.pseudo_channel))
        .collect();
    pchs.dedup();
    for k in 0..spec.intervals {
        let start = base + k * refi;
        dev.wait_until(start);
        for (bank, _, dummies, agg) in &work {
            if plan.per_dummy > 0 {
                dev.hammer(*bank, dummies, plan.per_dummy as u64, t.ras_ps())?;
            }
            dev.hammer(*bank, agg, plan.agg_hc as u64, t.ras_ps())?;
        }
        dev.wait_until(start + refi - t.rfc_ps());
        for &(ch, p) in &pchs {
            dev.refresh(ch, p)?;
        }
    }
    if let Some(v) = dev.violations().first() {
        return Err(CampaignError::Synthesis(format!("timing violation during bypass: {v}")));
    }
    dev.sync();
    let expected = byte_word(spec.pattern.victim_byte());
    let bits = g.row_size_bits as f64;
    let mut out = Vec::with_capacity(work.len());
    for (bank, v, _, _) in &work {
        let data = dev.read_row(*bank, *v)?;
        let flips: Vec<u64> = data.iter().map(|w| w ^ expected).collect();
        let n = popcount(&flips);
        out.push(BypassRecord {
            dummies: plan.dummies,
            agg_hc: plan.agg_hc,
            bank: *bank,
            row: *v,
            bitflips: n,
            ber: n as f64 / bits,
        });
    }
    Ok(out)
}

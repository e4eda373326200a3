//! TRR inference through the retention side channel.
//!
//! A side-channel row is one whose weakest cell leaks at a known time T. It is
//! written, left alone for T/2, a REF is issued, and after another T/2 it is
//! read back. With refresh disabled the row can only come back clean if that
//! REF triggered a TRR victim refresh covering it.

use hbmlab_core::{BankId, ProbePort};

use crate::report::{Finding, TrrFindings};
use crate::retention::{profile_retention, RetentionMap, RetentionParams};
use crate::{require_refresh_disabled, ProbeError, PS_PER_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrrProbeParams {
    /// REF phases scanned for the period; must cover the longest expected
    /// period twice.
    pub phases: u32,
    pub repetitions: u32,
    /// ACTs given to an aggressor before a REF so it holds the interval majority.
    pub majority_acts: u64,
    /// Largest victim distance tested.
    pub max_span: u32,
    /// Side-channel rows used to count sampler slots.
    pub capacity_sites: u32,
}

impl Default for TrrProbeParams {
    fn default() -> Self {
        Self {
            phases: 64,
            repetitions: 5,
            majority_acts: 3,
            max_span: 4,
            capacity_sites: 10,
        }
    }
}

/// Side-channel candidates: rows sharing the same failing time, per bank of one
/// pseudo channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SideChannel {
    pub t_ms: u64,
    pub fill: u8,
    pub banks: Vec<(BankId, Vec<u32>)>,
}

impl SideChannel {
    /// Uses the shortest failing time seen in any map.
    pub fn from_maps<P: ProbePort>(port: &P, maps: &[RetentionMap]) -> Result<Self, ProbeError> {
        let first = maps
            .first()
            .ok_or_else(|| ProbeError::SideChannel("no retention maps".into()))?;
        let (c, p) = (first.bank.channel, first.bank.pseudo_channel);
        if maps.iter().any(|m| m.bank.channel != c || m.bank.pseudo_channel != p || m.fill != first.fill) {
            return Err(ProbeError::SideChannel(
                "maps must share one pseudo channel and fill byte".into(),
            ));
        }
        let t_ms = maps
            .iter()
            .filter_map(|m| m.min_time())
            .min()
            .ok_or_else(|| ProbeError::SideChannel("no row failed below the cap".into()))?;
        // a REF has to fit between the two half waits
        if t_ms * PS_PER_MS < 4 * port.timing().refi_ps() {
            return Err(ProbeError::SideChannel(format!("retention time {t_ms} ms is below 4 tREFI")));
        }
        Ok(Self {
            t_ms,
            fill: first.fill,
            banks: maps.iter().map(|m| (m.bank, m.rows_at(t_ms))).collect(),
        })
    }

    /// Profile `rows` in the first `banks` banks of a pseudo channel and keep
    /// the rows failing at the shortest time.
    pub fn survey<P: ProbePort>(
        port: &mut P,
        channel: u32,
        pseudo_channel: u32,
        banks: u32,
        rows: std::ops::Range<u32>,
        params: &RetentionParams,
    ) -> Result<Self, ProbeError> {
        let rows: Vec<u32> = rows.collect();
        let maps = (0..banks)
            .map(|b| profile_retention(port, BankId::new(channel, pseudo_channel, b), &rows, params))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_maps(port, &maps)
    }

    fn candidates(&self, bank_slot: usize) -> Result<(BankId, &[u32]), ProbeError> {
        self.banks
            .get(bank_slot)
            .map(|(b, r)| (*b, r.as_slice()))
            .ok_or_else(|| ProbeError::SideChannel(format!("need side-channel rows in {} banks", bank_slot + 1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Site {
    bank: BankId,
    victim: u32,
    aggressor: u32,
}

/// Pick `n` victims whose aggressor lies `distance` below them, keeping every
/// site's neighbourhood of `reach` rows clear of the others.
fn pick_sites(bank: BankId, rows: &[u32], n: usize, distance: u32, reach: u32) -> Result<Vec<Site>, ProbeError> {
    let mut out: Vec<Site> = Vec::with_capacity(n);
    for &v in rows {
        if out.len() == n {
            break;
        }
        let Some(a) = v.checked_sub(distance) else { continue };
        let lo = a.saturating_sub(reach);
        let hi = v + reach;
        if out
            .iter()
            .all(|s| s.victim + reach < lo || s.aggressor.saturating_sub(reach) > hi)
        {
            out.push(Site { bank, victim: v, aggressor: a });
        }
    }
    if out.len() < n {
        return Err(ProbeError::SideChannel(format!(
            "found {} of {n} usable side-channel rows in {bank:?}",
            out.len()
        )));
    }
    Ok(out)
}

/// Value every repetition agreed on, with the share of the most common outcome.
fn agree<T: PartialEq + Clone>(obs: &[T]) -> Finding<T> {
    let Some(first) = obs.first() else {
        return Finding::undetermined(0.0);
    };
    let best = obs
        .iter()
        .map(|o| obs.iter().filter(|x| *x == o).count())
        .max()
        .unwrap_or(0);
    let confidence = best as f64 / obs.len() as f64;
    if obs.iter().all(|o| o == first) {
        Finding::known(first.clone(), confidence)
    } else {
        Finding::undetermined(confidence)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Length of the leading run of clean rows, if the clean rows form exactly
/// such a prefix.
fn clean_prefix(clean: &[bool]) -> Option<usize> {
    let k = clean.iter().take_while(|&&c| c).count();
    clean[k..].iter().all(|&c| !c).then_some(k)
}

/// Drives one pseudo channel and counts the REFs it issues, so capable REFs can
/// be targeted once the period is known.
pub struct TrrProber<'a, P: ProbePort> {
    port: &'a mut P,
    side: SideChannel,
    params: TrrProbeParams,
    channel: u32,
    pseudo_channel: u32,
    refs: u64,
    half_wait_ps: u64,
    fill: Vec<u64>,
    t_ras: u64,
    /// (index of one capable REF, period)
    phase: Option<(u64, u64)>,
}

impl<'a, P: ProbePort> TrrProber<'a, P> {
    pub fn new(port: &'a mut P, side: SideChannel, params: TrrProbeParams) -> Result<Self, ProbeError> {
        require_refresh_disabled(port)?;
        if params.repetitions == 0 || params.phases < 2 || params.max_span == 0 {
            return Err(ProbeError::Parameter(format!("bad TRR probe parameters {params:?}")));
        }
        let (bank, _) = side.candidates(0)?;
        let words = port.geometry().words_per_row();
        let fill = vec![hbmlab_core::profile::byte_word(side.fill); words];
        let t_ras = port.timing().ras_ps();
        Ok(Self {
            half_wait_ps: side.t_ms * PS_PER_MS / 2,
            channel: bank.channel,
            pseudo_channel: bank.pseudo_channel,
            port,
            side,
            params,
            refs: 0,
            fill,
            t_ras,
            phase: None,
        })
    }

    fn refresh(&mut self) -> Result<(), ProbeError> {
        self.port.refresh(self.channel, self.pseudo_channel)?;
        self.refs += 1;
        Ok(())
    }

    fn act(&mut self, bank: BankId, row: u32, n: u64) -> Result<(), ProbeError> {
        if n > 0 {
            self.port.hammer(bank, &[row], n, self.t_ras)?;
        }
        Ok(())
    }

    fn write(&mut self, bank: BankId, row: u32) -> Result<(), ProbeError> {
        self.port.write_row(bank, row, &self.fill)?;
        Ok(())
    }

    fn clean(&mut self, bank: BankId, row: u32) -> Result<bool, ProbeError> {
        Ok(self.port.read_row(bank, row)? == self.fill)
    }

    fn half_wait(&mut self) {
        self.port.wait(self.half_wait_ps);
    }

    fn capable(&self, index: u64) -> bool {
        let (c, p) = self.phase.expect("period known");
        index % p == c % p
    }

    fn prime(&mut self, sites: &[Site]) -> Result<(), ProbeError> {
        for s in sites {
            self.act(s.bank, s.aggressor, 1)?;
        }
        Ok(())
    }

    /// Issue REFs until the latest one was capable, activating `sites`'
    /// aggressors after each so they are the first rows sampled.
    fn align(&mut self, sites: &[Site]) -> Result<(), ProbeError> {
        loop {
            self.refresh()?;
            self.prime(sites)?;
            if self.capable(self.refs) {
                return Ok(());
            }
        }
    }

    /// REF until the next one is capable.
    fn fill_to_capable(&mut self, sites: &[Site]) -> Result<(), ProbeError> {
        while !self.capable(self.refs + 1) {
            self.refresh()?;
            self.prime(sites)?;
        }
        Ok(())
    }

    /// One side-channel round around a single REF. Each aggressor holds the
    /// interval majority before the REF and is the first row activated after
    /// it, so it is sampled under either rule.
    fn primed_round(&mut self, sites: &[Site]) -> Result<Vec<bool>, ProbeError> {
        for s in sites {
            self.write(s.bank, s.victim)?;
        }
        self.half_wait();
        for s in sites {
            self.act(s.bank, s.aggressor, self.params.majority_acts)?;
        }
        self.refresh()?;
        self.prime(sites)?;
        self.half_wait();
        sites.iter().map(|s| self.clean(s.bank, s.victim)).collect()
    }

    /// Scan consecutive REF phases; returns the period.
    pub fn period(&mut self) -> Result<u32, ProbeError> {
        if let Some((_, p)) = self.phase {
            return Ok(p as u32);
        }
        // two sites in different banks and rows: a regular refresh can clean
        // at most one of them
        let mut sites = Vec::new();
        for slot in 0..2.min(self.side.banks.len()) {
            let (bank, rows) = self.side.candidates(slot)?;
            let taken: Vec<u32> = sites.iter().map(|s: &Site| s.victim).collect();
            let rows: Vec<u32> = rows
                .iter()
                .copied()
                .filter(|r| taken.iter().all(|t| t.abs_diff(*r) > 16))
                .collect();
            sites.extend(pick_sites(bank, &rows, 1, 1, self.params.max_span)?);
        }
        self.prime(&sites)?;
        for _ in 0..self.params.phases {
            self.refresh()?;
            self.prime(&sites)?;
        }
        let mut capable = Vec::new();
        for _ in 0..self.params.phases {
            let clean = self.primed_round(&sites)?;
            if clean.iter().all(|&c| c) {
                capable.push(self.refs);
            }
        }
        let Some(&first) = capable.first() else {
            return Err(ProbeError::NoTrr(self.params.phases));
        };
        let period = capable.windows(2).fold(0, |g, w| gcd(g, w[1] - w[0]));
        if period == 0 {
            return Err(ProbeError::Undetermined("TRR period"));
        }
        self.phase = Some((first, period));
        Ok(period as u32)
    }

    /// Largest aggressor distance whose victim gets refreshed.
    pub fn victim_span(&mut self) -> Result<Finding<u32>, ProbeError> {
        self.period()?;
        let banks = (self.params.max_span as usize).min(self.side.banks.len());
        let mut sites = Vec::with_capacity(banks);
        for d in 1..=banks {
            let (bank, rows) = self.side.candidates(d - 1)?;
            sites.extend(pick_sites(bank, rows, 1, d as u32, self.params.max_span)?);
        }
        let mut obs = Vec::new();
        for _ in 0..self.params.repetitions {
            self.align(&sites)?;
            self.fill_to_capable(&sites)?;
            let clean = self.primed_round(&sites)?;
            obs.push(clean_prefix(&clean).filter(|&k| k > 0 && k < banks));
        }
        let f = agree(&obs);
        Ok(Finding { value: f.value.flatten().map(|k| k as u32), confidence: f.confidence })
    }

    /// Distinct rows activated once each right after a capable REF; the
    /// leading rows whose victims come back clean were sampled.
    fn first_act_capacity(&mut self) -> Result<Finding<Option<u32>>, ProbeError> {
        let (bank, rows) = self.side.candidates(0)?;
        let m = self.params.capacity_sites as usize;
        let sites = pick_sites(bank, rows, m, 1, self.params.max_span)?;
        let mut obs = Vec::new();
        for _ in 0..self.params.repetitions {
            self.align(&[])?;
            for s in &sites {
                self.act(s.bank, s.aggressor, 1)?;
            }
            for s in &sites {
                self.write(s.bank, s.victim)?;
            }
            self.half_wait();
            self.fill_to_capable(&[])?;
            self.refresh()?;
            self.half_wait();
            let clean: Vec<bool> = sites
                .iter()
                .map(|s| self.clean(s.bank, s.victim))
                .collect::<Result<_, _>>()?;
            // `None` inside: every site was sampled, capacity is at least m
            obs.push(clean_prefix(&clean).map(|k| (k < m).then_some(k as u32)));
        }
        let f = agree(&obs);
        Ok(Finding { value: f.value.flatten(), confidence: f.confidence })
    }

    /// Whether a row holding `x` of 10 ACTs in the interval before a capable
    /// REF gets sampled.
    fn majority_trial(&mut self, x: u64) -> Result<Finding<bool>, ProbeError> {
        let (bank, rows) = self.side.candidates(0)?;
        let site = pick_sites(bank, rows, 1, 1, self.params.max_span)?[0];
        let n_rows = self.port.geometry().rows_per_bank;
        let others: Vec<u32> = (0..10u32)
            .map(|j| (site.victim + 64 + 8 * j) % n_rows)
            .collect();
        let mut obs = Vec::new();
        for _ in 0..self.params.repetitions {
            self.align(&[])?;
            // the first REF after a capable one closes the first-ACT window
            self.refresh()?;
            self.fill_to_capable(&[])?;
            self.write(site.bank, site.victim)?;
            self.half_wait();
            self.act(site.bank, site.aggressor, x)?;
            for &o in others.iter().take(9 - x as usize) {
                self.act(site.bank, o, 1)?;
            }
            self.refresh()?;
            self.half_wait();
            obs.push(self.clean(site.bank, site.victim)?);
        }
        Ok(agree(&obs))
    }

    /// Capacity through interval majorities alone: one majority row per
    /// interval of a window, counting how many get refreshed.
    fn majority_capacity(&mut self) -> Result<Finding<Option<u32>>, ProbeError> {
        let period = self.period()? as usize;
        let (bank, rows) = self.side.candidates(0)?;
        let m = (self.params.capacity_sites as usize).min(period);
        let sites = pick_sites(bank, rows, m, 1, self.params.max_span)?;
        let mut obs = Vec::new();
        for _ in 0..self.params.repetitions {
            self.fill_to_capable(&[])?;
            for s in &sites {
                self.write(s.bank, s.victim)?;
            }
            self.half_wait();
            self.refresh()?;
            for j in 0..period {
                if let Some(s) = sites.get(j) {
                    self.act(s.bank, s.aggressor, self.params.majority_acts)?;
                }
                self.refresh()?;
            }
            self.half_wait();
            let clean: Vec<bool> = sites
                .iter()
                .map(|s| self.clean(s.bank, s.victim))
                .collect::<Result<_, _>>()?;
            obs.push(clean_prefix(&clean).map(|k| (k < m).then_some(k as u32)));
        }
        let f = agree(&obs);
        Ok(Finding { value: f.value.flatten(), confidence: f.confidence })
    }

    pub fn sampler_rules(&mut self) -> Result<TrrFindings, ProbeError> {
        let period = self.period()?;
        let span = self.victim_span()?;
        let first = self.first_act_capacity()?;
        let first_act = Finding {
            value: first.value.map(|k| k.is_none_or(|k| k > 0)),
            confidence: first.confidence,
        };
        let (half_count, majority_strict) = if period >= 2 {
            let six = self.majority_trial(6)?;
            let strict = match six.value {
                Some(true) => {
                    let five = self.majority_trial(5)?;
                    Finding { value: five.value.map(|v| !v), confidence: five.confidence }
                }
                _ => Finding::undetermined(six.confidence),
            };
            (six, strict)
        } else {
            (Finding::undetermined(0.0), Finding::undetermined(0.0))
        };
        let capacity = match (first_act.value, half_count.value) {
            (Some(true), _) => Finding { value: first.value.flatten(), confidence: first.confidence },
            (Some(false), Some(true)) => {
                let c = self.majority_capacity()?;
                Finding { value: c.value.flatten(), confidence: c.confidence }
            }
            _ => Finding::undetermined(first.confidence),
        };
        Ok(TrrFindings {
            trr_detected: true,
            period: Finding::known(period, 1.0),
            victim_span: span,
            first_act_rule_detected: first_act,
            slot_capacity_estimate: capacity,
            half_count_rule_detected: half_count,
            majority_strict,
        })
    }
}

pub fn infer_trr_period<P: ProbePort>(port: &mut P, side: &SideChannel, params: &TrrProbeParams) -> Result<u32, ProbeError> {
    TrrProber::new(port, side.clone(), *params)?.period()
}

pub fn infer_victim_span<P: ProbePort>(port: &mut P, side: &SideChannel, params: &TrrProbeParams) -> Result<u32, ProbeError> {
    TrrProber::new(port, side.clone(), *params)?
        .victim_span()?
        .value
        .ok_or(ProbeError::Undetermined("victim span"))
}

pub fn infer_sampler_rules<P: ProbePort>(
    port: &mut P,
    side: &SideChannel,
    params: &TrrProbeParams,
) -> Result<TrrFindings, ProbeError> {
    TrrProber::new(port, side.clone(), *params)?.sampler_rules()
}

/// Full pipeline; a device without any TRR activity yields findings with
/// `trr_detected` false rather than an error.
pub fn infer_trr<P: ProbePort>(port: &mut P, side: &SideChannel, params: &TrrProbeParams) -> Result<TrrFindings, ProbeError> {
    match infer_sampler_rules(port, side, params) {
        Err(ProbeError::NoTrr(_)) => Ok(TrrFindings::not_detected()),
        r => r,
    }
}

//! HBM2 timing parameters, command traces, and the protocol checker shared by
//! the device and the offline trace validator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DeviceError, TimingViolation};
use crate::geometry::{BankId, Geometry};

pub const PS_PER_NS: u64 = 1000;

/// Nanoseconds to integer picoseconds.
pub fn ns_to_ps(ns: f64) -> u64 {
    (ns * PS_PER_NS as f64).round() as u64
}

pub fn ps_to_ns(ps: u64) -> f64 {
    ps as f64 / PS_PER_NS as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingParams {
    pub clock_period_ns: f64,
    #[serde(rename = "tRAS_ns")]
    pub t_ras_ns: f64,
    #[serde(rename = "tRP_ns")]
    pub t_rp_ns: f64,
    #[serde(rename = "tRCD_ns")]
    pub t_rcd_ns: f64,
    #[serde(rename = "tRC_ns")]
    pub t_rc_ns: f64,
    #[serde(rename = "tRFC_ns")]
    pub t_rfc_ns: f64,
    #[serde(rename = "tREFI_ns")]
    pub t_refi_ns: f64,
    #[serde(rename = "tREFW_ms")]
    pub t_refw_ms: f64,
    pub max_postponed_refs: u32,
    /// Round command times up to the next clock edge on input.
    pub quantize_to_clock: bool,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            clock_period_ns: 1.67,
            t_ras_ns: 29.0,
            t_rp_ns: 17.6,
            t_rcd_ns: 14.0,
            t_rc_ns: 46.6,
            t_rfc_ns: 260.0,
            t_refi_ns: 3900.0,
            t_refw_ms: 32.0,
            max_postponed_refs: 8,
            quantize_to_clock: false,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("clock_period_ns", self.clock_period_ns),
            ("tRAS_ns", self.t_ras_ns),
            ("tRP_ns", self.t_rp_ns),
            ("tRCD_ns", self.t_rcd_ns),
            ("tRC_ns", self.t_rc_ns),
            ("tRFC_ns", self.t_rfc_ns),
            ("tREFI_ns", self.t_refi_ns),
            ("tREFW_ms", self.t_refw_ms),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Timing(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.rc_ps() < self.ras_ps() + self.rp_ps() {
            return Err(ConfigError::Timing(format!(
                "tRC ({}) must be >= tRAS + tRP ({})",
                self.t_rc_ns,
                self.t_ras_ns + self.t_rp_ns
            )));
        }
        if self.rfc_ps() >= self.refi_ps() {
            return Err(ConfigError::Timing("tRFC must be < tREFI".into()));
        }
        if self.refw_ps() < self.refi_ps() {
            return Err(ConfigError::Timing("tREFW must be >= tREFI".into()));
        }
        Ok(())
    }

    pub fn clock_ps(&self) -> u64 {
        ns_to_ps(self.clock_period_ns)
    }
    pub fn ras_ps(&self) -> u64 {
        ns_to_ps(self.t_ras_ns)
    }
    pub fn rp_ps(&self) -> u64 {
        ns_to_ps(self.t_rp_ns)
    }
    pub fn rcd_ps(&self) -> u64 {
        ns_to_ps(self.t_rcd_ns)
    }
    pub fn rc_ps(&self) -> u64 {
        ns_to_ps(self.t_rc_ns)
    }
    pub fn rfc_ps(&self) -> u64 {
        ns_to_ps(self.t_rfc_ns)
    }
    pub fn refi_ps(&self) -> u64 {
        ns_to_ps(self.t_refi_ns)
    }
    pub fn refw_ps(&self) -> u64 {
        ns_to_ps(self.t_refw_ms * 1.0e6)
    }

    /// Longest legal distance between two REFs to one pseudo channel.
    pub fn max_ref_gap_ps(&self) -> u64 {
        self.refi_ps() * (self.max_postponed_refs as u64 + 1)
    }

    /// Number of REF commands in one refresh window.
    pub fn refs_per_window(&self) -> u64 {
        (self.refw_ps() / self.refi_ps()).max(1)
    }

    /// Rows each bank refreshes per REF so a full window covers the bank.
    pub fn rows_per_ref(&self, rows_per_bank: u32) -> u32 {
        (rows_per_bank as u64).div_ceil(self.refs_per_window()) as u32
    }

    /// Activate-to-activate period of back-to-back activations holding rows open `t_on_ps`.
    pub fn act_period_ps(&self, t_on_ps: u64) -> u64 {
        (t_on_ps + self.rp_ps()).max(self.rc_ps())
    }

    pub fn quantize(&self, t_ps: u64) -> u64 {
        if !self.quantize_to_clock {
            return t_ps;
        }
        let c = self.clock_ps();
        t_ps.div_ceil(c) * c
    }
}

/// Maximum ACTs between two REFs: floor((tREFI - tRFC) / tRC).
pub fn compute_act_budget(timing: &TimingParams) -> Result<u32, DeviceError> {
    let (refi, rfc, rc) = (timing.refi_ps(), timing.rfc_ps(), timing.rc_ps());
    if rc == 0 {
        return Err(DeviceError::Parameter("tRC must be > 0".into()));
    }
    if rfc >= refi {
        return Err(DeviceError::Parameter(format!(
            "tRFC ({} ns) must be smaller than tREFI ({} ns)",
            timing.t_rfc_ns, timing.t_refi_ns
        )));
    }
    Ok(((refi - rfc) / rc) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    Act,
    Pre,
    Rd,
    Wr,
    Ref,
}

impl CommandKind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CommandKind::Act => "ACT",
            CommandKind::Pre => "PRE",
            CommandKind::Rd => "RD",
            CommandKind::Wr => "WR",
            CommandKind::Ref => "REF",
        }
    }
}

impl FromStr for CommandKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ACT" => CommandKind::Act,
            "PRE" => CommandKind::Pre,
            "RD" => CommandKind::Rd,
            "WR" => CommandKind::Wr,
            "REF" => CommandKind::Ref,
            _ => return Err(format!("unknown command `{s}`")),
        })
    }
}

/// One command. `row` is ignored for PRE and REF; REF addresses the whole
/// pseudo channel of `bank`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Command {
    pub kind: CommandKind,
    pub bank: BankId,
    pub row: u32,
    pub time_ps: u64,
}

impl Command {
    pub fn act(time_ps: u64, bank: BankId, row: u32) -> Self {
        Self { kind: CommandKind::Act, bank, row, time_ps }
    }
    pub fn pre(time_ps: u64, bank: BankId, row: u32) -> Self {
        Self { kind: CommandKind::Pre, bank, row, time_ps }
    }
    pub fn rd(time_ps: u64, bank: BankId, row: u32) -> Self {
        Self { kind: CommandKind::Rd, bank, row, time_ps }
    }
    pub fn wr(time_ps: u64, bank: BankId, row: u32) -> Self {
        Self { kind: CommandKind::Wr, bank, row, time_ps }
    }
    pub fn refresh(time_ps: u64, channel: u32, pseudo_channel: u32) -> Self {
        Self {
            kind: CommandKind::Ref,
            bank: BankId::new(channel, pseudo_channel, 0),
            row: 0,
            time_ps,
        }
    }

    pub fn time_ns(&self) -> f64 {
        ps_to_ns(self.time_ps)
    }
}

/// Picoseconds as a decimal nanosecond string with three fractional digits.
pub fn format_time_ns(ps: u64) -> String {
    format!("{}.{:03}", ps / PS_PER_NS, ps % PS_PER_NS)
}

/// Exact decimal nanoseconds to picoseconds; more than three fractional digits
/// are accepted only if they are zeros.
pub fn parse_time_ns(s: &str) -> Result<u64, String> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad time `{s}`"));
    }
    if !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad time `{s}`"));
    }
    if frac.len() > 3 && frac[3..].bytes().any(|b| b != b'0') {
        return Err(format!("time `{s}` has sub-picosecond precision"));
    }
    let mut ps: u64 = int.parse::<u64>().map_err(|e| format!("bad time `{s}`: {e}"))?;
    ps = ps
        .checked_mul(PS_PER_NS)
        .ok_or_else(|| format!("time `{s}` overflows"))?;
    let mut scale = 100;
    for b in frac.bytes().take(3) {
        ps += (b - b'0') as u64 * scale;
        scale /= 10;
    }
    Ok(ps)
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.bank;
        write!(
            f,
            "{} {} {} {} {}",
            format_time_ns(self.time_ps),
            self.kind.mnemonic(),
            b.channel,
            b.pseudo_channel,
            b.bank
        )?;
        if self.kind != CommandKind::Ref {
            write!(f, " {}", self.row)?;
        }
        Ok(())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 2 {
            return Err(format!("malformed command `{line}`"));
        }
        let time_ps = parse_time_ns(parts[0])?;
        let kind: CommandKind = parts[1].parse()?;
        let want = if kind == CommandKind::Ref { 5 } else { 6 };
        if parts.len() != want {
            return Err(format!(
                "{} expects {} fields, got {}",
                kind.mnemonic(),
                want,
                parts.len()
            ));
        }
        let num = |i: usize| -> Result<u32, String> {
            parts[i]
                .parse::<u32>()
                .map_err(|e| format!("field {} `{}`: {e}", i + 1, parts[i]))
        };
        let bank = BankId::new(num(2)?, num(3)?, num(4)?);
        let row = if kind == CommandKind::Ref { 0 } else { num(5)? };
        Ok(Command { kind, bank, row, time_ps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceParseError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for TraceParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

impl std::error::Error for TraceParseError {}

/// Parse a trace; blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<Command>, TraceParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|msg| TraceParseError { line: i + 1, msg })?);
    }
    Ok(out)
}

pub fn emit_trace(trace: &[Command]) -> String {
    let mut s = String::with_capacity(trace.len() * 32);
    for c in trace {
        s.push_str(&c.to_string());
        s.push('\n');
    }
    s
}

/// Per-bank protocol state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BankTimingState {
    pub open_row: Option<u32>,
    pub last_act_ps: Option<u64>,
    pub last_pre_ps: Option<u64>,
    pub last_ref_ps: Option<u64>,
    pub postponed_refs: u32,
    pub refresh_pointer: u32,
}

#[derive(Debug, Clone, Default)]
struct PchState {
    last_ref_ps: Option<u64>,
    busy_until_ps: u64,
}

/// Protocol checker. It records violations and always applies the state update,
/// so it serves both strict (stop at first violation) and permissive callers.
#[derive(Debug, Clone)]
pub struct TimingChecker {
    timing: TimingParams,
    geometry: Geometry,
    banks: Vec<BankTimingState>,
    pchs: Vec<PchState>,
    last_time_ps: Option<u64>,
    check_ref_gap: bool,
    index: usize,
}

impl TimingChecker {
    pub fn new(timing: TimingParams, geometry: Geometry, check_ref_gap: bool) -> Self {
        let banks = vec![BankTimingState::default(); geometry.total_banks()];
        let pchs = vec![PchState::default(); (geometry.channels * geometry.pseudo_channels_per_channel) as usize];
        Self {
            timing,
            geometry,
            banks,
            pchs,
            last_time_ps: None,
            check_ref_gap,
            index: 0,
        }
    }

    pub fn bank(&self, bank: BankId) -> &BankTimingState {
        &self.banks[self.geometry.bank_index(bank)]
    }

    pub fn bank_mut(&mut self, bank: BankId) -> &mut BankTimingState {
        let i = self.geometry.bank_index(bank);
        &mut self.banks[i]
    }

    pub fn pch_busy_until(&self, bank: BankId) -> u64 {
        self.pchs[self.geometry.pch_index(bank.channel, bank.pseudo_channel)].busy_until_ps
    }

    pub fn pch_has_open_row(&self, channel: u32, pseudo_channel: u32) -> bool {
        (0..self.geometry.banks_per_pseudo_channel)
            .any(|b| self.bank(BankId::new(channel, pseudo_channel, b)).open_row.is_some())
    }

    /// Violations `cmd` would raise against the current state.
    pub fn check(&self, cmd: &Command) -> Vec<TimingViolation> {
        let mut v = Vec::new();
        let idx = self.index;
        let t = cmd.time_ps;
        let mut flag = |parameter: &'static str, detail: String| {
            v.push(TimingViolation {
                index: idx,
                time_ns: ps_to_ns(t),
                parameter,
                detail,
            });
        };
        if let Err(e) = self.geometry.check_bank(cmd.bank) {
            flag("address", e.to_string());
            return v;
        }
        if cmd.kind != CommandKind::Ref {
            if let Err(e) = self.geometry.check_row(cmd.row) {
                flag("address", e.to_string());
                return v;
            }
        }
        if let Some(prev) = self.last_time_ps {
            if t < prev {
                flag("order", format!("issue time moves backwards from {} ns", ps_to_ns(prev)));
            }
        }
        let tp = &self.timing;
        let (ras, rp, rc, rcd) = (tp.ras_ps(), tp.rp_ps(), tp.rc_ps(), tp.rcd_ps());
        let pi = self.geometry.pch_index(cmd.bank.channel, cmd.bank.pseudo_channel);
        let busy = self.pchs[pi].busy_until_ps;
        if t < busy {
            flag(
                "tRFC",
                format!("command issued {} ns before refresh completes", ps_to_ns(busy - t)),
            );
        }
        match cmd.kind {
            CommandKind::Act => {
                let b = self.bank(cmd.bank);
                if let Some(r) = b.open_row {
                    flag("open_bank", format!("ACT while row {r} is open"));
                }
                if let Some(a) = b.last_act_ps {
                    if t < a + rc {
                        flag("tRC", format!("ACT {} ns after previous ACT", ps_to_ns(t.saturating_sub(a))));
                    }
                }
                if let Some(p) = b.last_pre_ps {
                    if t < p + rp {
                        flag("tRP", format!("ACT {} ns after PRE", ps_to_ns(t.saturating_sub(p))));
                    }
                }
            }
            CommandKind::Pre => {
                let b = self.bank(cmd.bank);
                match (b.open_row, b.last_act_ps) {
                    (None, _) => flag("closed_bank", "PRE to a closed bank".into()),
                    (Some(_), Some(a)) if t < a + ras => {
                        flag("tRAS", format!("row open only {} ns", ps_to_ns(t.saturating_sub(a))));
                    }
                    _ => {}
                }
            }
            CommandKind::Rd | CommandKind::Wr => {
                let b = self.bank(cmd.bank);
                match b.open_row {
                    None => flag("closed_bank", format!("{} to a closed bank", cmd.kind.mnemonic())),
                    Some(r) if r != cmd.row => {
                        flag("row_mismatch", format!("open row is {r}, command targets {}", cmd.row));
                    }
                    Some(_) => {
                        if let Some(a) = b.last_act_ps {
                            if t < a + rcd {
                                flag("tRCD", format!("column access {} ns after ACT", ps_to_ns(t.saturating_sub(a))));
                            }
                        }
                    }
                }
            }
            CommandKind::Ref => {
                let (c, p) = (cmd.bank.channel, cmd.bank.pseudo_channel);
                if self.pch_has_open_row(c, p) {
                    flag("open_bank", "REF while a row is open".into());
                }
                for bank in 0..self.geometry.banks_per_pseudo_channel {
                    let st = self.bank(BankId::new(c, p, bank));
                    if let Some(pre) = st.last_pre_ps {
                        if t < pre + rp && st.open_row.is_none() {
                            flag("tRP", format!("REF {} ns after PRE", ps_to_ns(t.saturating_sub(pre))));
                            break;
                        }
                    }
                }
                if self.check_ref_gap {
                    if let Some(prev) = self.pchs[pi].last_ref_ps {
                        if t > prev + tp.max_ref_gap_ps() {
                            flag("9*tREFI", format!("{} ns since previous REF", ps_to_ns(t - prev)));
                        }
                    }
                }
            }
        }
        v
    }

    /// Apply `cmd` to the state, legal or not. Out-of-range addresses are ignored.
    pub fn apply(&mut self, cmd: &Command) {
        self.index += 1;
        if self.geometry.check_bank(cmd.bank).is_err() {
            return;
        }
        let t = cmd.time_ps;
        self.last_time_ps = Some(self.last_time_ps.map_or(t, |p| p.max(t)));
        match cmd.kind {
            CommandKind::Act => {
                let b = self.bank_mut(cmd.bank);
                b.open_row = Some(cmd.row);
                b.last_act_ps = Some(t);
            }
            CommandKind::Pre => {
                let b = self.bank_mut(cmd.bank);
                b.open_row = None;
                b.last_pre_ps = Some(t);
            }
            CommandKind::Rd | CommandKind::Wr => {}
            CommandKind::Ref => {
                let (c, p) = (cmd.bank.channel, cmd.bank.pseudo_channel);
                let pi = self.geometry.pch_index(c, p);
                let rfc = self.timing.rfc_ps();
                self.pchs[pi].last_ref_ps = Some(t);
                self.pchs[pi].busy_until_ps = t + rfc;
                for bank in 0..self.geometry.banks_per_pseudo_channel {
                    self.bank_mut(BankId::new(c, p, bank)).last_ref_ps = Some(t);
                }
            }
        }
    }

    /// Check then apply.
    pub fn step(&mut self, cmd: &Command) -> Vec<TimingViolation> {
        let v = self.check(cmd);
        self.apply(cmd);
        v
    }

    /// Record a burst of activations executed without per-command bookkeeping.
    pub fn record_burst(&mut self, bank: BankId, last_act_ps: u64, last_pre_ps: u64) {
        let b = self.bank_mut(bank);
        b.open_row = None;
        b.last_act_ps = Some(last_act_ps);
        b.last_pre_ps = Some(last_pre_ps);
        self.last_time_ps = Some(self.last_time_ps.map_or(last_pre_ps, |p| p.max(last_pre_ps)));
    }

    /// Earliest time at or after `t` when an ACT to `bank` is legal.
    pub fn earliest_act(&self, bank: BankId, t: u64) -> u64 {
        let b = self.bank(bank);
        let mut e = t.max(self.pch_busy_until(bank));
        if let Some(a) = b.last_act_ps {
            e = e.max(a + self.timing.rc_ps());
        }
        if let Some(p) = b.last_pre_ps {
            e = e.max(p + self.timing.rp_ps());
        }
        e
    }

    /// Earliest time at or after `t` when a REF to the pseudo channel is legal,
    /// assuming all its banks are closed.
    pub fn earliest_ref(&self, channel: u32, pseudo_channel: u32, t: u64) -> u64 {
        let pi = self.geometry.pch_index(channel, pseudo_channel);
        let mut e = t.max(self.pchs[pi].busy_until_ps);
        for bank in 0..self.geometry.banks_per_pseudo_channel {
            if let Some(p) = self.bank(BankId::new(channel, pseudo_channel, bank)).last_pre_ps {
                e = e.max(p + self.timing.rp_ps());
            }
        }
        e
    }

    pub fn last_ref_ps(&self, channel: u32, pseudo_channel: u32) -> Option<u64> {
        self.pchs[self.geometry.pch_index(channel, pseudo_channel)].last_ref_ps
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }
}

/// Every violation in a trace, checked against `timing` with the REF-gap rule on.
pub fn validate_trace(trace: &[Command], timing: &TimingParams, geometry: &Geometry) -> Vec<TimingViolation> {
    let mut ck = TimingChecker::new(timing.clone(), geometry.clone(), true);
    trace.iter().flat_map(|c| ck.step(c)).collect()
}

//! The simulated HBM2 device: command execution, refresh, TRR, exposure
//! accounting and read-time materialization of bitflips.

use rustc_hash::FxHashMap as HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cell::{FaultModel, RowCells, RowSummary, RETENTION_STEP_PS};
use crate::error::{ConfigError, DeviceError, TimingViolation};
use crate::geometry::{BankId, Geometry, RowMapping, SubarrayLayout};
use crate::profile::{byte_word, DataPattern, FaultProfile};
use crate::timing::{ps_to_ns, Command, CommandKind, TimingChecker, TimingParams};
use crate::trr::{TrrConfig, TrrState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshMode {
    /// No periodic refresh; explicit REFs are accepted without gap checks.
    #[default]
    Disabled,
    /// The host issues REFs; strict mode enforces the 9·tREFI gap.
    Manual,
    /// The device inserts a REF every tREFI, postponing while a row is open.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub geometry: Geometry,
    pub mapping: RowMapping,
    /// `None` selects `SubarrayLayout::default_for(rows_per_bank)`.
    pub layout: Option<SubarrayLayout>,
    pub timing: TimingParams,
    pub profile: FaultProfile,
    pub trr: TrrConfig,
    pub refresh: RefreshMode,
    pub strict_timing: bool,
    pub seed: u64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            mapping: RowMapping::Identity,
            layout: None,
            timing: TimingParams::default(),
            profile: FaultProfile::default(),
            trr: TrrConfig::default(),
            refresh: RefreshMode::Disabled,
            strict_timing: true,
            seed: 0,
        }
    }
}

impl DeviceConfig {
    pub fn layout(&self) -> SubarrayLayout {
        self.layout
            .clone()
            .map(SubarrayLayout::reindexed)
            .unwrap_or_else(|| SubarrayLayout::default_for(self.geometry.rows_per_bank))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry.validate()?;
        self.mapping.validate(self.geometry.rows_per_bank)?;
        self.layout().validate(self.geometry.rows_per_bank)?;
        self.timing.validate()?;
        self.profile.validate()?;
        self.trr.validate()?;
        Ok(())
    }

    /// One channel, one pseudo channel, one bank of `rows` rows.
    pub fn miniature(rows: u32, row_size_bits: u32) -> Self {
        Self {
            geometry: Geometry {
                channels: 1,
                pseudo_channels_per_channel: 1,
                banks_per_pseudo_channel: 1,
                rows_per_bank: rows,
                row_size_bits,
            },
            ..Self::default()
        }
    }
}

/// Observable outcome of one command.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Activated { bank: BankId, row: u32 },
    Closed { bank: BankId, row: u32, t_on_ns: f64, multiplier: f64 },
    Read { bank: BankId, row: u32, data: Vec<u64> },
    Refreshed { channel: u32, pseudo_channel: u32, rows: Vec<u32> },
    TrrRefresh { bank: BankId, victims: Vec<u32> },
    Violation(TimingViolation),
}

#[derive(Debug, Clone)]
struct RowState {
    /// `None` while the row still holds its power-up zeros.
    data: Option<Vec<u64>>,
    /// Byte the whole row was last written with, if uniform.
    tag: Option<u8>,
    exposure: f64,
    restored_ps: u64,
}

// about 66 KB per row; large enough for a bank-parallel campaign working set
const CELL_CACHE_ROWS: usize = 1024;

pub struct Device {
    cfg: DeviceConfig,
    layout: SubarrayLayout,
    /// Subarray index of every physical row.
    subarray_index: Vec<u32>,
    model: FaultModel,
    checker: TimingChecker,
    now_ps: u64,
    barrier_ps: u64,
    rows: HashMap<u64, RowState>,
    cells: HashMap<u64, Arc<RowCells>>,
    summaries: HashMap<u64, RowSummary>,
    trr: Vec<TrrState>,
    refreshed_at: Vec<Option<Vec<u64>>>,
    refresh_ptr: Vec<u32>,
    next_due_ps: Vec<u64>,
    rows_per_ref: u32,
    trial: u64,
    zero_row: Vec<u64>,
    violations: Vec<TimingViolation>,
    act_count: u64,
    ref_count: u64,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device")
            .field("now_ps", &self.now_ps)
            .field("tracked_rows", &self.rows.len())
            .finish_non_exhaustive()
    }
}

/// Summary of a `hammer` call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HammerReport {
    pub activations: u64,
    pub start_ps: u64,
    pub end_ps: u64,
}

impl Device {
    pub fn new(cfg: DeviceConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let layout = cfg.layout();
        let model = FaultModel::new(
            cfg.profile.clone(),
            cfg.geometry.clone(),
            layout.clone(),
            cfg.mapping,
            cfg.seed,
        )?;
        let g = &cfg.geometry;
        let n_pch = (g.channels * g.pseudo_channels_per_channel) as usize;
        let checker = TimingChecker::new(
            cfg.timing.clone(),
            g.clone(),
            cfg.refresh == RefreshMode::Manual,
        );
        Ok(Self {
            rows_per_ref: cfg.timing.rows_per_ref(g.rows_per_bank),
            trr: vec![TrrState::new(); g.total_banks()],
            refreshed_at: vec![None; n_pch],
            refresh_ptr: vec![0; n_pch],
            next_due_ps: vec![cfg.timing.refi_ps(); n_pch],
            zero_row: vec![0; g.words_per_row()],
            subarray_index: (0..cfg.geometry.rows_per_bank)
                .map(|r| layout.subarray_of(r).map_or(u32::MAX, |p| p.index as u32))
                .collect(),
            layout,
            model,
            checker,
            now_ps: 0,
            barrier_ps: 0,
            rows: HashMap::default(),
            cells: HashMap::default(),
            summaries: HashMap::default(),
            trial: 0,
            violations: Vec::new(),
            act_count: 0,
            ref_count: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.cfg.geometry
    }

    pub fn timing(&self) -> &TimingParams {
        &self.cfg.timing
    }

    pub fn model(&self) -> &FaultModel {
        &self.model
    }

    pub fn layout(&self) -> &SubarrayLayout {
        &self.layout
    }

    pub fn refresh_mode(&self) -> RefreshMode {
        self.cfg.refresh
    }

    pub fn now_ps(&self) -> u64 {
        self.now_ps
    }

    pub fn now_ns(&self) -> f64 {
        ps_to_ns(self.now_ps)
    }

    /// Selects the trial-to-trial threshold jitter realization.
    pub fn set_trial(&mut self, trial: u64) {
        self.trial = trial;
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    /// Violations logged in permissive mode.
    pub fn violations(&self) -> &[TimingViolation] {
        &self.violations
    }

    pub fn activation_count(&self) -> u64 {
        self.act_count
    }

    pub fn ref_count(&self) -> u64 {
        self.ref_count
    }

    pub fn trr_state(&self, bank: BankId) -> &TrrState {
        &self.trr[self.cfg.geometry.bank_index(bank)]
    }

    pub fn bank_state(&self, bank: BankId) -> &crate::timing::BankTimingState {
        self.checker.bank(bank)
    }

    pub fn to_physical(&self, row: u32) -> Result<u32, DeviceError> {
        Ok(self.cfg.mapping.to_physical(row, self.cfg.geometry.rows_per_bank)?)
    }

    pub fn to_logical(&self, phys: u32) -> Result<u32, DeviceError> {
        Ok(self.cfg.mapping.to_logical(phys, self.cfg.geometry.rows_per_bank)?)
    }

    fn key(&self, bank: BankId, phys: u32) -> u64 {
        ((self.cfg.geometry.bank_index(bank) as u64) << 32) | phys as u64
    }

    fn pch_of(&self, bank: BankId) -> usize {
        self.cfg.geometry.pch_index(bank.channel, bank.pseudo_channel)
    }

    fn virgin_restored(&self, bank: BankId, phys: u32) -> u64 {
        self.refreshed_at[self.pch_of(bank)]
            .as_ref()
            .map_or(0, |v| v[phys as usize])
    }

    fn row_cells(&mut self, bank: BankId, phys: u32) -> Arc<RowCells> {
        let key = self.key(bank, phys);
        if let Some(c) = self.cells.get(&key) {
            return c.clone();
        }
        if self.cells.len() >= CELL_CACHE_ROWS {
            self.cells.clear();
        }
        let c = Arc::new(self.model.row_cells(bank, phys));
        self.cells.insert(key, c.clone());
        c
    }

    fn row_tag(&self, bank: BankId, phys: u32) -> Option<u8> {
        self.rows
            .get(&self.key(bank, phys))
            .map_or(Some(0), |r| r.tag)
    }

    /// Data pattern formed by a row and its in-subarray neighbours, if any.
    pub fn classify_pattern(&self, bank: BankId, phys: u32) -> Option<DataPattern> {
        let v = self.row_tag(bank, phys)?;
        let pattern = DataPattern::from_victim_byte(v)?;
        let inverse = Some(!v);
        let neighbours = [phys.checked_sub(1), phys.checked_add(1)];
        neighbours
            .into_iter()
            .flatten()
            .filter(|&n| n < self.cfg.geometry.rows_per_bank && self.same_subarray(phys, n))
            .any(|n| self.row_tag(bank, n) == inverse)
            .then_some(pattern)
    }

    /// Exposure scaled by data-pattern coupling and divided by this trial's jitter.
    fn effective_exposure(&self, bank: BankId, phys: u32, exposure: f64) -> f64 {
        if exposure <= 0.0 {
            return 0.0;
        }
        let c = self.model.coupling(bank, phys, self.classify_pattern(bank, phys));
        exposure * c / self.model.jitter(bank, phys, self.trial)
    }

    /// Bits that would read back flipped at time `t`, or `None` when there are none
    /// for certain.
    fn pending_flips(&mut self, bank: BankId, phys: u32, t: u64) -> Option<Vec<u64>> {
        let key = self.key(bank, phys);
        let (exposure, restored) = match self.rows.get(&key) {
            Some(r) => (r.exposure, r.restored_ps),
            None => (0.0, self.virgin_restored(bank, phys)),
        };
        let elapsed = t.saturating_sub(restored);
        let eff = self.effective_exposure(bank, phys, exposure);
        let retention_possible =
            elapsed > RETENTION_STEP_PS && self.cfg.profile.retention_geometric_p > 0.0;
        if eff < 1.0 && !retention_possible {
            return None;
        }
        let summary = match self.summaries.get(&key) {
            Some(&s) => s,
            None => {
                let s = self.model.row_summary(bank, phys);
                self.summaries.insert(key, s);
                s
            }
        };
        let steps = elapsed.saturating_sub(1) / RETENTION_STEP_PS;
        let retention_fails = retention_possible && steps >= summary.first_retention_step;
        if eff < summary.min_effective && !retention_fails {
            return None;
        }
        let cells = self.row_cells(bank, phys);
        let data = self
            .rows
            .get(&key)
            .and_then(|r| r.data.as_deref())
            .unwrap_or(&self.zero_row);
        let mask = self.model.flip_mask(bank, phys, &cells, data, eff, elapsed);
        mask.iter().any(|&w| w != 0).then_some(mask)
    }

    /// Charge restoration: latch pending flips into the stored data and clear
    /// the row's exposure and retention clock.
    fn restore(&mut self, bank: BankId, phys: u32, t: u64) {
        let flips = self.pending_flips(bank, phys, t);
        let key = self.key(bank, phys);
        let virgin = self.virgin_restored(bank, phys);
        let words = self.zero_row.len();
        let st = self.rows.entry(key).or_insert_with(|| RowState {
            data: None,
            tag: Some(0),
            exposure: 0.0,
            restored_ps: virgin,
        });
        if let Some(f) = flips {
            let data = st.data.get_or_insert_with(|| vec![0; words]);
            for (d, m) in data.iter_mut().zip(&f) {
                *d ^= m;
            }
        }
        st.exposure = 0.0;
        st.restored_ps = t;
    }

    fn add_exposure(&mut self, bank: BankId, phys: u32, amount: f64) {
        let key = self.key(bank, phys);
        let virgin = self.virgin_restored(bank, phys);
        self.rows
            .entry(key)
            .or_insert_with(|| RowState {
                data: None,
                tag: Some(0),
                exposure: 0.0,
                restored_ps: virgin,
            })
            .exposure += amount;
    }

    /// In-subarray neighbours of an aggressor with their blast weights.
    #[inline]
    fn same_subarray(&self, a: u32, b: u32) -> bool {
        self.subarray_index[a as usize] == self.subarray_index[b as usize]
    }

    fn victims_of(&self, phys: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let n = self.cfg.geometry.rows_per_bank as i64;
        self.cfg
            .profile
            .blast_weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .flat_map(move |(d, &w)| {
                let d = d as i64 + 1;
                [phys as i64 - d, phys as i64 + d]
                    .into_iter()
                    .filter(move |&v| v >= 0 && v < n && self.same_subarray(phys, v as u32))
                    .map(move |v| (v as u32, w))
            })
    }

    /// Disturbance from closing `phys` after it was open `t_on_ps`.
    fn register_activation(&mut self, bank: BankId, phys: u32, multiplier: f64) {
        let victims: [Option<(u32, f64)>; 4] = {
            let mut it = self.victims_of(phys);
            std::array::from_fn(|_| it.next())
        };
        for (v, w) in victims.into_iter().flatten() {
            self.add_exposure(bank, v, w * multiplier);
        }
    }

    fn multiplier(&self, t_on_ps: u64) -> Result<f64, DeviceError> {
        let t_on_ns = ps_to_ns(t_on_ps.max(self.cfg.timing.ras_ps()));
        self.cfg.profile.taggon_multiplier(t_on_ns.max(self.cfg.profile.taggon_anchors[0][0]))
    }

    /// Accumulated (raw) exposure of a row.
    pub fn exposure(&self, bank: BankId, row: u32) -> Result<f64, DeviceError> {
        self.cfg.geometry.check_bank(bank)?;
        let phys = self.to_physical(row)?;
        Ok(self.rows.get(&self.key(bank, phys)).map_or(0.0, |r| r.exposure))
    }

    // ---- refresh ----

    fn do_ref(&mut self, channel: u32, pseudo_channel: u32, t: u64) -> (Vec<u32>, Vec<(BankId, Vec<u32>)>) {
        self.ref_count += 1;
        let g = self.cfg.geometry.clone();
        let pi = g.pch_index(channel, pseudo_channel);
        let n = g.rows_per_bank;
        let start = self.refresh_ptr[pi];
        let seg: Vec<u32> = (0..self.rows_per_ref.min(n)).map(|i| (start + i) % n).collect();
        self.refresh_ptr[pi] = (start + self.rows_per_ref) % n;
        for b in 0..g.banks_per_pseudo_channel {
            let bank = BankId::new(channel, pseudo_channel, b);
            for &r in &seg {
                // untouched rows only matter once retention failures are possible
                let stale = self.cfg.profile.retention_geometric_p > 0.0
                    && t.saturating_sub(self.virgin_restored(bank, r)) > RETENTION_STEP_PS;
                if stale || self.rows.contains_key(&self.key(bank, r)) {
                    self.restore(bank, r, t);
                }
            }
        }
        let table = self.refreshed_at[pi].get_or_insert_with(|| vec![0; n as usize]);
        for &r in &seg {
            table[r as usize] = t;
        }
        let mut trr_events = Vec::new();
        for b in 0..g.banks_per_pseudo_channel {
            let bank = BankId::new(channel, pseudo_channel, b);
            let bi = g.bank_index(bank);
            let victims = self.trr[bi].on_ref(&self.cfg.trr, n);
            for &v in &victims {
                self.restore(bank, v, t);
            }
            if !victims.is_empty() {
                trr_events.push((bank, victims));
            }
        }
        (seg, trr_events)
    }

    /// Issue every automatic REF of one pseudo channel due at or before `t`
    /// that can be issued (no row open).
    fn catch_up_pch(&mut self, channel: u32, pseudo_channel: u32, t: u64, events: &mut Vec<Event>) {
        if self.cfg.refresh != RefreshMode::Auto {
            return;
        }
        let pi = self.cfg.geometry.pch_index(channel, pseudo_channel);
        while self.next_due_ps[pi] <= t {
            if self.checker.pch_has_open_row(channel, pseudo_channel) {
                break;
            }
            let at = self.checker.earliest_ref(channel, pseudo_channel, self.next_due_ps[pi]);
            let cmd = Command::refresh(at, channel, pseudo_channel);
            self.checker.apply(&cmd);
            let (rows, trr) = self.do_ref(channel, pseudo_channel, at);
            self.now_ps = self.now_ps.max(at);
            self.next_due_ps[pi] += self.cfg.timing.refi_ps();
            push_ref_events(events, channel, pseudo_channel, rows, trr);
        }
    }

    fn catch_up_bank(&mut self, bank: BankId, t: u64) {
        let mut sink = Vec::new();
        self.catch_up_pch(bank.channel, bank.pseudo_channel, t, &mut sink);
    }

    // ---- command-level interface ----

    /// Execute one command. In strict mode an illegal command is rejected and
    /// leaves the device untouched; in permissive mode it is logged and executed.
    pub fn issue(&mut self, cmd: Command) -> Result<Vec<Event>, DeviceError> {
        let mut cmd = cmd;
        cmd.time_ps = self.cfg.timing.quantize(cmd.time_ps);
        self.cfg.geometry.check_bank(cmd.bank)?;
        if cmd.kind != CommandKind::Ref {
            self.cfg.geometry.check_row(cmd.row)?;
        }
        let mut events = Vec::new();
        if self.cfg.refresh == RefreshMode::Auto {
            self.catch_up_pch(cmd.bank.channel, cmd.bank.pseudo_channel, cmd.time_ps, &mut events);
            // the controller holds the command until an inserted refresh completes
            cmd.time_ps = cmd.time_ps.max(self.checker.pch_busy_until(cmd.bank));
        }
        let violations = self.checker.check(&cmd);
        if let Some(first) = violations.first() {
            if self.cfg.strict_timing {
                return Err(DeviceError::Timing(first.clone()));
            }
            self.violations.extend(violations.iter().cloned());
            events.extend(violations.into_iter().map(Event::Violation));
        }
        let before = self.checker.bank(cmd.bank).clone();
        self.checker.apply(&cmd);
        let t = cmd.time_ps;
        self.now_ps = self.now_ps.max(t);
        self.barrier_ps = self.barrier_ps.max(t);
        match cmd.kind {
            CommandKind::Act => {
                let phys = self.to_physical(cmd.row)?;
                self.restore(cmd.bank, phys, t);
                let bi = self.cfg.geometry.bank_index(cmd.bank);
                self.trr[bi].on_act(&self.cfg.trr, phys);
                self.act_count += 1;
                events.push(Event::Activated { bank: cmd.bank, row: cmd.row });
            }
            CommandKind::Pre => {
                if let (Some(row), Some(act)) = (before.open_row, before.last_act_ps) {
                    let t_on = t.saturating_sub(act);
                    let m = self.multiplier(t_on)?;
                    let phys = self.to_physical(row)?;
                    self.register_activation(cmd.bank, phys, m);
                    events.push(Event::Closed {
                        bank: cmd.bank,
                        row,
                        t_on_ns: ps_to_ns(t_on),
                        multiplier: m,
                    });
                }
            }
            CommandKind::Rd => {
                if before.open_row == Some(cmd.row) {
                    let data = self.peek_row(cmd.bank, cmd.row)?;
                    events.push(Event::Read { bank: cmd.bank, row: cmd.row, data });
                }
            }
            CommandKind::Wr => {}
            CommandKind::Ref => {
                let (rows, trr) = self.do_ref(cmd.bank.channel, cmd.bank.pseudo_channel, t);
                push_ref_events(&mut events, cmd.bank.channel, cmd.bank.pseudo_channel, rows, trr);
                if self.cfg.refresh == RefreshMode::Auto {
                    let pi = self.pch_of(cmd.bank);
                    self.next_due_ps[pi] = self.next_due_ps[pi].max(t + self.cfg.timing.refi_ps());
                }
            }
        }
        Ok(events)
    }

    // ---- row-level interface ----

    fn open_check(&self, bank: BankId) -> Result<(), DeviceError> {
        if let Some(r) = self.checker.bank(bank).open_row {
            return Err(DeviceError::Parameter(format!("bank has row {r} open")));
        }
        Ok(())
    }

    /// Activate `phys` at the earliest legal time, keep it open `t_on`, close it.
    /// Returns the ACT time.
    fn act_pre(&mut self, bank: BankId, phys: u32, t_on: u64, multiplier: f64) -> u64 {
        let mut t = self.checker.earliest_act(bank, self.barrier_ps);
        if self.cfg.refresh == RefreshMode::Auto {
            self.catch_up_bank(bank, t);
            t = self.checker.earliest_act(bank, self.barrier_ps);
        }
        self.restore(bank, phys, t);
        let bi = self.cfg.geometry.bank_index(bank);
        self.trr[bi].on_act(&self.cfg.trr, phys);
        self.act_count += 1;
        self.register_activation(bank, phys, multiplier);
        self.checker.record_burst(bank, t, t + t_on);
        self.now_ps = self.now_ps.max(t + t_on);
        t
    }

    /// Write a whole row (ACT, WR, PRE at tRAS).
    pub fn write_row(&mut self, bank: BankId, row: u32, data: &[u64]) -> Result<(), DeviceError> {
        self.cfg.geometry.check_bank(bank)?;
        let phys = self.to_physical(row)?;
        let words = self.cfg.geometry.words_per_row();
        if data.len() != words {
            return Err(DeviceError::DataLength { expected: words, got: data.len() });
        }
        self.open_check(bank)?;
        let ras = self.cfg.timing.ras_ps();
        let mut t = self.checker.earliest_act(bank, self.barrier_ps);
        if self.cfg.refresh == RefreshMode::Auto {
            self.catch_up_bank(bank, t);
            t = self.checker.earliest_act(bank, self.barrier_ps);
        }
        let key = self.key(bank, phys);
        let tag = uniform_byte(data);
        let st = self.rows.entry(key).or_insert_with(|| RowState {
            data: None,
            tag: Some(0),
            exposure: 0.0,
            restored_ps: 0,
        });
        st.data = if data.iter().all(|&w| w == 0) { None } else { Some(data.to_vec()) };
        st.tag = tag;
        st.exposure = 0.0;
        st.restored_ps = t;
        let bi = self.cfg.geometry.bank_index(bank);
        self.trr[bi].on_act(&self.cfg.trr, phys);
        self.act_count += 1;
        self.register_activation(bank, phys, 1.0);
        self.checker.record_burst(bank, t, t + ras);
        self.now_ps = self.now_ps.max(t + ras);
        Ok(())
    }

    /// Write a row filled with one byte.
    pub fn fill_row(&mut self, bank: BankId, row: u32, byte: u8) -> Result<(), DeviceError> {
        let data = vec![byte_word(byte); self.cfg.geometry.words_per_row()];
        self.write_row(bank, row, &data)
    }

    /// Read a whole row (ACT, RD, PRE at tRAS); the activation restores the row.
    pub fn read_row(&mut self, bank: BankId, row: u32) -> Result<Vec<u64>, DeviceError> {
        self.cfg.geometry.check_bank(bank)?;
        let phys = self.to_physical(row)?;
        self.open_check(bank)?;
        let ras = self.cfg.timing.ras_ps();
        self.act_pre(bank, phys, ras, 1.0);
        let key = self.key(bank, phys);
        Ok(self
            .rows
            .get(&key)
            .and_then(|r| r.data.clone())
            .unwrap_or_else(|| self.zero_row.clone()))
    }

    /// Contents a read would return now, without any side effect.
    pub fn peek_row(&mut self, bank: BankId, row: u32) -> Result<Vec<u64>, DeviceError> {
        self.cfg.geometry.check_bank(bank)?;
        let phys = self.to_physical(row)?;
        let t = self.now_ps;
        let flips = self.pending_flips(bank, phys, t);
        let mut data = self
            .rows
            .get(&self.key(bank, phys))
            .and_then(|r| r.data.clone())
            .unwrap_or_else(|| self.zero_row.clone());
        if let Some(f) = flips {
            for (d, m) in data.iter_mut().zip(&f) {
                *d ^= m;
            }
        }
        Ok(data)
    }

    /// Repeat the activation sequence `rows` `repeats` times, each row held open
    /// `t_on_ps`, back to back at the earliest legal times.
    pub fn hammer(
        &mut self,
        bank: BankId,
        rows: &[u32],
        repeats: u64,
        t_on_ps: u64,
    ) -> Result<HammerReport, DeviceError> {
        self.cfg.geometry.check_bank(bank)?;
        self.open_check(bank)?;
        if t_on_ps < self.cfg.timing.ras_ps() {
            return Err(DeviceError::Parameter(format!(
                "tAggON {} ns is below tRAS ({} ns)",
                ps_to_ns(t_on_ps),
                self.cfg.timing.t_ras_ns
            )));
        }
        let m = self.multiplier(t_on_ps)?;
        let phys: Vec<u32> = rows
            .iter()
            .map(|&r| self.to_physical(r))
            .collect::<Result<_, _>>()?;
        let start_ps = self.checker.earliest_act(bank, self.barrier_ps);
        let len = phys.len() as u64;
        let total = len * repeats;
        if total == 0 {
            return Ok(HammerReport { activations: 0, start_ps, end_ps: start_ps });
        }
        let period = self.cfg.timing.act_period_ps(t_on_ps);
        // exposure one full cycle adds to rows outside the sequence
        let mut contrib: HashMap<u32, f64> = HashMap::default();
        for &p in &phys {
            for (v, w) in self.victims_of(p) {
                if !phys.contains(&v) {
                    *contrib.entry(v).or_insert(0.0) += w * m;
                }
            }
        }
        let mut occurrences: Vec<(u32, u64)> = Vec::new();
        for &p in &phys {
            match occurrences.iter_mut().find(|(r, _)| *r == p) {
                Some(o) => o.1 += 1,
                None => occurrences.push((p, 1)),
            }
        }
        let bi = self.cfg.geometry.bank_index(bank);
        let mut done = 0u64;
        let mut first = None;
        while done < total {
            let explicit = len.min(total - done);
            for _ in 0..explicit {
                let t = self.act_pre(bank, phys[(done % len) as usize], t_on_ps, m);
                first.get_or_insert(t);
                done += 1;
            }
            let mut cycles = (total - done) / len;
            if cycles == 0 {
                continue;
            }
            let next_act = self.checker.earliest_act(bank, self.barrier_ps);
            if self.cfg.refresh == RefreshMode::Auto {
                // stop the bulk step before the next automatic refresh is due
                let due = self.next_due_ps[self.pch_of(bank)];
                let fit = due.saturating_sub(next_act) / (len * period);
                cycles = cycles.min(fit);
                if cycles == 0 {
                    continue;
                }
            }
            let shift = cycles * len * period;
            for (&v, &c) in &contrib {
                self.add_exposure(bank, v, c * cycles as f64);
            }
            for &(p, k) in &occurrences {
                let key = self.key(bank, p);
                if let Some(st) = self.rows.get_mut(&key) {
                    st.restored_ps += shift;
                }
                self.trr[bi].on_acts(&self.cfg.trr, p, k * cycles);
            }
            let st = self.checker.bank(bank).clone();
            let (la, lp) = (st.last_act_ps.unwrap_or(0), st.last_pre_ps.unwrap_or(0));
            self.checker.record_burst(bank, la + shift, lp + shift);
            self.now_ps = self.now_ps.max(lp + shift);
            self.act_count += cycles * len;
            done += cycles * len;
        }
        let end_ps = self.checker.bank(bank).last_pre_ps.unwrap_or(start_ps);
        Ok(HammerReport {
            activations: total,
            start_ps: first.unwrap_or(start_ps),
            end_ps,
        })
    }

    /// Issue one REF to a pseudo channel at the earliest legal time.
    pub fn refresh(&mut self, channel: u32, pseudo_channel: u32) -> Result<Vec<Event>, DeviceError> {
        self.cfg.geometry.check_bank(BankId::new(channel, pseudo_channel, 0))?;
        if self.checker.pch_has_open_row(channel, pseudo_channel) {
            return Err(DeviceError::Parameter("REF with a row open".into()));
        }
        let t = self.checker.earliest_ref(channel, pseudo_channel, self.barrier_ps);
        self.issue(Command::refresh(t, channel, pseudo_channel))
    }

    /// Let `ps` elapse after the latest command.
    pub fn wait(&mut self, ps: u64) {
        let t = self.now_ps.max(self.barrier_ps) + ps;
        self.wait_until(t);
    }

    /// Advance to absolute time `t` (no-op if already past it).
    pub fn wait_until(&mut self, t: u64) {
        self.barrier_ps = self.barrier_ps.max(t);
        self.now_ps = self.now_ps.max(t);
        if self.cfg.refresh == RefreshMode::Auto {
            let g = self.cfg.geometry.clone();
            for c in 0..g.channels {
                for p in 0..g.pseudo_channels_per_channel {
                    let mut sink = Vec::new();
                    self.catch_up_pch(c, p, self.now_ps, &mut sink);
                }
            }
        }
    }

    /// Synchronize all banks: later row operations start no earlier than now.
    pub fn sync(&mut self) {
        self.barrier_ps = self.barrier_ps.max(self.now_ps);
    }

    /// Number of bits in `row` that differ from `expected` if read now (no side effects).
    pub fn count_flips(&mut self, bank: BankId, row: u32, expected: &[u64]) -> Result<u32, DeviceError> {
        let data = self.peek_row(bank, row)?;
        Ok(data.iter().zip(expected).map(|(a, b)| (a ^ b).count_ones()).sum())
    }
}

fn push_ref_events(
    events: &mut Vec<Event>,
    channel: u32,
    pseudo_channel: u32,
    rows: Vec<u32>,
    trr: Vec<(BankId, Vec<u32>)>,
) {
    events.push(Event::Refreshed { channel, pseudo_channel, rows });
    for (bank, victims) in trr {
        events.push(Event::TrrRefresh { bank, victims });
    }
}

fn uniform_byte(data: &[u64]) -> Option<u8> {
    let w = *data.first()?;
    let b = w as u8;
    (w == byte_word(b) && data.iter().all(|&x| x == w)).then_some(b)
}

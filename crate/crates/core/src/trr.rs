//! Undocumented in-DRAM target row refresh: a per-bank aggressor sampler that
//! refreshes the neighbours of latched rows on every `period`-th REF.

use rustc_hash::FxHashMap as HashMap;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrrScope {
    #[default]
    PerBank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrrConfig {
    pub enabled: bool,
    pub period: u32,
    pub sampler_slots: u32,
    pub first_act_rule: bool,
    pub half_count_rule: bool,
    /// Latch only rows with strictly more than half of an interval's ACTs.
    /// When false, exactly half is enough.
    pub majority_strict: bool,
    pub victim_span: u32,
    pub scope: TrrScope,
}

impl Default for TrrConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            period: 17,
            sampler_slots: 4,
            first_act_rule: true,
            half_count_rule: true,
            majority_strict: true,
            victim_span: 1,
            scope: TrrScope::PerBank,
        }
    }
}

impl TrrConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period == 0 {
            return Err(ConfigError::Trr("period must be >= 1".into()));
        }
        if self.sampler_slots == 0 {
            return Err(ConfigError::Trr("sampler_slots must be >= 1".into()));
        }
        if self.victim_span == 0 {
            return Err(ConfigError::Trr("victim_span must be >= 1".into()));
        }
        Ok(())
    }

    fn active(&self) -> bool {
        self.enabled && (self.first_act_rule || self.half_count_rule)
    }
}

/// Runtime tracker of one bank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrrState {
    pub ref_counter: u32,
    pub slots: Vec<u32>,
    pub interval_act_counts: HashMap<u32, u64>,
    pub interval_total_acts: u64,
    /// The first-ACT window is open: distinct rows are latched as they are activated.
    pub awaiting_first_act: bool,
}

impl TrrState {
    /// State right after power-up, treated as if a TRR-capable REF just happened.
    pub fn new() -> Self {
        Self {
            awaiting_first_act: true,
            ..Self::default()
        }
    }

    fn latch(&mut self, cfg: &TrrConfig, row: u32) -> bool {
        if self.slots.contains(&row) || self.slots.len() >= cfg.sampler_slots as usize {
            return false;
        }
        self.slots.push(row);
        true
    }

    /// One ACT to `row`.
    pub fn on_act(&mut self, cfg: &TrrConfig, row: u32) {
        self.on_acts(cfg, row, 1);
    }

    /// `n` consecutive ACTs to `row`; equivalent to `n` calls of `on_act`.
    pub fn on_acts(&mut self, cfg: &TrrConfig, row: u32, n: u64) {
        if n == 0 || !cfg.active() {
            return;
        }
        if cfg.first_act_rule && self.awaiting_first_act {
            self.latch(cfg, row);
            if self.slots.len() >= cfg.sampler_slots as usize {
                self.awaiting_first_act = false;
            }
        }
        if cfg.half_count_rule {
            *self.interval_act_counts.entry(row).or_insert(0) += n;
            self.interval_total_acts += n;
        }
    }

    /// Handle one REF; returns the physical rows refreshed as victims.
    pub fn on_ref(&mut self, cfg: &TrrConfig, rows_per_bank: u32) -> Vec<u32> {
        if !cfg.active() {
            return Vec::new();
        }
        if cfg.half_count_rule && self.interval_total_acts > 0 {
            let total = self.interval_total_acts;
            let mut majority: Vec<u32> = self
                .interval_act_counts
                .iter()
                .filter(|&(_, &c)| {
                    if cfg.majority_strict {
                        2 * c > total
                    } else {
                        2 * c >= total
                    }
                })
                .map(|(&r, _)| r)
                .collect();
            majority.sort_unstable();
            for r in majority {
                self.latch(cfg, r);
            }
        }
        self.interval_act_counts.clear();
        self.interval_total_acts = 0;
        self.awaiting_first_act = false;
        self.ref_counter = (self.ref_counter + 1) % cfg.period;
        if self.ref_counter != 0 {
            return Vec::new();
        }
        let span = cfg.victim_span as i64;
        let mut victims: Vec<u32> = self
            .slots
            .iter()
            .flat_map(|&r| {
                (1..=span).flat_map(move |d| [r as i64 - d, r as i64 + d])
            })
            .filter(|&v| v >= 0 && v < rows_per_bank as i64)
            .map(|v| v as u32)
            .collect();
        victims.sort_unstable();
        victims.dedup();
        self.slots.clear();
        self.awaiting_first_act = cfg.first_act_rule;
        victims
    }
}

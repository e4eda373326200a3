//! Deterministic derivation of per-cell fault parameters and the flip rule.
//!
//! A cell's threshold is `exp(base_row + word_sigma·z_word + g(log10 q) / f_row)`
//! clamped to at least one activation, where `q` is the cell's uniform rank
//! inside its row, `g` the profile's tail curve and `f_row` a per-row steepness.
//! `f_row` has separate draws below and above the reference quantile, and the
//! upper one stops at `BULK_KNEE`.
//! Rows with a large `f_row` have their weakest cells pulled towards the
//! reference threshold, which both raises their HCfirst and narrows the gap to
//! their tenth flip.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::{Address, BankId, Geometry, RowMapping, SubarrayLayout};
use crate::hash::{hash_words, normal, tag, unit_open};
use crate::profile::{DataPattern, FaultProfile, TailCurve};

pub const RETENTION_STEP_MS: u64 = 64;
pub const RETENTION_STEP_PS: u64 = RETENTION_STEP_MS * 1_000_000_000;
/// Retention steps kept in the per-row sparse list; longer waits take the slow path.
const RETENTION_CACHE_STEPS: u64 = 1 << 14;
const ROW_CLAMP: f64 = 2.5;
const SHAPE_BOUND: f64 = 1.5;

/// Upper clamp on the row-center deviate where it couples into the tail steepness.
/// Strong rows otherwise get a tail so steep that their ten weakest cells bunch up.
const COUPLING_CEIL: f64 = 0.9;
/// Tail-curve level above which every row has the same width. Without it a
/// row with a compressed bulk flips all its cells within one tAggON step.
pub const BULK_KNEE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Charged when storing 1; fails 1 -> 0.
    TrueCell,
    /// Charged when storing 0; fails 0 -> 1.
    AntiCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFaultState {
    pub hc_threshold: f64,
    /// Infinite when the profile has no retention failures.
    pub retention_time_ms: f64,
    pub orientation: Orientation,
    pub stored_bit: bool,
    pub last_refresh_ns: f64,
    pub accumulated_exposure: f64,
}

/// Per-row quantities shared by every cell of the row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowParams {
    /// ln threshold of the reference-quantile cell.
    pub base_ln: f64,
    /// Steepness divisor applied to the tail curve below the reference quantile.
    pub steepness: f64,
    /// Steepness divisor applied above it.
    pub bulk_steepness: f64,
}

impl RowParams {
    /// ln threshold offset of a cell whose tail-curve value is `g`.
    #[inline]
    pub fn offset(&self, g: f64) -> f64 {
        if g < 0.0 {
            g / self.steepness
        } else if g <= BULK_KNEE {
            g / self.bulk_steepness
        } else {
            BULK_KNEE / self.bulk_steepness + (g - BULK_KNEE)
        }
    }

    /// Inverse of [`RowParams::offset`].
    #[inline]
    pub fn curve_level(&self, offset: f64) -> f64 {
        let knee = BULK_KNEE / self.bulk_steepness;
        if offset < 0.0 {
            offset * self.steepness
        } else if offset <= knee {
            offset * self.bulk_steepness
        } else {
            BULK_KNEE + (offset - knee)
        }
    }
}

/// Cached per-cell draws of one row.
#[derive(Debug, Clone)]
pub struct RowCells {
    pub params: RowParams,
    pub q: Vec<f64>,
    pub true_mask: Vec<u64>,
    /// (retention steps, bit) for every cell failing within the cached horizon, sorted.
    retention: Vec<(u32, u32)>,
    word_offset: Vec<f64>,
}

/// Bounds below which a row cannot flip, so callers can skip the cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSummary {
    /// Lowest effective exposure that flips some cell, whatever its charge.
    pub min_effective: f64,
    /// Fewest 64 ms retention steps after which some cell fails.
    pub first_retention_step: u64,
}

#[derive(Debug, Clone)]
pub struct FaultModel {
    profile: FaultProfile,
    curve: TailCurve,
    geometry: Geometry,
    layout: SubarrayLayout,
    mapping: RowMapping,
    seed: u64,
    ln_keep: f64,
}

impl FaultModel {
    pub fn new(
        profile: FaultProfile,
        geometry: Geometry,
        layout: SubarrayLayout,
        mapping: RowMapping,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        profile.validate()?;
        let curve = profile.tail_curve()?;
        let ln_keep = (-profile.retention_geometric_p).ln_1p();
        Ok(Self {
            profile,
            curve,
            geometry,
            layout,
            mapping,
            seed,
            ln_keep,
        })
    }

    pub fn profile(&self) -> &FaultProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn layout(&self) -> &SubarrayLayout {
        &self.layout
    }

    fn key(&self, bank: BankId) -> u64 {
        self.geometry.bank_index(bank) as u64
    }

    pub fn row_params(&self, bank: BankId, phys_row: u32) -> RowParams {
        let p = &self.profile;
        let b = self.key(bank);
        let r = phys_row as u64;
        let pos = self
            .layout
            .subarray_of(phys_row)
            .expect("physical row inside layout");
        let shape = p.subarray_factor(pos.offset, pos.size, self.layout.is_special(pos.index));
        let z_bank = normal(hash_words(self.seed, tag::BANK, &[b]));
        let z_row = normal(hash_words(self.seed, tag::ROW_CENTER, &[b, r]));
        let z_shape = (normal(hash_words(self.seed, tag::ROW_SHAPE, &[b, r])) / SHAPE_BOUND).tanh() * SHAPE_BOUND;
        let z_bulk = normal(hash_words(self.seed, tag::ROW_BULK, &[b, r])).clamp(-ROW_CLAMP, ROW_CLAMP);
        RowParams {
            base_ln: p.hc_log_median
                + p.channel_factor(bank.channel).ln()
                + shape.ln()
                + p.bank_sigma * z_bank
                + p.hc_log_sigma * z_row,
            steepness: (p.row_shape_sigma * z_shape + p.row_shape_coupling * z_row.clamp(-ROW_CLAMP, COUPLING_CEIL)).exp(),
            bulk_steepness: (p.row_bulk_sigma * z_bulk).exp(),
        }
    }

    #[inline]
    fn cell_q(&self, b: u64, r: u64, bit: u64) -> f64 {
        unit_open(hash_words(self.seed, tag::CELL_Q, &[b, r, bit]))
    }

    #[inline]
    fn cell_true(&self, b: u64, r: u64, bit: u64) -> bool {
        unit_open(hash_words(self.seed, tag::CELL_ORIENT, &[b, r, bit])) < self.profile.orientation_bias
    }

    /// Retention time in 64 ms steps; `None` for cells that never fail.
    #[inline]
    fn cell_retention_steps(&self, b: u64, r: u64, bit: u64) -> Option<u64> {
        if self.profile.retention_geometric_p <= 0.0 {
            return None;
        }
        self.retention_steps(unit_open(hash_words(self.seed, tag::CELL_RETENTION, &[b, r, bit])))
    }

    #[inline]
    fn retention_steps(&self, u: f64) -> Option<u64> {
        let k = (u.ln() / self.ln_keep).ceil();
        if k >= 1.0e18 {
            None
        } else {
            Some((k as u64).max(1))
        }
    }

    #[inline]
    fn word_z(&self, b: u64, r: u64, word: u64) -> f64 {
        if self.profile.word_sigma == 0.0 {
            0.0
        } else {
            self.profile.word_sigma * normal(hash_words(self.seed, tag::WORD, &[b, r, word]))
        }
    }

    /// ln threshold before clamping to one activation.
    fn ln_threshold(&self, rp: &RowParams, q: f64, word_z: f64) -> f64 {
        rp.base_ln + word_z + rp.offset(self.curve.eval(q.log10()))
    }

    /// Fresh state of one cell addressed by physical row.
    pub fn cell_at(&self, bank: BankId, phys_row: u32, bit: u32) -> CellFaultState {
        let b = self.key(bank);
        let r = phys_row as u64;
        let bit = bit as u64;
        let rp = self.row_params(bank, phys_row);
        let q = self.cell_q(b, r, bit);
        let lt = self.ln_threshold(&rp, q, self.word_z(b, r, bit / 64));
        CellFaultState {
            hc_threshold: lt.exp().max(1.0),
            retention_time_ms: self
                .cell_retention_steps(b, r, bit)
                .map_or(f64::INFINITY, |k| (k * RETENTION_STEP_MS) as f64),
            orientation: if self.cell_true(b, r, bit) {
                Orientation::TrueCell
            } else {
                Orientation::AntiCell
            },
            stored_bit: false,
            last_refresh_ns: 0.0,
            accumulated_exposure: 0.0,
        }
    }

    /// Fresh state of the cell at a logical address; `bit` indexes the row.
    pub fn cell_params(&self, addr: &Address, bit: u32) -> CellFaultState {
        let phys = self
            .mapping
            .to_physical(addr.row, self.geometry.rows_per_bank)
            .expect("row in range");
        self.cell_at(addr.bank_id(), phys, bit)
    }

    pub fn row_cells(&self, bank: BankId, phys_row: u32) -> RowCells {
        let b = self.key(bank);
        let r = phys_row as u64;
        let bits = self.geometry.row_size_bits as u64;
        let words = self.geometry.words_per_row();
        let mut q = Vec::with_capacity(bits as usize);
        let mut true_mask = vec![0u64; words];
        let mut retention = Vec::new();
        for bit in 0..bits {
            q.push(self.cell_q(b, r, bit));
            if self.cell_true(b, r, bit) {
                true_mask[(bit / 64) as usize] |= 1 << (bit % 64);
            }
            if let Some(k) = self.cell_retention_steps(b, r, bit) {
                if k <= RETENTION_CACHE_STEPS {
                    retention.push((k as u32, bit as u32));
                }
            }
        }
        retention.sort_unstable();
        let word_offset = if self.profile.word_sigma == 0.0 {
            Vec::new()
        } else {
            (0..words as u64).map(|w| self.word_z(b, r, w)).collect()
        };
        RowCells {
            params: self.row_params(bank, phys_row),
            q,
            true_mask,
            retention,
            word_offset,
        }
    }

    /// Flip bounds of one row without building its cells.
    pub fn row_summary(&self, bank: BankId, phys_row: u32) -> RowSummary {
        let b = self.key(bank);
        let r = phys_row as u64;
        let rp = self.row_params(bank, phys_row);
        let mut min_ln = f64::INFINITY;
        let mut u_max: f64 = 0.0;
        for w in 0..self.geometry.words_per_row() as u64 {
            let mut qmin = f64::INFINITY;
            for bit in w * 64..w * 64 + 64 {
                qmin = qmin.min(self.cell_q(b, r, bit));
                if self.profile.retention_geometric_p > 0.0 {
                    u_max = u_max.max(unit_open(hash_words(self.seed, tag::CELL_RETENTION, &[b, r, bit])));
                }
            }
            min_ln = min_ln.min(self.ln_threshold(&rp, qmin, self.word_z(b, r, w)));
        }
        RowSummary {
            // a hair low so rounding never hides a flip
            min_effective: (min_ln.exp() * (1.0 - 1e-9)).max(1.0),
            first_retention_step: if u_max > 0.0 { self.retention_steps(u_max).unwrap_or(u64::MAX) } else { u64::MAX },
        }
    }

    /// Exposure multiplier of a data pattern on this row.
    pub fn coupling(&self, bank: BankId, phys_row: u32, pattern: Option<DataPattern>) -> f64 {
        let c = &self.profile.pattern_coupling;
        let base = c.base(pattern);
        match pattern {
            Some(p) if c.row_sigma > 0.0 => {
                let h = hash_words(
                    self.seed,
                    tag::ROW_PATTERN,
                    &[self.key(bank), phys_row as u64, p.index() as u64],
                );
                base * (c.row_sigma * normal(h)).exp()
            }
            _ => base,
        }
    }

    /// Per-row jitter sigma: most rows are steady, a small fraction is noisy.
    pub fn jitter_sigma(&self, bank: BankId, phys_row: u32) -> f64 {
        let p = &self.profile;
        let key = [self.key(bank), phys_row as u64];
        let u = unit_open(hash_words(self.seed, tag::ROW_JITTER_CLASS, &key));
        if u < p.trial_jitter_heavy_fraction {
            let s = unit_open(hash_words(self.seed, tag::ROW_JITTER_SIGMA, &key));
            p.trial_jitter_heavy_sigma * (0.2 + 0.8 * s)
        } else {
            p.trial_jitter_sigma
        }
    }

    /// Threshold multiplier of one row in one trial.
    pub fn jitter(&self, bank: BankId, phys_row: u32, trial: u64) -> f64 {
        let sigma = self.jitter_sigma(bank, phys_row);
        if sigma == 0.0 {
            return 1.0;
        }
        let h = hash_words(
            self.seed,
            tag::ROW_JITTER_TRIAL,
            &[self.key(bank), phys_row as u64, trial],
        );
        (sigma * normal(h).clamp(-ROW_CLAMP, ROW_CLAMP)).exp()
    }

    /// Bits of one row that read back flipped.
    ///
    /// `effective` is the row's exposure already scaled by coupling and divided by
    /// the trial jitter; `elapsed_ps` is the time since the row was last restored.
    pub fn flip_mask(
        &self,
        bank: BankId,
        phys_row: u32,
        cells: &RowCells,
        data: &[u64],
        effective: f64,
        elapsed_ps: u64,
    ) -> Vec<u64> {
        let words = data.len();
        let mut flips = vec![0u64; words];
        self.disturb_mask(cells, effective, &mut flips);
        if elapsed_ps > 0 && self.profile.retention_geometric_p > 0.0 {
            let kmax = (elapsed_ps - 1) / RETENTION_STEP_PS;
            if kmax >= 1 {
                if kmax <= RETENTION_CACHE_STEPS {
                    for &(k, bit) in &cells.retention {
                        if k as u64 > kmax {
                            break;
                        }
                        flips[(bit / 64) as usize] |= 1 << (bit % 64);
                    }
                } else {
                    let b = self.key(bank);
                    let r = phys_row as u64;
                    for bit in 0..(words as u64 * 64) {
                        if self.cell_retention_steps(b, r, bit).is_some_and(|k| k <= kmax) {
                            flips[(bit / 64) as usize] |= 1 << (bit % 64);
                        }
                    }
                }
            }
        }
        for (w, f) in flips.iter_mut().enumerate() {
            let charged = !(data[w] ^ cells.true_mask[w]);
            *f &= charged;
        }
        flips
    }

    /// Largest cell quantile that flips at `effective` exposure in a row (or a
    /// word, through `word_z`). `None` when no cell flips; infinity when all do.
    #[inline]
    pub fn quantile_cut(&self, rp: &RowParams, effective: f64, word_z: f64) -> Option<f64> {
        if !(effective >= 1.0) {
            return None;
        }
        let level = effective.ln() - rp.base_ln;
        if level == f64::NEG_INFINITY || level.is_nan() {
            return None;
        }
        let y = rp.curve_level(level - word_z);
        if self.curve.is_flat() {
            // flat curve: every cell shares the same offset
            (self.curve.eval(0.0) <= y).then_some(f64::INFINITY)
        } else {
            Some(10f64.powf(self.curve.inverse(y)))
        }
    }

    fn disturb_mask(&self, cells: &RowCells, effective: f64, flips: &mut [u64]) {
        let rp = &cells.params;
        let uniform_cut = if cells.word_offset.is_empty() {
            match self.quantile_cut(rp, effective, 0.0) {
                None => return,
                c => Some(c),
            }
        } else {
            None
        };
        for (w, f) in flips.iter_mut().enumerate() {
            let cut = match uniform_cut {
                Some(c) => c,
                None => self.quantile_cut(rp, effective, cells.word_offset[w]),
            };
            let Some(cut) = cut else { continue };
            let qs = &cells.q[w * 64..w * 64 + 64];
            let mut m = 0u64;
            for (i, &q) in qs.iter().enumerate() {
                if q <= cut {
                    m |= 1 << i;
                }
            }
            *f |= m;
        }
    }
}

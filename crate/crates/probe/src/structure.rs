//! Row adjacency and subarray boundaries from single-sided hammering: the rows
//! that flip when a row is hammered are its physical neighbours, and a row at
//! a subarray edge disturbs only one of them.

use hbmlab_core::profile::byte_word;
use hbmlab_core::{BankId, ProbePort};

use crate::{require_refresh_disabled, ProbeError, PS_PER_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjacencyParams {
    /// Logical rows on each side of the hammered row that are checked.
    pub window: u32,
    /// Single-sided activations per row; `None` uses as many as fit in
    /// `retention_floor_ms` so that no retention failure can mix in.
    pub hammers: Option<u64>,
    pub retention_floor_ms: u64,
    pub victim_fill: u8,
    pub aggressor_fill: u8,
}

impl Default for AdjacencyParams {
    fn default() -> Self {
        Self {
            window: 4,
            hammers: None,
            retention_floor_ms: 64,
            victim_fill: 0x55,
            aggressor_fill: 0xAA,
        }
    }
}

/// Probed logical rows with the logical rows that flipped when each was
/// hammered; `None` marks a row that disturbed nothing at the budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    pub bank: BankId,
    pub entries: Vec<(u32, Option<Vec<u32>>)>,
}

impl Adjacency {
    pub fn neighbors(&self, row: u32) -> Option<&[u32]> {
        self.entries
            .iter()
            .find(|(r, _)| *r == row)
            .and_then(|(_, n)| n.as_deref())
    }

    pub fn unresolved(&self) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|(_, n)| n.is_none())
            .map(|&(r, _)| r)
            .collect()
    }
}

fn hammer_budget<P: ProbePort>(port: &P, params: &AdjacencyParams) -> u64 {
    params.hammers.unwrap_or_else(|| {
        let period = port.timing().act_period_ps(port.timing().ras_ps());
        (params.retention_floor_ms * PS_PER_MS * 9 / 10 / period).max(1)
    })
}

pub fn reverse_map<P: ProbePort>(
    port: &mut P,
    bank: BankId,
    rows: &[u32],
    params: &AdjacencyParams,
) -> Result<Adjacency, ProbeError> {
    require_refresh_disabled(port)?;
    let n = port.geometry().rows_per_bank;
    let words = port.geometry().words_per_row();
    let victim = vec![byte_word(params.victim_fill); words];
    let aggressor = vec![byte_word(params.aggressor_fill); words];
    let hammers = hammer_budget(port, params);
    let t_ras = port.timing().ras_ps();
    let mut entries = Vec::with_capacity(rows.len());
    for &row in rows {
        let lo = row.saturating_sub(params.window);
        let hi = (row + params.window).min(n - 1);
        for r in lo..=hi {
            port.write_row(bank, r, if r == row { &aggressor } else { &victim })?;
        }
        port.hammer(bank, &[row], hammers, t_ras)?;
        let mut flipped = Vec::new();
        for r in (lo..=hi).filter(|&r| r != row) {
            if port.read_row(bank, r)? != victim {
                flipped.push(r);
            }
        }
        entries.push((row, (!flipped.is_empty()).then_some(flipped)));
    }
    Ok(Adjacency { bank, entries })
}

/// Rows (ascending) whose hammering disturbs exactly one neighbour. Every
/// subarray contributes its first and last row.
pub fn find_subarray_bounds<P: ProbePort>(
    port: &mut P,
    bank: BankId,
    params: &AdjacencyParams,
) -> Result<Vec<u32>, ProbeError> {
    let rows: Vec<u32> = (0..port.geometry().rows_per_bank).collect();
    let adj = reverse_map(port, bank, &rows, params)?;
    let mut bounds: Vec<u32> = adj
        .entries
        .iter()
        .filter(|(_, n)| n.as_ref().is_some_and(|n| n.len() == 1))
        .map(|&(r, _)| r)
        .collect();
    bounds.sort_unstable();
    Ok(bounds)
}

/// Subarray sizes from a boundary list that pairs first and last rows.
pub fn sizes_from_bounds(bounds: &[u32]) -> Option<Vec<u32>> {
    if bounds.len() % 2 != 0 {
        return None;
    }
    bounds
        .chunks(2)
        .map(|p| (p[1] >= p[0]).then(|| p[1] - p[0] + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_pair_up_bounds() {
        assert_eq!(sizes_from_bounds(&[0, 831, 832, 1599]), Some(vec![832, 768]));
        assert_eq!(sizes_from_bounds(&[0, 5, 6]), None);
    }
}

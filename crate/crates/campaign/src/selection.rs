//! Which rows an experiment tests.

use serde::{Deserialize, Serialize};

use hbmlab_core::{BankId, Geometry};

use crate::CampaignError;

/// Rows kept clear at either end of a bank so every victim has eight neighbors
/// on each side for data-pattern initialization.
pub const EDGE_MARGIN: u32 = 8;

/// Rows per bank split into three blocks at the start, middle and end of the bank,
/// repeated over every listed channel, pseudo channel and bank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowSelection {
    pub channels: Vec<u32>,
    pub pseudo_channels: Vec<u32>,
    pub banks: Vec<u32>,
    pub rows_per_bank: u32,
}

impl RowSelection {
    pub fn new(channels: Vec<u32>, pseudo_channels: Vec<u32>, banks: Vec<u32>, rows_per_bank: u32) -> Self {
        Self {
            channels,
            pseudo_channels,
            banks,
            rows_per_bank,
        }
    }

    pub fn validate(&self, g: &Geometry) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Spec(m));
        if self.channels.is_empty() || self.pseudo_channels.is_empty() || self.banks.is_empty() {
            return bad("row selection lists must be non-empty".into());
        }
        if let Some(c) = self.channels.iter().find(|&&c| c >= g.channels) {
            return bad(format!("channel {c} outside geometry"));
        }
        if let Some(p) = self.pseudo_channels.iter().find(|&&p| p >= g.pseudo_channels_per_channel) {
            return bad(format!("pseudo channel {p} outside geometry"));
        }
        if let Some(b) = self.banks.iter().find(|&&b| b >= g.banks_per_pseudo_channel) {
            return bad(format!("bank {b} outside geometry"));
        }
        let usable = g.rows_per_bank.saturating_sub(2 * EDGE_MARGIN);
        if self.rows_per_bank == 0 || self.rows_per_bank > usable {
            return bad(format!(
                "rows_per_bank must be in 1..={usable} for {} rows per bank",
                g.rows_per_bank
            ));
        }
        Ok(())
    }

    /// Row indices inside one bank: first, middle and last blocks.
    pub fn bank_rows(&self, rows_in_bank: u32) -> Vec<u32> {
        let n = self.rows_per_bank;
        let sizes = [n.div_ceil(3), (n + 1) / 3, n / 3];
        let lo = EDGE_MARGIN;
        let hi = rows_in_bank - EDGE_MARGIN;
        // The bank midpoint is a subarray boundary in the shipped layouts; rows next
        // to it see a single aggressor, so the middle block starts just past it.
        let mid = (rows_in_bank / 2 + EDGE_MARGIN)
            .min(hi.saturating_sub(sizes[1] + sizes[2]))
            .max(lo + sizes[0]);
        let starts = [lo, mid, (hi - sizes[2]).max(mid + sizes[1])];
        let mut rows: Vec<u32> = starts
            .iter()
            .zip(sizes)
            .flat_map(|(&s, len)| s..s + len)
            .filter(|&r| r < hi)
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    /// Every selected (bank, row), in canonical order.
    pub fn rows(&self, g: &Geometry) -> Vec<(BankId, u32)> {
        let per_bank = self.bank_rows(g.rows_per_bank);
        let mut out = Vec::new();
        for &c in &self.channels {
            for &p in &self.pseudo_channels {
                for &b in &self.banks {
                    out.extend(per_bank.iter().map(|&r| (BankId::new(c, p, b), r)));
                }
            }
        }
        out
    }

    pub fn len(&self, g: &Geometry) -> usize {
        self.rows(g).len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows_per_bank == 0
    }
}

fn all(n: u32) -> Vec<u32> {
    (0..n).collect()
}

/// Table II row counts, or the desk-scale shrink of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

/// RowHammer BER: one bank of one pseudo channel in every channel.
pub fn ber_rows(g: &Geometry, scale: Scale) -> RowSelection {
    let n = match scale {
        Scale::Desk => 48,
        Scale::Paper => g.rows_per_bank - 2 * EDGE_MARGIN,
    };
    RowSelection::new(all(g.channels), vec![0], vec![0], n)
}

/// RowHammer HCfirst: the same desk rows as BER; three banks of two pseudo
/// channels per channel at paper scale.
pub fn hcfirst_rows(g: &Geometry, scale: Scale) -> RowSelection {
    match scale {
        Scale::Desk => ber_rows(g, scale),
        Scale::Paper => RowSelection::new(
            all(g.channels),
            all(g.pseudo_channels_per_channel.min(2)),
            all(g.banks_per_pseudo_channel.min(3)),
            3072.min(g.rows_per_bank - 2 * EDGE_MARGIN),
        ),
    }
}

/// HCnth: 72 rows in every channel at desk scale.
pub fn hcnth_rows(g: &Geometry, scale: Scale) -> RowSelection {
    match scale {
        Scale::Desk => RowSelection::new(all(g.channels), vec![0], vec![0], 72),
        Scale::Paper => hcfirst_rows(g, scale),
    }
}

/// RowPress: three channels, one bank.
pub fn rowpress_rows(g: &Geometry, scale: Scale) -> RowSelection {
    let n = match scale {
        Scale::Desk => 48,
        Scale::Paper => 384,
    };
    RowSelection::new(all(g.channels.min(3)), vec![0], vec![0], n)
}

/// Repeated-HCfirst runs: channel 0, both pseudo channels.
pub fn jitter_rows(g: &Geometry, scale: Scale) -> RowSelection {
    let n = match scale {
        Scale::Desk => 128,
        Scale::Paper => 384,
    };
    RowSelection::new(vec![0], all(g.pseudo_channels_per_channel.min(2)), vec![0], n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_first_middle_last() {
        let s = RowSelection::new(vec![0], vec![0], vec![0], 48);
        let rows = s.bank_rows(16384);
        assert_eq!(rows.len(), 48);
        assert_eq!(rows[0], EDGE_MARGIN);
        assert_eq!(rows[16], 8192 + EDGE_MARGIN);
        assert_eq!(*rows.last().unwrap(), 16384 - EDGE_MARGIN - 1);
    }

    #[test]
    fn desk_counts() {
        let g = Geometry::default();
        assert_eq!(ber_rows(&g, Scale::Desk).len(&g), 384);
        assert_eq!(hcfirst_rows(&g, Scale::Desk).len(&g), 384);
        assert_eq!(hcnth_rows(&g, Scale::Desk).len(&g), 576);
        assert_eq!(rowpress_rows(&g, Scale::Desk).len(&g), 144);
        assert_eq!(jitter_rows(&g, Scale::Desk).len(&g), 256);
        assert_eq!(hcfirst_rows(&g, Scale::Paper).len(&g), 3072 * 3 * 2 * 8);
        assert_eq!(ber_rows(&g, Scale::Paper).len(&g), (16384 - 16) * 8);
    }

    #[test]
    fn small_banks_do_not_overlap_blocks() {
        let s = RowSelection::new(vec![0], vec![0], vec![0], 40);
        let rows = s.bank_rows(64);
        assert_eq!(rows.len(), 40);
        assert!(rows.iter().all(|&r| (8..56).contains(&r)));
        let g = Geometry { rows_per_bank: 64, ..Geometry::default() };
        assert!(RowSelection::new(vec![0], vec![0], vec![0], 49).validate(&g).is_err());
        assert!(RowSelection::new(vec![9], vec![0], vec![0], 4).validate(&g).is_err());
    }
}

//! HBM2 device shape, addressing, logical-to-physical row mapping and subarray layout.

use serde::{Deserialize, Serialize};

use crate::error::{AddressError, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub channels: u32,
    pub pseudo_channels_per_channel: u32,
    pub banks_per_pseudo_channel: u32,
    pub rows_per_bank: u32,
    pub row_size_bits: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            channels: 8,
            pseudo_channels_per_channel: 2,
            banks_per_pseudo_channel: 16,
            rows_per_bank: 16384,
            row_size_bits: 8192,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("channels", self.channels),
            ("pseudo_channels_per_channel", self.pseudo_channels_per_channel),
            ("banks_per_pseudo_channel", self.banks_per_pseudo_channel),
            ("rows_per_bank", self.rows_per_bank),
            ("row_size_bits", self.row_size_bits),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Geometry(format!("{name} must be >= 1")));
            }
        }
        if self.row_size_bits % 64 != 0 {
            return Err(ConfigError::Geometry(format!(
                "row_size_bits {} is not a multiple of 64",
                self.row_size_bits
            )));
        }
        Ok(())
    }

    pub fn words_per_row(&self) -> usize {
        (self.row_size_bits / 64) as usize
    }

    pub fn total_banks(&self) -> usize {
        (self.channels * self.pseudo_channels_per_channel * self.banks_per_pseudo_channel) as usize
    }

    pub fn total_rows(&self) -> u64 {
        self.total_banks() as u64 * self.rows_per_bank as u64
    }

    pub fn bank_index(&self, bank: BankId) -> usize {
        ((bank.channel * self.pseudo_channels_per_channel + bank.pseudo_channel)
            * self.banks_per_pseudo_channel
            + bank.bank) as usize
    }

    pub fn pch_index(&self, channel: u32, pseudo_channel: u32) -> usize {
        (channel * self.pseudo_channels_per_channel + pseudo_channel) as usize
    }

    pub fn check_bank(&self, bank: BankId) -> Result<(), AddressError> {
        check("channel", bank.channel, self.channels)?;
        check("pseudo_channel", bank.pseudo_channel, self.pseudo_channels_per_channel)?;
        check("bank", bank.bank, self.banks_per_pseudo_channel)
    }

    pub fn check_row(&self, row: u32) -> Result<(), AddressError> {
        check("row", row, self.rows_per_bank)
    }

    pub fn check_address(&self, addr: &Address) -> Result<(), AddressError> {
        self.check_bank(addr.bank_id())?;
        self.check_row(addr.row)?;
        check("column", addr.column, self.row_size_bits / 64)
    }

    pub fn banks(&self) -> impl Iterator<Item = BankId> + '_ {
        (0..self.channels).flat_map(move |c| {
            (0..self.pseudo_channels_per_channel).flat_map(move |p| {
                (0..self.banks_per_pseudo_channel).map(move |b| BankId::new(c, p, b))
            })
        })
    }
}

fn check(field: &'static str, value: u32, limit: u32) -> Result<(), AddressError> {
    if value < limit {
        Ok(())
    } else {
        Err(AddressError::OutOfRange {
            field,
            value: value as u64,
            limit: limit as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BankId {
    pub channel: u32,
    pub pseudo_channel: u32,
    pub bank: u32,
}

impl BankId {
    pub const fn new(channel: u32, pseudo_channel: u32, bank: u32) -> Self {
        Self {
            channel,
            pseudo_channel,
            bank,
        }
    }
}

/// A word-granular address. `column` indexes 64-bit words within the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address {
    pub channel: u32,
    pub pseudo_channel: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
}

impl Address {
    pub const fn new(bank: BankId, row: u32) -> Self {
        Self {
            channel: bank.channel,
            pseudo_channel: bank.pseudo_channel,
            bank: bank.bank,
            row,
            column: 0,
        }
    }

    pub const fn bank_id(&self) -> BankId {
        BankId::new(self.channel, self.pseudo_channel, self.bank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum RowMapping {
    Identity,
    /// Within every aligned block of `2 * group` rows, the two halves trade places.
    /// `group = 1` swaps even/odd row pairs.
    GroupSwap { group: u32 },
}

impl Default for RowMapping {
    fn default() -> Self {
        RowMapping::Identity
    }
}

impl RowMapping {
    pub fn validate(&self, rows_per_bank: u32) -> Result<(), ConfigError> {
        match *self {
            RowMapping::Identity => Ok(()),
            RowMapping::GroupSwap { group } => {
                if group == 0 {
                    Err(ConfigError::Mapping("group_swap group must be >= 1".into()))
                } else if group as u64 * 2 > rows_per_bank as u64 {
                    Err(ConfigError::Mapping(format!(
                        "group_swap block {} exceeds bank rows {rows_per_bank}",
                        group as u64 * 2
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn apply(&self, row: u32, rows_per_bank: u32) -> u32 {
        match *self {
            RowMapping::Identity => row,
            RowMapping::GroupSwap { group } => {
                let block = 2 * group;
                let base = row - row % block;
                // a trailing partial block is left in place
                if base + block > rows_per_bank {
                    return row;
                }
                base + (row % block + group) % block
            }
        }
    }

    pub fn to_physical(&self, logical: u32, rows_per_bank: u32) -> Result<u32, AddressError> {
        check("row", logical, rows_per_bank)?;
        Ok(self.apply(logical, rows_per_bank))
    }

    /// Every shipped scheme is an involution, so the inverse is the map itself.
    pub fn to_logical(&self, physical: u32, rows_per_bank: u32) -> Result<u32, AddressError> {
        check("row", physical, rows_per_bank)?;
        Ok(self.apply(physical, rows_per_bank))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubarrayLayout {
    pub sizes: Vec<u32>,
    #[serde(skip)]
    starts: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubarrayPos {
    pub index: usize,
    pub offset: u32,
    pub size: u32,
}

pub const SUBARRAY_LARGE: u32 = 832;
pub const SUBARRAY_SMALL: u32 = 768;

impl SubarrayLayout {
    pub fn new(sizes: Vec<u32>) -> Self {
        let mut starts = Vec::with_capacity(sizes.len());
        let mut acc = 0u32;
        for &s in &sizes {
            starts.push(acc);
            acc = acc.saturating_add(s);
        }
        Self { sizes, starts }
    }

    /// Sixteen 832-row and four 768-row subarrays for a 16384-row bank, with the
    /// middle and last subarrays 832 rows. Other bank sizes get one subarray.
    pub fn default_for(rows_per_bank: u32) -> Self {
        if rows_per_bank == 16384 {
            let small_at = [2usize, 6, 13, 17];
            let sizes = (0..20)
                .map(|i| {
                    if small_at.contains(&i) {
                        SUBARRAY_SMALL
                    } else {
                        SUBARRAY_LARGE
                    }
                })
                .collect();
            Self::new(sizes)
        } else {
            Self::new(vec![rows_per_bank])
        }
    }

    /// Rebuild the prefix sums after deserialization.
    pub fn reindexed(self) -> Self {
        Self::new(self.sizes)
    }

    pub fn validate(&self, rows_per_bank: u32) -> Result<(), ConfigError> {
        if self.sizes.is_empty() {
            return Err(ConfigError::Layout("layout has no subarrays".into()));
        }
        if self.sizes.iter().any(|&s| s == 0) {
            return Err(ConfigError::Layout("subarray of size 0".into()));
        }
        let sum: u64 = self.sizes.iter().map(|&s| s as u64).sum();
        if sum != rows_per_bank as u64 {
            return Err(ConfigError::Layout(format!(
                "subarray sizes sum to {sum}, expected rows_per_bank = {rows_per_bank}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn starts(&self) -> &[u32] {
        &self.starts
    }

    pub fn subarray_of(&self, physical_row: u32) -> Result<SubarrayPos, AddressError> {
        let total = self.starts.last().zip(self.sizes.last()).map_or(0, |(s, n)| s + n);
        check("row", physical_row, total)?;
        let index = match self.starts.binary_search(&physical_row) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok(SubarrayPos {
            index,
            offset: physical_row - self.starts[index],
            size: self.sizes[index],
        })
    }

    /// Middle and last subarrays: the ones the fault profile attenuates.
    pub fn is_special(&self, index: usize) -> bool {
        let n = self.sizes.len();
        n > 1 && (index == n / 2 || index == n - 1)
    }

    pub fn same_subarray(&self, a: u32, b: u32) -> bool {
        match (self.subarray_of(a), self.subarray_of(b)) {
            (Ok(x), Ok(y)) => x.index == y.index,
            _ => false,
        }
    }

    /// First and last row of every subarray, sorted.
    pub fn boundary_rows(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, &s) in self.sizes.iter().enumerate() {
            out.push(self.starts[i]);
            if s > 1 {
                out.push(self.starts[i] + s - 1);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let g = Geometry::default();
        g.validate().unwrap();
        assert_eq!(g.total_banks(), 8 * 2 * 16);
        assert_eq!(g.total_rows(), 8 * 2 * 16 * 16384);
        assert_eq!(g.words_per_row(), 128);
    }

    #[test]
    fn row_width_must_be_word_multiple() {
        let g = Geometry {
            row_size_bits: 100,
            ..Geometry::default()
        };
        assert!(matches!(g.validate(), Err(ConfigError::Geometry(_))));
    }

    #[test]
    fn identity_mapping() {
        assert_eq!(RowMapping::Identity.to_physical(42, 16384).unwrap(), 42);
    }

    #[test]
    fn pair_swap_table_is_a_bijection_on_16_rows() {
        let m = RowMapping::GroupSwap { group: 1 };
        let table: Vec<u32> = (0..16).map(|r| m.to_physical(r, 16).unwrap()).collect();
        assert_eq!(table[6], 7);
        assert_eq!(table[7], 6);
        let mut seen = [false; 16];
        for &p in &table {
            assert!(!seen[p as usize]);
            seen[p as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn mappings_round_trip_full_bank() {
        for m in [
            RowMapping::Identity,
            RowMapping::GroupSwap { group: 1 },
            RowMapping::GroupSwap { group: 3 },
        ] {
            for r in 0..16384 {
                let p = m.to_physical(r, 16384).unwrap();
                assert_eq!(m.to_logical(p, 16384).unwrap(), r);
            }
        }
    }

    #[test]
    fn out_of_range_row_is_an_address_error() {
        assert!(RowMapping::Identity.to_physical(16384, 16384).is_err());
    }

    #[test]
    fn default_layout_matches_known_sizes() {
        let l = SubarrayLayout::default_for(16384);
        l.validate(16384).unwrap();
        let large = l.sizes.iter().filter(|&&s| s == SUBARRAY_LARGE).count() as u32;
        let small = l.sizes.iter().filter(|&&s| s == SUBARRAY_SMALL).count() as u32;
        assert_eq!(large * 832 + small * 768, 16384);
        assert_eq!(l.sizes[l.len() / 2], 832);
        assert_eq!(*l.sizes.last().unwrap(), 832);
        assert!(l.starts().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subarray_lookup() {
        let l = SubarrayLayout::default_for(16384);
        assert_eq!(
            l.subarray_of(0).unwrap(),
            SubarrayPos { index: 0, offset: 0, size: 832 }
        );
        assert_eq!(
            l.subarray_of(831).unwrap(),
            SubarrayPos { index: 0, offset: 831, size: 832 }
        );
        let last = l.subarray_of(16383).unwrap();
        assert_eq!(last.index, l.len() - 1);
        assert_eq!(last.offset, last.size - 1);
        assert!(l.subarray_of(16384).is_err());
    }

    #[test]
    fn layout_sum_mismatch_is_rejected() {
        let l = SubarrayLayout::new(vec![16383]);
        assert!(matches!(l.validate(16384), Err(ConfigError::Layout(_))));
    }
}

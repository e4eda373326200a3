//! Bitflip multiplicity per ECC word.

use crate::CampaignError;

/// Buckets 1..=7 and ">7".
pub const BUCKETS: usize = 8;

pub fn bucket_label(i: usize) -> String {
    if i + 1 < BUCKETS {
        (i + 1).to_string()
    } else {
        ">7".to_string()
    }
}

/// Counts non-overlapping `word_bits`-bit words by their number of flipped bits.
/// Words without flips are not counted.
pub fn word_histogram<'a>(
    maps: impl IntoIterator<Item = &'a [u64]>,
    row_size_bits: u32,
    word_bits: u32,
) -> Result<[u64; BUCKETS], CampaignError> {
    if word_bits == 0 || row_size_bits % word_bits != 0 {
        return Err(CampaignError::Spec(format!(
            "row size {row_size_bits} is not a multiple of word size {word_bits}"
        )));
    }
    let mut hist = [0u64; BUCKETS];
    for map in maps {
        if map.len() * 64 < row_size_bits as usize {
            return Err(CampaignError::Spec("flip map shorter than a row".into()));
        }
        let mut bit = 0u32;
        while bit < row_size_bits {
            let n = count_range(map, bit, word_bits);
            if n > 0 {
                hist[(n as usize).min(BUCKETS) - 1] += 1;
            }
            bit += word_bits;
        }
    }
    Ok(hist)
}

fn count_range(map: &[u64], start: u32, len: u32) -> u32 {
    if start % 64 == 0 && len == 64 {
        return map[(start / 64) as usize].count_ones();
    }
    (start..start + len)
        .filter(|&b| map[(b / 64) as usize] >> (b % 64) & 1 == 1)
        .count() as u32
}

//! Summary statistics over campaign records.

use std::collections::BTreeMap;

use hbmlab_core::BankId;

use crate::bypass::BypassRecord;
use crate::run::{BerRecord, HcRecord};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// HCₙ/HC₁ per row, for rows with every HC measured.
pub fn normalized_hcnth(records: &[HcRecord]) -> Vec<Vec<f64>> {
    records
        .iter()
        .filter(|r| r.hc.iter().all(Option::is_some))
        .map(|r| {
            let h1 = r.hc[0].unwrap() as f64;
            r.hc.iter().map(|h| h.unwrap() as f64 / h1).collect()
        })
        .collect()
}

/// max/min HCfirst over repetitions per row (rows with every repetition measured).
pub fn repetition_ratios(records: &[HcRecord]) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| {
            let firsts: Option<Vec<u64>> = r.per_rep.iter().map(|s| s.first().copied().flatten()).collect();
            let f = firsts?;
            let (lo, hi) = (f.iter().min()?, f.iter().max()?);
            Some(*hi as f64 / *lo as f64)
        })
        .collect()
}

/// Mean HCfirst per tAggON over rows that flip within the cap at every tAggON.
pub fn hcfirst_by_taggon(records: &[HcRecord]) -> Vec<(f64, f64)> {
    let mut rows: BTreeMap<(BankId, u32, usize), Vec<(f64, Option<u64>)>> = BTreeMap::new();
    for r in records {
        rows.entry((r.bank, r.row, r.pattern.index()))
            .or_default()
            .push((r.taggon_ns, r.first()));
    }
    let complete: Vec<&Vec<(f64, Option<u64>)>> = rows
        .values()
        .filter(|v| v.iter().all(|(_, h)| h.is_some()))
        .collect();
    let mut ts: Vec<f64> = records.iter().map(|r| r.taggon_ns).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let vals: Vec<f64> = complete
                .iter()
                .filter_map(|v| v.iter().find(|(tt, _)| *tt == t).and_then(|(_, h)| *h))
                .map(|h| h as f64)
                .collect();
            (t, mean(&vals))
        })
        .collect()
}

/// Mean BER per tAggON.
pub fn ber_by_taggon(records: &[BerRecord]) -> Vec<(f64, f64)> {
    let mut by: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in records {
        by.entry(r.taggon_ns.to_bits()).or_insert((r.taggon_ns, Vec::new())).1.push(r.ber);
    }
    let mut out: Vec<(f64, f64)> = by.into_values().map(|(t, v)| (t, mean(&v))).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Mean BER per (dummies, agg_hc) cell.
pub fn bypass_means(records: &[BypassRecord]) -> BTreeMap<(u32, u32), f64> {
    let mut by: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry((r.dummies, r.agg_hc)).or_default().push(r.ber);
    }
    by.into_iter().map(|(k, v)| (k, mean(&v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_signs() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}

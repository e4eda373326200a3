//! CSV output. Floats carry nine significant digits; headers are always written.

use std::fmt::Write;

use crate::bypass::BypassRecord;
use crate::ecc::{bucket_label, BUCKETS};
use crate::run::{BerRecord, HcRecord};

/// `%.9g`-style formatting.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(&s)
    } else {
        let s = format!("{x:.8e}");
        let (m, e) = s.split_once('e').expect("exponent");
        format!("{}e{}", trim_zeros(m), e)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt(v: Option<u64>) -> String {
    v.map(|h| h.to_string()).unwrap_or_default()
}

/// Run-level columns shared by every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLabel {
    pub seed: u64,
    pub chip: u32,
}

pub const BER_HEADER: &str = "seed,chip,channel,pch,bank,row,pattern,hc,taggon_ns,bitflips,ber";

pub fn ber_csv(label: RunLabel, records: &[BerRecord]) -> String {
    let mut s = String::from(BER_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            label.seed,
            label.chip,
            r.bank.channel,
            r.bank.pseudo_channel,
            r.bank.bank,
            r.row,
            r.pattern,
            r.hc,
            fmt_float(r.taggon_ns),
            fmt_float(r.bitflips),
            fmt_float(r.ber)
        );
    }
    s
}

/// Per-repetition counts behind `ber.csv`.
pub fn ber_raw_csv(label: RunLabel, records: &[BerRecord]) -> String {
    let mut s = String::from("seed,chip,channel,pch,bank,row,pattern,hc,taggon_ns,rep,bitflips\n");
    for r in records {
        for (rep, n) in r.per_rep.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                label.seed,
                label.chip,
                r.bank.channel,
                r.bank.pseudo_channel,
                r.bank.bank,
                r.row,
                r.pattern,
                r.hc,
                fmt_float(r.taggon_ns),
                rep,
                n
            );
        }
    }
    s
}

const HC_COLUMNS: usize = 10;

fn hc_header(prefix: &str) -> String {
    let cols: Vec<String> = (1..=HC_COLUMNS).map(|i| format!("hc{i}")).collect();
    format!("{prefix},{}\n", cols.join(","))
}

fn hc_cells(hc: &[Option<u64>]) -> String {
    (0..HC_COLUMNS)
        .map(|i| opt(hc.get(i).copied().flatten()))
        .collect::<Vec<_>>()
        .join(",")
}

/// HC₁..HC₁₀ per row; empty cells are above the cap or beyond the measured count.
pub fn hc_csv(label: RunLabel, records: &[HcRecord]) -> String {
    let mut s = hc_header("seed,chip,channel,pch,bank,row,pattern,taggon_ns");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            label.seed,
            label.chip,
            r.bank.channel,
            r.bank.pseudo_channel,
            r.bank.bank,
            r.row,
            r.pattern,
            fmt_float(r.taggon_ns),
            hc_cells(&r.hc)
        );
    }
    s
}

pub fn hc_raw_csv(label: RunLabel, records: &[HcRecord]) -> String {
    let mut s = hc_header("seed,chip,channel,pch,bank,row,pattern,taggon_ns,rep");
    for r in records {
        for (rep, seq) in r.per_rep.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                label.seed,
                label.chip,
                r.bank.channel,
                r.bank.pseudo_channel,
                r.bank.bank,
                r.row,
                r.pattern,
                fmt_float(r.taggon_ns),
                rep,
                hc_cells(seq)
            );
        }
    }
    s
}

pub fn bypass_csv(records: &[BypassRecord]) -> String {
    let mut s = String::from("dummies,agg_hc,row,ber\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.dummies, r.agg_hc, r.row, fmt_float(r.ber));
    }
    s
}

pub fn ecc_csv(hist: &[u64; BUCKETS]) -> String {
    let mut s = String::from("bucket,count\n");
    for (i, n) in hist.iter().enumerate() {
        let _ = writeln!(s, "{},{}", bucket_label(i), n);
    }
    s
}

//! Statistical description of the fault population and the data patterns used to probe it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DeviceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataPattern {
    Rowstripe0,
    Rowstripe1,
    Checkered0,
    Checkered1,
}

impl DataPattern {
    /// Canonical order, also used as the final WCDP tiebreak.
    pub const ALL: [DataPattern; 4] = [
        DataPattern::Rowstripe0,
        DataPattern::Rowstripe1,
        DataPattern::Checkered0,
        DataPattern::Checkered1,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DataPattern::Rowstripe0 => "Rowstripe0",
            DataPattern::Rowstripe1 => "Rowstripe1",
            DataPattern::Checkered0 => "Checkered0",
            DataPattern::Checkered1 => "Checkered1",
        }
    }

    pub fn victim_byte(self) -> u8 {
        match self {
            DataPattern::Rowstripe0 => 0x00,
            DataPattern::Rowstripe1 => 0xFF,
            DataPattern::Checkered0 => 0x55,
            DataPattern::Checkered1 => 0xAA,
        }
    }

    pub fn aggressor_byte(self) -> u8 {
        !self.victim_byte()
    }

    /// Rows V±[2:8] hold the victim byte.
    pub fn far_byte(self) -> u8 {
        self.victim_byte()
    }

    pub fn from_victim_byte(b: u8) -> Option<DataPattern> {
        DataPattern::ALL.into_iter().find(|p| p.victim_byte() == b)
    }

    pub fn is_checkered(self) -> bool {
        matches!(self, DataPattern::Checkered0 | DataPattern::Checkered1)
    }
}

impl fmt::Display for DataPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataPattern::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown data pattern `{s}`"))
    }
}

pub fn byte_word(b: u8) -> u64 {
    u64::from_ne_bytes([b; 8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternCoupling {
    pub rowstripe0: f64,
    pub rowstripe1: f64,
    pub checkered0: f64,
    pub checkered1: f64,
    /// Applied when the victim and its neighbours do not form one of the four patterns.
    pub other: f64,
    /// Per-row lognormal spread of each pattern's coupling.
    pub row_sigma: f64,
}

impl Default for PatternCoupling {
    fn default() -> Self {
        Self {
            rowstripe0: 0.9289,
            rowstripe1: 0.9689,
            checkered0: 1.0,
            checkered1: 1.0,
            other: 0.9,
            row_sigma: 0.05,
        }
    }
}

impl PatternCoupling {
    pub fn base(&self, pattern: Option<DataPattern>) -> f64 {
        match pattern {
            Some(DataPattern::Rowstripe0) => self.rowstripe0,
            Some(DataPattern::Rowstripe1) => self.rowstripe1,
            Some(DataPattern::Checkered0) => self.checkered0,
            Some(DataPattern::Checkered1) => self.checkered1,
            None => self.other,
        }
    }

    pub fn uniform() -> Self {
        Self {
            rowstripe0: 1.0,
            rowstripe1: 1.0,
            checkered0: 1.0,
            checkered1: 1.0,
            other: 1.0,
            row_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultProfile {
    /// ln of the threshold (in effective activations) of a reference cell in a median row.
    pub hc_log_median: f64,
    /// Row-to-row spread of ln threshold.
    pub hc_log_sigma: f64,
    /// Spread of the per-row steepness of the weak tail (below the reference quantile).
    pub row_shape_sigma: f64,
    /// Spread of the per-row steepness of the bulk (above the reference quantile).
    pub row_bulk_sigma: f64,
    /// How strongly a row's threshold factor steepens its cell distribution:
    /// rows that are strong overall have their weakest cells closer to the rest.
    pub row_shape_coupling: f64,
    /// Within-row quantile curve: (log10 of cell quantile, ln threshold offset) knots,
    /// strictly increasing, passing through offset 0 at the reference quantile.
    pub tail_knots: Vec<[f64; 2]>,
    pub channel_scale: Vec<f64>,
    pub bank_sigma: f64,
    /// Threshold gain at the two ends of a subarray relative to its middle.
    pub subarray_edge_gain: f64,
    /// Extra threshold factor for the middle and last subarrays of a bank.
    pub special_subarray_gain: f64,
    pub pattern_coupling: PatternCoupling,
    /// Spread of a per-64-bit-word threshold offset; clusters flips into words.
    pub word_sigma: f64,
    /// Probability that a cell is a true cell (charged when storing 1).
    pub orientation_bias: f64,
    /// (tAggON in ns, exposure multiplier) pairs.
    pub taggon_anchors: Vec<[f64; 2]>,
    /// Exposure weight for aggressor distance 1 and 2.
    pub blast_weights: [f64; 2],
    pub trial_jitter_sigma: f64,
    pub trial_jitter_heavy_sigma: f64,
    pub trial_jitter_heavy_fraction: f64,
    /// Per-64 ms step failure probability of a cell's retention.
    pub retention_geometric_p: f64,
}

/// ln of the default median threshold; see `calibrate` for how it was obtained.
pub const DEFAULT_HC_LOG_MEDIAN: f64 = 12.8695;

impl Default for FaultProfile {
    fn default() -> Self {
        Self {
            hc_log_median: DEFAULT_HC_LOG_MEDIAN,
            hc_log_sigma: 0.1234,
            row_shape_sigma: 0.25,
            row_shape_coupling: 0.37,
            row_bulk_sigma: 0.35,
            tail_knots: vec![
                [-9.0, -1.0659],
                [-4.5, -1.0527],
                [-1.9463, 0.0],
                [-1.0, 1.2006],
                [-0.2076, 5.0449],
                [0.0, 5.9457],
            ],
            channel_scale: vec![0.9721, 1.0, 1.0111, 1.0279, 1.0279, 1.0111, 1.0, 0.9721],
            bank_sigma: 0.01,
            subarray_edge_gain: 0.0999,
            special_subarray_gain: 1.0999,
            pattern_coupling: PatternCoupling::default(),
            word_sigma: 0.0,
            orientation_bias: 0.55,
            taggon_anchors: default_taggon_anchors(),
            blast_weights: [1.0, 0.0],
            trial_jitter_sigma: 0.012,
            trial_jitter_heavy_sigma: 0.15,
            trial_jitter_heavy_fraction: 0.06,
            retention_geometric_p: 1.63e-5,
        }
    }
}

/// Mean HCfirst at tRAS divided by the mean at tREFI, 9·tREFI, and 16 ms
/// (one activation per aggressor in half a refresh window).
pub fn default_taggon_anchors() -> Vec<[f64; 2]> {
    vec![
        [29.0, 1.0],
        [3900.0, 83689.0 / 1519.0],
        [35100.0, 83689.0 / 376.0],
        [16.0e6, 16.0e6 / 29.0],
    ]
}

impl FaultProfile {
    /// Every cell threshold equals `threshold`; no retention failures, no jitter.
    pub fn degenerate(threshold: f64) -> Self {
        Self {
            hc_log_median: threshold.ln(),
            hc_log_sigma: 0.0,
            row_shape_sigma: 0.0,
            row_shape_coupling: 0.0,
            row_bulk_sigma: 0.0,
            tail_knots: vec![[-9.0, 0.0], [0.0, 0.0]],
            channel_scale: vec![1.0],
            bank_sigma: 0.0,
            subarray_edge_gain: 0.0,
            special_subarray_gain: 1.0,
            pattern_coupling: PatternCoupling::uniform(),
            word_sigma: 0.0,
            orientation_bias: 0.5,
            taggon_anchors: default_taggon_anchors(),
            blast_weights: [1.0, 0.0],
            trial_jitter_sigma: 0.0,
            trial_jitter_heavy_sigma: 0.0,
            trial_jitter_heavy_fraction: 0.0,
            retention_geometric_p: 0.0,
        }
    }

    /// No read-disturbance bitflips at any exposure.
    pub fn no_disturbance() -> Self {
        Self {
            hc_log_median: f64::INFINITY,
            ..Self::default()
        }
    }

    /// Variations mimicking the spread between six chips of one part number.
    /// Chip 4 additionally clusters weak cells into words.
    pub fn chip_preset(chip: u32) -> Option<Self> {
        let (median_shift, word_sigma) = match chip {
            0 => (0.20, 0.0),
            1 => (0.12, 0.0),
            2 => (0.0, 0.0),
            3 => (0.15, 0.0),
            4 => (0.05, 0.9),
            5 => (0.10, 0.0),
            _ => return None,
        };
        let mut p = Self::default();
        p.hc_log_median += median_shift;
        p.word_sigma = word_sigma;
        Some(p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Profile(m));
        if self.hc_log_median.is_nan() {
            return err("hc_log_median is NaN".into());
        }
        for (name, v) in [
            ("hc_log_sigma", self.hc_log_sigma),
            ("row_shape_sigma", self.row_shape_sigma),
            ("row_shape_coupling", self.row_shape_coupling),
            ("row_bulk_sigma", self.row_bulk_sigma),
            ("bank_sigma", self.bank_sigma),
            ("subarray_edge_gain", self.subarray_edge_gain),
            ("word_sigma", self.word_sigma),
            ("trial_jitter_sigma", self.trial_jitter_sigma),
            ("trial_jitter_heavy_sigma", self.trial_jitter_heavy_sigma),
            ("pattern_coupling.row_sigma", self.pattern_coupling.row_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("orientation_bias", self.orientation_bias),
            ("trial_jitter_heavy_fraction", self.trial_jitter_heavy_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.retention_geometric_p) {
            return err(format!(
                "retention_geometric_p must lie in [0, 1), got {}",
                self.retention_geometric_p
            ));
        }
        if self.channel_scale.is_empty() || self.channel_scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return err("channel_scale must be a non-empty list of positive factors".into());
        }
        if !(self.special_subarray_gain > 0.0 && self.special_subarray_gain.is_finite()) {
            return err("special_subarray_gain must be > 0".into());
        }
        let c = &self.pattern_coupling;
        for v in [c.rowstripe0, c.rowstripe1, c.checkered0, c.checkered1, c.other] {
            if !(v > 0.0 && v.is_finite()) {
                return err("pattern coupling multipliers must be > 0".into());
            }
        }
        if self.blast_weights[0] != 1.0 {
            return err("blast_weights[0] (distance 1) must be 1".into());
        }
        if !(0.0..1.0).contains(&self.blast_weights[1]) {
            return err("blast_weights[1] (distance 2) must lie in [0, 1)".into());
        }
        self.validate_anchors()?;
        self.tail_curve()?;
        Ok(())
    }

    fn validate_anchors(&self) -> Result<(), ConfigError> {
        let a = &self.taggon_anchors;
        if a.is_empty() {
            return Err(ConfigError::Profile("taggon_anchors is empty".into()));
        }
        if a[0][1] != 1.0 {
            return Err(ConfigError::Profile(
                "first taggon anchor must have multiplier 1".into(),
            ));
        }
        if a.iter().any(|p| !(p[0] > 0.0 && p[1] > 0.0 && p[0].is_finite() && p[1].is_finite())) {
            return Err(ConfigError::Profile("taggon anchors must be positive".into()));
        }
        if a.windows(2).any(|w| !(w[1][0] > w[0][0] && w[1][1] > w[0][1])) {
            return Err(ConfigError::Profile(
                "taggon anchors must be strictly increasing in both coordinates".into(),
            ));
        }
        Ok(())
    }

    pub fn tail_curve(&self) -> Result<TailCurve, ConfigError> {
        TailCurve::new(&self.tail_knots)
    }

    /// Exposure multiplier for one activation held open `t_on_ns`.
    pub fn taggon_multiplier(&self, t_on_ns: f64) -> Result<f64, DeviceError> {
        taggon_multiplier(&self.taggon_anchors, t_on_ns)
    }

    pub fn channel_factor(&self, channel: u32) -> f64 {
        self.channel_scale[channel as usize % self.channel_scale.len()]
    }

    /// Threshold factor for a row at `offset` within a subarray of `size` rows.
    pub fn subarray_factor(&self, offset: u32, size: u32, special: bool) -> f64 {
        let x = if size > 1 {
            offset as f64 / (size - 1) as f64
        } else {
            0.5
        };
        let edge = 1.0 + self.subarray_edge_gain * (2.0 * x - 1.0).powi(2);
        if special {
            edge * self.special_subarray_gain
        } else {
            edge
        }
    }
}

/// Log-log piecewise-linear interpolation through `(t_ns, multiplier)` anchors,
/// flat beyond the last anchor.
pub fn taggon_multiplier(anchors: &[[f64; 2]], t_on_ns: f64) -> Result<f64, DeviceError> {
    let first = anchors
        .first()
        .ok_or_else(|| DeviceError::Parameter("no taggon anchors".into()))?;
    // tolerate representation error of the first anchor
    if !(t_on_ns >= first[0] * (1.0 - 1e-9)) {
        return Err(DeviceError::Parameter(format!(
            "tAggON {t_on_ns} ns is below tRAS ({} ns)",
            first[0]
        )));
    }
    if t_on_ns <= first[0] {
        return Ok(first[1]);
    }
    let last = anchors[anchors.len() - 1];
    if t_on_ns >= last[0] {
        return Ok(last[1]);
    }
    let i = anchors.partition_point(|a| a[0] <= t_on_ns);
    let (a, b) = (anchors[i - 1], anchors[i]);
    let f = (t_on_ns.ln() - a[0].ln()) / (b[0].ln() - a[0].ln());
    Ok((a[1].ln() + f * (b[1].ln() - a[1].ln())).exp())
}

/// Strictly increasing piecewise-linear map from log10 cell quantile to ln threshold
/// offset, linearly extrapolated past both end knots. A curve whose knots all share
/// one offset is flat: every cell gets that offset.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    flat: Option<f64>,
}

impl TailCurve {
    pub fn new(knots: &[[f64; 2]]) -> Result<Self, ConfigError> {
        if knots.len() < 2 {
            return Err(ConfigError::Profile("tail_knots needs at least two knots".into()));
        }
        if knots.iter().any(|k| !(k[0].is_finite() && k[1].is_finite())) {
            return Err(ConfigError::Profile("tail_knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(ConfigError::Profile(
                "tail_knots quantiles must be strictly increasing".into(),
            ));
        }
        let xs: Vec<f64> = knots.iter().map(|k| k[0]).collect();
        let ys: Vec<f64> = knots.iter().map(|k| k[1]).collect();
        if ys.iter().all(|&y| y == ys[0]) {
            return Ok(Self { flat: Some(ys[0]), xs, ys });
        }
        if ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::Profile(
                "tail_knots offsets must be strictly increasing (or all equal)".into(),
            ));
        }
        Ok(Self { xs, ys, flat: None })
    }

    pub fn is_flat(&self) -> bool {
        self.flat.is_some()
    }

    fn segment(v: &[f64], x: f64) -> usize {
        // index of the left knot of the segment used for x, clamped to the end segments
        v.partition_point(|&k| k <= x).clamp(1, v.len() - 1) - 1
    }

    /// ln threshold offset for a cell at log10 quantile `x`.
    pub fn eval(&self, x: f64) -> f64 {
        if let Some(y) = self.flat {
            return y;
        }
        let i = Self::segment(&self.xs, x);
        let s = (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + (x - self.xs[i]) * s
    }

    /// Inverse of `eval`. Panics on a flat curve.
    pub fn inverse(&self, y: f64) -> f64 {
        assert!(self.flat.is_none(), "flat tail curve has no inverse");
        let i = Self::segment(&self.ys, y);
        let s = (self.xs[i + 1] - self.xs[i]) / (self.ys[i + 1] - self.ys[i]);
        self.xs[i] + (y - self.ys[i]) * s
    }

    pub fn knots(&self) -> Vec<[f64; 2]> {
        self.xs.iter().zip(&self.ys).map(|(&x, &y)| [x, y]).collect()
    }
}

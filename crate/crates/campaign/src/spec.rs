//! Campaign specifications and their per-experiment defaults.

use serde::{Deserialize, Serialize};

use hbmlab_core::search::SearchParams;
use hbmlab_core::{DataPattern, Geometry, TimingParams};

use crate::selection::{self, RowSelection, Scale};
use crate::CampaignError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Ber,
    Hcfirst,
    Hcnth,
    RowpressBer,
    RowpressHcfirst,
    Bypass,
    EccHist,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ber => "ber",
            Experiment::Hcfirst => "hcfirst",
            Experiment::Hcnth => "hcnth",
            Experiment::RowpressBer => "rowpress_ber",
            Experiment::RowpressHcfirst => "rowpress_hcfirst",
            Experiment::Bypass => "bypass",
            Experiment::EccHist => "ecc_hist",
        }
    }
}

/// tAggON values of the BER-against-tAggON sweep, in ns.
pub const ROWPRESS_BER_TAGGON_NS: [f64; 6] = [29.0, 58.0, 87.0, 116.0, 3900.0, 35100.0];
/// tAggON values of the HCfirst-against-tAggON sweep, in ns.
pub const ROWPRESS_HC_TAGGON_NS: [f64; 4] = [29.0, 3900.0, 35100.0, 16.0e6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub experiment: Experiment,
    pub rows: RowSelection,
    pub patterns: Vec<DataPattern>,
    /// Hammer counts per aggressor (BER experiments).
    pub hammer_counts: Vec<u64>,
    pub taggon_ns: Vec<f64>,
    pub repetitions: u32,
    pub seed: u64,
    pub search: SearchParams,
    /// Number of flips tracked by HCnth searches (HCfirst uses 1).
    pub nth: u32,
    /// Subtract cells failing in a hammer-free pass of equal duration.
    pub retention_subtraction: bool,
    /// Cap each HCfirst search at the hammer count fitting in one refresh window.
    pub refresh_window_cap: bool,
    /// Keep raw flip maps (ECC word analysis).
    pub keep_flip_maps: bool,
    /// Chip label written to the CSV.
    pub chip: u32,
}

impl CampaignSpec {
    pub fn defaults(experiment: Experiment, g: &Geometry, scale: Scale, seed: u64) -> Self {
        let mut s = Self {
            experiment,
            rows: selection::ber_rows(g, scale),
            patterns: DataPattern::ALL.to_vec(),
            hammer_counts: vec![256 * 1024],
            taggon_ns: vec![29.0],
            repetitions: 5,
            seed,
            search: SearchParams::default(),
            nth: 1,
            retention_subtraction: false,
            refresh_window_cap: false,
            keep_flip_maps: false,
            chip: 0,
        };
        match experiment {
            Experiment::Ber | Experiment::Bypass => {}
            Experiment::EccHist => {
                s.patterns = vec![DataPattern::Checkered0];
                s.keep_flip_maps = true;
            }
            Experiment::Hcfirst => {
                s.rows = selection::hcfirst_rows(g, scale);
                // the 512K cap outlasts a refresh window
                s.retention_subtraction = true;
            }
            Experiment::Hcnth => {
                s.rows = selection::hcnth_rows(g, scale);
                s.patterns = vec![DataPattern::Rowstripe1];
                s.nth = 10;
                s.search.cap = 4 << 20;
                s.retention_subtraction = true;
            }
            Experiment::RowpressBer => {
                s.rows = selection::rowpress_rows(g, scale);
                s.patterns = vec![DataPattern::Checkered0];
                s.hammer_counts = vec![150_000];
                s.taggon_ns = ROWPRESS_BER_TAGGON_NS.to_vec();
                s.retention_subtraction = true;
            }
            Experiment::RowpressHcfirst => {
                s.rows = selection::rowpress_rows(g, scale);
                s.patterns = vec![DataPattern::Checkered0];
                s.taggon_ns = ROWPRESS_HC_TAGGON_NS.to_vec();
                s.search = SearchParams::exact(1 << 20);
                s.refresh_window_cap = true;
            }
        }
        s
    }

    /// Repeated HCfirst measurements of the jitter study.
    pub fn jitter(g: &Geometry, scale: Scale, seed: u64, repetitions: u32) -> Self {
        let mut s = Self::defaults(Experiment::Hcfirst, g, scale, seed);
        s.rows = selection::jitter_rows(g, scale);
        s.patterns = vec![DataPattern::Checkered0];
        s.repetitions = repetitions;
        s.search = SearchParams::exact(1 << 20);
        s
    }

    pub fn validate(&self, g: &Geometry, timing: &TimingParams) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Spec(m));
        self.rows.validate(g)?;
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.patterns.is_empty() {
            return bad("no data patterns".into());
        }
        if self.taggon_ns.is_empty() {
            return bad("no tAggON values".into());
        }
        if let Some(t) = self.taggon_ns.iter().find(|&&t| !(t >= timing.t_ras_ns) || !t.is_finite()) {
            return bad(format!("tAggON {t} ns is below tRAS"));
        }
        if self.nth == 0 {
            return bad("nth must be at least 1".into());
        }
        if self.search.start == 0 || self.search.cap < self.search.start {
            return bad("search needs 0 < start <= cap".into());
        }
        if self.retention_subtraction {
            return Ok(());
        }
        // hammering longer than a refresh window mixes in retention failures
        let refw = timing.refw_ps();
        for &t in &self.taggon_ns {
            let period = timing.act_period_ps(hbmlab_core::timing::ns_to_ps(t));
            let counts: Vec<u64> = match self.experiment {
                Experiment::Ber | Experiment::RowpressBer | Experiment::EccHist => self.hammer_counts.clone(),
                Experiment::Hcfirst | Experiment::Hcnth | Experiment::RowpressHcfirst => {
                    if self.refresh_window_cap {
                        continue;
                    }
                    vec![self.search.cap]
                }
                Experiment::Bypass => continue,
            };
            for h in counts {
                if 2u128 * h as u128 * period as u128 > refw as u128 {
                    return Err(CampaignError::RetentionWindow {
                        hammers: h,
                        taggon_ns: t,
                    });
                }
            }
        }
        Ok(())
    }
}

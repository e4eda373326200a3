//! Findings of the TRR probes, as a text report and as CSV.

use std::fmt;

/// One inferred quantity. `value` is `None` when the repetitions disagreed or
/// the probe could not observe it; `confidence` is the share of repetitions
/// that agreed with the most common outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Finding<T> {
    pub value: Option<T>,
    pub confidence: f64,
}

impl<T> Finding<T> {
    pub fn known(value: T, confidence: f64) -> Self {
        Self { value: Some(value), confidence }
    }

    pub fn undetermined(confidence: f64) -> Self {
        Self { value: None, confidence }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrrFindings {
    pub trr_detected: bool,
    pub period: Finding<u32>,
    pub victim_span: Finding<u32>,
    pub first_act_rule_detected: Finding<bool>,
    pub slot_capacity_estimate: Finding<u32>,
    pub half_count_rule_detected: Finding<bool>,
    /// `Some(true)`: strictly more than half the ACTs are needed.
    pub majority_strict: Finding<bool>,
}

impl TrrFindings {
    pub fn not_detected() -> Self {
        Self {
            trr_detected: false,
            period: Finding::undetermined(1.0),
            victim_span: Finding::undetermined(1.0),
            first_act_rule_detected: Finding::undetermined(1.0),
            slot_capacity_estimate: Finding::undetermined(1.0),
            half_count_rule_detected: Finding::undetermined(1.0),
            majority_strict: Finding::undetermined(1.0),
        }
    }

    /// (parameter, value, confidence) rows in report order.
    pub fn rows(&self) -> Vec<(&'static str, String, f64)> {
        fn show<T: ToString>(f: &Finding<T>) -> String {
            f.value.as_ref().map_or_else(|| "undetermined".to_string(), T::to_string)
        }
        let strict = match self.majority_strict.value {
            Some(true) => "strict".to_string(),
            Some(false) => "non-strict".to_string(),
            None => "undetermined".to_string(),
        };
        vec![
            ("trr_detected", self.trr_detected.to_string(), 1.0),
            ("period", show(&self.period), self.period.confidence),
            ("victim_span", show(&self.victim_span), self.victim_span.confidence),
            ("first_act_rule", show(&self.first_act_rule_detected), self.first_act_rule_detected.confidence),
            ("slot_capacity", show(&self.slot_capacity_estimate), self.slot_capacity_estimate.confidence),
            ("half_count_rule", show(&self.half_count_rule_detected), self.half_count_rule_detected.confidence),
            ("majority", strict, self.majority_strict.confidence),
        ]
    }
}

impl fmt::Display for TrrFindings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.trr_detected {
            return writeln!(f, "TRR findings: no TRR detected");
        }
        writeln!(f, "TRR findings")?;
        for (name, value, conf) in self.rows().into_iter().skip(1) {
            writeln!(f, "  {name:<16} {value:<13} (agreement {:.0}%)", conf * 100.0)?;
        }
        Ok(())
    }
}

pub fn findings_csv(findings: &TrrFindings) -> String {
    let mut out = String::from("parameter,value,confidence\n");
    for (name, value, conf) in findings.rows() {
        out.push_str(&format!("{name},{value},{conf:.3}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_lists_every_parameter() {
        let f = TrrFindings {
            trr_detected: true,
            period: Finding::known(17, 1.0),
            victim_span: Finding::known(1, 1.0),
            first_act_rule_detected: Finding::known(true, 1.0),
            slot_capacity_estimate: Finding::known(4, 1.0),
            half_count_rule_detected: Finding::known(true, 1.0),
            majority_strict: Finding::undetermined(0.6),
        };
        let csv = findings_csv(&f);
        assert!(csv.starts_with("parameter,value,confidence\n"));
        assert!(csv.contains("period,17,1.000\n"));
        assert!(csv.contains("majority,undetermined,0.600\n"));
        assert_eq!(csv.lines().count(), 8);
        assert!(f.to_string().contains("slot_capacity"));
    }
}

//! Screening performance against full simulation.

use serde::{Deserialize, Serialize};

/// One scenario simulated with screening off as ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub contingency: String,
    pub screened_unsecure: bool,
    pub cost_eur: f64,
    /// Risk contribution per € of cost (1/yr), e.g. `f_i / N_i`.
    pub weight: f64,
    pub simulation_s: f64,
    pub screening_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningAudit {
    pub cct_margin_s: f64,
    pub scenarios: usize,
    pub false_negatives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    /// Share of the true risk carried by false negatives (%).
    pub missed_risk_pct: f64,
    /// Wall time without screening over wall time with it.
    pub speedup: f64,
}

/// Positive = unsecure. Ground truth is unsecure when the cost is positive.
pub fn audit(records: &[AuditRecord], cct_margin_s: f64) -> ScreeningAudit {
    let (mut fn_, mut tp, mut fp, mut tn) = (0, 0, 0, 0);
    let (mut missed, mut total) = (0.0, 0.0);
    let (mut t_off, mut t_on) = (0.0, 0.0);
    for r in records {
        let truth = r.cost_eur > 0.0;
        match (r.screened_unsecure, truth) {
            (false, true) => fn_ += 1,
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
        }
        let risk = r.weight * r.cost_eur;
        total += risk;
        if truth && !r.screened_unsecure {
            missed += risk;
        }
        t_off += r.simulation_s;
        t_on += r.screening_s + if r.screened_unsecure { r.simulation_s } else { 0.0 };
    }
    ScreeningAudit {
        cct_margin_s,
        scenarios: records.len(),
        false_negatives: fn_,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        missed_risk_pct: if total > 0.0 { 100.0 * missed / total } else { 0.0 },
        speedup: if t_on > 0.0 { t_off / t_on } else { 1.0 },
    }
}

/// One row per margin, columns in the order of the audit fields.
pub fn audit_csv(audits: &[ScreeningAudit]) -> crate::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cct_margin_ms", "scenarios", "fn", "tp", "fp", "tn", "missed_risk_pct", "speedup"])?;
    for a in audits {
        w.write_record([
            format!("{:.0}", a.cct_margin_s * 1000.0),
            a.scenarios.to_string(),
            a.false_negatives.to_string(),
            a.true_positives.to_string(),
            a.false_positives.to_string(),
            a.true_negatives.to_string(),
            format!("{:.4}", a.missed_risk_pct),
            format!("{:.4}", a.speedup),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(unsecure: bool, cost: f64) -> AuditRecord {
        AuditRecord {
            contingency: "c".into(),
            screened_unsecure: unsecure,
            cost_eur: cost,
            weight: 1.0,
            simulation_s: 1.0,
            screening_s: 0.0,
        }
    }

    #[test]
    fn confusion_counts_and_missed_risk() {
        let rs = [rec(false, 10.0), rec(true, 30.0), rec(true, 0.0), rec(false, 0.0), rec(false, 0.0)];
        let a = audit(&rs, 0.05);
        assert_eq!(
            (a.false_negatives, a.true_positives, a.false_positives, a.true_negatives),
            (1, 1, 1, 2)
        );
        assert!((a.missed_risk_pct - 25.0).abs() < 1e-12);
        // five simulations without screening, two with it
        assert!((a.speedup - 2.5).abs() < 1e-12);
        let csv = audit_csv(&[a]).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "50,5,1,1,1,2,25.0000,2.5000");
    }
}

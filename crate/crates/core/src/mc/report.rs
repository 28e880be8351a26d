use serde::{Deserialize, Serialize};

use super::{RiskAccumulator, TotalRisk};

/// Per-contingency line of `risk.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContingencyRisk {
    pub id: String,
    /// `N-1` or `N-2`.
    pub class: String,
    pub frequency_per_year: f64,
    pub samples: u64,
    pub mean_cost_eur: f64,
    pub variance_eur2: f64,
    pub beta2_eur2: f64,
    /// `f_i · μ̃_i` (€/yr).
    pub risk_eur_per_year: f64,
    #[serde(with = "unbounded")]
    /// `null` in JSON when no sample was taken.
    pub se_eur_per_year: f64,
    #[serde(with = "unbounded")]
    pub se_variance_term: f64,
    #[serde(with = "unbounded")]
    pub se_coverage_term: f64,
    #[serde(with = "unbounded")]
    pub classical_se_eur_per_year: f64,
    pub variance_reduction_viable: bool,
    /// Stopped on the sample cap instead of the accuracy target.
    pub capped: bool,
    pub simulations: u64,
    pub screened_secure: u64,
    pub sensitive: u64,
    /// Consequence of every sample in sample order (€).
    pub costs: Vec<f64>,
}

impl ContingencyRisk {
    pub fn from_accumulator(acc: &RiskAccumulator, class: &str, costs: Vec<f64>) -> Self {
        let se = acc.se_bound();
        ContingencyRisk {
            id: acc.id.clone(),
            class: class.to_string(),
            frequency_per_year: acc.frequency,
            samples: acc.n,
            mean_cost_eur: acc.mean,
            variance_eur2: acc.variance(),
            beta2_eur2: acc.beta2(),
            risk_eur_per_year: acc.risk(),
            se_eur_per_year: se.total,
            se_variance_term: se.variance_term,
            se_coverage_term: se.coverage_term,
            classical_se_eur_per_year: acc.classical_se(),
            variance_reduction_viable: acc.viability(),
            costs,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub manifest_hash: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub max_consequence_eur: f64,
    pub total: TotalRisk,
    /// Contingency ids by decreasing risk, ties by id.
    pub ranking: Vec<String>,
    pub contingencies: Vec<ContingencyRisk>,
}

impl RiskReport {
    pub fn new(
        manifest_hash: String,
        epsilon: f64,
        alpha: f64,
        max_consequence_eur: f64,
        total: TotalRisk,
        contingencies: Vec<ContingencyRisk>,
    ) -> Self {
        let ranking = rank(&contingencies);
        RiskReport {
            manifest_hash,
            epsilon,
            alpha,
            max_consequence_eur,
            total,
            ranking,
            contingencies,
        }
    }

    pub fn get(&self, id: &str) -> Option<&ContingencyRisk> {
        self.contingencies.iter().find(|c| c.id == id)
    }
}

/// Bounds are infinite before the first sample; JSON has no infinity, so
/// they are written as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn rank(list: &[ContingencyRisk]) -> Vec<String> {
    let mut v: Vec<&ContingencyRisk> = list.iter().collect();
    v.sort_by(|a, b| b.risk_eur_per_year.total_cmp(&a.risk_eur_per_year).then_with(|| a.id.cmp(&b.id)));
    v.into_iter().map(|c| c.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsampled_contingency_round_trips() {
        let acc = RiskAccumulator::new("x", 0.5, 10.0, 0.95);
        let line = ContingencyRisk::from_accumulator(&acc, "N-1", vec![]);
        assert!(line.se_eur_per_year.is_infinite());
        let text = serde_json::to_string(&line).unwrap();
        assert!(text.contains("\"se_eur_per_year\":null"));
        let back: ContingencyRisk = serde_json::from_str(&text).unwrap();
        assert_eq!(back, line);
    }
}

//! Risk accumulators, standard-error bounds, stopping and scheduling.

mod engine;
mod report;

pub use engine::{run_engine, EngineConfig, EngineOutcome};
pub use report::{rank, ContingencyRisk, RiskReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.95;

/// Upper confidence bound on the probability of an event never observed in
/// `n` samples: `1 - (1 - α)^(1/n)`.
pub fn p_bound(n: u64, alpha: f64) -> f64 {
    assert!(n >= 1 && alpha > 0.0 && alpha < 1.0);
    -((1.0 - alpha).ln() / n as f64).exp_m1()
}

/// Factor of the coverage term; 3 at α = 0.95 (`n · p_bound → -ln(1 - α)`),
/// rescaled for other confidence levels.
pub fn coverage_factor(alpha: f64) -> f64 {
    3.0 * (1.0 - alpha).ln() / (0.05f64).ln()
}

/// Standard-error bound split into its two terms (€/yr).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeBound {
    pub total: f64,
    /// `f √(σ²/N)`
    pub variance_term: f64,
    /// `f √(3β²/N²)`
    pub coverage_term: f64,
}

/// Streaming moments of one contingency's consequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskAccumulator {
    pub id: String,
    /// Occurrences per year.
    pub frequency: f64,
    pub n: u64,
    pub mean: f64,
    /// Sum of squared deviations (Welford).
    m2: f64,
    pub max_consequence: f64,
    pub coverage_factor: f64,
}

impl RiskAccumulator {
    pub fn new(id: impl Into<String>, frequency: f64, max_consequence: f64, alpha: f64) -> Self {
        RiskAccumulator {
            id: id.into(),
            frequency,
            n: 0,
            mean: 0.0,
            m2: 0.0,
            max_consequence,
            coverage_factor: coverage_factor(alpha),
        }
    }

    pub fn update(&mut self, cost: f64) -> Result<()> {
        if !(cost >= 0.0 && cost <= self.max_consequence * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange(format!(
                "{}: cost {cost} outside [0, {}]",
                self.id, self.max_consequence
            )));
        }
        self.n += 1;
        let d = cost - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (cost - self.mean);
        Ok(())
    }

    /// Sample variance with n - 1 normalisation; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn beta2(&self) -> f64 {
        (self.max_consequence - self.mean).powi(2)
    }

    pub fn risk(&self) -> f64 {
        self.frequency * self.mean
    }

    /// Bound at the current moments evaluated as if `n` samples had been taken.
    pub fn se_bound_at(&self, n: u64) -> SeBound {
        if n == 0 {
            return SeBound {
                total: f64::INFINITY,
                variance_term: f64::INFINITY,
                coverage_term: f64::INFINITY,
            };
        }
        let n = n as f64;
        let var = self.variance() / n;
        let cov = self.coverage_factor * self.beta2() / (n * n);
        SeBound {
            total: self.frequency * (var + cov).sqrt(),
            variance_term: self.frequency * var.sqrt(),
            coverage_term: self.frequency * cov.sqrt(),
        }
    }

    pub fn se_bound(&self) -> SeBound {
        self.se_bound_at(self.n)
    }

    /// Classical standard error `f σ / √N`, blind to unobserved outcomes.
    pub fn classical_se(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        self.frequency * (self.variance() / self.n as f64).sqrt()
    }

    pub fn stopping_met(&self, epsilon: f64, total_risk: f64) -> bool {
        self.n >= 1 && self.se_bound().total <= epsilon * total_risk
    }

    /// Variance reduction can only pay off while the variance term dominates.
    pub fn viability(&self) -> bool {
        let n = self.n as f64;
        self.n >= 1 && self.variance() / n > self.coverage_factor * self.beta2() / (n * n)
    }
}

/// Next contingency to sample, or `None` when every contingency has met its
/// stopping criterion or its cap.
///
/// `pending` counts samples already scheduled but not merged; they count
/// toward warm-up and toward the bound (at unchanged moments), so a batch
/// never overshoots. Until every contingency has `warmup` merged samples only
/// warm-up picks are made, round-robin in index order. Afterwards the pick is
/// the largest `SE_i / (ε R)`, ties to the lower index.
pub fn schedule(accs: &[RiskAccumulator], pending: &[u64], epsilon: f64, total_risk: f64, warmup: u64, cap: u64) -> Option<usize> {
    let virt = |i: usize| accs[i].n + pending[i];
    if accs.iter().any(|a| a.n < warmup) {
        return (0..accs.len()).filter(|&i| virt(i) < warmup.min(cap)).min_by_key(|&i| (virt(i), i));
    }
    let scale = if total_risk > 0.0 { epsilon * total_risk } else { 1.0 };
    let mut best: Option<(usize, f64)> = None;
    for i in 0..accs.len() {
        if virt(i) >= cap {
            continue;
        }
        let se = accs[i].se_bound_at(virt(i)).total;
        if se <= epsilon * total_risk {
            continue;
        }
        let ratio = se / scale;
        if best.is_none_or(|(_, b)| ratio > b) {
            best = Some((i, ratio));
        }
    }
    best.map(|b| b.0)
}

/// Total risk and its bound over independent per-contingency estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalRisk {
    pub risk: f64,
    pub se: f64,
    pub variance_term: f64,
    pub coverage_term: f64,
}

/// `R = Σ f_i μ_i`; the bound terms add in quadrature.
pub fn total_risk(accs: &[RiskAccumulator]) -> TotalRisk {
    let (mut r, mut se2, mut v2, mut c2) = (0.0, 0.0, 0.0, 0.0);
    for a in accs.iter().filter(|a| a.n > 0) {
        r += a.risk();
        let b = a.se_bound();
        se2 += b.total * b.total;
        v2 += b.variance_term * b.variance_term;
        c2 += b.coverage_term * b.coverage_term;
    }
    TotalRisk {
        risk: r,
        se: se2.sqrt(),
        variance_term: v2.sqrt(),
        coverage_term: c2.sqrt(),
    }
}

/// Crude Monte Carlo over the joint (contingency, operating condition) space:
/// contingencies drawn with probability `f_i / Σf`, so
/// `R = (Σ f_i) · mean(c_s)` with the bound of a single accumulator at `Σf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimator {
    pub acc: RiskAccumulator,
}

impl PooledEstimator {
    pub fn new(total_frequency: f64, max_consequence: f64, alpha: f64) -> Self {
        PooledEstimator {
            acc: RiskAccumulator::new("pooled", total_frequency, max_consequence, alpha),
        }
    }

    pub fn update(&mut self, cost: f64) -> Result<()> {
        self.acc.update(cost)
    }

    pub fn total(&self) -> TotalRisk {
        let b = self.acc.se_bound();
        TotalRisk {
            risk: self.acc.risk(),
            se: b.total,
            variance_term: b.variance_term,
            coverage_term: b.coverage_term,
        }
    }
}

/// One line of `convergence.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub batch: u64,
    pub samples: u64,
    pub risk: f64,
    pub se: f64,
    pub variance_term: f64,
    pub coverage_term: f64,
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

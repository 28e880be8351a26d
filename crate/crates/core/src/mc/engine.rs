use serde::{Deserialize, Serialize};

use super::{schedule, total_risk, ConvergenceRow, RiskAccumulator, DEFAULT_ALPHA};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Relative accuracy target ε.
    pub epsilon: f64,
    pub alpha: f64,
    pub warmup: u64,
    pub batch_size: usize,
    /// Samples per contingency before it is forced to stop.
    pub cap: u64,
    /// Optional overall budget; the run ends after the batch that reaches it.
    pub max_total_samples: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            epsilon: 0.01,
            alpha: DEFAULT_ALPHA,
            warmup: 5,
            batch_size: 32,
            cap: 100_000,
            max_total_samples: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.warmup >= 1
            && self.batch_size >= 1
            && self.cap >= self.warmup;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("engine settings out of range: {self:?}")))
        }
    }
}

pub struct EngineOutcome<T> {
    pub accumulators: Vec<RiskAccumulator>,
    /// Per contingency, evaluation payloads in sample order.
    pub observations: Vec<Vec<T>>,
    pub convergence: Vec<ConvergenceRow>,
    /// Contingencies that stopped on the cap instead of the criterion.
    pub capped: Vec<bool>,
}

/// Adaptive per-contingency sampling until every `SE_i ≤ ε R` or the cap.
///
/// `eval(i, s)` returns the cost of sample `s` of contingency `i` plus a
/// payload. Batch composition depends only on merged state and results are
/// merged in (contingency, sample) order, so the outcome does not depend on
/// the thread count of `pool`.
pub fn run_engine<T, F>(
    ids: &[String],
    frequencies: &[f64],
    max_consequence: f64,
    cfg: &EngineConfig,
    pool: &rayon::ThreadPool,
    eval: F,
) -> Result<EngineOutcome<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<(f64, T)> + Sync,
{
    use rayon::prelude::*;

    cfg.validate()?;
    if ids.len() != frequencies.len() {
        return Err(Error::Config("one frequency per contingency required".into()));
    }
    let n = ids.len();
    let mut accs: Vec<RiskAccumulator> = ids
        .iter()
        .zip(frequencies)
        .map(|(id, f)| RiskAccumulator::new(id.clone(), *f, max_consequence, cfg.alpha))
        .collect();
    let mut observations: Vec<Vec<T>> = (0..n).map(|_| Vec::new()).collect();
    let mut convergence = Vec::new();
    let mut pending = vec![0u64; n];
    let mut samples = 0u64;
    let mut batch_no = 0u64;

    loop {
        let r = total_risk(&accs).risk;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            match schedule(&accs, &pending, cfg.epsilon, r, cfg.warmup, cfg.cap) {
                Some(i) => {
                    batch.push((i, accs[i].n + pending[i]));
                    pending[i] += 1;
                }
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        batch.sort_unstable();
        let results: Vec<Result<(f64, T)>> = pool.install(|| batch.par_iter().map(|&(i, s)| eval(i, s)).collect());
        for (&(i, _), res) in batch.iter().zip(results) {
            let (cost, payload) = res?;
            accs[i].update(cost)?;
            observations[i].push(payload);
            pending[i] -= 1;
        }
        samples += batch.len() as u64;
        batch_no += 1;
        let t = total_risk(&accs);
        convergence.push(ConvergenceRow {
            batch: batch_no,
            samples,
            risk: t.risk,
            se: t.se,
            variance_term: t.variance_term,
            coverage_term: t.coverage_term,
        });
        log::debug!("batch {batch_no}: {samples} samples, R = {:.4e}, SE = {:.4e}", t.risk, t.se);
        if cfg.max_total_samples.is_some_and(|m| samples >= m) {
            break;
        }
    }

    let r = total_risk(&accs).risk;
    let capped = accs.iter().map(|a| a.n >= cfg.cap && !a.stopping_met(cfg.epsilon, r)).collect();
    Ok(EngineOutcome {
        accumulators: accs,
        observations,
        convergence,
        capped,
    })
}

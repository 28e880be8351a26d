use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stamped_csv, write_file, Context};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::screening::{audit, audit_csv, screen, AuditRecord, ScreeningAudit, ScreeningConfig};

/// Sample keys of audit scenarios start here so their protection-parameter
/// streams never coincide with assessment or augmentation samples.
const AUDIT_SAMPLE_BASE: u64 = 1 << 48;

/// Ground truth of one audited scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditScenario {
    pub contingency: String,
    pub snapshot: usize,
    pub cost_eur: f64,
    pub cct_s: f64,
    #[serde(skip)]
    pub simulation_s: f64,
}

#[derive(Debug)]
pub struct ScreeningAuditRun {
    pub scenarios: Vec<AuditScenario>,
    /// One per margin, in `config.audit_margins_ms` order.
    pub audits: Vec<ScreeningAudit>,
}

/// Simulate `config.audit_scenarios` scenarios without screening and score
/// the screening verdict at every audit margin against them. Contingencies
/// are drawn in proportion to frequency and snapshots uniformly, so each
/// scenario carries weight `Σf / n` in the missed-risk share.
pub fn audit_screening(ctx: &Context) -> Result<ScreeningAuditRun> {
    let cfg = &ctx.config;
    let n = cfg.audit_scenarios;
    if n == 0 {
        return Err(Error::Config("audit_scenarios must be at least 1".into()));
    }
    let freqs: Vec<f64> = ctx.contingencies.iter().map(|c| c.frequency).collect();
    let pick = WeightedIndex::new(&freqs).map_err(|e| Error::Data(format!("contingency frequencies: {e}")))?;
    let draws = (0..n)
        .map(|t| {
            let mut rng = stream(cfg.seed, Purpose::Audit, t as u64, 0, 0);
            let i = pick.sample(&mut rng);
            Ok((i, ctx.db.sample_index(&mut rng)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = cfg.pool()?;
    let truth: Vec<(f64, f64)> = pool.install(|| {
        draws
            .par_iter()
            .enumerate()
            .map(|(t, &(i, snap))| {
                let rec = ctx.evaluate(i, AUDIT_SAMPLE_BASE + t as u64, snap, false)?;
                Ok((rec.cost_eur, rec.wall_time_s))
            })
            .collect::<Result<_>>()
    })?;
    let weight = freqs.iter().sum::<f64>() / n as f64;
    let mut audits = Vec::new();
    let mut cct = vec![0.0; n];
    for &ms in &cfg.audit_margins_ms {
        let ind = ScreeningConfig {
            cct_margin_s: ms / 1000.0,
            ..cfg.indicators.clone()
        };
        let records: Vec<AuditRecord> = draws
            .iter()
            .zip(&truth)
            .enumerate()
            .map(|(t, (&(i, snap), &(cost, sim_s)))| {
                let started = Instant::now();
                let v = screen(&ctx.case, &ctx.db.snapshots[snap], Some(&ctx.contingencies[i]), &ind);
                cct[t] = v.cct_s;
                AuditRecord {
                    contingency: ctx.contingencies[i].id.clone(),
                    screened_unsecure: !v.secure,
                    cost_eur: cost,
                    weight,
                    simulation_s: sim_s,
                    screening_s: started.elapsed().as_secs_f64(),
                }
            })
            .collect();
        let a = audit(&records, ind.cct_margin_s);
        log::info!(
            "margin {ms:+.0} ms: FN {} TP {} FP {} TN {}, missed risk {:.2}%",
            a.false_negatives,
            a.true_positives,
            a.false_positives,
            a.true_negatives,
            a.missed_risk_pct
        );
        audits.push(a);
    }
    let scenarios: Vec<AuditScenario> = draws
        .iter()
        .zip(&truth)
        .zip(&cct)
        .map(|((&(i, snap), &(cost, sim_s)), &cct_s)| AuditScenario {
            contingency: ctx.contingencies[i].id.clone(),
            snapshot: snap,
            cost_eur: cost,
            cct_s,
            simulation_s: sim_s,
        })
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &scenarios {
        w.serialize(s)?;
    }
    let per_scenario = String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).expect("csv is utf-8");
    let hash = &ctx.manifest_hash;
    write_file(&cfg.out, "screening_audit.csv", &stamped_csv(hash, &audit_csv(&audits)?))?;
    write_file(&cfg.out, "audit_scenarios.csv", &stamped_csv(hash, &per_scenario))?;
    Ok(ScreeningAuditRun { scenarios, audits })
}

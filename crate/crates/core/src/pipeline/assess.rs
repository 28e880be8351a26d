use std::path::PathBuf;

use super::{pretty_json, stamped_csv, write_file, Context, ScenarioRecord, RISK_REPORT, RUN_MANIFEST};
use crate::error::{Error, Result};
use crate::mc::{convergence_csv, run_engine, total_risk, ContingencyRisk, EngineOutcome, RiskReport};
use crate::rng::Purpose;
use crate::sensitivity::{sensitivity_log_csv, SensitivityLogRow};

pub struct Assessment {
    pub report: RiskReport,
    /// Per contingency, sample records in sample order.
    pub records: Vec<Vec<ScenarioRecord>>,
    pub outcome_paths: Vec<PathBuf>,
}

/// Adaptive crude-MC risk assessment over every contingency; writes
/// `run-manifest.json`, `risk.json`, `convergence.csv`, `timing.csv` and
/// `sensitivity.csv` to the output directory.
pub fn assess(ctx: &Context) -> Result<Assessment> {
    let cfg = &ctx.config;
    let ids: Vec<String> = ctx.contingencies.iter().map(|c| c.id.clone()).collect();
    let freqs: Vec<f64> = ctx.contingencies.iter().map(|c| c.frequency).collect();
    let pool = cfg.pool()?;
    log::info!(
        "assessing {} contingencies, M_C = {:.4e} EUR, manifest {}",
        ids.len(),
        ctx.max_consequence,
        &ctx.manifest_hash[..12]
    );
    let EngineOutcome {
        accumulators,
        observations,
        convergence,
        capped,
    } = run_engine(&ids, &freqs, ctx.max_consequence, &cfg.engine, &pool, |i, s| {
        let snap = ctx.draw_snapshot(Purpose::SnapshotDraw, i, s)?;
        let rec = ctx.evaluate(i, s, snap, cfg.screening)?;
        Ok((rec.cost_eur, rec))
    })?;

    let mut list = Vec::with_capacity(ids.len());
    let mut log_rows = Vec::new();
    for (k, acc) in accumulators.iter().enumerate() {
        let recs = &observations[k];
        let mut line = ContingencyRisk::from_accumulator(acc, ctx.contingencies[k].mode.label(), recs.iter().map(|r| r.cost_eur).collect());
        line.capped = capped[k];
        line.simulations = recs.iter().map(|r| r.simulations as u64).sum();
        line.screened_secure = recs.iter().filter(|r| r.screened_secure).count() as u64;
        line.sensitive = recs.iter().filter(|r| !r.protection_costs.is_empty()).count() as u64;
        for r in recs.iter().filter(|r| !r.protection_costs.is_empty()) {
            let reason = r.reason.expect("sensitive scenarios were simulated");
            log_rows.push(SensitivityLogRow::new(
                format!("{}#{}", acc.id, r.sample),
                reason,
                &r.protection_costs,
            ));
        }
        list.push(line);
    }
    let report = RiskReport::new(
        ctx.manifest_hash.clone(),
        cfg.engine.epsilon,
        cfg.engine.alpha,
        ctx.max_consequence,
        total_risk(&accumulators),
        list,
    );
    log::info!(
        "R = {:.4e} EUR/yr, SE = {:.4e}, {} samples, {} capped",
        report.total.risk,
        report.total.se,
        accumulators.iter().map(|a| a.n).sum::<u64>(),
        capped.iter().filter(|c| **c).count()
    );

    let out = &cfg.out;
    let hash = &ctx.manifest_hash;
    let paths = vec![
        write_file(out, RUN_MANIFEST, &pretty_json(&ctx.manifest("assess"))?)?,
        write_file(out, RISK_REPORT, &pretty_json(&report)?)?,
        write_file(out, "convergence.csv", &stamped_csv(hash, &convergence_csv(&convergence)?))?,
        write_file(out, "timing.csv", &stamped_csv(hash, &timing_csv(&report, &observations)?))?,
        write_file(out, "sensitivity.csv", &stamped_csv(hash, &sensitivity_log_csv(&log_rows)?))?,
    ];
    Ok(Assessment {
        report,
        records: observations,
        outcome_paths: paths,
    })
}

/// Bookkeeping per contingency class: samples, simulations and wall time.
fn timing_csv(report: &RiskReport, records: &[Vec<ScenarioRecord>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "class",
        "contingencies",
        "samples",
        "screened_secure",
        "sensitive",
        "simulations",
        "wall_time_s",
    ])?;
    for class in ["N-1", "N-2"] {
        let idx: Vec<usize> = (0..report.contingencies.len())
            .filter(|&k| report.contingencies[k].class == class)
            .collect();
        let sum = |f: &dyn Fn(&ContingencyRisk) -> u64| idx.iter().map(|&k| f(&report.contingencies[k])).sum::<u64>();
        let wall: f64 = idx.iter().flat_map(|&k| records[k].iter()).map(|r| r.wall_time_s).sum();
        w.write_record([
            class.to_string(),
            idx.len().to_string(),
            sum(&|c| c.samples).to_string(),
            sum(&|c| c.screened_secure).to_string(),
            sum(&|c| c.sensitive).to_string(),
            sum(&|c| c.simulations).to_string(),
            format!("{wall:.3}"),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

use rayon::prelude::*;

use super::{file_safe, pretty_json, stamped_csv, write_file, Context};
use crate::boundary::{augmentation_needed, boundary_report, critical_set, sequential_select, BoundaryReport, FeatureMatrix};
use crate::error::{Error, Result};
use crate::mc::RiskReport;
use crate::rng::Purpose;

#[derive(Debug, Default)]
pub struct Enhancement {
    pub reports: Vec<BoundaryReport>,
    /// Contingencies without a model and why.
    pub skipped: Vec<(String, String)>,
    /// New samples simulated per critical contingency.
    pub augmented: Vec<(String, usize)>,
}

/// Boundary models for the `config.critical` riskiest contingencies of
/// `report`. Assessment samples are reused; crude-MC samples are added up
/// to `config.min_samples`. Writes `boundary_<id>.json` and `scatter_<id>.csv`.
pub fn enhance(ctx: &Context, report: &RiskReport) -> Result<Enhancement> {
    if report.manifest_hash != ctx.manifest_hash {
        return Err(Error::Config(format!(
            "risk report was produced by manifest {}, current settings give {}",
            report.manifest_hash, ctx.manifest_hash
        )));
    }
    let cfg = &ctx.config;
    let pool = cfg.pool()?;
    let k = cfg.critical.min(report.ranking.len());
    let mut out = Enhancement::default();
    for id in critical_set(report, k)? {
        let i = ctx
            .contingency_idx(&id)
            .ok_or_else(|| Error::Data(format!("unknown contingency {id}")))?;
        let line = report.get(&id).expect("ranked ids are in the report");
        let (x, added) = samples_for(ctx, &pool, i, line.samples, &line.costs)?;
        out.augmented.push((id.clone(), added));
        let model = match sequential_select(&x, &id, cfg.max_dim, cfg.seed) {
            Ok(m) => m,
            Err(e @ Error::SingleClass(_)) => {
                log::warn!("{id}: {e}");
                out.skipped.push((id, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let (rep, scatter) = boundary_report(&model, &x, &ctx.manifest_hash)?;
        log::info!(
            "{id}: {} ({:.1}% held out)",
            rep.equation,
            model.steps.last().map_or(0.0, |s| s.accuracy_pct)
        );
        let name = file_safe(&id);
        write_file(&cfg.out, &format!("boundary_{name}.json"), &pretty_json(&rep)?)?;
        write_file(&cfg.out, &format!("scatter_{name}.csv"), &stamped_csv(&ctx.manifest_hash, &scatter))?;
        out.reports.push(rep);
    }
    Ok(out)
}

/// Feature matrix of contingency `i`: the `existing` assessment samples
/// (snapshots redrawn from their streams) plus new ones from the
/// augmentation streams. Returns the matrix and the number of new samples.
pub(crate) fn samples_for(
    ctx: &Context,
    pool: &rayon::ThreadPool,
    i: usize,
    existing: u64,
    costs: &[f64],
) -> Result<(FeatureMatrix, usize)> {
    if costs.len() as u64 != existing {
        return Err(Error::Data(format!(
            "{}: {} costs for {existing} samples",
            ctx.contingencies[i].id,
            costs.len()
        )));
    }
    let mut snaps = (0..existing)
        .map(|s| ctx.draw_snapshot(Purpose::SnapshotDraw, i, s))
        .collect::<Result<Vec<_>>>()?;
    let mut all_costs = costs.to_vec();
    let extra = augmentation_needed(existing as usize, ctx.config.min_samples);
    let new: Vec<(usize, f64)> = pool.install(|| {
        (existing..existing + extra as u64)
            .into_par_iter()
            .map(|s| {
                let snap = ctx.draw_snapshot(Purpose::Augment, i, s)?;
                Ok((snap, ctx.evaluate(i, s, snap, ctx.config.screening)?.cost_eur))
            })
            .collect::<Result<_>>()
    })?;
    for (snap, cost) in new {
        snaps.push(snap);
        all_costs.push(cost);
    }
    let refs: Vec<_> = snaps.iter().map(|&k| &ctx.db.snapshots[k]).collect();
    Ok((FeatureMatrix::from_snapshots(&ctx.case, &refs, &all_costs)?, extra))
}

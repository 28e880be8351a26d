use std::path::Path;

use pdsa_core::error::Error;
use pdsa_core::mc::RiskReport;
use pdsa_core::pipeline::{assess, enhance, generate_db, Context, RunConfig, RISK_REPORT, RUN_MANIFEST};
use pdsa_core::rng::Purpose;

fn config(dir: &Path, out: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.db = dir.join("db");
    cfg.out = dir.join(out);
    cfg.seed = 3;
    cfg.protection_k = 1;
    cfg.engine.max_total_samples = Some(40);
    cfg.engine.batch_size = 20;
    if !cfg.db.join("manifest.json").exists() {
        generate_db(&cfg).unwrap();
    }
    cfg
}

#[test]
fn manifest_hash_ignores_paths_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let base = Context::load(&config(dir.path(), "a")).unwrap().manifest_hash;
    let mut other = config(dir.path(), "b");
    other.workers = 4;
    other.dump_traces = true;
    assert_eq!(Context::load(&other).unwrap().manifest_hash, base);
    other.seed = 4;
    assert_ne!(Context::load(&other).unwrap().manifest_hash, base);
    let mut k = config(dir.path(), "c");
    k.protection_k = 2;
    assert_ne!(Context::load(&k).unwrap().manifest_hash, base);
}

#[test]
fn assessment_samples_replay_from_their_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    let ctx = Context::load(&cfg).unwrap();
    let a = assess(&ctx).unwrap();

    let text = std::fs::read_to_string(cfg.out.join(RISK_REPORT)).unwrap();
    let parsed: RiskReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, a.report);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cfg.out.join(RUN_MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest["manifest_hash"], a.report.manifest_hash.as_str());
    let conv = std::fs::read_to_string(cfg.out.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().next().unwrap(), format!("# manifest {}", a.report.manifest_hash));

    let mut replayed = 0;
    for (i, recs) in a.records.iter().enumerate() {
        for r in recs {
            assert_eq!(ctx.draw_snapshot(Purpose::SnapshotDraw, i, r.sample).unwrap(), r.snapshot);
            let again = ctx.evaluate(i, r.sample, r.snapshot, true).unwrap();
            assert_eq!(again.cost_eur, r.cost_eur);
            assert_eq!(again.protection_costs, r.protection_costs);
            assert_eq!(again.screened_secure, r.screened_secure);
            replayed += 1;
        }
    }
    assert_eq!(replayed, 40);
}

#[test]
fn enhance_refuses_a_report_from_other_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    let report = assess(&Context::load(&cfg).unwrap()).unwrap().report;
    let mut other = cfg.clone();
    other.seed = 9;
    let err = enhance(&Context::load(&other).unwrap(), &report).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn screening_never_raises_the_cost_of_a_secure_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::load(&config(dir.path(), "out")).unwrap();
    for i in (0..ctx.contingencies.len()).step_by(13) {
        let snap = ctx.draw_snapshot(Purpose::SnapshotDraw, i, 0).unwrap();
        let r = ctx.evaluate(i, 0, snap, true).unwrap();
        if r.screened_secure {
            assert_eq!(r.cost_eur, 0.0);
            assert_eq!(r.simulations, 0);
        } else {
            assert!(r.simulations >= 1);
            assert!(r.cost_eur <= ctx.max_consequence);
        }
    }
}

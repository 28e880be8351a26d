//! End-to-end stages: database generation, assessment, boundary enhancement
//! and screening audit, with run manifests for exact replay.

mod assess;
mod audit;
mod enhance;

pub use assess::{assess, Assessment};
pub use audit::{audit_screening, ScreeningAuditRun};
pub use enhance::{enhance, Enhancement};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contingency::{enumerate, Contingency};
use crate::dynsim::{run, ProtectionParamSet, SimOptions};
use crate::error::{Error, Result};
use crate::grid::{bundled, load_case, NetworkCase};
use crate::mc::EngineConfig;
use crate::rng::{stream, Purpose};
use crate::scenario::{case_fingerprint, DispatchConfig, SnapshotDb, WeatherModel};
use crate::screening::{screen, ScreeningConfig};
use crate::sensitivity::{conditional_mc, dual_run, SensitivityReason};

pub const RUN_MANIFEST: &str = "run-manifest.json";
pub const RISK_REPORT: &str = "risk.json";

/// Everything a run needs. Unset paths fall back to the bundled desk grid
/// and weather model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub db: PathBuf,
    pub out: PathBuf,
    /// MC years generated by `generate-db`.
    pub years: u32,
    pub seed: u64,
    pub workers: usize,
    pub engine: EngineConfig,
    pub screening: bool,
    pub indicators: ScreeningConfig,
    /// Random protection-parameter simulations per sensitive scenario.
    pub protection_k: usize,
    /// Simulator settings, including the consequence cost model.
    pub simulation: SimOptions,
    pub dispatch: DispatchConfig,
    /// Contingencies explained by `enhance`.
    pub critical: usize,
    pub min_samples: usize,
    pub max_dim: usize,
    pub audit_scenarios: usize,
    pub audit_margins_ms: Vec<f64>,
    /// Write the acting trajectory of every simulated scenario.
    pub dump_traces: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: None,
            weather: None,
            db: PathBuf::from("db"),
            out: PathBuf::from("out"),
            years: 1,
            seed: 1,
            workers: 1,
            engine: EngineConfig::default(),
            screening: true,
            indicators: ScreeningConfig::default(),
            protection_k: 5,
            simulation: SimOptions::default(),
            dispatch: DispatchConfig::default(),
            critical: 10,
            min_samples: 1000,
            max_dim: 3,
            audit_scenarios: 200,
            audit_margins_ms: vec![50.0, 0.0, -20.0],
            dump_traces: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.protection_k == 0 {
            return Err(Error::Config("protection_k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.years == 0 {
            return Err(Error::Config("years must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load_case(&self) -> Result<NetworkCase> {
        match &self.case {
            Some(p) => load_case(p),
            None => NetworkCase::from_json(bundled::DESK_GRID),
        }
    }

    pub fn load_weather(&self) -> Result<WeatherModel> {
        match &self.weather {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                WeatherModel::from_json(&text)
            }
            None => WeatherModel::from_json(bundled::WEATHER),
        }
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// Settings that determine results. Paths, worker count and trace dumping
/// are excluded, so they never change the hash.
#[derive(Serialize)]
struct ReplayKey<'a> {
    version: &'static str,
    case_fingerprint: &'a str,
    db_fingerprint: &'a str,
    seed: u64,
    engine: &'a EngineConfig,
    screening: bool,
    indicators: &'a ScreeningConfig,
    protection_k: usize,
    simulation: &'a SimOptions,
}

/// `run-manifest.json`: the full configuration and the hash every artifact carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_hash: String,
    pub stage: String,
    pub case_fingerprint: String,
    pub db_fingerprint: String,
    pub config: RunConfig,
}

/// Case, database and contingency list shared by the assessment stages.
pub struct Context {
    pub config: RunConfig,
    pub case: NetworkCase,
    pub db: SnapshotDb,
    pub contingencies: Vec<Contingency>,
    /// Cost of a complete blackout at the heaviest stored load (€).
    pub max_consequence: f64,
    pub manifest_hash: String,
    pub case_fingerprint: String,
    pub db_fingerprint: String,
}

impl Context {
    /// Load the case and the database named by `config`.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let case = config.load_case()?;
        let db = SnapshotDb::load(&case, &config.db)?;
        Self::new(config.clone(), case, db)
    }

    pub fn new(config: RunConfig, case: NetworkCase, db: SnapshotDb) -> Result<Self> {
        config.validate()?;
        if db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let contingencies = enumerate(&case);
        if contingencies.is_empty() {
            return Err(Error::Validation("case has no contingencies".into()));
        }
        let max_load = db.snapshots.iter().map(|s| s.total_load()).fold(0.0, f64::max);
        let max_consequence = config.simulation.cost.max_consequence(max_load);
        let case_fp = case_fingerprint(&case);
        let db_fp = hex::encode(Sha256::digest(serde_json::to_vec(&db.manifest)?));
        let key = ReplayKey {
            version: env!("CARGO_PKG_VERSION"),
            case_fingerprint: &case_fp,
            db_fingerprint: &db_fp,
            seed: config.seed,
            engine: &config.engine,
            screening: config.screening,
            indicators: &config.indicators,
            protection_k: config.protection_k,
            simulation: &config.simulation,
        };
        let manifest_hash = hex::encode(Sha256::digest(serde_json::to_vec(&key)?));
        Ok(Context {
            config,
            case,
            db,
            contingencies,
            max_consequence,
            manifest_hash,
            case_fingerprint: case_fp,
            db_fingerprint: db_fp,
        })
    }

    pub fn manifest(&self, stage: &str) -> RunManifest {
        RunManifest {
            manifest_hash: self.manifest_hash.clone(),
            stage: stage.to_string(),
            case_fingerprint: self.case_fingerprint.clone(),
            db_fingerprint: self.db_fingerprint.clone(),
            config: self.config.clone(),
        }
    }

    pub fn contingency_idx(&self, id: &str) -> Option<usize> {
        self.contingencies.iter().position(|c| c.id == id)
    }

    /// Snapshot index of sample `s` of contingency `i`, drawn from `purpose`.
    pub fn draw_snapshot(&self, purpose: Purpose, i: usize, s: u64) -> Result<usize> {
        self.db.sample_index(&mut stream(self.config.seed, purpose, i as u64, s, 0))
    }

    /// Screen, simulate and cost one scenario. Protection parameters for a
    /// sensitive scenario come from streams keyed by `(i, s)`.
    pub fn evaluate(&self, i: usize, s: u64, snapshot: usize, screening: bool) -> Result<ScenarioRecord> {
        let started = Instant::now();
        let c = &self.contingencies[i];
        let snap = &self.db.snapshots[snapshot];
        let mut rec = ScenarioRecord {
            sample: s,
            snapshot,
            screened_secure: false,
            reason: None,
            simulations: 0,
            cost_eur: 0.0,
            load_shed_mw: 0.0,
            protection_costs: Vec::new(),
            wall_time_s: 0.0,
        };
        if screening && screen(&self.case, snap, Some(c), &self.config.indicators).secure {
            rec.screened_secure = true;
            rec.wall_time_s = started.elapsed().as_secs_f64();
            return Ok(rec);
        }
        let (verdict, result) = dual_run(&self.case, snap, c, &self.config.simulation);
        rec.simulations = 1;
        rec.reason = Some(verdict.reason);
        if verdict.sensitive {
            let k = self.config.protection_k;
            let runs = conditional_mc(&self.case, snap, c, k, &self.config.simulation, self.config.seed, i as u64, s)?;
            rec.simulations += k as u32;
            rec.protection_costs = runs.iter().map(|r| r.cost_eur).collect();
            rec.cost_eur = rec.protection_costs.iter().sum::<f64>() / k as f64;
            rec.load_shed_mw = runs.iter().map(|r| r.load_shed_mw).sum::<f64>() / k as f64;
        } else {
            rec.cost_eur = result.cost_eur;
            rec.load_shed_mw = result.load_shed_mw;
        }
        // the K-average of in-range costs can exceed M_C by rounding only
        rec.cost_eur = rec.cost_eur.min(self.max_consequence);
        if self.config.dump_traces {
            self.dump_trace(i, s, snapshot)?;
        }
        rec.wall_time_s = started.elapsed().as_secs_f64();
        Ok(rec)
    }

    fn dump_trace(&self, i: usize, s: u64, snapshot: usize) -> Result<()> {
        let mut opts = self.config.simulation.clone();
        opts.record_trace = true;
        let c = &self.contingencies[i];
        let slow = ProtectionParamSet::slowest(&self.case);
        let out = run(&self.case, &self.db.snapshots[snapshot], Some(c), &slow, None, &opts);
        let dir = self.config.out.join("traces");
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        if let Some(t) = out.trace {
            let path = dir.join(format!("{}_{s}.csv", file_safe(&c.id)));
            fs::write(&path, t.to_csv(&self.case)).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

/// Outcome of one operating-condition sample of one contingency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub sample: u64,
    pub snapshot: usize,
    pub screened_secure: bool,
    /// `None` when screened secure and never simulated.
    pub reason: Option<SensitivityReason>,
    pub simulations: u32,
    pub cost_eur: f64,
    pub load_shed_mw: f64,
    /// Costs of the random-parameter simulations of a sensitive scenario.
    pub protection_costs: Vec<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Contingency ids contain `@` and `+`; keep those, replace anything a
/// file system might object to.
pub fn file_safe(id: &str) -> String {
    id.chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() || "-_@+.".contains(ch) {
                ch
            } else {
                '_'
            }
        })
        .collect()
}

/// Write `text` under `dir`, creating the directory.
pub(crate) fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

/// CSV artifacts carry the manifest hash on a leading `#` line.
pub(crate) fn stamped_csv(hash: &str, body: &str) -> String {
    format!("# manifest {hash}\n{body}")
}

pub(crate) fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Generate the snapshot database named by `config` and write it.
pub fn generate_db(config: &RunConfig) -> Result<SnapshotDb> {
    config.validate()?;
    let case = config.load_case()?;
    let weather = config.load_weather()?;
    let pool = config.pool()?;
    let db = pool.install(|| SnapshotDb::generate(&case, &weather, &config.dispatch, config.years, config.seed))?;
    db.write(&case, &config.db)?;
    log::info!("stored {} snapshots in {}", db.len(), config.db.display());
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_strict_parsing() {
        let c: RunConfig = serde_json::from_str(r#"{"engine": {"epsilon": 0.05}, "protection_k": 3}"#).unwrap();
        assert_eq!(c.engine.epsilon, 0.05);
        assert_eq!(c.engine.alpha, 0.95);
        assert_eq!(c.engine.warmup, 5);
        assert_eq!(c.protection_k, 3);
        assert_eq!(c.indicators.cct_margin_s, 0.05);
        assert!(serde_json::from_str::<RunConfig>(r#"{"epsilonn": 1}"#).is_err());
        let bad = RunConfig {
            protection_k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn file_names_stay_readable() {
        assert_eq!(file_safe("A34@B2+A25"), "A34@B2+A25");
        assert_eq!(file_safe("a/b c"), "a_b_c");
    }
}

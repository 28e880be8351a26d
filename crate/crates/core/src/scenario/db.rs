//! Snapshot database: generation across MC years, directory persistence and sampling.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dispatch::{dispatch_snapshot, DispatchConfig, Snapshot};
use super::weather::{generate_mc_year, WeatherModel};
use crate::error::{Error, Result};
use crate::grid::NetworkCase;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearCount {
    pub year: u32,
    pub stored: usize,
    /// Hours whose dispatch was infeasible (load shedding at dispatch).
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbManifest {
    pub seed: u64,
    pub years: u32,
    pub case_name: String,
    pub case_fingerprint: String,
    pub weather_fingerprint: String,
    pub weather: WeatherModel,
    pub dispatch: DispatchConfig,
    pub counts: Vec<YearCount>,
}

#[derive(Clone, Debug)]
pub struct SnapshotDb {
    pub manifest: DbManifest,
    pub snapshots: Vec<Snapshot>,
}

/// SHA-256 over the canonical case encoding.
pub fn case_fingerprint(case: &NetworkCase) -> String {
    let text = serde_json::to_string(case).expect("case serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn year_file(year: u32) -> String {
    format!("year_{year:04}.csv")
}

impl SnapshotDb {
    pub fn generate(case: &NetworkCase, weather: &WeatherModel, dispatch: &DispatchConfig, years: u32, seed: u64) -> Result<SnapshotDb> {
        weather.validate()?;
        let per_year: Vec<(Vec<Snapshot>, usize)> = (0..years)
            .into_par_iter()
            .map(|y| {
                let mut kept = Vec::new();
                let mut excluded = 0;
                for r in generate_mc_year(weather, seed, y) {
                    match dispatch_snapshot(case, dispatch, &r, y) {
                        Ok(s) => kept.push(s),
                        Err(Error::Infeasible(msg)) => {
                            log::debug!("year {y}: excluded: {msg}");
                            excluded += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
                Ok((kept, excluded))
            })
            .collect::<Result<_>>()?;
        let mut counts = Vec::new();
        let mut snapshots = Vec::new();
        for (y, (kept, excluded)) in per_year.into_iter().enumerate() {
            if excluded > 0 {
                log::info!("year {y}: {excluded} infeasible hours excluded");
            }
            counts.push(YearCount {
                year: y as u32,
                stored: kept.len(),
                excluded,
            });
            snapshots.extend(kept);
        }
        Ok(SnapshotDb {
            manifest: DbManifest {
                seed,
                years,
                case_name: case.name.clone(),
                case_fingerprint: case_fingerprint(case),
                weather_fingerprint: weather.fingerprint(),
                weather: weather.clone(),
                dispatch: dispatch.clone(),
                counts,
            },
            snapshots,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Uniform draw over stored snapshots.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> Result<usize> {
        if self.snapshots.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        Ok(rng.random_range(0..self.snapshots.len()))
    }

    pub fn sample_snapshot<R: Rng>(&self, rng: &mut R) -> Result<&Snapshot> {
        let i = self.sample_index(rng)?;
        Ok(&self.snapshots[i])
    }

    fn header(case: &NetworkCase) -> Vec<String> {
        let mut h = vec!["hour".to_string()];
        h.extend(case.loads.iter().map(|l| format!("P:{}", l.id)));
        h.extend(case.loads.iter().map(|l| format!("Q:{}", l.id)));
        for prefix in ["on", "P", "R", "A"] {
            h.extend(case.machines.iter().map(|m| format!("{prefix}:{}", m.id)));
        }
        h.extend(case.branches.iter().map(|b| format!("F:{}", b.id)));
        h
    }

    /// Write `manifest.json` plus one CSV per MC year. Output is a pure
    /// function of the contents.
    pub fn write(&self, case: &NetworkCase, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(dir.join(MANIFEST), manifest).map_err(|e| Error::io(format!("writing {}", dir.join(MANIFEST).display()), e))?;
        let header = Self::header(case);
        let mut rows = self.snapshots.iter().peekable();
        for count in &self.manifest.counts {
            let path = dir.join(year_file(count.year));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(&header)?;
            for _ in 0..count.stored {
                let s = rows.next().ok_or_else(|| Error::Data("manifest counts exceed snapshots".into()))?;
                let mut rec = vec![s.hour.to_string()];
                rec.extend(s.load_p.iter().chain(&s.load_q).map(f64::to_string));
                rec.extend(s.committed.iter().map(|c| u8::from(*c).to_string()));
                rec.extend(
                    s.p_gen
                        .iter()
                        .chain(&s.reserve)
                        .chain(&s.available)
                        .chain(&s.flows)
                        .map(f64::to_string),
                );
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    pub fn load(case: &NetworkCase, dir: &Path) -> Result<SnapshotDb> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(format!("reading {}", mpath.display()), e))?;
        let manifest: DbManifest = serde_json::from_str(&text)?;
        if manifest.case_fingerprint != case_fingerprint(case) {
            return Err(Error::Data(format!(
                "database at {} was generated for a different case",
                dir.display()
            )));
        }
        let header = Self::header(case);
        let (nl, nm, nb) = (case.loads.len(), case.machines.len(), case.branches.len());
        let mut snapshots = Vec::new();
        for count in &manifest.counts {
            let path = dir.join(year_file(count.year));
            let mut r = csv::Reader::from_path(&path)?;
            if r.headers()?.iter().ne(header.iter().map(String::as_str)) {
                return Err(Error::Data(format!("{}: unexpected columns", path.display())));
            }
            for rec in r.records() {
                let rec = rec?;
                let num = |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(|e| Error::Data(format!("{}: {e}", path.display()))) };
                let hour = rec[0].parse::<u32>().map_err(|e| Error::Data(e.to_string()))?;
                let mut col = 1;
                let mut take = |n: usize| -> Result<Vec<f64>> {
                    let v = (col..col + n).map(num).collect::<Result<Vec<_>>>();
                    col += n;
                    v
                };
                let load_p = take(nl)?;
                let load_q = take(nl)?;
                let committed = take(nm)?.into_iter().map(|v| v != 0.0).collect();
                let p_gen = take(nm)?;
                let reserve = take(nm)?;
                let available = take(nm)?;
                let flows = take(nb)?;
                snapshots.push(Snapshot {
                    year: count.year,
                    hour,
                    load_p,
                    load_q,
                    committed,
                    p_gen,
                    reserve,
                    available,
                    flows,
                });
            }
        }
        let expected: usize = manifest.counts.iter().map(|c| c.stored).sum();
        if expected != snapshots.len() {
            return Err(Error::Data("snapshot count does not match manifest".into()));
        }
        Ok(SnapshotDb { manifest, snapshots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;
    use crate::rng::{stream, Purpose};

    fn small_db(n: usize) -> SnapshotDb {
        let case = NetworkCase::from_json(bundled::DESK_GRID).unwrap();
        let weather = WeatherModel::from_json(bundled::WEATHER).unwrap();
        let mut db = SnapshotDb::generate(&case, &weather, &DispatchConfig::default(), 1, 3).unwrap();
        db.snapshots.truncate(n);
        db
    }

    #[test]
    fn empty_db_errors() {
        let mut db = small_db(1);
        db.snapshots.clear();
        let mut rng = stream(1, Purpose::SnapshotDraw, 0, 0, 0);
        assert!(matches!(db.sample_snapshot(&mut rng), Err(Error::EmptyDatabase)));
    }

    #[test]
    fn single_snapshot_always_drawn() {
        let db = small_db(1);
        let mut rng = stream(1, Purpose::SnapshotDraw, 0, 0, 0);
        for _ in 0..20 {
            assert_eq!(db.sample_index(&mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn uniform_draws_pass_chi_square() {
        let db = small_db(100);
        let mut rng = stream(11, Purpose::SnapshotDraw, 0, 0, 0);
        let mut counts = [0usize; 100];
        let n = 100_000;
        for _ in 0..n {
            counts[db.sample_index(&mut rng).unwrap()] += 1;
        }
        let e = n as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 99 degrees of freedom
        assert!(chi2 < 134.64, "{chi2}");
    }

    #[test]
    fn same_seed_same_draws() {
        let db = small_db(50);
        let draw = |seed| {
            let mut rng = stream(seed, Purpose::SnapshotDraw, 4, 2, 0);
            (0..30).map(|_| db.sample_index(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(8), draw(8));
    }

    #[test]
    fn year_dispatch_is_secure_and_mostly_feasible() {
        let db = small_db(usize::MAX);
        let c = &db.manifest.counts[0];
        assert_eq!(c.stored + c.excluded, 8760);
        assert!(c.excluded < 876, "{c:?}");
        for s in &db.snapshots {
            assert!((s.total_generation() - s.total_load()).abs() <= 1e-6);
        }
    }
}

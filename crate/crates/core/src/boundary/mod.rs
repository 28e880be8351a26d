//! Linear security boundaries of critical contingencies over snapshot features.

mod svm;

pub use svm::{split, train_linear, LinearFit, C, TRAIN_FRACTION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NetworkCase;
use crate::mc::RiskReport;
use crate::scenario::Snapshot;

/// Features whose absolute correlation with a selected one exceeds this are
/// not offered again; their weights would carry no separate meaning.
pub const MAX_CORRELATION: f64 = 0.999;
pub const DEFAULT_MAX_DIM: usize = 3;
pub const DEFAULT_MIN_SAMPLES: usize = 1000;

/// Top-`k` contingencies by risk, ties by id.
pub fn critical_set(report: &RiskReport, k: usize) -> Result<Vec<String>> {
    if k > report.ranking.len() {
        return Err(Error::OutOfRange(format!("k = {k} exceeds {} contingencies", report.ranking.len())));
    }
    Ok(report.ranking[..k].to_vec())
}

/// Samples still to simulate so that `existing + new >= min_n`.
pub fn augmentation_needed(existing: usize, min_n: usize) -> usize {
    min_n.saturating_sub(existing)
}

/// Operating-condition samples of one contingency with standardisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Unsecure iff the consequence cost is positive.
    pub unsecure: Vec<bool>,
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant features.
    pub std: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, unsecure: Vec<bool>) -> Result<Self> {
        if rows.len() != unsecure.len() || rows.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Data("feature matrix dimensions disagree".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        let n = rows.len().max(1) as f64;
        let d = names.len();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(FeatureMatrix {
            names,
            rows,
            unsecure,
            mean,
            std,
        })
    }

    /// Snapshot-level features (total load, zonal wind, unit outputs, DC flows)
    /// labelled by `cost > 0`.
    pub fn from_snapshots(case: &NetworkCase, snapshots: &[&Snapshot], costs: &[f64]) -> Result<Self> {
        if snapshots.len() != costs.len() {
            return Err(Error::Data("one cost per snapshot required".into()));
        }
        let names: Vec<String> = match snapshots.first() {
            Some(s) => s.features(case).into_iter().map(|(n, _)| n).collect(),
            None => Vec::new(),
        };
        let rows = snapshots
            .iter()
            .map(|s| s.features(case).into_iter().map(|(_, v)| v).collect())
            .collect();
        Self::new(names, rows, costs.iter().map(|c| *c > 0.0).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn standardized(&self, row: usize, j: usize) -> f64 {
        (self.rows[row][j] - self.mean[j]) / self.std[j]
    }

    pub fn feature(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn is_constant(&self, j: usize) -> bool {
        self.rows.iter().all(|r| r[j] == self.rows[0][j])
    }

    fn correlation(&self, a: usize, b: usize) -> f64 {
        let n = self.len() as f64;
        let cov = (0..self.len())
            .map(|r| self.standardized(r, a) * self.standardized(r, b))
            .sum::<f64>()
            / n;
        cov.clamp(-1.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    /// Held-out accuracy in percent.
    pub accuracy_pct: f64,
}

/// One greedy step: the feature added and the model it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub feature: String,
    pub accuracy_pct: f64,
    pub train_accuracy_pct: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryModel {
    pub contingency: String,
    pub features: Vec<String>,
    /// Standardised weights, one per selected feature.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub steps: Vec<SelectionStep>,
    /// Single-feature accuracies of the first step, best first.
    pub first_step: Vec<FeatureScore>,
    pub samples: usize,
    pub unsecure_samples: usize,
    pub training_samples: usize,
    pub test_rows: Vec<usize>,
}

impl BoundaryModel {
    /// Hyperplane in raw units: `Σ a_j x_j + a0 = 0`, positive side unsecure.
    pub fn raw_hyperplane(&self) -> (Vec<f64>, f64) {
        let a: Vec<f64> = self.weights.iter().zip(&self.feature_std).map(|(w, s)| w / s).collect();
        let a0 = self.bias - a.iter().zip(&self.feature_mean).map(|(a, m)| a * m).sum::<f64>();
        (a, a0)
    }

    pub fn equation(&self) -> String {
        let (a, a0) = self.raw_hyperplane();
        let mut s = String::new();
        for (k, (coef, name)) in a.iter().zip(&self.features).enumerate() {
            let sign = if *coef < 0.0 {
                "-"
            } else if k > 0 {
                "+"
            } else {
                ""
            };
            let sep = if k > 0 { " " } else { "" };
            let gap = if k > 0 { " " } else { "" };
            s.push_str(&format!("{sep}{sign}{gap}{:e}*{name}", coef.abs()));
        }
        let sign = if a0 < 0.0 { "-" } else { "+" };
        s.push_str(&format!(" {sign} {:e} = 0", a0.abs()));
        s
    }
}

/// Greedy forward selection on held-out accuracy, at most `max_dim` features.
/// Candidates are visited in name order and only a strictly better one
/// replaces the incumbent; constant features and near-duplicates of selected
/// ones are skipped.
pub fn sequential_select(x: &FeatureMatrix, contingency: &str, max_dim: usize, split_seed: u64) -> Result<BoundaryModel> {
    if x.names.len() < 2 {
        return Err(Error::Config("sequential selection needs at least two features".into()));
    }
    if max_dim == 0 {
        return Err(Error::Config("max_dim must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..x.names.len()).filter(|&j| !x.is_constant(j)).collect();
    order.sort_by(|a, b| x.names[*a].cmp(&x.names[*b]));
    let mut selected: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    let mut first_step = Vec::new();
    let mut best_fit: Option<LinearFit> = None;
    while selected.len() < max_dim {
        let mut best: Option<(usize, LinearFit)> = None;
        for &j in &order {
            if selected.contains(&j) || selected.iter().any(|&s| x.correlation(s, j).abs() > MAX_CORRELATION) {
                continue;
            }
            let mut feats = selected.clone();
            feats.push(j);
            let fit = train_linear(x, &feats, split_seed)?;
            if selected.is_empty() {
                first_step.push(FeatureScore {
                    feature: x.names[j].clone(),
                    accuracy_pct: 100.0 * fit.accuracy,
                });
            }
            if best.as_ref().is_none_or(|(_, b)| fit.accuracy > b.accuracy) {
                best = Some((j, fit));
            }
        }
        let Some((j, fit)) = best else { break };
        selected.push(j);
        steps.push(SelectionStep {
            feature: x.names[j].clone(),
            accuracy_pct: 100.0 * fit.accuracy,
            train_accuracy_pct: 100.0 * fit.train_accuracy,
            objective: fit.objective,
        });
        best_fit = Some(fit);
    }
    let fit = best_fit.ok_or_else(|| Error::Data("no informative feature".into()))?;
    first_step.sort_by(|a, b| b.accuracy_pct.total_cmp(&a.accuracy_pct).then_with(|| a.feature.cmp(&b.feature)));
    let (train, _) = split(&x.unsecure, split_seed);
    Ok(BoundaryModel {
        contingency: contingency.to_string(),
        features: selected.iter().map(|&j| x.names[j].clone()).collect(),
        weights: fit.weights,
        bias: fit.bias,
        feature_mean: selected.iter().map(|&j| x.mean[j]).collect(),
        feature_std: selected.iter().map(|&j| x.std[j]).collect(),
        steps,
        first_step,
        samples: x.len(),
        unsecure_samples: x.unsecure.iter().filter(|u| **u).count(),
        training_samples: train.len(),
        test_rows: fit.test_rows,
    })
}

/// `boundary_<id>.json` content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub manifest_hash: String,
    pub model: BoundaryModel,
    /// Raw-unit coefficients in `model.features` order.
    pub coefficients: Vec<f64>,
    pub offset: f64,
    pub equation: String,
}

/// Report and scatter file contents for one model.
///
/// The scatter CSV holds every sample on the first two selected features
/// (the second coordinate is 0 for one-feature models) and 50 points of the
/// boundary line, other features held at their mean.
pub fn boundary_report(model: &BoundaryModel, x: &FeatureMatrix, manifest_hash: &str) -> Result<(BoundaryReport, String)> {
    let (a, a0) = model.raw_hyperplane();
    let report = BoundaryReport {
        manifest_hash: manifest_hash.to_string(),
        model: model.clone(),
        coefficients: a.clone(),
        offset: a0,
        equation: model.equation(),
    };
    let cols: Vec<usize> = model
        .features
        .iter()
        .map(|f| x.feature(f).ok_or_else(|| Error::Data(format!("feature {f} missing from data"))))
        .collect::<Result<_>>()?;
    let xs = |r: usize| x.rows[r][cols[0]];
    let ys = |r: usize| if cols.len() > 1 { x.rows[r][cols[1]] } else { 0.0 };
    let mut w = csv::Writer::from_writer(Vec::new());
    let yname = model.features.get(1).map_or("none", |s| s.as_str());
    w.write_record(["kind", &model.features[0], yname, "label", "predicted"])?;
    for r in 0..x.len() {
        let score = cols.iter().zip(&a).map(|(&j, c)| c * x.rows[r][j]).sum::<f64>() + a0;
        let lab = |u: bool| if u { "unsecure" } else { "secure" };
        w.write_record([
            "sample",
            &xs(r).to_string(),
            &ys(r).to_string(),
            lab(x.unsecure[r]),
            lab(score > 0.0),
        ])?;
    }
    // other selected features at their mean fold into the offset
    let rest: f64 = cols.iter().zip(&a).skip(2).map(|(&j, c)| c * x.mean[j]).sum();
    let (lo, hi) = (0..x.len())
        .map(xs)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (ylo, yhi) = (0..x.len())
        .map(ys)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    for k in 0..50 {
        let t = k as f64 / 49.0;
        let point = if cols.len() > 1 && a[1].abs() > 1e-12 * a[0].abs().max(1e-300) {
            let px = lo + t * (hi - lo);
            Some((px, -(a[0] * px + a0 + rest) / a[1]))
        } else if a[0] != 0.0 {
            Some((-(a0 + rest) / a[0], ylo + t * (yhi - ylo)))
        } else {
            None
        };
        if let Some((px, py)) = point {
            w.write_record(["boundary", &px.to_string(), &py.to_string(), "", ""])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok((report, String::from_utf8(bytes).expect("csv is utf-8")))
}

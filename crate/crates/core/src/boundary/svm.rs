//! Soft-margin linear classifier by dual coordinate descent.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Penalty on the hinge loss before class weighting.
pub const C: f64 = 1.0;
pub const TRAIN_FRACTION: f64 = 0.7;
const MAX_EPOCHS: usize = 2000;
const TOL: f64 = 1e-6;

/// Stratified 70/30 split. One label-independent permutation orders every
/// row; the first 70% of each class (in that order) train.
pub fn split(unsecure: &[bool], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..unsecure.len()).collect();
    perm.shuffle(&mut stream(seed, Purpose::Split, 0, 0, 0));
    let n_pos = unsecure.iter().filter(|u| **u).count();
    let quota = |n: usize| (TRAIN_FRACTION * n as f64).ceil() as usize;
    let (q_pos, q_neg) = (quota(n_pos), quota(unsecure.len() - n_pos));
    let (mut seen_pos, mut seen_neg) = (0, 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in perm {
        let (seen, q) = if unsecure[i] {
            (&mut seen_pos, q_pos)
        } else {
            (&mut seen_neg, q_neg)
        };
        if *seen < q {
            train.push(i);
        } else {
            test.push(i);
        }
        *seen += 1;
    }
    (train, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// Per selected feature, in standardised units.
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Held-out accuracy (training accuracy when nothing is held out).
    pub accuracy: f64,
    pub train_accuracy: f64,
    /// Primal objective `½(|w|² + b²) + Σ C_i hinge_i` on the training rows.
    pub objective: f64,
    pub train_hinge: f64,
    pub test_rows: Vec<usize>,
}

impl LinearFit {
    pub fn decision(&self, x: &FeatureMatrix, features: &[usize], row: usize) -> f64 {
        features
            .iter()
            .zip(&self.weights)
            .map(|(&j, w)| w * x.standardized(row, j))
            .sum::<f64>()
            + self.bias
    }
}

/// Class-weighted L2 hinge-loss classifier on `features`; unsecure is the
/// positive class. The bias is an extra constant input and is regularised.
pub fn train_linear(x: &FeatureMatrix, features: &[usize], split_seed: u64) -> Result<LinearFit> {
    if features.is_empty() {
        return Err(Error::Config("no features to train on".into()));
    }
    let (train, test) = split(&x.unsecure, split_seed);
    let n_pos = train.iter().filter(|&&i| x.unsecure[i]).count();
    let n_neg = train.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let which = if n_pos == 0 { "all secure" } else { "all unsecure" };
        return Err(Error::SingleClass(which.into()));
    }
    let n = train.len() as f64;
    let c_of = |u: bool| {
        if u {
            C * n / (2.0 * n_pos as f64)
        } else {
            C * n / (2.0 * n_neg as f64)
        }
    };
    let d = features.len();
    let rows: Vec<Vec<f64>> = train
        .iter()
        .map(|&i| {
            let mut r: Vec<f64> = features.iter().map(|&j| x.standardized(i, j)).collect();
            r.push(1.0);
            r
        })
        .collect();
    let y: Vec<f64> = train.iter().map(|&i| if x.unsecure[i] { 1.0 } else { -1.0 }).collect();
    let cap: Vec<f64> = train.iter().map(|&i| c_of(x.unsecure[i])).collect();
    let qii: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut alpha = vec![0.0; rows.len()];
    let mut w = vec![0.0; d + 1];
    for _ in 0..MAX_EPOCHS {
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..rows.len() {
            let g = y[i] * dot(&w, &rows[i]) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= cap[i] {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 && qii[i] > 0.0 {
                let new = (alpha[i] - g / qii[i]).clamp(0.0, cap[i]);
                let step = (new - alpha[i]) * y[i];
                alpha[i] = new;
                for (wk, rk) in w.iter_mut().zip(&rows[i]) {
                    *wk += step * rk;
                }
            }
        }
        if pg_max - pg_min < TOL {
            break;
        }
    }
    let hinge: Vec<f64> = rows.iter().zip(&y).map(|(r, yi)| (1.0 - yi * dot(&w, r)).max(0.0)).collect();
    let train_hinge: f64 = hinge.iter().zip(&cap).map(|(h, c)| h * c).sum();
    let objective = 0.5 * dot(&w, &w) + train_hinge;
    let bias = w[d];
    w.truncate(d);
    let mut fit = LinearFit {
        weights: w,
        bias,
        accuracy: 0.0,
        train_accuracy: 0.0,
        objective,
        train_hinge,
        test_rows: test,
    };
    let correct = |rows: &[usize]| {
        rows.iter()
            .filter(|&&i| (fit.decision(x, features, i) > 0.0) == x.unsecure[i])
            .count()
    };
    let train_accuracy = correct(&train) as f64 / train.len() as f64;
    let accuracy = if fit.test_rows.is_empty() {
        train_accuracy
    } else {
        correct(&fit.test_rows) as f64 / fit.test_rows.len() as f64
    };
    fit.train_accuracy = train_accuracy;
    fit.accuracy = accuracy;
    Ok(fit)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

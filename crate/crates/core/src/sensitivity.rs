//! Relevance of protection-parameter uncertainty for one scenario.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contingency::Contingency;
use crate::dynsim::{run, EventKind, EventSequence, Layout, ProtectionParamSet, ScenarioResult, SimOptions};
use crate::error::{Error, Result};
use crate::grid::NetworkCase;
use crate::rng::{stream, Purpose};
use crate::scenario::Snapshot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityReason {
    OrderSwap,
    NewEvent,
    None,
}

impl SensitivityReason {
    pub fn label(self) -> &'static str {
        match self {
            SensitivityReason::OrderSwap => "order-swap",
            SensitivityReason::NewEvent => "new-event",
            SensitivityReason::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityVerdict {
    pub sensitive: bool,
    pub reason: SensitivityReason,
    pub slow: EventSequence,
    pub fast: EventSequence,
}

/// Compare the acting (slowest) sequence with the shadow (fastest) one.
///
/// Events are matched by (device, kind). Differing sets give `NewEvent`;
/// otherwise a pair with `a` strictly before `b` in `slow` but the fast time
/// of `b` not after the slow time of `a` gives `OrderSwap`.
pub fn sequences_sensitive(slow: &EventSequence, fast: &EventSequence) -> (bool, SensitivityReason) {
    let keys = |s: &EventSequence| s.iter().map(|e| (e.device.clone(), e.kind)).collect::<BTreeSet<_>>();
    if keys(slow) != keys(fast) {
        return (true, SensitivityReason::NewEvent);
    }
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(slow.len());
    let mut seen = BTreeSet::new();
    for e in slow.iter() {
        if seen.insert(e.key()) {
            let tf = fast.time_of(&e.device, e.kind).expect("same key set");
            pairs.push((e.time, tf));
        }
    }
    for (ta, _) in &pairs {
        for (tb, tbf) in &pairs {
            if ta < tb && tbf <= ta {
                return (true, SensitivityReason::OrderSwap);
            }
        }
    }
    (false, SensitivityReason::None)
}

/// One simulation with the slowest set acting and the fastest set shadowing.
pub fn dual_run(
    case: &NetworkCase,
    snapshot: &Snapshot,
    contingency: &Contingency,
    opts: &SimOptions,
) -> (SensitivityVerdict, ScenarioResult) {
    let slow_set = ProtectionParamSet::slowest(case);
    let fast_set = ProtectionParamSet::fastest(case);
    let out = run(case, snapshot, Some(contingency), &slow_set, Some(&fast_set), opts);
    let slow = out.result.events.clone();
    let fast = out.shadow.unwrap_or_default();
    let (sensitive, reason) = sequences_sensitive(&slow, &fast);
    (
        SensitivityVerdict {
            sensitive,
            reason,
            slow,
            fast,
        },
        out.result,
    )
}

/// `k` simulations with independent random parameter sets drawn from
/// `(master, ProtectionParams, contingency, sample, j)`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_mc(
    case: &NetworkCase,
    snapshot: &Snapshot,
    contingency: &Contingency,
    k: usize,
    opts: &SimOptions,
    master: u64,
    contingency_key: u64,
    sample_key: u64,
) -> Result<Vec<ScenarioResult>> {
    if k == 0 {
        return Err(Error::Config("conditional MC needs K >= 1".into()));
    }
    Ok((0..k)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(master, Purpose::ProtectionParams, contingency_key, sample_key, j as u64);
            let params = ProtectionParamSet::random(case, j as u64, &mut rng);
            run(case, snapshot, Some(contingency), &params, None, opts).result
        })
        .collect())
}

/// Slowest parameters everywhere except the listed devices (branch, machine
/// or load ids), whose breaker and relays take the fastest extreme.
pub fn corner_params(case: &NetworkCase, fast_devices: &[&str]) -> ProtectionParamSet {
    let mut p = ProtectionParamSet::slowest(case);
    let fast = ProtectionParamSet::fastest(case);
    let l = Layout::of(case);
    for d in fast_devices {
        let (breakers, relays, mults): (Vec<usize>, Vec<usize>, Vec<usize>) = if let Some(k) = case.branch_idx(d) {
            let r = vec![l.distance_relay(k, 0), l.distance_relay(k, 1)];
            (vec![l.branch_breaker(k)], r.clone(), r)
        } else if let Some(m) = case.machine_idx(d) {
            (vec![l.machine_breaker(m)], vec![l.machine_relay(m)], vec![])
        } else if let Some(i) = case.loads.iter().position(|x| x.id == *d) {
            (vec![l.load_breaker(i)], vec![l.load_relay(i)], vec![])
        } else {
            continue;
        };
        for b in breakers {
            p.breaker_time_s[b] = fast.breaker_time_s[b];
        }
        for r in relays {
            p.pickup_offset_s[r] = fast.pickup_offset_s[r];
        }
        for r in mults {
            p.impedance_multiplier[r] = fast.impedance_multiplier[r];
        }
    }
    p
}

/// Devices operated by protection in either sequence (scripted clearing excluded), sorted.
pub fn involved_devices(verdict: &SensitivityVerdict) -> Vec<String> {
    let set: BTreeSet<String> = verdict
        .slow
        .iter()
        .chain(verdict.fast.iter())
        .filter(|e| e.cause != "scripted" && e.kind != EventKind::IslandCollapse && e.kind != EventKind::FaultCleared)
        .map(|e| e.device.clone())
        .collect();
    set.into_iter().collect()
}

/// Every device-level corner over `devices` (2^n simulations), each device
/// entirely slow or entirely fast.
pub fn corner_simulations(
    case: &NetworkCase,
    snapshot: &Snapshot,
    contingency: &Contingency,
    devices: &[String],
    opts: &SimOptions,
) -> Result<Vec<ScenarioResult>> {
    if devices.len() > 12 {
        return Err(Error::Config(format!("{} devices give too many corners", devices.len())));
    }
    Ok((0..1usize << devices.len())
        .into_par_iter()
        .map(|mask| {
            let fast: Vec<&str> = (0..devices.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| devices[i].as_str())
                .collect();
            let params = corner_params(case, &fast);
            run(case, snapshot, Some(contingency), &params, None, opts).result
        })
        .collect())
}

/// One line of the sensitivity log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityLogRow {
    pub scenario: String,
    pub reason: SensitivityReason,
    pub k: usize,
    pub cost_min: f64,
    pub cost_mean: f64,
    pub cost_max: f64,
}

impl SensitivityLogRow {
    pub fn new(scenario: String, reason: SensitivityReason, costs: &[f64]) -> Self {
        let k = costs.len();
        let (lo, hi) = costs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(*c), hi.max(*c)));
        SensitivityLogRow {
            scenario,
            reason,
            k,
            cost_min: lo,
            cost_mean: costs.iter().sum::<f64>() / k as f64,
            cost_max: hi,
        }
    }
}

pub fn sensitivity_log_csv(rows: &[SensitivityLogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "reason", "k", "cost_min", "cost_mean", "cost_max"])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.reason.label().to_string(),
            r.k.to_string(),
            r.cost_min.to_string(),
            r.cost_mean.to_string(),
            r.cost_max.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#![allow(dead_code)]

use pdsa_core::contingency::{ClearingMode, Contingency};
use pdsa_core::dynsim::{simulate, ProtectionParamSet, SimOptions};
use pdsa_core::grid::{bundled, NetworkCase};
use pdsa_core::scenario::{dispatch_snapshot, generate_mc_year, DispatchConfig, Snapshot, WeatherModel};
use serde_json::json;

pub fn desk() -> NetworkCase {
    NetworkCase::from_json(bundled::DESK_GRID).unwrap()
}

/// Dispatched desk-grid snapshot of year 0, seed 7.
pub fn desk_snapshot(case: &NetworkCase, hour: usize) -> Snapshot {
    let weather = WeatherModel::from_json(bundled::WEATHER).unwrap();
    let r = &generate_mc_year(&weather, 7, 0)[hour];
    dispatch_snapshot(case, &DispatchConfig::default(), r, 0).unwrap()
}

/// Snapshot with base-case loads and the given machine outputs; unlisted
/// machines are decommitted.
pub fn manual_snapshot(case: &NetworkCase, p_gen: &[(&str, f64)], reserve: f64) -> Snapshot {
    let n = case.machines.len();
    let mut committed = vec![false; n];
    let mut p = vec![0.0; n];
    for (id, mw) in p_gen {
        let k = case.machine_idx(id).unwrap();
        committed[k] = true;
        p[k] = *mw;
    }
    Snapshot {
        year: 0,
        hour: 0,
        load_p: case.loads.iter().map(|l| l.p_mw).collect(),
        load_q: case.loads.iter().map(|l| l.q_mvar).collect(),
        committed,
        p_gen: p,
        reserve: case.machines.iter().map(|m| if m.is_sync() { reserve } else { 0.0 }).collect(),
        available: case.machines.iter().map(|m| m.p_max_mw).collect(),
        flows: vec![0.0; case.branches.len()],
    }
}

pub fn two_bus(machines: serde_json::Value, loads: serde_json::Value, lines: &[(&str, f64)]) -> NetworkCase {
    let branches: Vec<_> = lines
        .iter()
        .map(|(id, x)| {
            json!({"id": id, "from": "B1", "to": "B2", "r": 0.0, "x": x, "b": 0.0,
                   "length_km": 50.0, "rating_mva": 5000.0})
        })
        .collect();
    let case = json!({
        "name": "test", "base_mva": 100.0, "fault_rate_per_100km_year": 2.5,
        "buses": [{"id": "B1", "kv": 400.0, "zone": "A"}, {"id": "B2", "kv": 400.0, "zone": "A"}],
        "branches": branches, "machines": machines, "loads": loads,
    });
    NetworkCase::from_json(&case.to_string()).unwrap()
}

/// Generator G1 (1000 MW) feeding a near-infinite bus through two parallel lines.
pub fn smib() -> NetworkCase {
    two_bus(
        json!([
            {"id": "G1", "bus": "B1", "kind": "sync", "p_max_mw": 1000.0, "h_s": 3.5, "x_transient": 0.03},
            {"id": "INF", "bus": "B2", "kind": "sync", "p_max_mw": 100000.0, "h_s": 1000.0, "x_transient": 0.0001}
        ]),
        json!([]),
        &[("L1", 0.02), ("L2", 0.02)],
    )
}

pub fn smib_options() -> SimOptions {
    let mut o = SimOptions::default();
    o.damping_pu = 0.0;
    o.protection.zone_reach = [0.0; 3];
    o.protection.frt_voltage_pu = 0.0;
    o.protection.undervoltage_pu = 0.0;
    o.horizon_s = 5.0;
    o
}

pub fn delayed(case: &NetworkCase, branch: &str, bus: &str, clearing: f64) -> Contingency {
    Contingency {
        id: format!("{branch}@{bus}"),
        mode: ClearingMode::DelayedN1,
        branch: case.branch_idx(branch).unwrap(),
        fault_bus: case.bus_idx(bus).unwrap(),
        second_branch: None,
        frequency: 1.0,
        clearing_time: clearing,
    }
}

/// Only loss-of-synchronism protection, so the trajectory is the classical
/// first-swing response.
pub fn los_only_options(horizon_s: f64) -> SimOptions {
    let mut o = SimOptions::default();
    o.horizon_s = horizon_s;
    o.protection.zone_reach = [0.0; 3];
    o.protection.frt_voltage_pu = 0.0;
    o.protection.undervoltage_pu = 0.0;
    o.protection.ufls_thresholds_hz.clear();
    o.protection.inverter_overfrequency_hz = f64::INFINITY;
    o.protection.collapse_frequency_hz = 0.0;
    o
}

/// Simulated CCT by bisection on the appearance of a loss-of-synchronism
/// trip; `None` when `hi` is still stable.
pub fn bisect_cct(case: &NetworkCase, snap: &Snapshot, c: &Contingency, opts: &SimOptions, hi: f64, tol: f64) -> Option<f64> {
    let params = ProtectionParamSet::nominal(case);
    let unstable = |tc: f64| {
        let mut c = c.clone();
        c.clearing_time = tc;
        let r = simulate(case, snap, Some(&c), &params, opts);
        assert!(r.solver_failure.is_none(), "{:?}", r.solver_failure);
        let lost = r.events.iter().any(|e| e.cause == "loss-of-synchronism");
        lost
    };
    if !unstable(hi) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if unstable(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn bus_row(ids: &[&str]) -> Vec<serde_json::Value> {
    ids.iter().map(|id| json!({"id": id, "kv": 400.0, "zone": "A"})).collect()
}

fn line(id: &str, from: &str, to: &str, x: f64) -> serde_json::Value {
    json!({"id": id, "from": from, "to": to, "r": 0.0, "x": x, "b": 0.0, "length_km": 50.0, "rating_mva": 5000.0})
}

/// Ride-through and undervoltage tripping off, so only distance relays,
/// UFLS and island collapse act.
pub fn race_options() -> SimOptions {
    let mut o = SimOptions::default();
    o.protection.frt_voltage_pu = 0.0;
    o.protection.undervoltage_pu = 0.0;
    o.horizon_s = 30.0;
    o
}

/// Order-swap race. G1 and load D1 at B1 hang off a stiff source at B2
/// through L1; a delayed fault on L3 at B1 separates B3 and lets L1's zone 2
/// race the clearing. Whether L1 opens before or after the fault clears
/// sets G1's speed at separation, and with it the number of UFLS stages in
/// the B1 island.
pub fn order_swap_fixture(clearing_s: f64) -> (NetworkCase, Snapshot, Contingency) {
    let pl = 667.0;
    let case = json!({
        "name": "order-swap", "base_mva": 100.0, "fault_rate_per_100km_year": 2.5,
        "buses": bus_row(&["B1", "B2", "B3"]),
        "branches": [line("L1", "B2", "B1", 0.02), line("L3", "B1", "B3", 0.02)],
        "machines": [
            {"id": "G1", "bus": "B1", "kind": "sync", "p_max_mw": 1000.0, "h_s": 5.0, "x_transient": 0.03,
             "droop": 0.05, "primary_reserve_mw": 300.0},
            {"id": "INF", "bus": "B2", "kind": "sync", "p_max_mw": 100000.0, "h_s": 1000.0, "x_transient": 0.0001, "droop": 0.05}
        ],
        "loads": [{"id": "D1", "bus": "B1", "p_mw": pl, "q_mvar": 0.0}, {"id": "D3", "bus": "B3", "p_mw": 10.0, "q_mvar": 0.0}],
    });
    let case = NetworkCase::from_json(&case.to_string()).unwrap();
    let snap = Snapshot {
        year: 0,
        hour: 0,
        load_p: vec![pl, 10.0],
        load_q: vec![0.0, 0.0],
        committed: vec![true, true],
        p_gen: vec![300.0, pl + 10.0 - 300.0],
        reserve: vec![300.0, 0.0],
        available: vec![1000.0, 100000.0],
        flows: vec![0.0; 2],
    };
    let c = delayed(&case, "L3", "B1", clearing_s);
    (case, snap, c)
}

/// New-event race. A stiff source at B4 feeds B2 through L4 and B1 through
/// L1; a delayed fault on L3 at B1 is inside L4's zone 2 only with fast
/// parameters, so the fast sequence trips L4 and loses D2 as well.
pub fn new_event_fixture() -> (NetworkCase, Snapshot, Contingency) {
    let case = json!({
        "name": "new-event", "base_mva": 100.0, "fault_rate_per_100km_year": 2.5,
        "buses": bus_row(&["B1", "B2", "B3", "B4"]),
        "branches": [line("L4", "B4", "B2", 0.05), line("L1", "B2", "B1", 0.01), line("L3", "B1", "B3", 0.02)],
        "machines": [
            {"id": "INF", "bus": "B4", "kind": "sync", "p_max_mw": 100000.0, "h_s": 1000.0, "x_transient": 0.0001, "droop": 0.05}
        ],
        "loads": [{"id": "D1", "bus": "B1", "p_mw": 200.0, "q_mvar": 0.0}, {"id": "D2", "bus": "B2", "p_mw": 300.0, "q_mvar": 0.0}],
    });
    let case = NetworkCase::from_json(&case.to_string()).unwrap();
    let snap = Snapshot {
        year: 0,
        hour: 0,
        load_p: vec![200.0, 300.0],
        load_q: vec![0.0, 0.0],
        committed: vec![true],
        p_gen: vec![500.0],
        reserve: vec![0.0],
        available: vec![100000.0],
        flows: vec![0.0; 3],
    };
    let c = delayed(&case, "L3", "B1", 0.4);
    (case, snap, c)
}

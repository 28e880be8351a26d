//! Cheap stability indicators that classify a scenario before simulation.

mod audit;
mod eea;

pub use audit::{audit, audit_csv, AuditRecord, ScreeningAudit};
pub use eea::eea_cct;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::contingency::Contingency;
use crate::dynsim::F0_HZ;
use crate::grid::{admittance, connected_islands, AdmittanceMode, NetworkCase, Topology};
use crate::scenario::Snapshot;

/// Ratios and rates are clamped here so verdicts stay finite in JSON.
const CLAMP: f64 = 1.0e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningConfig {
    /// Safety margin: angle-unsecure when `clearing + margin > CCT`. A larger
    /// margin flags more scenarios; negative values are allowed.
    pub cct_margin_s: f64,
    /// Short-circuit power must exceed this multiple of the apparent load power.
    pub short_circuit_ratio: f64,
    pub max_rocof_hz_s: f64,
    /// Largest lost generation as a fraction of primary reserve.
    pub max_reserve_fraction: f64,
    /// CCT reported when no clearing time destabilises the system.
    pub cct_cap_s: f64,
    pub pv_voltage_pu: f64,
    /// Ride-through limit of the units (see the simulator's protection
    /// settings): a unit whose fault-retained voltage is below it for longer
    /// than `frt_delay_s` counts as lost generation.
    pub frt_voltage_pu: f64,
    pub frt_delay_s: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig {
            cct_margin_s: 0.050,
            short_circuit_ratio: 4.0,
            max_rocof_hz_s: 0.4,
            max_reserve_fraction: 0.7,
            cct_cap_s: 10.0,
            pv_voltage_pu: 1.02,
            frt_voltage_pu: 0.3,
            frt_delay_s: 0.150,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningVerdict {
    pub secure: bool,
    pub angle_secure: bool,
    pub voltage_secure: bool,
    pub frequency_secure: bool,
    pub cct_s: f64,
    pub clearing_time_s: f64,
    /// Smallest short-circuit to load apparent-power ratio over loaded buses.
    pub voltage_ratio: f64,
    pub rocof_hz_s: f64,
    pub lost_generation_mw: f64,
    /// Lost generation over the primary reserve left in the main island.
    pub lost_reserve_fraction: f64,
    pub cct_margin_s: f64,
}

/// Classify `contingency` on `snap`; `None` is the undisturbed system.
///
/// A CCT that cannot be computed (no pre-fault solution) counts as zero, so
/// the scenario goes to simulation.
pub fn screen(case: &NetworkCase, snap: &Snapshot, contingency: Option<&Contingency>, cfg: &ScreeningConfig) -> ScreeningVerdict {
    let Some(c) = contingency else {
        return ScreeningVerdict {
            secure: true,
            angle_secure: true,
            voltage_secure: true,
            frequency_secure: true,
            cct_s: cfg.cct_cap_s,
            clearing_time_s: 0.0,
            voltage_ratio: short_circuit_ratio(case, snap, &snap.topology(case)),
            rocof_hz_s: 0.0,
            lost_generation_mw: 0.0,
            lost_reserve_fraction: 0.0,
            cct_margin_s: cfg.cct_margin_s,
        };
    };
    let cct = eea_cct(case, snap, c, cfg.cct_cap_s, cfg.pv_voltage_pu).unwrap_or(0.0);
    let angle_secure = c.clearing_time + cfg.cct_margin_s <= cct;

    let post = snap.topology(case).without_branches(&c.cleared_branches());
    let voltage_ratio = short_circuit_ratio(case, snap, &post);
    let voltage_secure = voltage_ratio >= cfg.short_circuit_ratio;

    let frt = if c.clearing_time > cfg.frt_delay_s {
        ride_through_trips(case, snap, c.fault_bus, cfg.frt_voltage_pu)
    } else {
        vec![false; case.machines.len()]
    };
    let f = frequency_indicator(case, snap, &post, &frt);
    let frequency_secure = f.rocof <= cfg.max_rocof_hz_s && f.fraction <= cfg.max_reserve_fraction;

    ScreeningVerdict {
        secure: angle_secure && voltage_secure && frequency_secure,
        angle_secure,
        voltage_secure,
        frequency_secure,
        cct_s: cct,
        clearing_time_s: c.clearing_time,
        voltage_ratio,
        rocof_hz_s: f.rocof,
        lost_generation_mw: f.lost_mw,
        lost_reserve_fraction: f.fraction,
        cct_margin_s: cfg.cct_margin_s,
    }
}

/// Smallest `S_sc / |S_load|` over loaded buses, with `S_sc = 1 / |Z_th|` at
/// 1 pu from the subtransient admittance of `topo`.
fn short_circuit_ratio(case: &NetworkCase, snap: &Snapshot, topo: &Topology) -> f64 {
    let n = case.n_bus();
    let mut s_load = vec![0.0; n];
    for (k, l) in case.loads.iter().enumerate() {
        s_load[l.bus_idx] += Complex64::new(snap.load_p[k], snap.load_q[k]).norm() / case.base_mva;
    }
    let Ok(y) = admittance(case, topo, AdmittanceMode::Subtransient) else {
        return 0.0;
    };
    let mut worst = CLAMP;
    for island in connected_islands(case, topo) {
        if island.iter().all(|&b| s_load[b] <= 0.0) {
            continue;
        }
        let lu = y.restrict(&island).lu();
        for (k, &b) in island.iter().enumerate() {
            if s_load[b] <= 0.0 {
                continue;
            }
            let mut rhs = nalgebra::DVector::from_element(island.len(), Complex64::new(0.0, 0.0));
            rhs[k] = Complex64::new(1.0, 0.0);
            let z = lu.solve(&rhs).map(|z| z[k].norm()).filter(|z| z.is_finite() && *z < 1e12);
            // no source behind the bus: zero short-circuit power
            let ssc = z.map_or(0.0, |z| 1.0 / z);
            worst = worst.min(ssc / s_load[b]);
        }
    }
    worst
}

struct Frequency {
    rocof: f64,
    lost_mw: f64,
    fraction: f64,
}

/// Committed units whose voltage during a bolted fault at `fault_bus` falls
/// below `limit`. Retained voltages come from superposition on a flat 1 pu
/// pre-fault profile with the subtransient admittance; inverters inject
/// nothing, which errs towards predicting a trip.
fn ride_through_trips(case: &NetworkCase, snap: &Snapshot, fault_bus: usize, limit: f64) -> Vec<bool> {
    let mut trips = vec![false; case.machines.len()];
    let topo = snap.topology(case);
    let Some(island) = connected_islands(case, &topo).into_iter().find(|i| i.contains(&fault_bus)) else {
        return trips;
    };
    let Ok(y) = admittance(case, &topo, AdmittanceMode::Subtransient) else {
        return trips;
    };
    let f = island.iter().position(|&b| b == fault_bus).expect("fault bus is in its island");
    let mut rhs = nalgebra::DVector::from_element(island.len(), Complex64::new(0.0, 0.0));
    rhs[f] = Complex64::new(1.0, 0.0);
    let Some(z) = y.restrict(&island).lu().solve(&rhs) else {
        return trips;
    };
    if !(z[f].norm().is_finite() && z[f].norm() > 0.0) {
        return trips;
    }
    for (k, m) in case.machines.iter().enumerate() {
        if snap.committed[k] {
            if let Some(pos) = island.iter().position(|&b| b == m.bus_idx) {
                trips[k] = (Complex64::new(1.0, 0.0) - z[pos] / z[f]).norm() < limit;
            }
        }
    }
    trips
}

/// Generation lost to the outage (separated from the main island, the one
/// with the largest load, or tripped on ride-through) and the resulting
/// initial RoCoF of the main island.
fn frequency_indicator(case: &NetworkCase, snap: &Snapshot, topo: &Topology, frt_trips: &[bool]) -> Frequency {
    let islands = connected_islands(case, topo);
    let mut label = vec![usize::MAX; case.n_bus()];
    for (k, isl) in islands.iter().enumerate() {
        for &b in isl {
            label[b] = k;
        }
    }
    let mut load = vec![0.0; islands.len()];
    for (k, l) in case.loads.iter().enumerate() {
        load[label[l.bus_idx]] += snap.load_p[k];
    }
    let main = (0..islands.len())
        .max_by(|&a, &b| load[a].total_cmp(&load[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let lost_load: f64 = load.iter().enumerate().filter(|(k, _)| *k != main).map(|(_, p)| p).sum();
    let (mut lost_gen, mut inertia, mut reserve) = (0.0, 0.0, 0.0);
    for (k, m) in case.machines.iter().enumerate() {
        if !snap.committed[k] {
            continue;
        }
        if label[m.bus_idx] == main && !frt_trips[k] {
            if m.is_sync() {
                inertia += m.h_s * m.p_max_mw;
                reserve += snap.reserve[k];
            }
        } else {
            lost_gen += snap.p_gen[k];
        }
    }
    let imbalance = (lost_gen - lost_load).abs();
    let rocof = if imbalance == 0.0 {
        0.0
    } else if inertia > 0.0 {
        (imbalance * F0_HZ / (2.0 * inertia)).min(CLAMP)
    } else {
        CLAMP
    };
    let fraction = if lost_gen == 0.0 {
        0.0
    } else if reserve > 0.0 {
        (lost_gen / reserve).min(CLAMP)
    } else {
        CLAMP
    };
    Frequency {
        rocof,
        lost_mw: lost_gen,
        fraction,
    }
}

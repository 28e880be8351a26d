//! Merit-order dispatch with reserve holdback and LODF-based N-1 repair.

use serde::{Deserialize, Serialize};

use super::weather::Realization;
use crate::error::{Error, Result};
use crate::grid::powerflow::DcModel;
use crate::grid::{NetworkCase, Resource, Topology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispatchConfig {
    /// Fixed reserve requirement. `None` means the largest committed infeed.
    pub reserve_requirement_mw: Option<f64>,
    /// Cap on the inverter-based share of demand.
    pub max_nonsync_share: f64,
    pub max_repair_iterations: usize,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig {
            reserve_requirement_mw: None,
            max_nonsync_share: 0.75,
            max_repair_iterations: 400,
        }
    }
}

/// One dispatched operating condition. Vectors are indexed like the case.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub year: u32,
    pub hour: u32,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub committed: Vec<bool>,
    pub p_gen: Vec<f64>,
    pub reserve: Vec<f64>,
    /// Available output before curtailment (P_max for synchronous units).
    pub available: Vec<f64>,
    /// DC branch flows, MW from→to.
    pub flows: Vec<f64>,
}

impl Snapshot {
    pub fn total_load(&self) -> f64 {
        self.load_p.iter().sum()
    }

    pub fn total_generation(&self) -> f64 {
        self.p_gen.iter().sum()
    }

    pub fn total_reserve(&self) -> f64 {
        self.reserve.iter().sum()
    }

    /// Machines and loads in service; every branch from the base case.
    pub fn topology(&self, case: &NetworkCase) -> Topology {
        let mut t = case.base_topology();
        for (k, on) in self.committed.iter().enumerate() {
            t.machines[k] = *on;
        }
        t
    }

    /// Bus injections in MW (generation minus load).
    pub fn injections(&self, case: &NetworkCase) -> Vec<f64> {
        let mut inj = vec![0.0; case.n_bus()];
        for (k, m) in case.machines.iter().enumerate() {
            if self.committed[k] {
                inj[m.bus_idx] += self.p_gen[k];
            }
        }
        for (k, l) in case.loads.iter().enumerate() {
            inj[l.bus_idx] -= self.load_p[k];
        }
        inj
    }

    /// Named snapshot-level features used by the boundary classifiers.
    pub fn features(&self, case: &NetworkCase) -> Vec<(String, f64)> {
        let mut out = vec![("total_load_mw".to_string(), self.total_load())];
        for zone in case.zones() {
            let w: f64 = case
                .machines
                .iter()
                .enumerate()
                .filter(|(_, m)| m.resource == Some(Resource::Wind) && case.buses[m.bus_idx].zone == zone)
                .map(|(k, _)| self.p_gen[k])
                .sum();
            if case
                .machines
                .iter()
                .any(|m| m.resource == Some(Resource::Wind) && case.buses[m.bus_idx].zone == zone)
            {
                out.push((format!("wind_{zone}_mw"), w));
            }
        }
        for (k, m) in case.machines.iter().enumerate() {
            out.push((format!("p_{}_mw", m.id), self.p_gen[k]));
        }
        for (k, b) in case.branches.iter().enumerate() {
            out.push((format!("flow_{}_mw", b.id), self.flows[k]));
        }
        out
    }
}

/// Renewable availability (MW) per machine for one hour; P_max for sync units.
pub fn availability(case: &NetworkCase, r: &Realization) -> Vec<f64> {
    case.machines
        .iter()
        .map(|m| {
            let zone = &case.buses[m.bus_idx].zone;
            let cf = match m.resource {
                None => return m.p_max_mw,
                Some(Resource::Wind) => r.wind_cf.get(zone).copied().unwrap_or(0.0),
                Some(Resource::Solar) => r.solar_cf.get(zone).copied().unwrap_or(0.0),
            };
            if m.is_sync() {
                m.p_max_mw
            } else {
                cf * m.p_max_mw
            }
        })
        .collect()
}

struct Economic {
    committed: Vec<bool>,
    p: Vec<f64>,
    holdback: Vec<f64>,
    /// Output cap per unit so no single unit exceeds the reserve cover.
    cap: Vec<f64>,
}

fn merit_order(case: &NetworkCase) -> Vec<usize> {
    let mut order: Vec<usize> = (0..case.machines.len()).filter(|&k| case.machines[k].is_sync()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&case.machines[a], &case.machines[b]);
        ma.cost_eur_per_mwh.total_cmp(&mb.cost_eur_per_mwh).then_with(|| ma.id.cmp(&mb.id))
    });
    order
}

/// Dispatch `demand` MW over the first `n_commit` units of the merit order.
fn economic_dispatch(case: &NetworkCase, cfg: &DispatchConfig, order: &[usize], n_commit: usize, demand: f64) -> Option<Economic> {
    let nm = case.machines.len();
    let on = &order[..n_commit];
    let mut committed = vec![false; nm];
    for &k in on {
        committed[k] = true;
    }
    let largest = on.iter().map(|&k| case.machines[k].p_max_mw).fold(0.0, f64::max);
    // no single committed unit can carry less than an equal share
    let mut requirement = cfg.reserve_requirement_mw.unwrap_or(demand.max(0.0) / n_commit as f64);
    for _ in 0..200 {
        let mut holdback = vec![0.0; nm];
        let mut left = requirement;
        for &k in on.iter().rev() {
            let h = case.machines[k].primary_reserve_mw.min(left).max(0.0);
            holdback[k] = h;
            left -= h;
        }
        if left > 1e-9 {
            return None;
        }
        // uncommitted units keep a cap so N-1 repair may start them
        let cap: Vec<f64> = (0..nm)
            .map(|k| {
                let m = &case.machines[k];
                let c = m.p_max_mw - holdback[k];
                if cfg.reserve_requirement_mw.is_none() {
                    c.min(requirement.max(0.0))
                } else {
                    c
                }
            })
            .collect();
        let mut p = vec![0.0; nm];
        let mut rest = demand;
        for &k in on {
            let take = cap[k].min(rest).max(0.0);
            p[k] = take;
            rest -= take;
        }
        let max_p = on.iter().map(|&k| p[k]).fold(0.0, f64::max);
        if cfg.reserve_requirement_mw.is_some() {
            return (rest <= 1e-9).then_some(Economic {
                committed,
                p,
                holdback,
                cap,
            });
        }
        if rest <= 1e-9 && max_p <= requirement + 1e-9 {
            return Some(Economic {
                committed,
                p,
                holdback,
                cap,
            });
        }
        // the infeed cap binds before demand is met: cover a larger infeed
        let next = if rest > 1e-9 {
            (requirement + rest / n_commit as f64).max(requirement + 1.0)
        } else {
            max_p
        };
        if requirement >= largest {
            return None;
        }
        requirement = next.min(largest);
    }
    None
}

/// Dispatch one hour. Fails with [`Error::Infeasible`] when capacity, reserve
/// or N-1 security cannot be met.
pub fn dispatch_snapshot(case: &NetworkCase, cfg: &DispatchConfig, r: &Realization, year: u32) -> Result<Snapshot> {
    let load_p: Vec<f64> = case.loads.iter().map(|l| l.p_mw * r.load_factor).collect();
    let load_q: Vec<f64> = case.loads.iter().map(|l| l.q_mvar * r.load_factor).collect();
    let demand: f64 = load_p.iter().sum();
    let available = availability(case, r);

    // renewables first, scaled down to the non-synchronous share cap
    let nm = case.machines.len();
    let ren_avail: f64 = (0..nm).filter(|&k| !case.machines[k].is_sync()).map(|k| available[k]).sum();
    let ren_cap = cfg.max_nonsync_share * demand;
    let scale = if ren_avail > ren_cap { ren_cap / ren_avail } else { 1.0 };

    let order = merit_order(case);
    let sync_demand = demand - scale * ren_avail;
    let eco = (1..=order.len())
        .find_map(|n| economic_dispatch(case, cfg, &order, n, sync_demand))
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "hour {}: {demand:.1} MW demand exceeds dispatchable capacity with reserve",
                r.hour
            ))
        })?;
    let mut committed = eco.committed;
    let mut p = eco.p;
    for k in 0..nm {
        if !case.machines[k].is_sync() {
            committed[k] = true;
            p[k] = scale * available[k];
        }
    }
    let cap: Vec<f64> = (0..nm)
        .map(|k| if case.machines[k].is_sync() { eco.cap[k] } else { available[k] })
        .collect();

    let mut snap = Snapshot {
        year,
        hour: r.hour,
        load_p,
        load_q,
        committed,
        p_gen: p,
        reserve: vec![0.0; nm],
        available,
        flows: Vec::new(),
    };
    repair_n1(case, cfg, &mut snap, &cap)?;
    for k in 0..nm {
        let m = &case.machines[k];
        if m.is_sync() && snap.committed[k] {
            snap.reserve[k] = m.primary_reserve_mw.min(m.p_max_mw - snap.p_gen[k]).max(0.0);
        }
    }
    debug_assert!(eco.holdback.iter().sum::<f64>() <= snap.total_reserve() + 1e-6);
    Ok(snap)
}

/// Worst thermal violation over the base case and every non-bridge outage:
/// (excess MW, monitored branch, outaged branch, signed flow).
fn worst_violation(case: &NetworkCase, dc: &DcModel, flows: &[f64]) -> Option<(f64, usize, Option<usize>, f64)> {
    let mut worst: Option<(f64, usize, Option<usize>, f64)> = None;
    let mut consider = |excess: f64, l: usize, k: Option<usize>, f: f64| {
        if excess > 0.0 && worst.is_none_or(|w| excess > w.0) {
            worst = Some((excess, l, k, f));
        }
    };
    for (l, br) in case.branches.iter().enumerate() {
        if dc.in_service[l] {
            consider(flows[l].abs() - br.rating_mva, l, None, flows[l]);
        }
    }
    for k in 0..case.branches.len() {
        if !dc.in_service[k] || dc.is_bridge(k) {
            continue;
        }
        let post = dc.post_outage_flows(flows, k).expect("non-bridge outage");
        for (l, br) in case.branches.iter().enumerate() {
            if l != k && dc.in_service[l] {
                consider(post[l].abs() - br.rating_mva, l, Some(k), post[l]);
            }
        }
    }
    worst
}

fn repair_n1(case: &NetworkCase, cfg: &DispatchConfig, snap: &mut Snapshot, cap: &[f64]) -> Result<()> {
    let topo = case.base_topology();
    let dc = DcModel::new(case, &topo, 0)?;
    let nm = case.machines.len();
    for _ in 0..cfg.max_repair_iterations {
        let flows = dc.flows(&snap.injections(case));
        let Some((excess, l, k, f)) = worst_violation(case, &dc, &flows) else {
            snap.flows = flows;
            return Ok(());
        };
        let s = f.signum();
        // sensitivity of the monitored post-outage flow to injection at each bus
        let sens = |bus: usize| {
            let mut v = dc.ptdf[(l, bus)];
            if let Some(k) = k {
                v += dc.lodf(l, k).expect("non-bridge") * dc.ptdf[(k, bus)];
            }
            s * v
        };
        // decrease the unit with the largest relief; sync units before renewables
        let down = (0..nm).filter(|&u| snap.committed[u] && snap.p_gen[u] > 1e-9).max_by(|&a, &b| {
            let (ma, mb) = (&case.machines[a], &case.machines[b]);
            sens(ma.bus_idx)
                .total_cmp(&sens(mb.bus_idx))
                .then_with(|| ma.is_sync().cmp(&mb.is_sync()))
                .then_with(|| ma.cost_eur_per_mwh.total_cmp(&mb.cost_eur_per_mwh))
                .then_with(|| mb.id.cmp(&ma.id))
        });
        let up = (0..nm)
            .filter(|&v| Some(v) != down && case.machines[v].is_sync() && cap[v] - snap.p_gen[v] > 1e-9)
            .min_by(|&a, &b| {
                let (ma, mb) = (&case.machines[a], &case.machines[b]);
                sens(ma.bus_idx)
                    .total_cmp(&sens(mb.bus_idx))
                    .then_with(|| ma.cost_eur_per_mwh.total_cmp(&mb.cost_eur_per_mwh))
                    .then_with(|| ma.id.cmp(&mb.id))
            });
        let (Some(u), Some(v)) = (down, up) else {
            return Err(Error::Infeasible(format!(
                "hour {}: no redispatch pair relieves branch {}",
                snap.hour, case.branches[l].id
            )));
        };
        let delta = sens(case.machines[u].bus_idx) - sens(case.machines[v].bus_idx);
        if delta <= 1e-9 {
            return Err(Error::Infeasible(format!(
                "hour {}: branch {} cannot be relieved by redispatch",
                snap.hour, case.branches[l].id
            )));
        }
        let want = excess / delta * (1.0 + 1e-9) + 1e-6;
        let x = want.min(snap.p_gen[u]).min(cap[v] - snap.p_gen[v]);
        snap.p_gen[u] -= x;
        snap.p_gen[v] += x;
        snap.committed[v] = true;
    }
    Err(Error::Infeasible(format!("hour {}: N-1 repair did not converge", snap.hour)))
}

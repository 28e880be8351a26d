//! Extended equal-area estimate of the critical clearing time.
//!
//! Synchronous machines are classical EMFs behind `x'`; loads are constant
//! impedances at their pre-fault voltage and inverter plants are negative
//! constant-current loads whose phase follows the machine they are most
//! strongly coupled to. The network is reduced to the internal nodes, the
//! machines are split into a critical cluster and the rest, and each cluster is
//! assumed to move rigidly. Under that assumption the one-machine equivalent
//! electrical power is exactly `c + a cos θ + b sin θ`, so both areas are
//! closed form.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::contingency::Contingency;
use crate::dynsim::F0_HZ;
use crate::error::{Error, Result};
use crate::grid::powerflow::{solve_ac, AcSpec};
use crate::grid::{admittance, connected_islands, AdmittanceMode, NetworkCase, SparseAdmittance, Topology};
use crate::scenario::Snapshot;

const OMEGA_S: f64 = 2.0 * PI * F0_HZ;
/// Integration step of the fault-on trajectory (s).
const DT: f64 = 2.0e-4;

/// One-machine equivalent power `c + a cos θ + b sin θ`, θ measured from the
/// pre-fault angle.
#[derive(Clone, Copy, Debug)]
struct Sinusoid {
    c: f64,
    a: f64,
    b: f64,
}

impl Sinusoid {
    fn at(&self, th: f64) -> f64 {
        self.c + self.a * th.cos() + self.b * th.sin()
    }

    /// `∫_0^θ (P - pm) dθ`.
    fn area(&self, pm: f64, th: f64) -> f64 {
        (self.c - pm) * th + self.a * th.sin() + self.b * (1.0 - th.cos())
    }
}

struct MachineSet {
    bus: Vec<usize>,
    x: Vec<f64>,
    e: Vec<Complex64>,
    pm: Vec<f64>,
    m: Vec<f64>,
    /// Inverter plants: bus and pre-fault injected current.
    inv_bus: Vec<usize>,
    inv_i: Vec<Complex64>,
}

/// Network seen from the machine internal nodes after eliminating every bus:
/// machine currents are `y E + k J` for bus current injections `J`.
struct Reduced {
    y: DMatrix<Complex64>,
    k: DMatrix<Complex64>,
}

impl Reduced {
    /// Electrical power of machine `i` with every angle at its pre-fault value.
    fn pe0(&self, ms: &MachineSet, i: usize) -> f64 {
        let mut cur = Complex64::new(0.0, 0.0);
        for j in 0..ms.e.len() {
            cur += self.y[(i, j)] * ms.e[j];
        }
        for (b, inj) in ms.inv_bus.iter().zip(&ms.inv_i) {
            cur += self.k[(i, *b)] * inj;
        }
        (ms.e[i] * cur.conj()).re
    }
}

fn reduce(
    case: &NetworkCase,
    snap: &Snapshot,
    topo: &Topology,
    fault_bus: Option<usize>,
    v0: &[Complex64],
    ms: &MachineSet,
) -> Result<Reduced> {
    let mode = fault_bus.map_or(AdmittanceMode::Loadflow, AdmittanceMode::Faulted);
    let mut ybb = admittance(case, topo, mode)?.to_dense();
    let base = case.base_mva;
    for (k, l) in case.loads.iter().enumerate() {
        let s = Complex64::new(snap.load_p[k], snap.load_q[k]) / base;
        ybb[(l.bus_idx, l.bus_idx)] += s.conj() / v0[l.bus_idx].norm_sqr();
    }
    let n = ybb.nrows();
    let g = ms.bus.len();
    let mut ybg = DMatrix::from_element(n, g, Complex64::new(0.0, 0.0));
    let mut ygg = DMatrix::from_element(g, g, Complex64::new(0.0, 0.0));
    for i in 0..g {
        let y = Complex64::new(0.0, -1.0 / ms.x[i]);
        ybb[(ms.bus[i], ms.bus[i])] += y;
        ybg[(ms.bus[i], i)] -= y;
        ygg[(i, i)] += y;
    }
    // buses cut off from every shunt carry no current; pin them
    for b in 0..n {
        if ybb.row(b).iter().all(|v| v.norm() == 0.0) {
            ybb[(b, b)] = Complex64::new(1.0, 0.0);
        }
    }
    let sol = ybb
        .lu()
        .solve(&ybg)
        .ok_or_else(|| Error::NoConvergence("singular reduced network".into()))?;
    // Y_bb is symmetric, so Y_gb Y_bb^-1 is the transpose of the solve
    Ok(Reduced {
        y: ygg - ybg.transpose() * &sol,
        k: sol.transpose(),
    })
}

/// Whether the post-fault network has an operating point with the machines
/// as EMFs behind `x'` at their pre-fault mechanical power, inverters at
/// constant power and constant-impedance loads. Internal nodes are appended
/// after the buses and solved as PV nodes; non-convergence counts as none.
fn post_fault_equilibrium(case: &NetworkCase, snap: &Snapshot, topo: &Topology, v0: &[Complex64], ms: &MachineSet) -> bool {
    let n = case.n_bus();
    let g = ms.e.len();
    let Ok(net) = admittance(case, topo, AdmittanceMode::Loadflow) else {
        return false;
    };
    let mut y = SparseAdmittance::zeros(n + g);
    for b in 0..n {
        for (j, v) in net.row(b) {
            y.add(b, j, v);
        }
    }
    let base = case.base_mva;
    for (k, l) in case.loads.iter().enumerate() {
        let s = Complex64::new(snap.load_p[k], snap.load_q[k]) / base;
        y.add(l.bus_idx, l.bus_idx, s.conj() / v0[l.bus_idx].norm_sqr());
    }
    let mut p_inj = vec![0.0; n + g];
    let mut v_set = vec![None; n + g];
    for i in 0..g {
        let yx = Complex64::new(0.0, -1.0 / ms.x[i]);
        let (b, e) = (ms.bus[i], n + i);
        y.add(b, b, yx);
        y.add(e, e, yx);
        y.add(b, e, -yx);
        y.add(e, b, -yx);
        p_inj[e] = ms.pm[i];
        v_set[e] = Some(ms.e[i].norm());
    }
    for (b, inj) in ms.inv_bus.iter().zip(&ms.inv_i) {
        p_inj[*b] += (v0[*b] * inj.conj()).re;
    }
    for island in connected_islands(case, topo) {
        let mut nodes = island.clone();
        nodes.extend((0..g).filter(|&i| island.contains(&ms.bus[i])).map(|i| n + i));
        let Some(slack) = (0..g)
            .filter(|&i| island.contains(&ms.bus[i]))
            .max_by(|&i, &j| ms.m[i].total_cmp(&ms.m[j]).then(j.cmp(&i)))
        else {
            continue;
        };
        nodes.sort_unstable();
        let spec = AcSpec {
            p_inj: p_inj.clone(),
            q_inj: vec![0.0; n + g],
            v_set: v_set.clone(),
            slack: n + slack,
        };
        if solve_ac(&y, &nodes, &spec, 1e-8, 30).is_err() {
            return false;
        }
    }
    true
}

/// Equivalent power of cluster `s` against the remaining machines; inverter
/// `k` moves with the cluster of machine `follow[k]`.
fn omib(red: &Reduced, ms: &MachineSet, in_s: &[bool], follow: &[usize]) -> (Sinusoid, f64, f64) {
    let g = ms.e.len();
    let (mut ms_sum, mut ma_sum) = (0.0, 0.0);
    let (mut pm_s, mut pm_a) = (0.0, 0.0);
    for i in 0..g {
        if in_s[i] {
            ms_sum += ms.m[i];
            pm_s += ms.pm[i];
        } else {
            ma_sum += ms.m[i];
            pm_a += ms.pm[i];
        }
    }
    let (mut kss, mut kaa) = (0.0, 0.0);
    let (mut wsa, mut was) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    let mut add = |i: usize, other_in_s: bool, t: Complex64| match (in_s[i], other_in_s) {
        (true, true) => kss += t.re,
        (false, false) => kaa += t.re,
        (true, false) => wsa += t,
        (false, true) => was += t,
    };
    for i in 0..g {
        for j in 0..g {
            add(i, in_s[j], ms.e[i] * (red.y[(i, j)] * ms.e[j]).conj());
        }
        for (k, (b, inj)) in ms.inv_bus.iter().zip(&ms.inv_i).enumerate() {
            add(i, in_s[follow[k]], ms.e[i] * (red.k[(i, *b)] * inj).conj());
        }
    }
    let mt = ms_sum + ma_sum;
    let p = Sinusoid {
        c: (ma_sum * kss - ms_sum * kaa) / mt,
        a: (ma_sum * wsa.re - ms_sum * was.re) / mt,
        b: (-ma_sum * wsa.im - ms_sum * was.im) / mt,
    };
    let pm = (ma_sum * pm_s - ms_sum * pm_a) / mt;
    (p, pm, ms_sum * ma_sum / mt)
}

/// CCT of one cluster; `None` when the cluster is first-swing stable for any
/// clearing time.
fn cluster_cct(fault: Sinusoid, post: Sinusoid, pm: f64, m_eq: f64, cap: f64) -> Option<f64> {
    if pm - fault.at(0.0) <= 0.0 {
        return None;
    }
    let r = post.a.hypot(post.b);
    let x = if r > 0.0 {
        (pm - post.c) / r
    } else {
        f64::INFINITY.copysign(pm - post.c)
    };
    if x >= 1.0 {
        // no post-fault equilibrium
        return Some(0.0);
    }
    if x <= -1.0 {
        return None;
    }
    let phi = post.b.atan2(post.a);
    let half = x.acos();
    let mut th_s = phi - half;
    th_s -= 2.0 * PI * ((th_s + PI) / (2.0 * PI)).floor();
    let th_u = th_s + 2.0 * half;
    if th_u <= 0.0 {
        return Some(0.0);
    }
    // accelerating area minus the decelerating area left after clearing at θ
    let h = |th: f64| -fault.area(pm, th) - (post.area(pm, th_u) - post.area(pm, th));
    if h(0.0) >= 0.0 {
        return Some(0.0);
    }
    const SCAN: usize = 512;
    let mut lo = 0.0;
    let mut hi = None;
    for k in 1..=SCAN {
        let th = th_u * k as f64 / SCAN as f64;
        if h(th) >= 0.0 {
            hi = Some(th);
            break;
        }
        lo = th;
    }
    let mut hi = hi?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if h(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(time_to_angle(fault, pm, m_eq, hi, cap))
}

/// Fault-on time to reach `th_c`, RK4 on `θ'' = ω_s (pm - P_f(θ)) / M`.
fn time_to_angle(fault: Sinusoid, pm: f64, m_eq: f64, th_c: f64, cap: f64) -> f64 {
    let acc = |th: f64| OMEGA_S * (pm - fault.at(th)) / m_eq;
    let (mut t, mut th, mut w) = (0.0, 0.0, 0.0);
    while t < cap {
        let k1 = (w, acc(th));
        let k2 = (w + 0.5 * DT * k1.1, acc(th + 0.5 * DT * k1.0));
        let k3 = (w + 0.5 * DT * k2.1, acc(th + 0.5 * DT * k2.0));
        let k4 = (w + DT * k3.1, acc(th + DT * k3.0));
        let th_n = th + DT / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        let w_n = w + DT / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        if th_n >= th_c {
            return t + DT * (th_c - th) / (th_n - th);
        }
        if w_n <= 0.0 && t > 0.0 {
            return cap;
        }
        (t, th, w) = (t + DT, th_n, w_n);
    }
    cap
}

/// Critical clearing time (s) of `contingency` on `snap`, capped at `cap_s`.
///
/// Candidate critical clusters are the prefixes of the machines ranked by
/// initial acceleration under the fault; the smallest CCT wins.
pub fn eea_cct(case: &NetworkCase, snap: &Snapshot, contingency: &Contingency, cap_s: f64, pv_voltage_pu: f64) -> Result<f64> {
    let init = crate::dynsim::initial_state(case, snap, pv_voltage_pu).map_err(Error::NoConvergence)?;
    if init.syncs.is_empty() {
        return Err(Error::EmptyIsland);
    }
    if init.syncs.len() == 1 {
        return Ok(cap_s);
    }
    let base = case.base_mva;
    let mut ms = MachineSet {
        bus: init.syncs.iter().map(|s| case.machines[s.0].bus_idx).collect(),
        x: init.syncs.iter().map(|s| case.machines[s.0].x_transient).collect(),
        e: init.syncs.iter().map(|s| s.1).collect(),
        pm: init.syncs.iter().map(|s| s.2).collect(),
        m: init
            .syncs
            .iter()
            .map(|s| 2.0 * case.machines[s.0].h_s * case.machines[s.0].p_max_mw / base)
            .collect(),
        inv_bus: Vec::new(),
        inv_i: Vec::new(),
    };
    for (k, m) in case.machines.iter().enumerate() {
        if snap.committed[k] && !m.is_sync() && snap.p_gen[k] > 0.0 {
            let v = init.v[m.bus_idx];
            ms.inv_bus.push(m.bus_idx);
            ms.inv_i.push((Complex64::new(snap.p_gen[k] / base, 0.0) / v).conj());
        }
    }
    let y_fault = reduce(case, snap, &init.topology, Some(contingency.fault_bus), &init.v, &ms)?;
    let post_topo = init.topology.without_branches(&contingency.cleared_branches());
    let y_post = reduce(case, snap, &post_topo, None, &init.v, &ms)?;
    if !post_fault_equilibrium(case, snap, &post_topo, &init.v, &ms) {
        return Ok(0.0);
    }

    let g = ms.e.len();
    let accel: Vec<f64> = (0..g).map(|i| (ms.pm[i] - y_fault.pe0(&ms, i)) / ms.m[i]).collect();
    // each inverter follows the machine that absorbs most of its current
    let follow: Vec<usize> = ms
        .inv_bus
        .iter()
        .map(|&b| {
            (0..g)
                .max_by(|&i, &j| y_post.k[(i, b)].norm().total_cmp(&y_post.k[(j, b)].norm()).then(j.cmp(&i)))
                .expect("at least two machines")
        })
        .collect();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| accel[b].total_cmp(&accel[a]));

    let mut best = cap_s;
    let mut in_s = vec![false; g];
    for &i in &order[..g - 1] {
        in_s[i] = true;
        let (pf, pm, m_eq) = omib(&y_fault, &ms, &in_s, &follow);
        let (pp, _, _) = omib(&y_post, &ms, &in_s, &follow);
        if let Some(t) = cluster_cct(pf, pp, pm, m_eq, cap_s) {
            best = best.min(t);
        }
    }
    Ok(best.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_smib_closed_form() {
        // zero transfer during the fault, Pmax 2 after, pm 1
        let fault = Sinusoid { c: 0.0, a: 0.0, b: 0.0 };
        let d0 = (0.5f64).asin();
        // post-fault 2 sin(d0 + θ) expanded around d0
        let post = Sinusoid {
            c: 0.0,
            a: 2.0 * d0.sin(),
            b: 2.0 * d0.cos(),
        };
        let m = 0.1;
        let t = cluster_cct(fault, post, 1.0, m, 10.0).unwrap();
        let d_max = PI - d0;
        let dc = ((d_max - d0) / 2.0 + d_max.cos()).acos();
        let expect = (2.0 * m * (dc - d0) / (OMEGA_S * 1.0)).sqrt();
        assert!((t - expect).abs() < 1e-4, "{t} vs {expect}");
    }

    #[test]
    fn decelerating_cluster_has_no_cct() {
        let fault = Sinusoid { c: 2.0, a: 0.0, b: 0.0 };
        let post = Sinusoid { c: 0.0, a: 1.0, b: 1.0 };
        assert!(cluster_cct(fault, post, 1.0, 0.1, 10.0).is_none());
    }

    #[test]
    fn missing_post_fault_equilibrium_gives_zero() {
        let fault = Sinusoid { c: 0.0, a: 0.0, b: 0.0 };
        let post = Sinusoid { c: 0.0, a: 0.3, b: 0.3 };
        assert_eq!(cluster_cct(fault, post, 1.0, 0.1, 10.0), Some(0.0));
    }
}

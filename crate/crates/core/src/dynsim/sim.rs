//! Classical-model time-domain simulation with protections and islanding.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::cost::{consequences_cost, CostModel};
use super::events::{Event, EventKind, EventSequence};
use super::protection::{Layout, ProtectionParamSet, ProtectionSettings};
use crate::contingency::Contingency;
use crate::grid::powerflow::{solve_ac, AcSpec};
use crate::grid::{admittance, connected_islands, AdmittanceMode, NetworkCase, Topology, FAULT_SHUNT_PU};
use crate::scenario::Snapshot;

pub const F0_HZ: f64 = 50.0;
const OMEGA_S: f64 = 2.0 * PI * F0_HZ;
const C0: Complex64 = Complex64::new(0.0, 0.0);
/// Below this voltage the relay polarising memory holds its last value.
const MEMORY_MIN_PU: f64 = 0.8;
const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadModel {
    ConstantImpedance,
    /// Constant power above 0.7 pu, constant impedance below.
    ConstantPower,
}

/// Scripted disturbances on top of (or instead of) a contingency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Disturbance {
    TripMachine { machine: usize, at_s: f64 },
    AngleKick { machine: usize, at_s: f64, delta_rad: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub horizon_s: f64,
    pub dt_fault_s: f64,
    pub dt_s: f64,
    /// Damping against the island centre of inertia, pu on the machine base.
    pub damping_pu: f64,
    pub governor_lag_s: f64,
    pub load_model: LoadModel,
    pub pv_voltage_pu: f64,
    /// Inverter current limit in pu of rating.
    pub inverter_current_limit: f64,
    pub steady_window_s: f64,
    pub speed_tolerance_hz: f64,
    pub rocof_tolerance_hz_s: f64,
    pub voltage_tolerance_pu: f64,
    pub protection: ProtectionSettings,
    pub cost: CostModel,
    #[serde(skip)]
    pub disturbances: Vec<Disturbance>,
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon_s: 120.0,
            dt_fault_s: 0.005,
            dt_s: 0.010,
            damping_pu: 2.0,
            governor_lag_s: 1.0,
            load_model: LoadModel::ConstantImpedance,
            pv_voltage_pu: 1.02,
            inverter_current_limit: 1.1,
            steady_window_s: 10.0,
            speed_tolerance_hz: 0.01,
            rocof_tolerance_hz_s: 0.01,
            voltage_tolerance_pu: 1e-3,
            protection: ProtectionSettings::default(),
            cost: CostModel::default(),
            disturbances: Vec::new(),
            record_trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Stabilized,
    PartialBlackout,
    FullBlackout,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub events: EventSequence,
    pub load_shed_mw: f64,
    pub total_load_mw: f64,
    pub energy_not_served_mwh: f64,
    pub cost_eur: f64,
    pub terminal: Terminal,
    /// Diagnostic when the numerics failed; the result is then a full blackout.
    pub solver_failure: Option<String>,
    pub end_time_s: f64,
    /// Largest per-island power balance residual seen (pu).
    pub max_power_residual_pu: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PartialEq for ScenarioResult {
    // wall time is bookkeeping, not part of the outcome
    fn eq(&self, o: &Self) -> bool {
        self.events == o.events
            && self.load_shed_mw == o.load_shed_mw
            && self.total_load_mw == o.total_load_mw
            && self.energy_not_served_mwh == o.energy_not_served_mwh
            && self.cost_eur == o.cost_eur
            && self.terminal == o.terminal
            && self.solver_failure == o.solver_failure
            && self.end_time_s == o.end_time_s
            && self.max_power_residual_pu == o.max_power_residual_pu
    }
}

/// Per-step record for trace dumps and trajectory replay.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub time: Vec<f64>,
    /// Case indices of the synchronous machines traced.
    pub machines: Vec<usize>,
    pub delta_rad: Vec<Vec<f64>>,
    pub freq_hz: Vec<Vec<f64>>,
    pub bus_v: Vec<Vec<Complex64>>,
    pub bus_v_memory: Vec<Vec<Complex64>>,
    pub branch_on: Vec<Vec<bool>>,
}

impl Trace {
    pub fn to_csv(&self, case: &NetworkCase) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut h = vec!["time".to_string()];
        for &m in &self.machines {
            h.push(format!("delta_deg:{}", case.machines[m].id));
        }
        for &m in &self.machines {
            h.push(format!("freq_hz:{}", case.machines[m].id));
        }
        h.extend(case.buses.iter().map(|b| format!("v_pu:{}", b.id)));
        w.write_record(&h).expect("in-memory write");
        for r in 0..self.time.len() {
            let mut rec = vec![format!("{:.6}", self.time[r])];
            rec.extend(self.delta_rad[r].iter().map(|d| format!("{:.6}", d.to_degrees())));
            rec.extend(self.freq_hz[r].iter().map(|f| format!("{:.6}", f)));
            rec.extend(self.bus_v[r].iter().map(|v| format!("{:.6}", v.norm())));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Output of one simulation: the acting result, the shadow set's record when
/// one was attached, and an optional trace.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub result: ScenarioResult,
    pub shadow: Option<EventSequence>,
    pub trace: Option<Trace>,
}

/// Simulate `contingency` (or only `opts.disturbances` when `None`) on a snapshot.
pub fn simulate(
    case: &NetworkCase,
    snapshot: &Snapshot,
    contingency: Option<&Contingency>,
    params: &ProtectionParamSet,
    opts: &SimOptions,
) -> ScenarioResult {
    run(case, snapshot, contingency, params, None, opts).result
}

/// Simulation with an optional shadow parameter set that records would-trip
/// events on the acting trajectory without operating anything.
pub fn run(
    case: &NetworkCase,
    snapshot: &Snapshot,
    contingency: Option<&Contingency>,
    acting: &ProtectionParamSet,
    shadow: Option<&ProtectionParamSet>,
    opts: &SimOptions,
) -> SimRun {
    let started = Instant::now();
    let mut sim = match Sim::new(case, snapshot, contingency, acting, shadow, opts) {
        Ok(s) => s,
        Err(msg) => {
            log::warn!("initialisation failed: {msg}");
            let total = snapshot.total_load();
            let mut result = failure_result(opts, total, msg, EventSequence::default(), 0.0, 0.0);
            result.wall_time_s = started.elapsed().as_secs_f64();
            return SimRun {
                result,
                shadow: shadow.map(|_| EventSequence::default()),
                trace: None,
            };
        }
    };
    let failure = sim.execute().err();
    let mut out = sim.finish(failure);
    out.result.wall_time_s = started.elapsed().as_secs_f64();
    out
}

/// Pre-disturbance operating point: bus voltages and, per committed
/// synchronous machine, `(machine, internal EMF, electrical power)` in pu.
pub(crate) struct InitialState {
    pub v: Vec<Complex64>,
    pub topology: Topology,
    pub syncs: Vec<(usize, Complex64, f64)>,
}

/// AC load flow with every synchronous unit as a PV bus; the largest committed
/// unit is the slack and bus generation is split by dispatch share.
pub(crate) fn initial_state(case: &NetworkCase, snap: &Snapshot, pv_voltage_pu: f64) -> Result<InitialState, String> {
    let base = case.base_mva;
    let n = case.n_bus();
    let topo: Topology = snap.topology(case);
    // load flow on the pre-disturbance network
    let y = admittance(case, &topo, AdmittanceMode::Loadflow).map_err(|e| e.to_string())?;
    let mut p_inj = vec![0.0; n];
    let mut q_inj = vec![0.0; n];
    let mut v_set = vec![None; n];
    let mut slack: Option<usize> = None;
    for (k, m) in case.machines.iter().enumerate() {
        if !snap.committed[k] {
            continue;
        }
        p_inj[m.bus_idx] += snap.p_gen[k] / base;
        if m.is_sync() {
            v_set[m.bus_idx] = Some(pv_voltage_pu);
            if slack.is_none_or(|s: usize| m.p_max_mw > case.machines[s].p_max_mw) {
                slack = Some(k);
            }
        }
    }
    for (k, l) in case.loads.iter().enumerate() {
        p_inj[l.bus_idx] -= snap.load_p[k] / base;
        q_inj[l.bus_idx] -= snap.load_q[k] / base;
    }
    let slack_m = slack.ok_or("no synchronous machine committed")?;
    let slack_bus = case.machines[slack_m].bus_idx;
    let islands = connected_islands(case, &topo);
    if islands.len() != 1 {
        return Err("pre-disturbance network is not connected".into());
    }
    let lf = solve_ac(
        &y,
        &islands[0],
        &AcSpec {
            p_inj: p_inj.clone(),
            q_inj: q_inj.clone(),
            v_set,
            slack: slack_bus,
        },
        1e-10,
        30,
    )
    .map_err(|e| e.to_string())?;

    let mut syncs = Vec::new();
    for (k, m) in case.machines.iter().enumerate() {
        if !snap.committed[k] || !m.is_sync() {
            continue;
        }
        let b = m.bus_idx;
        let at_bus: Vec<usize> = (0..case.machines.len())
            .filter(|&j| snap.committed[j] && case.machines[j].is_sync() && case.machines[j].bus_idx == b)
            .collect();
        let pmax_sum: f64 = at_bus.iter().map(|&j| case.machines[j].p_max_mw).sum();
        let share = m.p_max_mw / pmax_sum;
        // bus generation = solved injection + local load - local inverter output
        let mut s_bus = Complex64::new(lf.p_inj[b], lf.q_inj[b]);
        for (j, l) in case.loads.iter().enumerate() {
            if l.bus_idx == b {
                s_bus += Complex64::new(snap.load_p[j], snap.load_q[j]) / base;
            }
        }
        for (j, mm) in case.machines.iter().enumerate() {
            if snap.committed[j] && !mm.is_sync() && mm.bus_idx == b {
                s_bus -= Complex64::new(snap.p_gen[j] / base, 0.0);
            }
        }
        let p_sync_disp: f64 = at_bus.iter().map(|&j| snap.p_gen[j]).sum();
        let p = if p_sync_disp > 0.0 {
            s_bus.re * snap.p_gen[k] / p_sync_disp
        } else {
            s_bus.re * share
        };
        let s = Complex64::new(p, s_bus.im * share);
        let vb = lf.v[b];
        let i = (s / vb).conj();
        let e = vb + J * m.x_transient * i;
        syncs.push((k, e, p));
    }
    Ok(InitialState {
        v: lf.v,
        topology: topo,
        syncs,
    })
}

fn failure_result(opts: &SimOptions, total: f64, msg: String, events: EventSequence, end: f64, residual: f64) -> ScenarioResult {
    let cost = consequences_cost(&opts.cost, total, total).unwrap_or(0.0);
    ScenarioResult {
        events,
        load_shed_mw: total,
        total_load_mw: total,
        energy_not_served_mwh: opts.cost.energy_not_served_mwh(total, total),
        cost_eur: cost,
        terminal: Terminal::FullBlackout,
        solver_failure: Some(msg),
        end_time_s: end,
        max_power_residual_pu: residual,
        wall_time_s: 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Func {
    /// branch, end, zone (0-based)
    Zone(usize, usize, usize),
    Frt(usize),
    Undervoltage(usize),
    LossOfSync(usize),
    OverFrequency(usize),
    /// load, stage (0-based)
    Ufls(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Action {
    OpenBranch(usize, &'static str),
    TripMachine(usize, &'static str),
    ShedStage(usize, usize),
    Kick(usize, f64),
    ClearFault,
}

/// Device identity used to tie acting trips to the shadow record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Device {
    Branch(usize),
    Machine(usize),
    Stage(usize, usize),
}

/// Dense numbering of protection functions and tripped devices.
#[derive(Clone, Copy)]
struct Index {
    branches: usize,
    machines: usize,
    stages: usize,
}

impl Index {
    fn n_funcs(&self, loads: usize) -> usize {
        6 * self.branches + 4 * self.machines + self.stages * loads
    }
    fn n_devices(&self, loads: usize) -> usize {
        self.branches + self.machines + self.stages * loads
    }
    fn func(&self, f: Func) -> usize {
        let m0 = 6 * self.branches;
        let l0 = m0 + 4 * self.machines;
        match f {
            Func::Zone(k, e, z) => 6 * k + 3 * e + z,
            Func::Frt(m) => m0 + 4 * m,
            Func::Undervoltage(m) => m0 + 4 * m + 1,
            Func::LossOfSync(m) => m0 + 4 * m + 2,
            Func::OverFrequency(m) => m0 + 4 * m + 3,
            Func::Ufls(l, s) => l0 + self.stages * l + s,
        }
    }
    fn device(&self, d: Device) -> usize {
        match d {
            Device::Branch(k) => k,
            Device::Machine(m) => self.branches + m,
            Device::Stage(l, s) => self.branches + self.machines + self.stages * l + s,
        }
    }
}

struct Bank<'p> {
    params: &'p ProtectionParamSet,
    /// Expiry time of each running timer, NaN when idle.
    deadline: Vec<f64>,
    fired: Vec<bool>,
}

impl<'p> Bank<'p> {
    fn new(params: &'p ProtectionParamSet, n_funcs: usize, n_devices: usize) -> Self {
        Bank {
            params,
            deadline: vec![f64::NAN; n_funcs],
            fired: vec![false; n_devices],
        }
    }
    fn idle(&self) -> bool {
        self.deadline.iter().all(|d| d.is_nan())
    }
}

struct SyncUnit {
    idx: usize,
    bus: usize,
    x: f64,
    e: f64,
    m: f64,
    d: f64,
    kg: f64,
    pm_max: f64,
    pref: f64,
    on: bool,
}

struct Inverter {
    idx: usize,
    bus: usize,
    s: Complex64,
    imax: f64,
    on: bool,
}

struct LoadEl {
    bus: usize,
    y: Complex64,
    s: Complex64,
    p_mw: f64,
    frac: f64,
}

struct Island {
    buses: Vec<usize>,
    lu: LU<Complex64, Dyn, Dyn>,
    syncs: Vec<usize>,
    invs: Vec<usize>,
    loads: Vec<usize>,
}

struct Sim<'a> {
    case: &'a NetworkCase,
    opts: &'a SimOptions,
    layout: Layout,
    /// Branches opened by the contingency script; their relays are not modelled.
    scripted: Vec<bool>,
    contingency: Option<&'a Contingency>,
    branch_on: Vec<bool>,
    bus_dead: Vec<bool>,
    fault_bus: Option<usize>,
    syncs: Vec<SyncUnit>,
    invs: Vec<Inverter>,
    loads: Vec<LoadEl>,
    /// State: angle, speed deviation, mechanical power (per sync unit).
    delta: Vec<f64>,
    dw: Vec<f64>,
    pm: Vec<f64>,
    v: Vec<Complex64>,
    /// Voltages driving the current-source elements.
    v_lag: Vec<Complex64>,
    /// Polarising memory for the distance relays, frozen while depressed.
    v_mem: Vec<Complex64>,
    islands: Vec<Island>,
    island_of_bus: Vec<usize>,
    acting: Bank<'a>,
    shadow: Option<Bank<'a>>,
    ix: Index,
    /// Measured impedance per distance relay at the current instant.
    zbuf: Vec<Option<(Complex64, Complex64)>>,
    pending: Vec<(f64, u64, Action)>,
    seq: u64,
    events: EventSequence,
    shadow_events: EventSequence,
    /// Shadow would-trips waiting for their breaker time.
    shadow_pending: Vec<(Device, Event)>,
    t: f64,
    trace: Option<Trace>,
    max_residual: f64,
    total_load: f64,
    // steady-state bookkeeping
    v_ref: Vec<f64>,
    t_v_ref: f64,
    last_coi: Vec<f64>,
}

impl<'a> Sim<'a> {
    fn new(
        case: &'a NetworkCase,
        snap: &Snapshot,
        contingency: Option<&'a Contingency>,
        acting: &'a ProtectionParamSet,
        shadow: Option<&'a ProtectionParamSet>,
        opts: &'a SimOptions,
    ) -> Result<Self, String> {
        let base = case.base_mva;
        let n = case.n_bus();
        let init = initial_state(case, snap, opts.pv_voltage_pu)?;
        let lf_v = init.v;
        let topo = init.topology;
        let mut syncs = Vec::new();
        let mut invs = Vec::new();
        for (k, m) in case.machines.iter().enumerate() {
            if snap.committed[k] && !m.is_sync() {
                invs.push(Inverter {
                    idx: k,
                    bus: m.bus_idx,
                    s: Complex64::new(snap.p_gen[k] / base, 0.0),
                    imax: opts.inverter_current_limit * m.p_max_mw / base,
                    on: true,
                });
            }
        }
        for &(k, e, p) in &init.syncs {
            let m = &case.machines[k];
            let mbase = m.p_max_mw / base;
            syncs.push((
                SyncUnit {
                    idx: k,
                    bus: m.bus_idx,
                    x: m.x_transient,
                    e: e.norm(),
                    m: 2.0 * m.h_s * mbase,
                    d: opts.damping_pu * mbase,
                    kg: if m.droop > 0.0 { mbase / m.droop } else { 0.0 },
                    pm_max: (p.max(0.0) + snap.reserve[k] / base).min(mbase).max(p),
                    pref: p,
                    on: true,
                },
                e.arg(),
                p,
            ));
        }
        let mut loads = Vec::new();
        let mut total_load = 0.0;
        for (k, l) in case.loads.iter().enumerate() {
            let s = Complex64::new(snap.load_p[k], snap.load_q[k]) / base;
            let vm = lf_v[l.bus_idx].norm();
            loads.push(LoadEl {
                bus: l.bus_idx,
                y: s.conj() / (vm * vm),
                s,
                p_mw: snap.load_p[k],
                frac: 1.0,
            });
            total_load += snap.load_p[k];
        }
        let delta = syncs.iter().map(|s| s.1).collect();
        let pm = syncs.iter().map(|s| s.2).collect();
        let syncs: Vec<SyncUnit> = syncs.into_iter().map(|s| s.0).collect();
        let n_sync = syncs.len();
        let mut scripted = vec![false; case.branches.len()];
        for k in contingency.map(|c| c.cleared_branches()).unwrap_or_default() {
            scripted[k] = true;
        }
        let ix = Index {
            branches: case.branches.len(),
            machines: case.machines.len(),
            stages: opts.protection.ufls_thresholds_hz.len(),
        };
        let (nf, nd) = (ix.n_funcs(case.loads.len()), ix.n_devices(case.loads.len()));
        let trace = opts.record_trace.then(|| Trace {
            machines: syncs.iter().map(|s| s.idx).collect(),
            ..Default::default()
        });
        Ok(Sim {
            case,
            opts,
            layout: Layout::of(case),
            scripted,
            contingency,
            branch_on: topo.branches.clone(),
            bus_dead: vec![false; n],
            fault_bus: None,
            syncs,
            invs,
            loads,
            delta,
            dw: vec![0.0; n_sync],
            pm,
            v: lf_v.clone(),
            v_lag: lf_v.clone(),
            v_mem: lf_v.clone(),
            islands: Vec::new(),
            island_of_bus: vec![usize::MAX; n],
            acting: Bank::new(acting, nf, nd),
            shadow: shadow.map(|p| Bank::new(p, nf, nd)),
            ix,
            zbuf: vec![None; 2 * case.branches.len()],
            pending: Vec::new(),
            seq: 0,
            events: EventSequence::default(),
            shadow_events: EventSequence::default(),
            shadow_pending: Vec::new(),
            t: 0.0,
            trace,
            max_residual: 0.0,
            total_load,
            v_ref: lf_v.iter().map(|v| v.norm()).collect(),
            t_v_ref: 0.0,
            last_coi: Vec::new(),
        })
    }

    fn schedule(&mut self, time: f64, a: Action) {
        self.seq += 1;
        self.pending.push((time, self.seq, a));
        self.pending.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    }

    // ---------------------------------------------------------------- network

    fn rebuild(&mut self) -> Result<(), String> {
        let case = self.case;
        let topo = Topology {
            branches: self.branch_on.clone(),
            machines: vec![false; case.machines.len()],
            loads: vec![false; case.loads.len()],
        };
        let ybr = admittance(case, &topo, AdmittanceMode::Loadflow).ok();
        let comps = connected_islands(case, &topo);
        self.islands.clear();
        self.island_of_bus = vec![usize::MAX; case.n_bus()];
        for comp in comps {
            if comp.iter().any(|b| self.bus_dead[*b]) {
                for &b in &comp {
                    self.bus_dead[b] = true;
                }
                continue;
            }
            let in_comp = |b: usize| comp.binary_search(&b).is_ok();
            let syncs: Vec<usize> = (0..self.syncs.len())
                .filter(|&i| self.syncs[i].on && in_comp(self.syncs[i].bus))
                .collect();
            let invs: Vec<usize> = (0..self.invs.len())
                .filter(|&i| self.invs[i].on && in_comp(self.invs[i].bus))
                .collect();
            let loads: Vec<usize> = (0..self.loads.len())
                .filter(|&i| self.loads[i].frac > 0.0 && in_comp(self.loads[i].bus))
                .collect();
            if syncs.is_empty() {
                if !invs.is_empty() || !loads.is_empty() {
                    self.collapse(&comp, &invs, &loads, "no synchronous machine");
                }
                for &b in &comp {
                    self.bus_dead[b] = true;
                }
                continue;
            }
            let mut y = match &ybr {
                Some(ybr) => ybr.restrict(&comp),
                None => DMatrix::from_element(comp.len(), comp.len(), C0),
            };
            let pos = |b: usize| comp.binary_search(&b).expect("bus in island");
            for &i in &syncs {
                let p = pos(self.syncs[i].bus);
                y[(p, p)] += Complex64::new(1.0, 0.0) / (J * self.syncs[i].x);
            }
            if self.opts.load_model == LoadModel::ConstantImpedance {
                for &i in &loads {
                    let p = pos(self.loads[i].bus);
                    y[(p, p)] += self.loads[i].y * self.loads[i].frac;
                }
            }
            if let Some(fb) = self.fault_bus {
                if in_comp(fb) {
                    let p = pos(fb);
                    y[(p, p)] += Complex64::new(FAULT_SHUNT_PU, 0.0);
                }
            }
            let lu = y.lu();
            if !lu.is_invertible() {
                return Err(format!("singular network matrix at t={:.3}", self.t));
            }
            let k = self.islands.len();
            for &b in &comp {
                self.island_of_bus[b] = k;
            }
            self.islands.push(Island {
                buses: comp,
                lu,
                syncs,
                invs,
                loads,
            });
        }
        self.last_coi.resize(self.islands.len(), 0.0);
        Ok(())
    }

    /// Extra current injections from inverters and constant-power loads.
    fn nonlinear_injection(&self, isl: &Island, v: &[Complex64], out: &mut DVector<Complex64>) {
        let pos = |b: usize| isl.buses.binary_search(&b).expect("bus in island");
        for &i in &isl.invs {
            let inv = &self.invs[i];
            let p = pos(inv.bus);
            let vb = v[p];
            if vb.norm() < 1e-6 {
                continue;
            }
            let mut cur = (inv.s / vb).conj();
            if cur.norm() > inv.imax {
                cur *= inv.imax / cur.norm();
            }
            out[p] += cur;
        }
        if self.opts.load_model == LoadModel::ConstantPower {
            for &i in &isl.loads {
                let l = &self.loads[i];
                let p = pos(l.bus);
                let vb = v[p];
                let vm = vb.norm();
                let s = l.s * l.frac;
                let cur = if vm >= 0.7 { (s / vb).conj() } else { s.conj() / (0.49) * vb };
                out[p] -= cur;
            }
        }
    }

    fn norton(&self, isl: &Island, delta: &[f64]) -> DVector<Complex64> {
        let mut inj = DVector::from_element(isl.buses.len(), C0);
        for &i in &isl.syncs {
            let s = &self.syncs[i];
            let p = isl.buses.binary_search(&s.bus).expect("bus");
            inj[p] += Complex64::from_polar(s.e, delta[i]) / (J * s.x);
        }
        inj
    }

    /// Bus voltages for the given machine angles. Inverter and constant-power
    /// load currents follow the voltage of the last accepted step.
    fn solve_network(&self, delta: &[f64]) -> Result<Vec<Complex64>, String> {
        let mut v = vec![C0; self.case.n_bus()];
        for isl in &self.islands {
            let mut rhs = self.norton(isl, delta);
            let lag: Vec<Complex64> = isl.buses.iter().map(|&b| self.v_lag[b]).collect();
            self.nonlinear_injection(isl, &lag, &mut rhs);
            let sol = isl.lu.solve(&rhs).ok_or("singular island matrix")?;
            if sol.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
                return Err(format!("network solution diverged at t={:.3}", self.t));
            }
            for (p, &b) in isl.buses.iter().enumerate() {
                v[b] = sol[p];
            }
        }
        Ok(v)
    }

    fn pe(&self, i: usize, delta: f64, v: &[Complex64]) -> f64 {
        let s = &self.syncs[i];
        let e = Complex64::from_polar(s.e, delta);
        let cur = (e - v[s.bus]) / (J * s.x);
        (e * cur.conj()).re
    }

    /// Power balance residual of each island: generation minus load, branch
    /// losses and fault dissipation.
    fn power_residual(&self, v: &[Complex64]) -> f64 {
        let mut worst: f64 = 0.0;
        for isl in &self.islands {
            let x: Vec<Complex64> = isl.buses.iter().map(|&b| v[b]).collect();
            let lag: Vec<Complex64> = isl.buses.iter().map(|&b| self.v_lag[b]).collect();
            let mut inj = DVector::from_element(x.len(), C0);
            self.nonlinear_injection(isl, &lag, &mut inj);
            let mut gen = 0.0;
            for &i in &isl.syncs {
                let s = &self.syncs[i];
                let e = Complex64::from_polar(s.e, self.delta[i]);
                gen += (v[s.bus] * ((e - v[s.bus]) / (J * s.x)).conj()).re;
            }
            // inverter and constant-power load injections at their buses
            let mut other = 0.0;
            for p in 0..x.len() {
                other += (x[p] * inj[p].conj()).re;
            }
            let mut absorbed = 0.0;
            if self.opts.load_model == LoadModel::ConstantImpedance {
                for &i in &isl.loads {
                    let l = &self.loads[i];
                    absorbed += (l.y * l.frac).re * v[l.bus].norm_sqr();
                }
            }
            for (k, br) in self.case.branches.iter().enumerate() {
                if self.branch_on[k] && self.island_of_bus[br.from_idx] == self.island_of_bus[isl.buses[0]] {
                    let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
                    let di = v[br.from_idx] - v[br.to_idx];
                    absorbed += ys.re * di.norm_sqr();
                }
            }
            if let Some(fb) = self.fault_bus {
                if self.island_of_bus[fb] != usize::MAX && isl.buses.binary_search(&fb).is_ok() {
                    absorbed += FAULT_SHUNT_PU * v[fb].norm_sqr();
                }
            }
            worst = worst.max((gen + other - absorbed).abs());
        }
        worst
    }

    /// Time derivatives of (delta, dw, pm) for the given state and voltages.
    fn derivatives(&self, delta: &[f64], dw: &[f64], pm: &[f64], v: &[Complex64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.syncs.len();
        let mut dd = vec![0.0; n];
        let mut ddw = vec![0.0; n];
        let mut dpm = vec![0.0; n];
        for isl in &self.islands {
            let msum: f64 = isl.syncs.iter().map(|&i| self.syncs[i].m).sum();
            let coi: f64 = isl.syncs.iter().map(|&i| self.syncs[i].m * dw[i]).sum::<f64>() / msum;
            for &i in &isl.syncs {
                let s = &self.syncs[i];
                let pe = self.pe(i, delta[i], v);
                dd[i] = OMEGA_S * dw[i];
                ddw[i] = (pm[i] - pe - s.d * (dw[i] - coi)) / s.m;
                // the limit acts on the lag input, so Pm stays within it without windup
                let target = (s.pref - s.kg * dw[i]).clamp(s.pref.min(0.0), s.pm_max);
                dpm[i] = (target - pm[i]) / self.opts.governor_lag_s;
            }
        }
        (dd, ddw, dpm)
    }

    /// One trapezoidal step of length `h`, corrector by fixed-point iteration.
    fn step(&mut self, h: f64) -> Result<(), String> {
        self.v_lag = self.v.clone();
        let (d0, w0, p0) = self.derivatives(&self.delta, &self.dw, &self.pm, &self.v);
        let live: Vec<usize> = self.islands.iter().flat_map(|i| i.syncs.iter().copied()).collect();
        let mut delta = self.delta.clone();
        let mut dw = self.dw.clone();
        let mut pm = self.pm.clone();
        for &i in &live {
            delta[i] += h * d0[i];
            dw[i] += h * w0[i];
            pm[i] += h * p0[i];
        }
        let mut v = self.solve_network(&delta)?;
        let mut ok = false;
        for _ in 0..50 {
            let (d1, w1, p1) = self.derivatives(&delta, &dw, &pm, &v);
            let mut change: f64 = 0.0;
            for &i in &live {
                let nd = self.delta[i] + 0.5 * h * (d0[i] + d1[i]);
                let nw = self.dw[i] + 0.5 * h * (w0[i] + w1[i]);
                let np = self.pm[i] + 0.5 * h * (p0[i] + p1[i]);
                change = change
                    .max((nd - delta[i]).abs())
                    .max((nw - dw[i]).abs() * OMEGA_S)
                    .max((np - pm[i]).abs());
                delta[i] = nd;
                dw[i] = nw;
                pm[i] = np;
            }
            if !change.is_finite() {
                return Err(format!("integration diverged at t={:.3}", self.t));
            }
            v = self.solve_network(&delta)?;
            if change < 1e-10 {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(format!("trapezoidal corrector did not converge at t={:.3}", self.t));
        }
        self.delta = delta;
        self.dw = dw;
        self.pm = pm;
        self.v = v;
        for (m, v) in self.v_mem.iter_mut().zip(&self.v) {
            if v.norm() >= MEMORY_MIN_PU {
                *m = *v;
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------ discrete

    fn device_name(&self, d: Device) -> (String, EventKind) {
        match d {
            Device::Branch(k) => (self.case.branches[k].id.clone(), EventKind::LineTrip),
            Device::Machine(m) => (self.case.machines[m].id.clone(), EventKind::GeneratorTrip),
            Device::Stage(l, s) => (self.case.loads[l].id.clone(), EventKind::UflsStage(s as u8 + 1)),
        }
    }

    /// Record an acting event; the shadow set sees the device go at the same
    /// instant unless it already recorded it. A later shadow would-trip of the
    /// same device is superseded.
    fn record(&mut self, time: f64, dev: Option<Device>, device: String, kind: EventKind, cause: &str) {
        let e = Event {
            time,
            device,
            kind,
            cause: cause.to_string(),
        };
        let id = dev.map(|d| self.ix.device(d));
        if let Some(sh) = self.shadow.as_mut() {
            let superseded = dev.and_then(|d| self.shadow_pending.iter().position(|p| p.0 == d));
            if let Some(i) = superseded {
                self.shadow_pending.remove(i);
            }
            let known = superseded.is_none() && id.is_some_and(|d| sh.fired[d]);
            if !known {
                if let Some(d) = id {
                    sh.fired[d] = true;
                }
                self.shadow_events.0.push(e.clone());
            }
        }
        if let Some(d) = id {
            self.acting.fired[d] = true;
        }
        self.events.push(e);
    }

    fn collapse(&mut self, comp: &[usize], invs: &[usize], loads: &[usize], why: &str) {
        for &i in invs {
            self.invs[i].on = false;
        }
        for &i in loads {
            self.loads[i].frac = 0.0;
        }
        for s in self.syncs.iter_mut() {
            if comp.binary_search(&s.bus).is_ok() {
                s.on = false;
            }
        }
        let name = format!("island@{}", self.case.buses[comp[0]].id);
        // breaker events carry their exact time, which may trail the step by < 1e-9
        let t = self.events.0.last().map_or(self.t, |e| e.time.max(self.t));
        self.record(t, None, name, EventKind::IslandCollapse, why);
    }

    fn execute_due(&mut self) -> Result<bool, String> {
        let mut changed = false;
        while let Some(&(time, _, a)) = self.pending.first() {
            if time > self.t + 1e-9 {
                break;
            }
            self.pending.remove(0);
            match a {
                Action::ClearFault => {
                    self.fault_bus = None;
                    let c = self.contingency.expect("scripted clearing");
                    for k in c.cleared_branches() {
                        if self.branch_on[k] {
                            self.branch_on[k] = false;
                            let id = self.case.branches[k].id.clone();
                            self.record(time, Some(Device::Branch(k)), id, EventKind::LineTrip, "scripted");
                        }
                    }
                    let id = self.case.branches[c.branch].id.clone();
                    self.record(time, None, id, EventKind::FaultCleared, "scripted");
                    changed = true;
                }
                Action::OpenBranch(k, cause) => {
                    if self.branch_on[k] {
                        self.branch_on[k] = false;
                        let id = self.case.branches[k].id.clone();
                        self.record(time, Some(Device::Branch(k)), id, EventKind::LineTrip, cause);
                        changed = true;
                    }
                }
                Action::TripMachine(m, cause) => {
                    if self.device_live(Device::Machine(m)) {
                        for s in self.syncs.iter_mut().filter(|s| s.idx == m) {
                            s.on = false;
                        }
                        for s in self.invs.iter_mut().filter(|s| s.idx == m) {
                            s.on = false;
                        }
                        let id = self.case.machines[m].id.clone();
                        self.record(time, Some(Device::Machine(m)), id, EventKind::GeneratorTrip, cause);
                        changed = true;
                    }
                }
                Action::ShedStage(l, s) => {
                    let ld = &self.loads[l];
                    if ld.frac > 1e-12 && !self.bus_dead[ld.bus] {
                        let step = self.opts.protection.ufls_fraction;
                        self.loads[l].frac = (self.loads[l].frac - step).max(0.0);
                        let id = self.case.loads[l].id.clone();
                        self.record(time, Some(Device::Stage(l, s)), id, EventKind::UflsStage(s as u8 + 1), "ufls");
                        changed = true;
                    }
                }
                Action::Kick(i, d) => {
                    if let Some(k) = self.syncs.iter().position(|s| s.idx == i) {
                        self.delta[k] += d;
                    }
                }
            }
        }
        if changed {
            self.rebuild()?;
        }
        Ok(changed)
    }

    fn coi(&self, isl: &Island) -> (f64, f64) {
        let msum: f64 = isl.syncs.iter().map(|&i| self.syncs[i].m).sum();
        let w = isl.syncs.iter().map(|&i| self.syncs[i].m * self.dw[i]).sum::<f64>() / msum;
        let d = isl.syncs.iter().map(|&i| self.syncs[i].m * self.delta[i]).sum::<f64>() / msum;
        (w, d)
    }

    fn island_freq(&self, bus: usize) -> Option<f64> {
        let k = self.island_of_bus[bus];
        (k != usize::MAX).then(|| F0_HZ * (1.0 + self.coi(&self.islands[k]).0))
    }

    /// Zone membership for trajectory replay and relay evaluation.
    fn zone_check(case: &NetworkCase, settings: &ProtectionSettings, k: usize, zone: usize, mult: f64, z: (Complex64, Complex64)) -> bool {
        let br = &case.branches[k];
        let (z, zpol) = z;
        let reach = Complex64::new(br.r, br.x) * (settings.zone_reach[zone] * mult);
        // directional supervision against the memory voltage
        if (zpol * reach.conj()).re <= 0.0 {
            return false;
        }
        // inside the mho circle through the origin with diameter `reach`
        let z2 = z.norm_sqr();
        if z2 >= (z * reach.conj()).re {
            return false;
        }
        let z_load_min = case.base_mva / br.rating_mva / settings.blinder_margin;
        let blinded = z2 > z_load_min * z_load_min && z.re > 0.0 && z.im.abs() < z.re * settings.blinder_angle_deg.to_radians().tan();
        !blinded
    }

    /// Raw pickup conditions of every live function; distance relays report
    /// whether a measurement exists and leave the zone test to each bank.
    fn conditions(&mut self) -> Vec<(Func, bool)> {
        let ps = &self.opts.protection;
        let mut out = Vec::new();
        if !ps.enabled {
            return out;
        }
        for (k, br) in self.case.branches.iter().enumerate() {
            if !self.branch_on[k] || self.scripted[k] || self.bus_dead[br.from_idx] {
                continue;
            }
            for end in 0..2 {
                let z = measured_impedance(self.case, k, end, &self.v, &self.v_mem);
                self.zbuf[2 * k + end] = z;
                for zone in 0..3 {
                    out.push((Func::Zone(k, end, zone), z.is_some()));
                }
            }
        }
        for (i, s) in self.syncs.iter().enumerate() {
            if !s.on || self.bus_dead[s.bus] {
                continue;
            }
            let vm = self.v[s.bus].norm();
            out.push((Func::Frt(s.idx), vm < ps.frt_voltage_pu));
            out.push((Func::Undervoltage(s.idx), vm < ps.undervoltage_pu));
            let k = self.island_of_bus[s.bus];
            let (_, dcoi) = self.coi(&self.islands[k]);
            out.push((Func::LossOfSync(s.idx), (self.delta[i] - dcoi).abs() > ps.los_angle_rad));
        }
        for inv in &self.invs {
            if !inv.on || self.bus_dead[inv.bus] {
                continue;
            }
            let vm = self.v[inv.bus].norm();
            out.push((Func::Frt(inv.idx), vm < ps.frt_voltage_pu));
            let f = self.island_freq(inv.bus).unwrap_or(F0_HZ);
            out.push((Func::OverFrequency(inv.idx), f > ps.inverter_overfrequency_hz));
        }
        for (l, ld) in self.loads.iter().enumerate() {
            if ld.frac <= 0.0 || self.bus_dead[ld.bus] {
                continue;
            }
            let f = self.island_freq(ld.bus).unwrap_or(F0_HZ);
            for (s, thr) in ps.ufls_thresholds_hz.iter().enumerate() {
                out.push((Func::Ufls(l, s), f < *thr));
            }
        }
        out
    }

    fn device_of(f: Func) -> Device {
        match f {
            Func::Zone(k, _, _) => Device::Branch(k),
            Func::Frt(m) | Func::Undervoltage(m) | Func::LossOfSync(m) | Func::OverFrequency(m) => Device::Machine(m),
            Func::Ufls(l, s) => Device::Stage(l, s),
        }
    }

    fn delay_and_breaker(&self, params: &ProtectionParamSet, f: Func) -> (f64, f64) {
        let ps = &self.opts.protection;
        let l = self.layout;
        match f {
            Func::Zone(k, end, zone) => (
                ps.zone_delay_s[zone] + params.pickup_offset_s[l.distance_relay(k, end)],
                params.breaker_time_s[l.branch_breaker(k)],
            ),
            Func::Frt(m) | Func::Undervoltage(m) | Func::LossOfSync(m) | Func::OverFrequency(m) => {
                let base = match f {
                    Func::Frt(_) => ps.frt_delay_s,
                    Func::Undervoltage(_) => ps.undervoltage_delay_s,
                    _ => 0.0,
                };
                (
                    base + params.pickup_offset_s[l.machine_relay(m)],
                    params.breaker_time_s[l.machine_breaker(m)],
                )
            }
            Func::Ufls(d, _) => (
                ps.ufls_pickup_s + params.pickup_offset_s[l.load_relay(d)],
                params.breaker_time_s[l.load_breaker(d)],
            ),
        }
    }

    fn cause(f: Func) -> &'static str {
        match f {
            Func::Zone(_, 0, 0) => "zone1@from",
            Func::Zone(_, 1, 0) => "zone1@to",
            Func::Zone(_, 0, 1) => "zone2@from",
            Func::Zone(_, 1, 1) => "zone2@to",
            Func::Zone(_, 0, _) => "zone3@from",
            Func::Zone(_, _, _) => "zone3@to",
            Func::Frt(_) => "frt",
            Func::Undervoltage(_) => "undervoltage",
            Func::LossOfSync(_) => "loss-of-synchronism",
            Func::OverFrequency(_) => "overfrequency",
            Func::Ufls(_, _) => "ufls",
        }
    }

    /// Evaluate every protection function of both banks at the current instant.
    fn evaluate_protections(&mut self) {
        let conds = self.conditions();
        let t = self.t;
        let ix = self.ix;
        let mut to_schedule = Vec::new();
        let mut shadow_new = Vec::new();
        for is_shadow in [false, true] {
            let bank = match (is_shadow, self.shadow.as_ref()) {
                (false, _) => &self.acting,
                (true, Some(b)) => b,
                (true, None) => continue,
            };
            // timers of functions absent from `conds` lapse here
            let mut deadline = vec![f64::NAN; bank.deadline.len()];
            let mut fire = Vec::new();
            for &(f, raw) in &conds {
                let dev = Self::device_of(f);
                if !raw || bank.fired[ix.device(dev)] {
                    continue;
                }
                if let Func::Zone(k, e, zone) = f {
                    let mult = bank.params.impedance_multiplier[self.layout.distance_relay(k, e)];
                    let z = self.zbuf[2 * k + e].expect("measured");
                    if !Self::zone_check(self.case, &self.opts.protection, k, zone, mult, z) {
                        continue;
                    }
                }
                let (delay, breaker) = self.delay_and_breaker(bank.params, f);
                let fid = ix.func(f);
                let expiry = if bank.deadline[fid].is_nan() {
                    t + delay
                } else {
                    bank.deadline[fid]
                };
                if t >= expiry - 1e-9 {
                    fire.push((f, dev, expiry + breaker));
                } else {
                    deadline[fid] = expiry;
                }
            }
            let bank = if is_shadow {
                self.shadow.as_mut().expect("shadow")
            } else {
                &mut self.acting
            };
            bank.deadline = deadline;
            for (f, dev, when) in fire {
                let d = ix.device(dev);
                if bank.fired[d] {
                    continue;
                }
                bank.fired[d] = true;
                if is_shadow {
                    shadow_new.push((f, dev, when));
                } else {
                    to_schedule.push((f, dev, when));
                }
            }
        }
        // acting commands are recorded when the breaker opens
        for (f, dev, when) in to_schedule {
            let a = match dev {
                Device::Branch(k) => Action::OpenBranch(k, Self::cause(f)),
                Device::Machine(m) => Action::TripMachine(m, Self::cause(f)),
                Device::Stage(l, s) => Action::ShedStage(l, s),
            };
            self.schedule(when, a);
        }
        for (f, dev, when) in shadow_new {
            let (device, kind) = self.device_name(dev);
            let e = Event {
                time: when,
                device,
                kind,
                cause: Self::cause(f).to_string(),
            };
            self.shadow_pending.push((dev, e));
        }
    }

    /// Whether an operation on `dev` would still act on the acting trajectory.
    fn device_live(&self, dev: Device) -> bool {
        match dev {
            Device::Branch(k) => self.branch_on[k] && !self.bus_dead[self.case.branches[k].from_idx],
            Device::Machine(m) => {
                self.syncs.iter().any(|s| s.idx == m && s.on && !self.bus_dead[s.bus])
                    || self.invs.iter().any(|s| s.idx == m && s.on && !self.bus_dead[s.bus])
            }
            Device::Stage(l, _) => self.loads[l].frac > 1e-12 && !self.bus_dead[self.loads[l].bus],
        }
    }

    /// Commit due shadow events; runs before same-instant acting actions so
    /// that a simultaneous acting trip does not mask the shadow one.
    fn commit_shadow(&mut self, all: bool) {
        let t = self.t;
        let (due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.shadow_pending)
            .into_iter()
            .partition(|(_, e)| all || e.time <= t + 1e-9);
        self.shadow_pending = rest;
        for (dev, e) in due {
            if self.device_live(dev) {
                self.shadow_events.0.push(e);
            }
        }
    }

    /// Earliest pending acting deadline (timer expiry or breaker opening).
    fn next_landing(&self) -> f64 {
        let pending = self.pending.first().map_or(f64::INFINITY, |p| p.0);
        self.acting.deadline.iter().filter(|d| !d.is_nan()).fold(pending, |a, &d| a.min(d))
    }

    fn frequency_collapse(&mut self) -> Result<(), String> {
        let mut hit = Vec::new();
        for (k, isl) in self.islands.iter().enumerate() {
            let f = F0_HZ * (1.0 + self.coi(isl).0);
            if f < self.opts.protection.collapse_frequency_hz {
                hit.push(k);
            }
        }
        if hit.is_empty() {
            return Ok(());
        }
        for k in hit.into_iter().rev() {
            let isl = &self.islands[k];
            let (buses, invs, loads) = (isl.buses.clone(), isl.invs.clone(), isl.loads.clone());
            self.collapse(&buses, &invs, &loads, "underfrequency");
            for &b in &buses {
                self.bus_dead[b] = true;
            }
        }
        self.rebuild()
    }

    fn record_trace(&mut self) {
        let Some(tr) = self.trace.as_mut() else { return };
        tr.time.push(self.t);
        tr.delta_rad.push(self.delta.clone());
        tr.freq_hz.push(self.dw.iter().map(|w| F0_HZ * (1.0 + w)).collect());
        tr.bus_v.push(self.v.clone());
        tr.bus_v_memory.push(self.v_mem.clone());
        tr.branch_on.push(self.branch_on.clone());
    }

    fn steady(&mut self, h: f64) -> bool {
        if self.fault_bus.is_some() || !self.pending.is_empty() {
            return false;
        }
        // voltage steadiness window
        let mut moved = false;
        for b in 0..self.v.len() {
            if (self.v[b].norm() - self.v_ref[b]).abs() > self.opts.voltage_tolerance_pu {
                moved = true;
            }
        }
        if moved {
            self.v_ref = self.v.iter().map(|v| v.norm()).collect();
            self.t_v_ref = self.t;
        }
        let mut calm = true;
        let cois: Vec<f64> = self.islands.iter().map(|isl| self.coi(isl).0).collect();
        for (k, isl) in self.islands.iter().enumerate() {
            for &i in &isl.syncs {
                if ((self.dw[i] - cois[k]) * F0_HZ).abs() > self.opts.speed_tolerance_hz {
                    calm = false;
                }
            }
            let prev = self.last_coi.get(k).copied().unwrap_or(cois[k]);
            if ((cois[k] - prev) * F0_HZ / h).abs() > self.opts.rocof_tolerance_hz_s {
                calm = false;
            }
        }
        self.last_coi = cois;
        let timers_idle = self.acting.idle() && self.shadow.as_ref().is_none_or(|s| s.idle());
        calm && timers_idle && self.t - self.t_v_ref >= self.opts.steady_window_s
    }

    fn execute(&mut self) -> Result<(), String> {
        if let Some(c) = self.contingency {
            self.fault_bus = Some(c.fault_bus);
            self.schedule(c.clearing_time, Action::ClearFault);
        }
        for d in self.opts.disturbances.clone() {
            match d {
                Disturbance::TripMachine { machine, at_s } => self.schedule(at_s, Action::TripMachine(machine, "scheduled")),
                Disturbance::AngleKick { machine, at_s, delta_rad } => self.schedule(at_s, Action::Kick(machine, delta_rad)),
            }
        }
        self.rebuild()?;
        self.execute_due()?;
        self.v = self.solve_network(&self.delta.clone())?;
        self.max_residual = self.power_residual(&self.v);
        self.evaluate_protections();
        self.record_trace();
        let horizon = self.opts.horizon_s;
        while self.t < horizon - 1e-9 && !self.islands.is_empty() {
            let h_nom = if self.fault_bus.is_some() {
                self.opts.dt_fault_s
            } else {
                self.opts.dt_s
            };
            let landing = self.next_landing();
            let mut next = (self.t + h_nom).min(horizon);
            if landing > self.t + 1e-9 && landing < next {
                next = landing;
            }
            let h = next - self.t;
            self.step(h)?;
            self.t = next;
            self.commit_shadow(false);
            if self.execute_due()? {
                self.v = self.solve_network(&self.delta.clone())?;
            }
            self.frequency_collapse()?;
            if self.islands.is_empty() {
                break;
            }
            self.max_residual = self.max_residual.max(self.power_residual(&self.v));
            self.evaluate_protections();
            self.record_trace();
            if self.steady(h) {
                break;
            }
        }
        Ok(())
    }

    fn finish(mut self, failure: Option<String>) -> SimRun {
        self.commit_shadow(true);
        let events = std::mem::take(&mut self.events);
        let shadow = self.shadow.is_some().then(|| std::mem::take(&mut self.shadow_events).sorted());
        let trace = self.trace.take();
        let total = self.total_load;
        if let Some(msg) = failure {
            log::warn!("solver failure: {msg}");
            return SimRun {
                result: failure_result(self.opts, total, msg, events, self.t, self.max_residual),
                shadow,
                trace,
            };
        }
        let shed: f64 = self.loads.iter().map(|l| l.p_mw * (1.0 - l.frac)).sum::<f64>().clamp(0.0, total);
        let shed = if (total - shed).abs() < 1e-9 { total } else { shed };
        let terminal = if shed >= total && total > 0.0 {
            Terminal::FullBlackout
        } else if shed > 1e-9 {
            Terminal::PartialBlackout
        } else {
            Terminal::Stabilized
        };
        let cost = consequences_cost(&self.opts.cost, shed, total).expect("shed within load");
        SimRun {
            result: ScenarioResult {
                events,
                load_shed_mw: shed,
                total_load_mw: total,
                energy_not_served_mwh: self.opts.cost.energy_not_served_mwh(shed, total),
                cost_eur: cost,
                terminal,
                solver_failure: None,
                end_time_s: self.t,
                max_power_residual_pu: self.max_residual,
                wall_time_s: 0.0,
            },
            shadow,
            trace,
        }
    }
}

/// Impedance seen at `end` of branch `k` looking into the line, with the
/// memory-polarised counterpart. `None` when the current is negligible.
fn measured_impedance(case: &NetworkCase, k: usize, end: usize, v: &[Complex64], v_mem: &[Complex64]) -> Option<(Complex64, Complex64)> {
    let br = &case.branches[k];
    let (i, j) = if end == 0 {
        (br.from_idx, br.to_idx)
    } else {
        (br.to_idx, br.from_idx)
    };
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let cur = (v[i] - v[j]) * ys + v[i] * Complex64::new(0.0, br.b / 2.0);
    (cur.norm() > 1e-3).then(|| (v[i] / cur, v_mem[i] / cur))
}

/// Replay check: would zone `zone` of the relay at `end` of branch `k` pick
/// up for the recorded voltages?
#[allow(clippy::too_many_arguments)]
pub fn zone_picks_up(
    case: &NetworkCase,
    settings: &ProtectionSettings,
    k: usize,
    end: usize,
    zone: usize,
    mult: f64,
    v: &[Complex64],
    v_mem: &[Complex64],
) -> bool {
    measured_impedance(case, k, end, v, v_mem).is_some_and(|z| Sim::zone_check(case, settings, k, zone, mult, z))
}

//! DC sensitivities (PTDF/LODF) and a Newton-Raphson AC load flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{NetworkCase, SparseAdmittance, Topology};
use crate::error::{Error, Result};

/// Linear DC model of the in-service network, referenced to `slack`.
#[derive(Clone, Debug)]
pub struct DcModel {
    pub slack: usize,
    /// `ptdf[(l, i)]`: MW on branch `l` per MW injected at bus `i` (withdrawn at slack).
    pub ptdf: DMatrix<f64>,
    pub in_service: Vec<bool>,
    from: Vec<usize>,
    to: Vec<usize>,
}

impl DcModel {
    pub fn new(case: &NetworkCase, topo: &Topology, slack: usize) -> Result<Self> {
        let n = case.n_bus();
        let nb = case.branches.len();
        let mut b = DMatrix::<f64>::zeros(n, n);
        for (k, br) in case.branches.iter().enumerate() {
            if !topo.branches[k] {
                continue;
            }
            let s = 1.0 / br.x;
            let (i, j) = (br.from_idx, br.to_idx);
            b[(i, i)] += s;
            b[(j, j)] += s;
            b[(i, j)] -= s;
            b[(j, i)] -= s;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let m = keep.len();
        let mut reduced = DMatrix::<f64>::zeros(m, m);
        for (a, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                reduced[(a, c)] = b[(i, j)];
            }
        }
        let xr = reduced
            .try_inverse()
            .ok_or_else(|| Error::Validation("DC susceptance matrix is singular".into()))?;
        let mut x = DMatrix::<f64>::zeros(n, n);
        for (a, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                x[(i, j)] = xr[(a, c)];
            }
        }
        let mut ptdf = DMatrix::<f64>::zeros(nb, n);
        for (k, br) in case.branches.iter().enumerate() {
            if !topo.branches[k] {
                continue;
            }
            for i in 0..n {
                ptdf[(k, i)] = (x[(br.from_idx, i)] - x[(br.to_idx, i)]) / br.x;
            }
        }
        Ok(DcModel {
            slack,
            ptdf,
            in_service: topo.branches.clone(),
            from: case.branches.iter().map(|b| b.from_idx).collect(),
            to: case.branches.iter().map(|b| b.to_idx).collect(),
        })
    }

    /// Branch flows (MW, from→to positive) for bus injections in MW.
    /// Injections need not sum to zero; the slack takes the mismatch.
    pub fn flows(&self, injection_mw: &[f64]) -> Vec<f64> {
        let inj = DVector::from_column_slice(injection_mw);
        (&self.ptdf * inj).iter().copied().collect()
    }

    /// Transfer sensitivity of branch `l` to a 1 MW transfer from bus `a` to bus `b`.
    pub fn transfer(&self, l: usize, a: usize, b: usize) -> f64 {
        self.ptdf[(l, a)] - self.ptdf[(l, b)]
    }

    /// Line outage distribution factor: change of flow on `l` per MW pre-outage
    /// flow on `k` when `k` trips. `None` when `k` is a bridge.
    pub fn lodf(&self, l: usize, k: usize) -> Option<f64> {
        if l == k {
            return Some(-1.0);
        }
        let self_sens = self.transfer(k, self.from[k], self.to[k]);
        let denom = 1.0 - self_sens;
        if denom.abs() < 1e-9 {
            return None;
        }
        Some(self.transfer(l, self.from[k], self.to[k]) / denom)
    }

    pub fn is_bridge(&self, k: usize) -> bool {
        self.in_service[k] && (1.0 - self.transfer(k, self.from[k], self.to[k])).abs() < 1e-9
    }

    /// Post-outage flows on every branch when branch `k` trips.
    pub fn post_outage_flows(&self, base_flows: &[f64], k: usize) -> Option<Vec<f64>> {
        let fk = base_flows[k];
        let mut out = Vec::with_capacity(base_flows.len());
        for (l, &f) in base_flows.iter().enumerate() {
            if l == k || !self.in_service[l] {
                out.push(0.0);
                continue;
            }
            out.push(f + self.lodf(l, k)? * fk);
        }
        Some(out)
    }
}

/// Bus specification for the AC load flow. Powers in pu.
#[derive(Clone, Debug)]
pub struct AcSpec {
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    /// Voltage magnitude setpoint for PV buses (and the slack).
    pub v_set: Vec<Option<f64>>,
    pub slack: usize,
}

#[derive(Clone, Debug)]
pub struct AcSolution {
    pub v: Vec<Complex64>,
    /// Net injection actually realised at every bus (slack P and PV Q solved for).
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
}

fn injections(yd: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut cur = Complex64::new(0.0, 0.0);
            for j in 0..n {
                cur += yd[(i, j)] * v[j];
            }
            v[i] * cur.conj()
        })
        .collect()
}

/// Polar Newton-Raphson on the buses of one connected island.
pub fn solve_ac(y: &SparseAdmittance, island: &[usize], spec: &AcSpec, tol: f64, max_iter: usize) -> Result<AcSolution> {
    let yd = y.restrict(island);
    let n = island.len();
    let slack = island
        .iter()
        .position(|&b| b == spec.slack)
        .ok_or_else(|| Error::NoConvergence("slack bus outside island".into()))?;
    let pv: Vec<bool> = island.iter().map(|&b| spec.v_set[b].is_some()).collect();
    let mut vm: Vec<f64> = island.iter().map(|&b| spec.v_set[b].unwrap_or(1.0)).collect();
    let mut va = vec![0.0; n];
    let p_sp: Vec<f64> = island.iter().map(|&b| spec.p_inj[b]).collect();
    let q_sp: Vec<f64> = island.iter().map(|&b| spec.q_inj[b]).collect();

    // unknown ordering: angles of all non-slack, then magnitudes of PQ buses
    let ang: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| i != slack && !pv[i]).collect();
    let dim = ang.len() + mag.len();
    let g = |i: usize, j: usize| yd[(i, j)].re;
    let bm = |i: usize, j: usize| yd[(i, j)].im;

    for it in 0..max_iter {
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
        let s = injections(&yd, &v);
        let mut mis = DVector::<f64>::zeros(dim);
        for (r, &i) in ang.iter().enumerate() {
            mis[r] = p_sp[i] - s[i].re;
        }
        for (r, &i) in mag.iter().enumerate() {
            mis[ang.len() + r] = q_sp[i] - s[i].im;
        }
        let worst = mis.amax();
        if !worst.is_finite() {
            return Err(Error::NoConvergence("mismatch is not finite".into()));
        }
        if worst < tol {
            let mut out_v = vec![Complex64::new(0.0, 0.0); spec.p_inj.len()];
            let mut out_p = spec.p_inj.clone();
            let mut out_q = spec.q_inj.clone();
            for (k, &b) in island.iter().enumerate() {
                out_v[b] = v[k];
                out_p[b] = s[k].re;
                out_q[b] = s[k].im;
            }
            return Ok(AcSolution {
                v: out_v,
                p_inj: out_p,
                q_inj: out_q,
                iterations: it,
            });
        }
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let p: Vec<f64> = s.iter().map(|x| x.re).collect();
        let q: Vec<f64> = s.iter().map(|x| x.im).collect();
        let col_ang: Vec<Option<usize>> = {
            let mut c = vec![None; n];
            for (k, &i) in ang.iter().enumerate() {
                c[i] = Some(k);
            }
            c
        };
        let col_mag: Vec<Option<usize>> = {
            let mut c = vec![None; n];
            for (k, &i) in mag.iter().enumerate() {
                c[i] = Some(ang.len() + k);
            }
            c
        };
        for i in 0..n {
            let rp = col_ang[i];
            let rq = col_mag[i];
            for j in 0..n {
                let t = va[i] - va[j];
                let (ct, st) = (t.cos(), t.sin());
                if i == j {
                    if let Some(r) = rp {
                        if let Some(c) = col_ang[i] {
                            jac[(r, c)] = -q[i] - bm(i, i) * vm[i] * vm[i];
                        }
                        if let Some(c) = col_mag[i] {
                            jac[(r, c)] = p[i] / vm[i] + g(i, i) * vm[i];
                        }
                    }
                    if let Some(r) = rq {
                        if let Some(c) = col_ang[i] {
                            jac[(r, c)] = p[i] - g(i, i) * vm[i] * vm[i];
                        }
                        if let Some(c) = col_mag[i] {
                            jac[(r, c)] = q[i] / vm[i] - bm(i, i) * vm[i];
                        }
                    }
                } else {
                    let gij = g(i, j);
                    let bij = bm(i, j);
                    if gij == 0.0 && bij == 0.0 {
                        continue;
                    }
                    if let Some(r) = rp {
                        if let Some(c) = col_ang[j] {
                            jac[(r, c)] = vm[i] * vm[j] * (gij * st - bij * ct);
                        }
                        if let Some(c) = col_mag[j] {
                            jac[(r, c)] = vm[i] * (gij * ct + bij * st);
                        }
                    }
                    if let Some(r) = rq {
                        if let Some(c) = col_ang[j] {
                            jac[(r, c)] = -vm[i] * vm[j] * (gij * ct + bij * st);
                        }
                        if let Some(c) = col_mag[j] {
                            jac[(r, c)] = vm[i] * (gij * st - bij * ct);
                        }
                    }
                }
            }
        }
        let dx = jac
            .lu()
            .solve(&mis)
            .ok_or_else(|| Error::NoConvergence("singular Jacobian".into()))?;
        for (k, &i) in ang.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in mag.iter().enumerate() {
            vm[i] += dx[ang.len() + k];
            if vm[i] < 0.05 {
                return Err(Error::NoConvergence("voltage collapsed".into()));
            }
        }
    }
    Err(Error::NoConvergence(format!("no convergence in {max_iter} iterations")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{admittance, bundled, AdmittanceMode};

    fn desk() -> NetworkCase {
        NetworkCase::from_json(bundled::DESK_GRID).unwrap()
    }

    #[test]
    fn ptdf_flows_balance_at_every_bus() {
        let case = desk();
        let dc = DcModel::new(&case, &case.base_topology(), 0).unwrap();
        let mut inj = vec![0.0; case.n_bus()];
        inj[3] = 250.0;
        inj[7] = -100.0;
        inj[0] = -150.0;
        let f = dc.flows(&inj);
        for bus in 0..case.n_bus() {
            let mut net = 0.0;
            for (k, br) in case.branches.iter().enumerate() {
                if br.from_idx == bus {
                    net += f[k];
                }
                if br.to_idx == bus {
                    net -= f[k];
                }
            }
            assert!((net - inj[bus]).abs() < 1e-8, "bus {bus}: {net} vs {}", inj[bus]);
        }
    }

    #[test]
    fn lodf_matches_recomputed_flows() {
        let case = desk();
        let topo = case.base_topology();
        let dc = DcModel::new(&case, &topo, 0).unwrap();
        let mut inj = vec![0.0; case.n_bus()];
        inj[2] = 400.0;
        inj[8] = -300.0;
        inj[5] = -100.0;
        let base = dc.flows(&inj);
        for k in 0..case.branches.len() {
            let Some(post) = dc.post_outage_flows(&base, k) else {
                continue;
            };
            let t2 = topo.without_branches(&[k]);
            let direct = DcModel::new(&case, &t2, 0).unwrap().flows(&inj);
            for l in 0..case.branches.len() {
                assert!((post[l] - direct[l]).abs() < 1e-7, "outage {k} line {l}");
            }
        }
    }

    #[test]
    fn two_bus_ac_flow() {
        let case = NetworkCase::from_json(bundled::TWO_BUS).unwrap();
        let topo = case.base_topology();
        let y = admittance(&case, &topo, AdmittanceMode::Loadflow).unwrap();
        let spec = AcSpec {
            p_inj: vec![0.0, -1.0],
            q_inj: vec![0.0, -0.2],
            v_set: vec![Some(1.0), None],
            slack: 0,
        };
        let sol = solve_ac(&y, &[0, 1], &spec, 1e-10, 20).unwrap();
        // lossless line: slack P equals load
        assert!((sol.p_inj[0] - 1.0).abs() < 1e-8);
        // check flow equation V1 V2 sin(d)/X = P
        let d = sol.v[0].arg() - sol.v[1].arg();
        let p = sol.v[0].norm() * sol.v[1].norm() * d.sin() / 0.1;
        assert!((p - 1.0).abs() < 1e-8);
    }
}

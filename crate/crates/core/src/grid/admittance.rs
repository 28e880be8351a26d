use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{NetworkCase, Topology};
use crate::error::{Error, Result};

/// Shunt admittance (pu) used to model a bolted fault.
pub const FAULT_SHUNT_PU: f64 = 1.0e5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdmittanceMode {
    /// Branches only (π-model), as used by the load flow.
    Loadflow,
    /// Loadflow plus a bolted-fault shunt at the given bus.
    Faulted(usize),
    /// Loadflow plus `1/(jX')` of every connected synchronous machine.
    Subtransient,
}

/// Sparse complex nodal admittance matrix, row-wise ordered maps.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdmittance {
    n: usize,
    rows: Vec<BTreeMap<usize, Complex64>>,
}

impl SparseAdmittance {
    pub fn zeros(n: usize) -> Self {
        SparseAdmittance {
            n,
            rows: vec![BTreeMap::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        *self.rows[i].entry(j).or_insert(Complex64::new(0.0, 0.0)) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i].get(&j).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        self.rows[i].iter().map(|(j, v)| (*j, *v))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_element(self.n, self.n, Complex64::new(0.0, 0.0));
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Dense sub-matrix restricted to `buses` (in the given order).
    pub fn restrict(&self, buses: &[usize]) -> DMatrix<Complex64> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &b) in buses.iter().enumerate() {
            pos[b] = k;
        }
        let m = buses.len();
        let mut out = DMatrix::from_element(m, m, Complex64::new(0.0, 0.0));
        for (k, &b) in buses.iter().enumerate() {
            for (&j, &v) in &self.rows[b] {
                if pos[j] != usize::MAX {
                    out[(k, pos[j])] = v;
                }
            }
        }
        out
    }
}

/// Series admittance of a branch.
pub(crate) fn series_admittance(r: f64, x: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) / Complex64::new(r, x)
}

/// Nodal admittance for the energized part of `topo`.
pub fn admittance(case: &NetworkCase, topo: &Topology, mode: AdmittanceMode) -> Result<SparseAdmittance> {
    let energized = topo.branches.iter().any(|b| *b) || topo.machines.iter().any(|m| *m) || topo.loads.iter().any(|l| *l);
    if case.buses.is_empty() || !energized {
        return Err(Error::EmptyIsland);
    }
    let n = case.buses.len();
    let mut y = SparseAdmittance::zeros(n);
    for (k, br) in case.branches.iter().enumerate() {
        if !topo.branches[k] {
            continue;
        }
        let ys = series_admittance(br.r, br.x);
        let ysh = Complex64::new(0.0, br.b / 2.0);
        let (i, j) = (br.from_idx, br.to_idx);
        y.add(i, i, ys + ysh);
        y.add(j, j, ys + ysh);
        y.add(i, j, -ys);
        y.add(j, i, -ys);
    }
    match mode {
        AdmittanceMode::Loadflow => {}
        AdmittanceMode::Faulted(bus) => {
            if bus >= n {
                return Err(Error::OutOfRange(format!("fault bus index {bus}")));
            }
            y.add(bus, bus, Complex64::new(FAULT_SHUNT_PU, 0.0));
        }
        AdmittanceMode::Subtransient => {
            for (k, m) in case.machines.iter().enumerate() {
                if topo.machines[k] && m.is_sync() {
                    y.add(m.bus_idx, m.bus_idx, Complex64::new(0.0, -1.0 / m.x_transient));
                }
            }
        }
    }
    Ok(y)
}

/// Thevenin impedance seen at `bus` within its island, by solving `Y z = e_bus`.
/// Returns `None` when the island has no path to ground (no sources or shunts).
pub fn thevenin_impedance(y: &SparseAdmittance, island: &[usize], bus: usize) -> Option<Complex64> {
    let k = island.iter().position(|&b| b == bus)?;
    let dense = y.restrict(island);
    let lu = dense.lu();
    let mut rhs = DVector::from_element(island.len(), Complex64::new(0.0, 0.0));
    rhs[k] = Complex64::new(1.0, 0.0);
    let z = lu.solve(&rhs)?;
    let zk = z[k];
    if zk.norm().is_finite() && zk.norm() < 1e12 {
        Some(zk)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bundled, connected_islands};

    #[test]
    fn two_bus_off_diagonal() {
        let case = NetworkCase::from_json(bundled::TWO_BUS).unwrap();
        let y = admittance(&case, &case.base_topology(), AdmittanceMode::Loadflow).unwrap();
        let br = &case.branches[0];
        assert_eq!(br.r, 0.0);
        assert_eq!(br.x, 0.1);
        let expected = -(Complex64::new(1.0, 0.0) / Complex64::new(0.0, 0.1));
        assert!((y.get(0, 1) - expected).norm() < 1e-12);
        assert!((y.get(1, 0) - expected).norm() < 1e-12);
    }

    #[test]
    fn diagonal_is_negative_row_sum_plus_shunts() {
        let case = NetworkCase::from_json(bundled::DESK_GRID).unwrap();
        let topo = case.base_topology();
        let y = admittance(&case, &topo, AdmittanceMode::Loadflow).unwrap();
        let mut shunt = vec![Complex64::new(0.0, 0.0); case.n_bus()];
        for br in &case.branches {
            shunt[br.from_idx] += Complex64::new(0.0, br.b / 2.0);
            shunt[br.to_idx] += Complex64::new(0.0, br.b / 2.0);
        }
        for i in 0..case.n_bus() {
            let off: Complex64 = y.row(i).filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
            assert!((y.get(i, i) - (-off + shunt[i])).norm() < 1e-9, "bus {i}");
        }
        // symmetric structure
        for i in 0..case.n_bus() {
            for (j, v) in y.row(i) {
                assert!((y.get(j, i) - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn connected_admittance_is_irreducible() {
        let case = NetworkCase::from_json(bundled::DESK_GRID).unwrap();
        let topo = case.base_topology();
        let y = admittance(&case, &topo, AdmittanceMode::Subtransient).unwrap();
        // graph of non-zero off-diagonals reaches every bus
        let n = case.n_bus();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for (v, val) in y.row(u) {
                if v != u && val.norm() > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn faulted_mode_adds_large_shunt() {
        let case = NetworkCase::from_json(bundled::TWO_BUS).unwrap();
        let topo = case.base_topology();
        let base = admittance(&case, &topo, AdmittanceMode::Loadflow).unwrap();
        let f = admittance(&case, &topo, AdmittanceMode::Faulted(1)).unwrap();
        assert!(((f.get(1, 1) - base.get(1, 1)).re - FAULT_SHUNT_PU).abs() < 1e-6);
        assert_eq!(f.get(0, 0), base.get(0, 0));
    }

    #[test]
    fn empty_topology_is_an_error() {
        let case = NetworkCase::from_json(bundled::TWO_BUS).unwrap();
        let topo = Topology {
            branches: vec![false],
            machines: vec![false; case.machines.len()],
            loads: vec![false; case.loads.len()],
        };
        assert!(matches!(
            admittance(&case, &topo, AdmittanceMode::Loadflow),
            Err(Error::EmptyIsland)
        ));
    }

    #[test]
    fn thevenin_matches_dense_inverse() {
        let case = NetworkCase::from_json(bundled::DESK_GRID).unwrap();
        let topo = case.base_topology();
        let y = admittance(&case, &topo, AdmittanceMode::Subtransient).unwrap();
        let island = &connected_islands(&case, &topo)[0];
        let zinv = y.to_dense().try_inverse().expect("invertible");
        for &bus in island {
            let zth = thevenin_impedance(&y, island, bus).unwrap();
            assert!((zth - zinv[(bus, bus)]).norm() < 1e-9 * zinv[(bus, bus)].norm().max(1.0));
        }
    }
}

//! Contingency list with physical occurrence frequencies.

use serde::{Deserialize, Serialize};

use crate::grid::NetworkCase;

/// Primary protection fails and the fault is cleared with delay.
pub const P_DELAYED_CLEARING: f64 = 0.1;
/// One breaker fails to open; backup protection opens an adjacent branch.
pub const P_BREAKER_FAILURE: f64 = 0.01;
/// Clearing time for both modes (s).
pub const CLEARING_TIME_S: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClearingMode {
    DelayedN1,
    BreakerFailureN2,
}

impl ClearingMode {
    pub fn label(self) -> &'static str {
        match self {
            ClearingMode::DelayedN1 => "N-1",
            ClearingMode::BreakerFailureN2 => "N-2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub id: String,
    pub mode: ClearingMode,
    pub branch: usize,
    pub fault_bus: usize,
    pub second_branch: Option<usize>,
    /// Occurrences per year.
    pub frequency: f64,
    pub clearing_time: f64,
}

impl Contingency {
    /// Branches opened when the fault is cleared.
    pub fn cleared_branches(&self) -> Vec<usize> {
        let mut v = vec![self.branch];
        v.extend(self.second_branch);
        v
    }
}

/// Faults per year on a branch.
pub fn branch_fault_frequency(case: &NetworkCase, branch: usize) -> f64 {
    case.fault_rate_per_100km_year * case.branches[branch].length_km / 100.0
}

/// Every delayed-clearing N-1 and breaker-failure N-2 of the base topology.
/// Faults are split evenly between the two ends; the N-2 share of one end is
/// split evenly among the other branches at that bus.
pub fn enumerate(case: &NetworkCase) -> Vec<Contingency> {
    let mut out = Vec::new();
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let per_end = branch_fault_frequency(case, k) / 2.0;
        for bus in [br.from_idx, br.to_idx] {
            let bus_id = &case.buses[bus].id;
            out.push(Contingency {
                id: format!("{}@{}", br.id, bus_id),
                mode: ClearingMode::DelayedN1,
                branch: k,
                fault_bus: bus,
                second_branch: None,
                frequency: per_end * P_DELAYED_CLEARING,
                clearing_time: CLEARING_TIME_S,
            });
            let adjacent: Vec<usize> = case.adjacent_branches(bus).into_iter().filter(|&j| j != k).collect();
            if adjacent.is_empty() {
                log::warn!("{}@{bus_id}: no adjacent branch, breaker failure not enumerated", br.id);
            }
            let share = per_end * P_BREAKER_FAILURE / adjacent.len().max(1) as f64;
            for j in adjacent {
                out.push(Contingency {
                    id: format!("{}@{}+{}", br.id, bus_id, case.branches[j].id),
                    mode: ClearingMode::BreakerFailureN2,
                    branch: k,
                    fault_bus: bus,
                    second_branch: Some(j),
                    frequency: share,
                    clearing_time: CLEARING_TIME_S,
                });
            }
        }
    }
    out
}

/// CSV listing: id, branches, mode, frequency.
pub fn to_csv(case: &NetworkCase, list: &[Contingency]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "branches", "mode", "f_per_year"]).expect("in-memory write");
    for c in list {
        let branches = c
            .cleared_branches()
            .iter()
            .map(|&b| case.branches[b].id.as_str())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([c.id.as_str(), &branches, c.mode.label(), &c.frequency.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;

    #[test]
    fn hundred_km_line_delayed_frequency() {
        let case = NetworkCase::from_json(bundled::TWO_BUS).unwrap();
        assert_eq!(case.branches[0].length_km, 100.0);
        assert!((branch_fault_frequency(&case, 0) - 2.5).abs() < 1e-12);
        let list = enumerate(&case);
        let n1: Vec<_> = list.iter().filter(|c| c.mode == ClearingMode::DelayedN1).collect();
        assert_eq!(n1.len(), 2);
        for c in n1 {
            assert!((c.frequency - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn single_adjacency_gives_one_n2() {
        let case = NetworkCase::from_json(bundled::DESK_GRID).unwrap();
        let wx1 = case.branch_idx("WX1").unwrap();
        let wh = case.bus_idx("WH").unwrap();
        let n2: Vec<_> = enumerate(&case)
            .into_iter()
            .filter(|c| c.branch == wx1 && c.fault_bus == wh && c.mode == ClearingMode::BreakerFailureN2)
            .collect();
        assert_eq!(n2.len(), 1);
        assert_eq!(n2[0].second_branch, case.branch_idx("WX2"));
    }

    #[test]
    fn desk_grid_count_and_totals() {
        let case = NetworkCase::from_json(bundled::DESK_GRID).unwrap();
        let list = enumerate(&case);
        // brute-force adjacency count
        let mut expected = 0;
        for (k, br) in case.branches.iter().enumerate() {
            for bus in [br.from_idx, br.to_idx] {
                expected += 1;
                expected += case
                    .branches
                    .iter()
                    .enumerate()
                    .filter(|(j, b)| *j != k && (b.from_idx == bus || b.to_idx == bus))
                    .count();
            }
        }
        assert_eq!(list.len(), expected);

        let total: f64 = (0..case.branches.len()).map(|k| branch_fault_frequency(&case, k)).sum();
        let sum = |m| list.iter().filter(|c| c.mode == m).map(|c| c.frequency).sum::<f64>();
        assert!((sum(ClearingMode::DelayedN1) - 0.1 * total).abs() <= 1e-12 * total);
        assert!((sum(ClearingMode::BreakerFailureN2) - 0.01 * total).abs() <= 1e-12 * total);
        for c in &list {
            assert!(c.frequency > 0.0);
            if let Some(j) = c.second_branch {
                let (a, b) = (&case.branches[c.branch], &case.branches[j]);
                let shared = [a.from_idx, a.to_idx].iter().any(|x| *x == b.from_idx || *x == b.to_idx);
                assert!(shared);
            }
        }
        let ids: std::collections::HashSet<_> = list.iter().map(|c| &c.id).collect();
        assert_eq!(ids.len(), list.len());
    }
}

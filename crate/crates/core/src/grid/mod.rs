//! Static grid description: case file ingestion, validation and per-unit helpers.
//!
//! The case file is a single JSON object. See `data/desk_grid.json` for the
//! normative example and the README for the field reference.

mod admittance;
pub mod powerflow;
mod topology;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{admittance, thevenin_impedance, AdmittanceMode, SparseAdmittance, FAULT_SHUNT_PU};
pub use topology::{connected_islands, island_labels, Topology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub kv: f64,
    pub zone: String,
}

/// Line or transformer, π-model, impedances in pu on the system base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    pub length_km: f64,
    pub rating_mva: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
    #[serde(skip)]
    pub from_idx: usize,
    #[serde(skip)]
    pub to_idx: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MachineKind {
    Sync,
    Inverter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Wind,
    Solar,
}

/// Generating unit. `h_s` is on a `p_max_mw` base, `x_transient` in pu on the
/// system base, `droop` in pu on a `p_max_mw` base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Machine {
    pub id: String,
    pub bus: String,
    pub kind: MachineKind,
    pub p_max_mw: f64,
    #[serde(default)]
    pub h_s: f64,
    #[serde(default)]
    pub x_transient: f64,
    #[serde(default)]
    pub droop: f64,
    #[serde(default)]
    pub primary_reserve_mw: f64,
    #[serde(default)]
    pub cost_eur_per_mwh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<Resource>,
    #[serde(skip)]
    pub bus_idx: usize,
}

impl Machine {
    pub fn is_sync(&self) -> bool {
        self.kind == MachineKind::Sync
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub id: String,
    pub bus: String,
    pub p_mw: f64,
    pub q_mvar: f64,
    #[serde(skip)]
    pub bus_idx: usize,
}

/// Validated static grid. Immutable after [`load_case`] / [`NetworkCase::from_json`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub base_mva: f64,
    pub fault_rate_per_100km_year: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub machines: Vec<Machine>,
    pub loads: Vec<Load>,
    #[serde(skip)]
    bus_index: HashMap<String, usize>,
}

/// Read and validate a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading case {}", path.display()), e))?;
    NetworkCase::parse(&text, path)
}

impl NetworkCase {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<memory>"))
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut case: NetworkCase = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        case.index_and_validate()?;
        Ok(case)
    }

    fn index_and_validate(&mut self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation("base_mva must be positive".into()));
        }
        if !(self.fault_rate_per_100km_year > 0.0) {
            return Err(Error::Validation("fault_rate_per_100km_year must be positive".into()));
        }
        if self.buses.is_empty() {
            return Err(Error::Validation("case has no buses".into()));
        }
        self.bus_index.clear();
        for (i, b) in self.buses.iter().enumerate() {
            if self.bus_index.insert(b.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
        }
        let lookup = |idx: &HashMap<String, usize>, what: &str, owner: &str, bus: &str| {
            idx.get(bus)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{what} {owner} references unknown bus {bus}")))
        };
        let mut seen = HashSet::new();
        for br in &mut self.branches {
            if !seen.insert(br.id.clone()) {
                return Err(Error::Validation(format!("duplicate branch id {}", br.id)));
            }
            br.from_idx = lookup(&self.bus_index, "branch", &br.id, &br.from)?;
            br.to_idx = lookup(&self.bus_index, "branch", &br.id, &br.to)?;
            if br.from_idx == br.to_idx {
                return Err(Error::Validation(format!("branch {} is a self-loop", br.id)));
            }
            if br.length_km < 0.0 {
                return Err(Error::Validation(format!("branch {} has negative length", br.id)));
            }
            if !(br.x > 0.0) || br.r < 0.0 {
                return Err(Error::Validation(format!("branch {} needs x > 0 and r >= 0", br.id)));
            }
            if !(br.rating_mva > 0.0) {
                return Err(Error::Validation(format!("branch {} needs a positive rating", br.id)));
            }
        }
        seen.clear();
        for m in &mut self.machines {
            if !seen.insert(m.id.clone()) {
                return Err(Error::Validation(format!("duplicate machine id {}", m.id)));
            }
            m.bus_idx = lookup(&self.bus_index, "machine", &m.id, &m.bus)?;
            if m.p_max_mw < 0.0 {
                return Err(Error::Validation(format!("machine {} has negative p_max", m.id)));
            }
            match m.kind {
                MachineKind::Sync => {
                    if !(m.x_transient > 0.0) {
                        return Err(Error::Validation(format!("sync machine {} needs X' > 0", m.id)));
                    }
                    if !(m.h_s > 0.0) {
                        return Err(Error::Validation(format!("sync machine {} needs H > 0", m.id)));
                    }
                    if m.droop < 0.0 {
                        return Err(Error::Validation(format!("machine {} has negative droop", m.id)));
                    }
                }
                MachineKind::Inverter => {
                    if m.resource.is_none() {
                        return Err(Error::Validation(format!("inverter {} needs a resource (wind or solar)", m.id)));
                    }
                }
            }
        }
        seen.clear();
        for l in &mut self.loads {
            if !seen.insert(l.id.clone()) {
                return Err(Error::Validation(format!("duplicate load id {}", l.id)));
            }
            l.bus_idx = lookup(&self.bus_index, "load", &l.id, &l.bus)?;
            if l.p_mw < 0.0 {
                return Err(Error::Validation(format!("load {} has negative P", l.id)));
            }
        }
        let islands = connected_islands(self, &self.base_topology());
        if islands.len() != 1 {
            return Err(Error::Validation(format!(
                "base case in-service graph is not connected ({} islands)",
                islands.len()
            )));
        }
        Ok(())
    }

    pub fn bus_idx(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn branch_idx(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    pub fn machine_idx(&self, id: &str) -> Option<usize> {
        self.machines.iter().position(|m| m.id == id)
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// All in-service branches plus every machine and load connected.
    pub fn base_topology(&self) -> Topology {
        Topology {
            branches: self.branches.iter().map(|b| b.in_service).collect(),
            machines: vec![true; self.machines.len()],
            loads: vec![true; self.loads.len()],
        }
    }

    /// Branch indices incident to a bus in the base topology.
    pub fn adjacent_branches(&self, bus: usize) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.in_service && (b.from_idx == bus || b.to_idx == bus))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn zones(&self) -> Vec<String> {
        let mut z: Vec<String> = self.buses.iter().map(|b| b.zone.clone()).collect();
        z.sort();
        z.dedup();
        z
    }

    pub fn total_base_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.p_mw).sum()
    }

    pub fn to_pu(&self, mw: f64) -> f64 {
        to_pu(mw, self.base_mva)
    }

    pub fn to_mw(&self, pu: f64) -> f64 {
        to_mw(pu, self.base_mva)
    }
}

pub fn to_pu(mw: f64, base_mva: f64) -> f64 {
    mw / base_mva
}

pub fn to_mw(pu: f64, base_mva: f64) -> f64 {
    pu * base_mva
}

/// Bundled cases, embedded so tests and benches need no path juggling.
pub mod bundled {
    pub const TWO_BUS: &str = include_str!("../../data/two_bus.json");
    pub const DESK_GRID: &str = include_str!("../../data/desk_grid.json");
    pub const WEATHER: &str = include_str!("../../data/weather.json");
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_bus_case_parses() {
        let case = NetworkCase::from_json(bundled::TWO_BUS).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
    }

    #[test]
    fn desk_grid_parses_and_is_rich_enough() {
        let case = NetworkCase::from_json(bundled::DESK_GRID).unwrap();
        assert!(case.buses.len() >= 10);
        assert!(case.zones().len() >= 2);
        assert!(case.machines.iter().any(|m| m.resource == Some(Resource::Wind)));
        // serialize back and reparse: same content
        let text = serde_json::to_string(&case).unwrap();
        let again = NetworkCase::from_json(&text).unwrap();
        assert_eq!(case.branches, again.branches);
        assert_eq!(case.machines, again.machines);
        assert_eq!(case.loads, again.loads);
    }

    #[test]
    fn unknown_bus_is_named() {
        let text = bundled::TWO_BUS.replace("\"to\": \"B2\"", "\"to\": \"B99\"");
        assert_ne!(text, bundled::TWO_BUS);
        let err = NetworkCase::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("B99"), "{err}");
    }

    #[test]
    fn unknown_field_rejected_with_position() {
        let text = bundled::TWO_BUS.replacen("\"base_mva\"", "\"colour\": 1, \"base_mva\"", 1);
        match NetworkCase::from_json(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert!(line >= 1);
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_base_case_rejected() {
        let text = bundled::TWO_BUS.replace("\"in_service\": true", "\"in_service\": false");
        let err = NetworkCase::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("not connected"), "{err}");
    }

    #[test]
    fn sync_machine_needs_reactance() {
        let mut case = NetworkCase::from_json(bundled::TWO_BUS).unwrap();
        case.machines[0].x_transient = 0.0;
        let text = serde_json::to_string(&case).unwrap();
        assert!(NetworkCase::from_json(&text).is_err());
    }

    proptest! {
        #[test]
        fn per_unit_round_trip(mw in -1.0e5f64..1.0e5, base in 1.0f64..1000.0) {
            let back = to_mw(to_pu(mw, base), base);
            prop_assert!((back - mw).abs() <= 1e-12 * mw.abs().max(1e-300));
        }
    }
}

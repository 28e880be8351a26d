//! Inputs shared by the benchmarks in `benches/`.

use pdsa_core::contingency::{enumerate, Contingency};
use pdsa_core::grid::{bundled, NetworkCase};
use pdsa_core::scenario::{dispatch_snapshot, generate_mc_year, DispatchConfig, Snapshot, WeatherModel};

/// Desk grid, its contingency list and dispatched snapshots of one MC year
/// (every `stride`-th hour that dispatches).
pub fn desk_inputs(stride: usize) -> (NetworkCase, Vec<Contingency>, Vec<Snapshot>) {
    let case = NetworkCase::from_json(bundled::DESK_GRID).expect("bundled case parses");
    let weather = WeatherModel::from_json(bundled::WEATHER).expect("bundled weather parses");
    let snaps = generate_mc_year(&weather, 1, 0)
        .iter()
        .step_by(stride)
        .filter_map(|r| dispatch_snapshot(&case, &DispatchConfig::default(), r, 0).ok())
        .collect();
    let contingencies = enumerate(&case);
    (case, contingencies, snaps)
}

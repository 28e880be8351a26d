//! Time-domain simulation of one contingency on one snapshot.

pub mod cost;
pub mod events;
pub mod protection;
mod sim;

pub use cost::{consequences_cost, CostModel};
pub use events::{Event, EventKind, EventSequence};
pub use protection::{sample_protection_params, Layout, ParamMode, ProtectionParamSet, ProtectionSettings};
pub(crate) use sim::initial_state;
pub use sim::{run, simulate, zone_picks_up, Disturbance, LoadModel, ScenarioResult, SimOptions, SimRun, Terminal, Trace, F0_HZ};

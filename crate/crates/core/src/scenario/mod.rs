//! Operating-condition database: synthetic weather years dispatched hour by hour.

pub mod db;
pub mod dispatch;
pub mod weather;

pub use db::{case_fingerprint, DbManifest, SnapshotDb};
pub use dispatch::{dispatch_snapshot, DispatchConfig, Snapshot};
pub use weather::{generate_mc_year, Realization, WeatherModel};

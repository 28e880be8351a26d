//! Protection settings and stochastic protection parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::NetworkCase;

pub const BREAKER_TIME_S: (f64, f64) = (0.070, 0.090);
pub const IMPEDANCE_MULTIPLIER: (f64, f64) = (0.90, 1.10);
/// Extra pickup delay per relay, up to one cycle.
pub const PICKUP_OFFSET_S: (f64, f64) = (0.0, 0.020);

/// Deterministic relay settings shared by every parameter draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtectionSettings {
    pub enabled: bool,
    /// Mho reach per zone as a fraction of the line impedance.
    pub zone_reach: [f64; 3],
    pub zone_delay_s: [f64; 3],
    /// Load blinder half-angle around the resistive axis (degrees).
    pub blinder_angle_deg: f64,
    /// Blinder blocks impedances above `z_load_min / blinder_margin`.
    pub blinder_margin: f64,
    pub undervoltage_pu: f64,
    pub undervoltage_delay_s: f64,
    /// Fault ride-through limit: below this voltage a unit may trip after the delay.
    pub frt_voltage_pu: f64,
    pub frt_delay_s: f64,
    /// Loss of synchronism threshold (rad) of the angle against the island centre of inertia.
    pub los_angle_rad: f64,
    pub ufls_thresholds_hz: Vec<f64>,
    /// Fraction of the original load shed per stage.
    pub ufls_fraction: f64,
    pub ufls_pickup_s: f64,
    pub collapse_frequency_hz: f64,
    pub inverter_overfrequency_hz: f64,
}

impl Default for ProtectionSettings {
    fn default() -> Self {
        ProtectionSettings {
            enabled: true,
            zone_reach: [0.8, 1.2, 2.5],
            zone_delay_s: [0.0, 0.3, 1.0],
            blinder_angle_deg: 30.0,
            blinder_margin: 1.5,
            undervoltage_pu: 0.85,
            undervoltage_delay_s: 1.5,
            frt_voltage_pu: 0.3,
            frt_delay_s: 0.150,
            los_angle_rad: std::f64::consts::PI,
            ufls_thresholds_hz: vec![49.0, 48.7, 48.4, 48.1],
            ufls_fraction: 0.10,
            ufls_pickup_s: 0.100,
            collapse_frequency_hz: 47.5,
            inverter_overfrequency_hz: 51.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    Nominal,
    Slowest,
    Fastest,
    Random(u64),
}

/// Index layout of the per-device parameter vectors.
///
/// Breakers: one per branch, one per machine, one per load (UFLS feeder).
/// Relays: two distance relays per branch (from end, to end), one protection
/// relay per machine, one UFLS relay per load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub branches: usize,
    pub machines: usize,
    pub loads: usize,
}

impl Layout {
    pub fn of(case: &NetworkCase) -> Self {
        Layout {
            branches: case.branches.len(),
            machines: case.machines.len(),
            loads: case.loads.len(),
        }
    }
    pub fn n_breakers(&self) -> usize {
        self.branches + self.machines + self.loads
    }
    pub fn n_relays(&self) -> usize {
        2 * self.branches + self.machines + self.loads
    }
    pub fn branch_breaker(&self, k: usize) -> usize {
        k
    }
    pub fn machine_breaker(&self, m: usize) -> usize {
        self.branches + m
    }
    pub fn load_breaker(&self, l: usize) -> usize {
        self.branches + self.machines + l
    }
    /// `end` 0 is the from end, 1 the to end.
    pub fn distance_relay(&self, k: usize, end: usize) -> usize {
        2 * k + end
    }
    pub fn machine_relay(&self, m: usize) -> usize {
        2 * self.branches + m
    }
    pub fn load_relay(&self, l: usize) -> usize {
        2 * self.branches + self.machines + l
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectionParamSet {
    pub mode: ParamMode,
    pub breaker_time_s: Vec<f64>,
    /// Per distance relay, indexed like [`Layout::distance_relay`].
    pub impedance_multiplier: Vec<f64>,
    pub pickup_offset_s: Vec<f64>,
}

impl ProtectionParamSet {
    fn constant(layout: Layout, mode: ParamMode, breaker: f64, mult: f64, offset: f64) -> Self {
        ProtectionParamSet {
            mode,
            breaker_time_s: vec![breaker; layout.n_breakers()],
            impedance_multiplier: vec![mult; 2 * layout.branches],
            pickup_offset_s: vec![offset; layout.n_relays()],
        }
    }

    pub fn nominal(case: &NetworkCase) -> Self {
        let mid = |r: (f64, f64)| 0.5 * (r.0 + r.1);
        Self::constant(Layout::of(case), ParamMode::Nominal, mid(BREAKER_TIME_S), 1.0, mid(PICKUP_OFFSET_S))
    }

    /// Every parameter at the extreme that delays operation.
    pub fn slowest(case: &NetworkCase) -> Self {
        Self::constant(
            Layout::of(case),
            ParamMode::Slowest,
            BREAKER_TIME_S.1,
            IMPEDANCE_MULTIPLIER.0,
            PICKUP_OFFSET_S.1,
        )
    }

    pub fn fastest(case: &NetworkCase) -> Self {
        Self::constant(
            Layout::of(case),
            ParamMode::Fastest,
            BREAKER_TIME_S.0,
            IMPEDANCE_MULTIPLIER.1,
            PICKUP_OFFSET_S.0,
        )
    }

    /// Independent uniform draws over every parameter interval.
    pub fn random<R: Rng>(case: &NetworkCase, seed_tag: u64, rng: &mut R) -> Self {
        let layout = Layout::of(case);
        let mut u = |r: (f64, f64)| r.0 + (r.1 - r.0) * rng.random::<f64>();
        let breaker_time_s = (0..layout.n_breakers()).map(|_| u(BREAKER_TIME_S)).collect();
        let impedance_multiplier = (0..2 * layout.branches).map(|_| u(IMPEDANCE_MULTIPLIER)).collect();
        let pickup_offset_s = (0..layout.n_relays()).map(|_| u(PICKUP_OFFSET_S)).collect();
        ProtectionParamSet {
            mode: ParamMode::Random(seed_tag),
            breaker_time_s,
            impedance_multiplier,
            pickup_offset_s,
        }
    }
}

/// Draw a parameter set. `Random(seed)` uses its own counter-based stream.
pub fn sample_protection_params(case: &NetworkCase, mode: ParamMode) -> ProtectionParamSet {
    match mode {
        ParamMode::Nominal => ProtectionParamSet::nominal(case),
        ParamMode::Slowest => ProtectionParamSet::slowest(case),
        ParamMode::Fastest => ProtectionParamSet::fastest(case),
        ParamMode::Random(seed) => {
            let mut rng = crate::rng::stream(seed, crate::rng::Purpose::ProtectionParams, 0, 0, 0);
            ProtectionParamSet::random(case, seed, &mut rng)
        }
    }
}

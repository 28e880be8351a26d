//! Consequence cost from energy not served under linear restoration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blackout cost anchor: `reference_cost_eur` for shedding all of `reference_load_mw`.
///
/// Shed load is restored linearly over a duration proportional to the shed
/// fraction, so energy not served grows with the square of that fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub reference_cost_eur: f64,
    pub reference_load_mw: f64,
    /// Time to restore a complete blackout.
    pub full_restoration_h: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            reference_cost_eur: 500.0e6,
            reference_load_mw: 4350.0,
            full_restoration_h: 10.0,
        }
    }
}

impl CostModel {
    /// Value of lost load implied by the calibration (€/MWh).
    pub fn voll_eur_per_mwh(&self) -> f64 {
        self.reference_cost_eur / (0.5 * self.reference_load_mw * self.full_restoration_h)
    }

    pub fn energy_not_served_mwh(&self, shed_mw: f64, total_mw: f64) -> f64 {
        if total_mw <= 0.0 {
            return 0.0;
        }
        let x = shed_mw / total_mw;
        0.5 * shed_mw * self.full_restoration_h * x
    }

    /// Largest possible cost for a system whose load never exceeds `max_load_mw`.
    pub fn max_consequence(&self, max_load_mw: f64) -> f64 {
        self.reference_cost_eur * max_load_mw / self.reference_load_mw
    }
}

pub fn consequences_cost(model: &CostModel, shed_mw: f64, total_mw: f64) -> Result<f64> {
    if !(shed_mw >= 0.0) || shed_mw > total_mw * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(format!("load shed {shed_mw} MW outside [0, {total_mw}]")));
    }
    let shed = shed_mw.min(total_mw);
    Ok(model.voll_eur_per_mwh() * model.energy_not_served_mwh(shed, total_mw))
}

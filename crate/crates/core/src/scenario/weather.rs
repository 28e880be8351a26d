//! Synthetic "MC years": hourly load, wind and solar availability.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const HOURS_PER_YEAR: usize = 8760;

/// AR(1) capacity-factor process for one zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindZone {
    pub mean_cf: f64,
    pub autocorrelation: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarZone {
    pub peak_cf: f64,
    pub attenuation_mean: f64,
    pub attenuation_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadModel {
    pub seasonal_amplitude: f64,
    pub diurnal_profile: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayLength {
    pub winter: f64,
    pub summer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherModel {
    #[serde(default)]
    pub wind: BTreeMap<String, WindZone>,
    #[serde(default)]
    pub solar: BTreeMap<String, SolarZone>,
    pub load: LoadModel,
    pub day_length_hours: DayLength,
}

/// One hour of one MC year.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub hour: u32,
    /// Multiplier applied to every base load.
    pub load_factor: f64,
    pub wind_cf: BTreeMap<String, f64>,
    pub solar_cf: BTreeMap<String, f64>,
}

impl WeatherModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: WeatherModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (z, w) in &self.wind {
            if !(0.0..1.0).contains(&w.autocorrelation) {
                return Err(Error::Config(format!("wind zone {z}: autocorrelation must lie in [0, 1)")));
            }
            if !(0.0..=1.0).contains(&w.mean_cf) || w.noise_std < 0.0 {
                return Err(Error::Config(format!("wind zone {z}: bad mean or noise")));
            }
        }
        for (z, s) in &self.solar {
            if !(0.0..=1.0).contains(&s.peak_cf) || s.attenuation_std < 0.0 {
                return Err(Error::Config(format!("solar zone {z}: bad parameters")));
            }
        }
        if self.load.diurnal_profile.len() != 24 {
            return Err(Error::Config("diurnal profile needs 24 values".into()));
        }
        if self.load.diurnal_profile.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("diurnal profile must be positive".into()));
        }
        if self.load.seasonal_amplitude.abs() >= 1.0 || self.load.noise_std < 0.0 {
            return Err(Error::Config("load seasonal amplitude must be below 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("weather model serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn day_length(&self, day: f64) -> f64 {
        let mid = 0.5 * (self.day_length_hours.winter + self.day_length_hours.summer);
        let amp = 0.5 * (self.day_length_hours.summer - self.day_length_hours.winter);
        // shortest day around 21 December
        mid - amp * (2.0 * PI * (day + 10.0) / 365.0).cos()
    }

    /// Clear-sky shape in [0, 1] for the hour starting at `hour_of_day`.
    pub fn clear_sky(&self, day: usize, hour_of_day: usize) -> f64 {
        let len = self.day_length(day as f64);
        let sunrise = 12.0 - 0.5 * len;
        let t = hour_of_day as f64 + 0.5;
        if t <= sunrise || t >= sunrise + len {
            0.0
        } else {
            (PI * (t - sunrise) / len).sin()
        }
    }
}

/// Hourly realisation of load and renewable availability for MC year `year`.
pub fn generate_mc_year(model: &WeatherModel, seed: u64, year: u32) -> Vec<Realization> {
    let mut rng = stream(seed, Purpose::Weather, u64::from(year), 0, 0);
    let mut wind_state: BTreeMap<&str, f64> = model
        .wind
        .iter()
        .map(|(z, w)| {
            let stationary = w.noise_std / (1.0 - w.autocorrelation * w.autocorrelation).sqrt();
            let e: f64 = StandardNormal.sample(&mut rng);
            (z.as_str(), stationary * e)
        })
        .collect();
    let mut attenuation: BTreeMap<&str, f64> = BTreeMap::new();
    let mut out = Vec::with_capacity(HOURS_PER_YEAR);
    for h in 0..HOURS_PER_YEAR {
        let day = h / 24;
        let hod = h % 24;
        if hod == 0 {
            for (z, s) in &model.solar {
                let e: f64 = StandardNormal.sample(&mut rng);
                attenuation.insert(z.as_str(), (s.attenuation_mean + s.attenuation_std * e).clamp(0.0, 1.0));
            }
        }
        let seasonal = 1.0 + model.load.seasonal_amplitude * (2.0 * PI * (day as f64 - 15.0) / 365.0).cos();
        let e: f64 = StandardNormal.sample(&mut rng);
        let load_factor = (seasonal * model.load.diurnal_profile[hod] * (1.0 + model.load.noise_std * e)).max(0.05);

        let mut wind_cf = BTreeMap::new();
        for (z, w) in &model.wind {
            let x = wind_state.get_mut(z.as_str()).expect("zone state");
            if h > 0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x = w.autocorrelation * *x + w.noise_std * e;
            }
            wind_cf.insert(z.clone(), (w.mean_cf + *x).clamp(0.0, 1.0));
        }
        let shape = model.clear_sky(day, hod);
        let solar_cf = model
            .solar
            .iter()
            .map(|(z, s)| (z.clone(), s.peak_cf * shape * attenuation[z.as_str()]))
            .collect();
        // keep the stream position independent of the zone count of future models
        let _: u32 = rng.random();
        out.push(Realization {
            hour: h as u32,
            load_factor,
            wind_cf,
            solar_cf,
        });
    }
    out
}

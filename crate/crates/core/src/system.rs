//! Three-body system constants and unit conversions.
//!
//! All dynamics run in nondimensional units where the primary separation and
//! the rotation rate are one. `SystemParams` carries the scale factors needed
//! to move between those units and SI-ish mission units (m, m/s, days).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub name: String,
    /// Mass ratio m2 / (m1 + m2).
    pub mu: f64,
    /// Kilometres per nondimensional length unit.
    pub length_unit_km: f64,
    /// Days per nondimensional time unit.
    pub time_unit_days: f64,
    /// Physical radius of the larger primary, km.
    #[serde(default)]
    pub primary_radius_km: f64,
    /// Physical radius of the secondary, km. Used as the impact radius.
    #[serde(default)]
    pub secondary_radius_km: f64,
}

impl SystemParams {
    pub fn new(name: &str, mu: f64, length_unit_km: f64, time_unit_days: f64) -> Result<Self> {
        let params = Self {
            name: name.to_string(),
            mu,
            length_unit_km,
            time_unit_days,
            primary_radius_km: 0.0,
            secondary_radius_km: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_radii(mut self, primary_km: f64, secondary_km: f64) -> Self {
        self.primary_radius_km = primary_km;
        self.secondary_radius_km = secondary_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 0.5) {
            return Err(Error::InvalidParams(format!("mu = {} outside (0, 0.5)", self.mu)));
        }
        if !(self.length_unit_km > 0.0 && self.length_unit_km.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "length unit {} km must be positive",
                self.length_unit_km
            )));
        }
        if !(self.time_unit_days > 0.0 && self.time_unit_days.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "time unit {} days must be positive",
                self.time_unit_days
            )));
        }
        if self.primary_radius_km < 0.0 || self.secondary_radius_km < 0.0 {
            return Err(Error::InvalidParams("body radii must be non-negative".into()));
        }
        Ok(())
    }

    /// Earth-Moon constants.
    pub fn earth_moon() -> Self {
        Self {
            name: "earth-moon".to_string(),
            mu: 1.215e-2,
            length_unit_km: 3.850e5,
            time_unit_days: 4.349,
            primary_radius_km: 6378.137,
            secondary_radius_km: 1737.4,
        }
    }

    /// Saturn-Enceladus constants.
    pub fn saturn_enceladus() -> Self {
        Self {
            name: "saturn-enceladus".to_string(),
            mu: 1.901e-7,
            length_unit_km: 2.38529e5,
            time_unit_days: 0.2189,
            primary_radius_km: 58_232.0,
            secondary_radius_km: 252.1,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "earth-moon" => Some(Self::earth_moon()),
            "saturn-enceladus" => Some(Self::saturn_enceladus()),
            _ => None,
        }
    }

    pub fn time_unit_seconds(&self) -> f64 {
        self.time_unit_days * SECONDS_PER_DAY
    }

    /// Kilometres per second per nondimensional velocity unit.
    pub fn velocity_unit_km_s(&self) -> f64 {
        self.length_unit_km / self.time_unit_seconds()
    }

    pub fn meters_to_length(&self, m: f64) -> f64 {
        m / (self.length_unit_km * 1e3)
    }

    pub fn length_to_meters(&self, l: f64) -> f64 {
        l * self.length_unit_km * 1e3
    }

    pub fn mps_to_velocity(&self, mps: f64) -> f64 {
        mps / (self.velocity_unit_km_s() * 1e3)
    }

    pub fn velocity_to_mps(&self, v: f64) -> f64 {
        v * self.velocity_unit_km_s() * 1e3
    }

    pub fn time_to_days(&self, t: f64) -> f64 {
        t * self.time_unit_days
    }

    pub fn time_to_hours(&self, t: f64) -> f64 {
        t * self.time_unit_days * 24.0
    }

    pub fn days_to_time(&self, days: f64) -> f64 {
        days / self.time_unit_days
    }

    /// Secondary body radius in nondimensional length.
    pub fn secondary_radius(&self) -> f64 {
        self.secondary_radius_km / self.length_unit_km
    }

    pub fn primary_radius(&self) -> f64 {
        self.primary_radius_km / self.length_unit_km
    }

    /// Position of the larger primary on the x-axis.
    pub fn primary_x(&self) -> f64 {
        -self.mu
    }

    /// Position of the secondary on the x-axis.
    pub fn secondary_x(&self) -> f64 {
        1.0 - self.mu
    }
}

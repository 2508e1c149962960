//! Radio link model: log-distance pathloss, link budget, coverage and
//! Shannon-with-efficiency capacity.
//!
//! All functions here are pure. Powers are in dBm, gains and losses in dB,
//! frequencies and bandwidths in Hz, distances in meters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Carrier;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("distance {distance} m is below the reference distance {reference} m")]
    TooClose { distance: f64, reference: f64 },
    #[error("invalid radio parameter: {0}")]
    InvalidParams(String),
}

/// Propagation and receiver parameters shared by every radio link unless a
/// link overrides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub pathloss_exponent: f64,
    /// Meters.
    pub reference_distance: f64,
    /// dB.
    pub noise_figure: f64,
    /// dBm/Hz.
    pub thermal_noise_density: f64,
    /// dBm, inclusive.
    pub coverage_rsrp_threshold: f64,
    pub efficiency: f64,
    pub tdd_dl_fraction: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            pathloss_exponent: 2.2,
            reference_distance: 1.0,
            noise_figure: 7.0,
            thermal_noise_density: -174.0,
            coverage_rsrp_threshold: -100.0,
            efficiency: 0.55,
            tdd_dl_fraction: 0.7,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), RadioError> {
        let fields = [
            ("pathloss_exponent", self.pathloss_exponent),
            ("reference_distance", self.reference_distance),
            ("noise_figure", self.noise_figure),
            ("thermal_noise_density", self.thermal_noise_density),
            ("coverage_rsrp_threshold", self.coverage_rsrp_threshold),
            ("efficiency", self.efficiency),
            ("tdd_dl_fraction", self.tdd_dl_fraction),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(RadioError::InvalidParams(format!("{name} is not finite")));
        }
        if self.reference_distance <= 0.0 {
            return Err(RadioError::InvalidParams(
                "reference_distance must be positive".into(),
            ));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(RadioError::InvalidParams(
                "efficiency must be in (0, 1]".into(),
            ));
        }
        if !(self.tdd_dl_fraction > 0.0 && self.tdd_dl_fraction <= 1.0) {
            return Err(RadioError::InvalidParams(
                "tdd_dl_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Share of airtime available to `direction`. Uplink gets the remainder of
    /// the downlink fraction.
    pub fn tdd_fraction(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Downlink => self.tdd_dl_fraction,
            Direction::Uplink => 1.0 - self.tdd_dl_fraction,
        }
    }

    /// Applies any fields set in `overrides`.
    pub fn with_overrides(&self, overrides: &RadioOverrides) -> RadioParams {
        RadioParams {
            pathloss_exponent: overrides
                .pathloss_exponent
                .unwrap_or(self.pathloss_exponent),
            reference_distance: overrides
                .reference_distance
                .unwrap_or(self.reference_distance),
            noise_figure: overrides.noise_figure.unwrap_or(self.noise_figure),
            thermal_noise_density: overrides
                .thermal_noise_density
                .unwrap_or(self.thermal_noise_density),
            coverage_rsrp_threshold: overrides
                .coverage_rsrp_threshold
                .unwrap_or(self.coverage_rsrp_threshold),
            efficiency: overrides.efficiency.unwrap_or(self.efficiency),
            tdd_dl_fraction: overrides.tdd_dl_fraction.unwrap_or(self.tdd_dl_fraction),
        }
    }
}

/// Per-link overrides of [`RadioParams`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathloss_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_figure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal_noise_density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_rsrp_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdd_dl_fraction: Option<f64>,
}

impl RadioOverrides {
    pub fn is_empty(&self) -> bool {
        *self == RadioOverrides::default()
    }
}

/// Transmission direction on a radio link. Downlink is DU-side to
/// terminal-side (UE or IAB-MT).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Downlink,
    Uplink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub pathloss: f64,
    pub rx_power: f64,
    pub noise_power: f64,
    pub snr: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Log-distance pathloss anchored on free-space loss at the reference
/// distance:
///
/// `PL(d) = 20 log10(4π d0 f / c) + 10 n log10(d / d0)`
pub fn path_loss(carrier: &Carrier, distance: f64, params: &RadioParams) -> Result<f64, RadioError> {
    let d0 = params.reference_distance;
    if distance.is_nan() || distance < d0 {
        return Err(RadioError::TooClose {
            distance,
            reference: d0,
        });
    }
    let free_space =
        20.0 * (4.0 * std::f64::consts::PI * d0 * carrier.center_frequency / SPEED_OF_LIGHT).log10();
    Ok(free_space + 10.0 * params.pathloss_exponent * (distance / d0).log10())
}

/// Thermal noise integrated over `bandwidth` plus the receiver noise figure.
pub fn noise_power(bandwidth: f64, params: &RadioParams) -> f64 {
    params.thermal_noise_density + 10.0 * bandwidth.log10() + params.noise_figure
}

/// Distances below the reference distance are clamped up to it; co-located
/// nodes (the IAB-MT and its DU share one box) would otherwise have no
/// defined pathloss.
pub fn link_budget(carrier: &Carrier, tx_power: f64, distance: f64, params: &RadioParams) -> LinkBudget {
    let d = distance.max(params.reference_distance);
    let pathloss = path_loss(carrier, d, params).expect("distance clamped to reference");
    let rx_power = tx_power - pathloss;
    let noise_power = noise_power(carrier.bandwidth, params);
    LinkBudget {
        pathloss,
        rx_power,
        noise_power,
        snr: rx_power - noise_power,
    }
}

/// SNR in dB of a transmission at `tx_power` over `distance`.
pub fn snr(carrier: &Carrier, tx_power: f64, distance: f64, params: &RadioParams) -> f64 {
    link_budget(carrier, tx_power, distance, params).snr
}

/// Coverage predicate: received power at or above the threshold.
pub fn is_covered(carrier: &Carrier, tx_power: f64, distance: f64, params: &RadioParams) -> bool {
    link_budget(carrier, tx_power, distance, params).rx_power >= params.coverage_rsrp_threshold
}

/// `C = efficiency · tdd_fraction · B · log2(1 + snr)` in bit/s.
pub fn shannon_capacity(
    bandwidth: f64,
    snr_db: f64,
    direction: Direction,
    params: &RadioParams,
) -> f64 {
    let snr_linear = db_to_linear(snr_db);
    params.efficiency * params.tdd_fraction(direction) * bandwidth * (1.0 + snr_linear).log2()
}

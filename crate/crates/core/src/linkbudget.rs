//! Radar-equation link budget for retroreflected photons.
//!
//! The two-way radar equation predicts the mean number of detected photons
//! per pulse:
//!
//! ```text
//! μ_rx = μ_tx η_tx G_t Σ (1/4πR²)² T_a² A_t η_rx η_det
//! ```
//!
//! Splitting the cross-section as `Σ = ρ A_eff G_down` separates it into an
//! uplink factor (everything up to and including the CCR aperture) and a
//! downlink factor, the quantum-channel transmissivity
//!
//! ```text
//! μ_rx / μ_sat = (Σ / ρ A_eff) (1/4πR²) T_a A_t η_rx η_det
//! ```
//!
//! Dividing a measured per-pulse detection probability by the downlink
//! factor gives the mean photon number leaving the satellite. With `ρ = 1`
//! for metallic CCRs the result is an upper bound.

use std::f64::consts::PI;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{PLANCK, SPEED_OF_LIGHT};

/// Below this elevation the plane-parallel air-mass model is not used.
pub const ELEVATION_FLOOR: f64 = 5.0 * PI / 180.0;

/// Reference MLRO station values.
pub mod reference {
    pub const ETA_DET: f64 = 0.1;
    pub const ETA_TX: f64 = 0.1;
    pub const ETA_RX: f64 = 0.13;
    /// m²
    pub const TELESCOPE_AREA: f64 = 1.73;
    pub const T_ZENITH: f64 = 0.87;
    /// Qubit beam average power, W.
    pub const AVERAGE_POWER: f64 = 0.11;
    /// Hz
    pub const PULSE_RATE: f64 = 1e8;
    /// m
    pub const WAVELENGTH: f64 = 532e-9;
    /// Effective transmitter gain averaged over several passes.
    pub const EFFECTIVE_GAIN: f64 = 1.1e9;
}

/// Every symbol of the radar equation, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetParams {
    /// Photons per pulse leaving the transmitter.
    pub mu_tx: f64,
    pub eta_tx: f64,
    pub gain_t: f64,
    /// Σ, m².
    pub cross_section: f64,
    /// R, m.
    pub slant_range: f64,
    pub t_zenith: f64,
    pub airmass: f64,
    /// A_t, m².
    pub telescope_area: f64,
    pub eta_rx: f64,
    pub eta_det: f64,
    /// ρ.
    pub ccr_reflectivity: f64,
    /// A_eff, m².
    pub ccr_effective_area: f64,
}

impl LinkBudgetParams {
    /// Reference station parameters for `sat` at the given geometry.
    pub fn reference(sat: &SatelliteSpec, slant_range: f64, airmass: f64) -> Self {
        Self {
            mu_tx: mu_tx_from_power(
                reference::AVERAGE_POWER,
                reference::PULSE_RATE,
                reference::WAVELENGTH,
            )
            .expect("reference constants are positive"),
            eta_tx: reference::ETA_TX,
            gain_t: reference::EFFECTIVE_GAIN,
            cross_section: sat.cross_section,
            slant_range,
            t_zenith: reference::T_ZENITH,
            airmass,
            telescope_area: reference::TELESCOPE_AREA,
            eta_rx: reference::ETA_RX,
            eta_det: reference::ETA_DET,
            ccr_reflectivity: sat.ccr_reflectivity,
            ccr_effective_area: sat.ccr_effective_area,
        }
    }

    /// Same parameters at a different geometry.
    pub fn at_geometry(&self, slant_range: f64, airmass: f64) -> Self {
        Self {
            slant_range,
            airmass,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let efficiencies = [
            ("eta_tx", self.eta_tx),
            ("eta_rx", self.eta_rx),
            ("eta_det", self.eta_det),
            ("t_zenith", self.t_zenith),
            ("ccr_reflectivity", self.ccr_reflectivity),
        ];
        for (name, v) in efficiencies {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} = {v} must lie in (0, 1]")));
            }
        }
        let positives = [
            ("mu_tx", self.mu_tx),
            ("gain_t", self.gain_t),
            ("cross_section", self.cross_section),
            ("slant_range", self.slant_range),
            ("telescope_area", self.telescope_area),
            ("ccr_effective_area", self.ccr_effective_area),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.airmass >= 1.0 && self.airmass.is_finite()) {
            return Err(Error::invalid(format!("airmass = {} must be ≥ 1", self.airmass)));
        }
        Ok(())
    }

    pub fn atmospheric_transmissivity(&self) -> f64 {
        self.t_zenith.powf(self.airmass)
    }
}

/// `G_t = (8/θ_t²) exp[−2 (θ/θ_t)²]` for divergence `θ_t` and pointing error `θ`.
pub fn transmitter_gain(divergence: f64, pointing_error: f64) -> Result<f64> {
    if !(divergence > 0.0 && divergence.is_finite()) {
        return Err(Error::invalid(format!("divergence {divergence} must be positive")));
    }
    if !(pointing_error >= 0.0 && pointing_error.is_finite()) {
        return Err(Error::invalid(format!(
            "pointing error {pointing_error} must be non-negative"
        )));
    }
    let ratio = pointing_error / divergence;
    Ok(8.0 / (divergence * divergence) * (-2.0 * ratio * ratio).exp())
}

/// Plane-parallel air mass `1/sin(el)`, valid above [`ELEVATION_FLOOR`].
pub fn airmass_from_elevation(elevation: f64) -> Result<f64> {
    if !elevation.is_finite() || elevation > PI / 2.0 + 1e-12 {
        return Err(Error::invalid(format!("elevation {elevation} rad outside [0, π/2]")));
    }
    if elevation <= ELEVATION_FLOOR {
        return Err(Error::OutOfModel(format!(
            "elevation {:.3}° at or below the {:.0}° air-mass floor",
            elevation.to_degrees(),
            ELEVATION_FLOOR.to_degrees()
        )));
    }
    Ok(1.0 / elevation.min(PI / 2.0).sin())
}

/// `T_a = t_zenith^airmass`: absorbance linear in air mass.
pub fn atmospheric_transmissivity(airmass: f64, t_zenith: f64) -> Result<f64> {
    if !(airmass >= 1.0 && airmass.is_finite()) {
        return Err(Error::invalid(format!("airmass {airmass} must be ≥ 1")));
    }
    if !(t_zenith > 0.0 && t_zenith <= 1.0) {
        return Err(Error::invalid(format!("t_zenith {t_zenith} must lie in (0, 1]")));
    }
    Ok(t_zenith.powf(airmass))
}

fn spreading(range: f64) -> f64 {
    1.0 / (4.0 * PI * range * range)
}

/// Full two-way radar equation, detected photons per pulse.
pub fn radar_mu_rx(p: &LinkBudgetParams) -> Result<f64> {
    p.validate()?;
    let s = spreading(p.slant_range);
    let ta = p.atmospheric_transmissivity();
    Ok(p.mu_tx
        * p.eta_tx
        * p.gain_t
        * p.cross_section
        * s
        * s
        * ta
        * ta
        * p.telescope_area
        * p.eta_rx
        * p.eta_det)
}

/// Downlink (quantum-channel) transmissivity `μ_rx / μ_sat`.
pub fn downlink_transmissivity(p: &LinkBudgetParams) -> Result<f64> {
    p.validate()?;
    let g_down = p.cross_section / (p.ccr_reflectivity * p.ccr_effective_area);
    Ok(g_down
        * spreading(p.slant_range)
        * p.atmospheric_transmissivity()
        * p.telescope_area
        * p.eta_rx
        * p.eta_det)
}

/// Uplink factor `μ_tx η_tx G_t ρ A_eff (1/4πR²) T_a`: photons per pulse
/// leaving the satellite in the full radar model.
pub fn uplink_mu_sat(p: &LinkBudgetParams) -> Result<f64> {
    p.validate()?;
    Ok(p.mu_tx
        * p.eta_tx
        * p.gain_t
        * p.ccr_reflectivity
        * p.ccr_effective_area
        * spreading(p.slant_range)
        * p.atmospheric_transmissivity())
}

/// Mean photon number per pulse at the satellite from a detection rate
/// measured while the receiver is open.
pub fn estimate_mu_sat(detected_rate_in_window: f64, pulse_rate: f64, p: &LinkBudgetParams) -> Result<f64> {
    if !(detected_rate_in_window >= 0.0 && detected_rate_in_window.is_finite()) {
        return Err(Error::invalid(format!(
            "detected rate {detected_rate_in_window} must be non-negative"
        )));
    }
    if !(pulse_rate > 0.0 && pulse_rate.is_finite()) {
        return Err(Error::invalid(format!("pulse rate {pulse_rate} must be positive")));
    }
    let t = downlink_transmissivity(p)?;
    if t <= 0.0 {
        return Err(Error::invalid("downlink transmissivity is zero"));
    }
    Ok(detected_rate_in_window / pulse_rate / t)
}

/// Photons per pulse for an average power spread over `pulse_rate` pulses.
pub fn mu_tx_from_power(average_power: f64, pulse_rate: f64, wavelength: f64) -> Result<f64> {
    if !(average_power >= 0.0 && average_power.is_finite()) {
        return Err(Error::invalid(format!("power {average_power} W must be non-negative")));
    }
    if !(pulse_rate > 0.0 && pulse_rate.is_finite()) {
        return Err(Error::invalid(format!("pulse rate {pulse_rate} must be positive")));
    }
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::invalid(format!("wavelength {wavelength} must be positive")));
    }
    let photon_energy = PLANCK * SPEED_OF_LIGHT / wavelength;
    Ok(average_power / pulse_rate / photon_energy)
}

/// Attenuation in dB of a linear transmissivity.
pub fn attenuation_db(linear: f64) -> f64 {
    -10.0 * linear.log10()
}

/// A catalogued retroreflector satellite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteSpec {
    pub name: String,
    /// m
    #[serde(rename = "altitude_m")]
    pub altitude: f64,
    /// Σ, m²
    #[serde(rename = "cross_section_m2")]
    pub cross_section: f64,
    #[serde(rename = "rho")]
    pub ccr_reflectivity: f64,
    /// A_eff, m²
    #[serde(rename = "a_eff_m2")]
    pub ccr_effective_area: f64,
    pub polarization_preserving: bool,
}

impl SatelliteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invalid("satellite name is empty"));
        }
        if !(self.altitude > 200e3 && self.altitude < 2000e3) {
            return Err(Error::invalid(format!(
                "{}: altitude {} m outside the LEO range (200 km, 2000 km)",
                self.name, self.altitude
            )));
        }
        if !(self.cross_section > 0.0 && self.cross_section.is_finite()) {
            return Err(Error::invalid(format!("{}: cross-section must be positive", self.name)));
        }
        if !(self.ccr_reflectivity > 0.0 && self.ccr_reflectivity <= 1.0) {
            return Err(Error::invalid(format!("{}: rho must lie in (0, 1]", self.name)));
        }
        if !(self.ccr_effective_area > 0.0 && self.ccr_effective_area.is_finite()) {
            return Err(Error::invalid(format!("{}: a_eff must be positive", self.name)));
        }
        Ok(())
    }
}

pub const CATALOG_HEADER: [&str; 6] = [
    "name",
    "altitude_m",
    "cross_section_m2",
    "rho",
    "a_eff_m2",
    "polarization_preserving",
];

/// Satellite catalog: CSV, one record per satellite, columns [`CATALOG_HEADER`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SatelliteCatalog {
    pub entries: Vec<SatelliteSpec>,
}

impl SatelliteCatalog {
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != CATALOG_HEADER {
            return Err(Error::parse(
                1,
                format!("catalog header must be `{}`", CATALOG_HEADER.join(",")),
            ));
        }
        let mut entries: Vec<SatelliteSpec> = Vec::new();
        for rec in rdr.deserialize::<SatelliteSpec>() {
            let spec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::parse(line, e.to_string())
            })?;
            if let Err(e) = spec.validate() {
                return Err(Error::parse(entries.len() + 2, e.to_string()));
            }
            if entries.iter().any(|s| s.name.eq_ignore_ascii_case(&spec.name)) {
                return Err(Error::parse(
                    entries.len() + 2,
                    format!("duplicate satellite `{}`", spec.name),
                ));
            }
            entries.push(spec);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Result<&SatelliteSpec> {
        self.entries
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("satellite `{name}` not found in catalog")))
    }

    /// The catalog shipped with the crate. Cross-sections and effective
    /// areas are placeholders; replace them with values from the SLR
    /// literature for quantitative work.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_CATALOG.as_bytes()).expect("bundled catalog parses")
    }
}

pub const BUNDLED_CATALOG: &str = include_str!("../../../data/satellites.csv");

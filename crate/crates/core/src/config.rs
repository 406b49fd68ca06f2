//! Session config files (TOML) and the textual state notation.
//!
//! ```toml
//! [session]
//! satellite = "Larets"
//! seed = 7
//! mu_sat = 3.4
//! background_rate_hz = 140
//!
//! [pass]
//! max_elevation_deg = 30.3
//! duration_s = 40
//!
//! [states]
//! sequence = "H/HV:10, V/HV:10, L/LR:10, R/LR:10"
//! ```
//!
//! Angles are in degrees, shutter delays in ms, σ in ns; everything is
//! converted to SI on resolution. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linkbudget::{mu_tx_from_power, LinkBudgetParams, SatelliteCatalog};
use crate::orbitpass::{circular_pass, load_pass, PassGeometry};
use crate::polarization::{AnalyzerBasis, PolarizationState};
use crate::protocol::{ScheduleEntry, SessionConfig, SourceModel};
use crate::timing::{GateConfig, SlotSchedule};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub session: SessionSection,
    #[serde(default)]
    pub pass: PassSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub gate: GateSection,
    pub states: StatesSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    pub satellite: String,
    /// Satellite catalog CSV; the bundled catalog when absent.
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub background_rate_hz: f64,
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default)]
    pub source: SourceKind,
    pub mu_sat: Option<f64>,
    pub transmissivity: Option<f64>,
    pub polarization_preserving: Option<bool>,
    #[serde(default)]
    pub fr_angle_deg: f64,
    #[serde(default)]
    pub azimuth_deg: f64,
    #[serde(default)]
    pub azimuth_rate_deg_s: f64,
    pub pulse_rate_hz: Option<f64>,
    pub resolution_ps: Option<u64>,
}

fn default_interval() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Downlink,
    Radar,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassSection {
    /// Pass CSV; generated from the fields below when absent.
    pub file: Option<PathBuf>,
    pub altitude_km: Option<f64>,
    pub max_elevation_deg: Option<f64>,
    pub sample_period_s: Option<f64>,
    /// Keep only this much of the pass, centred on culmination.
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub eta_det: Option<f64>,
    pub eta_tx: Option<f64>,
    pub eta_rx: Option<f64>,
    pub telescope_area_m2: Option<f64>,
    pub t_zenith: Option<f64>,
    pub gain: Option<f64>,
    pub average_power_w: Option<f64>,
    pub wavelength_nm: Option<f64>,
    pub cross_section_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub slot_period_s: Option<f64>,
    pub tx_start_s: Option<f64>,
    pub tx_end_s: Option<f64>,
    pub rx_start_s: Option<f64>,
    pub rx_end_s: Option<f64>,
    pub shutter_open_delay_ms: Option<f64>,
    pub shutter_close_delay_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    pub sigma_ns: Option<f64>,
    pub signal_halfwidth: Option<f64>,
    pub background_exclusion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatesSection {
    pub sequence: String,
}

/// Parses config text; errors carry toml's line and column.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

/// Reads and resolves a config file. Relative paths inside it are taken
/// relative to the file's directory.
pub fn load_session(path: &Path) -> Result<SessionConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.resolve(path.parent().unwrap_or(Path::new(".")))
}

impl ConfigFile {
    pub fn resolve(&self, base_dir: &Path) -> Result<SessionConfig> {
        let s = &self.session;
        let catalog = match &s.catalog {
            Some(p) => {
                let p = base_dir.join(p);
                let f = std::fs::File::open(&p)
                    .map_err(|e| Error::Config(format!("catalog {}: {e}", p.display())))?;
                SatelliteCatalog::parse(f)?
            }
            None => SatelliteCatalog::bundled(),
        };
        let mut satellite = catalog.get(&s.satellite)?.clone();
        if let Some(v) = s.polarization_preserving {
            satellite.polarization_preserving = v;
        }
        if let Some(cs) = self.link.cross_section_m2 {
            satellite.cross_section = cs;
        }

        let pass = self.resolve_pass(base_dir, satellite.altitude)?;
        let mut cfg = SessionConfig::new(satellite, pass);
        cfg.rng_seed = s.seed;
        cfg.background_rate = s.background_rate_hz;
        cfg.interval = s.interval_s;
        cfg.source = match s.source {
            SourceKind::Downlink => SourceModel::Downlink {
                mu_sat: s
                    .mu_sat
                    .ok_or_else(|| Error::Config("[session] mu_sat is required for source = \"downlink\"".into()))?,
            },
            SourceKind::Radar => SourceModel::Radar,
        };
        cfg.transmissivity_override = s.transmissivity;
        cfg.fr_angle = s.fr_angle_deg.to_radians();
        cfg.azimuth = s.azimuth_deg.to_radians();
        cfg.azimuth_rate = s.azimuth_rate_deg_s.to_radians();
        if let Some(r) = s.pulse_rate_hz {
            cfg.pulse_rate = r;
        }
        if let Some(r) = s.resolution_ps {
            cfg.resolution_ps = r;
        }
        cfg.link = self.resolve_link(&cfg)?;
        cfg.schedule = self.resolve_schedule();
        cfg.gate = self.resolve_gate();
        cfg.state_schedule = parse_state_sequence(&self.states.sequence)?;
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn resolve_pass(&self, base_dir: &Path, sat_altitude: f64) -> Result<PassGeometry> {
        let p = &self.pass;
        let pass = match &p.file {
            Some(f) => {
                if p.altitude_km.is_some() || p.max_elevation_deg.is_some() || p.sample_period_s.is_some() {
                    return Err(Error::Config("[pass] file excludes the generator fields".into()));
                }
                let path = base_dir.join(f);
                let file = std::fs::File::open(&path)
                    .map_err(|e| Error::Config(format!("pass {}: {e}", path.display())))?;
                load_pass(file)?
            }
            None => {
                let altitude = p.altitude_km.map_or(sat_altitude, |a| a * 1e3);
                let el = p
                    .max_elevation_deg
                    .ok_or_else(|| Error::Config("[pass] needs `file` or `max_elevation_deg`".into()))?;
                circular_pass(altitude, el.to_radians(), p.sample_period_s.unwrap_or(1.0))
                    .map_err(|e| Error::Config(format!("[pass] {e}")))?
            }
        };
        match p.duration_s {
            Some(d) => pass.around_culmination(d).map_err(|e| Error::Config(format!("[pass] {e}"))),
            None => Ok(pass),
        }
    }

    fn resolve_link(&self, cfg: &SessionConfig) -> Result<LinkBudgetParams> {
        use crate::linkbudget::reference as r;
        let l = &self.link;
        let mut p = LinkBudgetParams::reference(&cfg.satellite, 1e6, 1.0);
        p.eta_det = l.eta_det.unwrap_or(r::ETA_DET);
        p.eta_tx = l.eta_tx.unwrap_or(r::ETA_TX);
        p.eta_rx = l.eta_rx.unwrap_or(r::ETA_RX);
        p.telescope_area = l.telescope_area_m2.unwrap_or(r::TELESCOPE_AREA);
        p.t_zenith = l.t_zenith.unwrap_or(r::T_ZENITH);
        p.gain_t = l.gain.unwrap_or(r::EFFECTIVE_GAIN);
        let power = l.average_power_w.unwrap_or(r::AVERAGE_POWER);
        let wavelength = l.wavelength_nm.map_or(r::WAVELENGTH, |nm| nm * 1e-9);
        p.mu_tx = mu_tx_from_power(power, cfg.pulse_rate, wavelength).map_err(|e| Error::Config(format!("[link] {e}")))?;
        p.validate().map_err(|e| Error::Config(format!("[link] {e}")))?;
        Ok(p)
    }

    fn resolve_schedule(&self) -> SlotSchedule {
        let d = SlotSchedule::default();
        let s = &self.schedule;
        SlotSchedule {
            slot_period: s.slot_period_s.unwrap_or(d.slot_period),
            tx_window: (s.tx_start_s.unwrap_or(d.tx_window.0), s.tx_end_s.unwrap_or(d.tx_window.1)),
            rx_window: (s.rx_start_s.unwrap_or(d.rx_window.0), s.rx_end_s.unwrap_or(d.rx_window.1)),
            shutter_open_delay: s.shutter_open_delay_ms.map_or(d.shutter_open_delay, |v| v * 1e-3),
            shutter_close_delay: s.shutter_close_delay_ms.map_or(d.shutter_close_delay, |v| v * 1e-3),
        }
    }

    fn resolve_gate(&self) -> GateConfig {
        let d = GateConfig::default();
        let g = &self.gate;
        GateConfig {
            sigma: g.sigma_ns.map_or(d.sigma, |v| v * 1e-9),
            signal_halfwidth: g.signal_halfwidth.unwrap_or(d.signal_halfwidth),
            background_exclusion: g.background_exclusion.unwrap_or(d.background_exclusion),
        }
    }
}

/// A named state (`H`, `V`, `L`, `R`, `D`, `A`) or a pair of complex
/// amplitudes such as `0.6,0.8i`, which must already be normalized.
pub fn parse_state(spec: &str) -> Result<PolarizationState> {
    let t = spec.trim();
    let named = match t.to_ascii_uppercase().as_str() {
        "H" => Some(PolarizationState::H),
        "V" => Some(PolarizationState::V),
        "L" => Some(PolarizationState::L),
        "R" => Some(PolarizationState::R),
        "D" => Some(PolarizationState::D),
        "A" => Some(PolarizationState::A),
        _ => None,
    };
    if let Some(s) = named {
        return Ok(s);
    }
    let (a, b) = t
        .split_once(',')
        .ok_or_else(|| Error::invalid(format!("state `{t}` is neither a name nor `a,b`")))?;
    let parse = |x: &str| -> Result<Complex64> {
        let x = x.trim();
        let c: Complex64 = x
            .replace(' ', "")
            .parse()
            .map_err(|_| Error::invalid(format!("`{x}` is not a complex number")))?;
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::invalid(format!("`{x}` is not finite")));
        }
        Ok(c)
    };
    PolarizationState::new(parse(a)?, parse(b)?)
}

pub fn parse_basis(spec: &str) -> Result<AnalyzerBasis> {
    match spec.trim().to_ascii_uppercase().as_str() {
        "HV" => Ok(AnalyzerBasis::HV),
        "LR" => Ok(AnalyzerBasis::LR),
        "DA" => Ok(AnalyzerBasis::DA),
        other => Err(Error::invalid(format!("unknown analyzer basis `{other}` (HV, LR, DA)"))),
    }
}

/// `STATE/BASIS:seconds` items separated by commas, e.g. `H/HV:10, L/LR:10`.
pub fn parse_state_sequence(spec: &str) -> Result<Vec<ScheduleEntry>> {
    let mut out = Vec::new();
    for (i, item) in spec.split(',').enumerate() {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Config(format!("[states] item {} `{item}`: {m}", i + 1));
        let (sb, dur) = item.split_once(':').ok_or_else(|| bad("expected STATE/BASIS:seconds"))?;
        let (st, basis) = sb.split_once('/').ok_or_else(|| bad("expected STATE/BASIS"))?;
        let state = match st.trim().to_ascii_uppercase().as_str() {
            n @ ("H" | "V" | "L" | "R" | "D" | "A") => parse_state(n)?,
            _ => return Err(bad("state must be one of H, V, L, R, D, A")),
        };
        let analyzer = parse_basis(basis).map_err(|e| bad(&e.to_string()))?;
        let duration: f64 = dur.trim().parse().map_err(|_| bad("duration is not a number"))?;
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(bad("duration must be positive"));
        }
        out.push(ScheduleEntry {
            duration,
            state,
            analyzer,
        });
    }
    if out.is_empty() {
        return Err(Error::Config("[states] sequence is empty".into()));
    }
    Ok(out)
}

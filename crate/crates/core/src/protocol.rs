//! Monte-Carlo simulation of a satellite-pass QKD session and of the
//! two-way Faraday-rotator key exchange.
//!
//! A session prepares a schedule of polarization states on the ground,
//! sends them through the Coudé path to a retroreflecting satellite and
//! back, detects the returns on a two-port analyzer and runs the same
//! gating and QBER pipeline that analyzes recorded time tags. Every slot
//! draws from its own ChaCha8 stream, so slots run in parallel and the
//! output is bit-identical for a given seed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{csv_float, ps_from_seconds, ps_to_seconds};
use crate::linkbudget::{
    airmass_from_elevation, downlink_transmissivity, estimate_mu_sat, radar_mu_rx, LinkBudgetParams,
    SatelliteSpec,
};
use crate::orbitpass::{round_trip_time, PassGeometry};
use crate::polarization::{
    predicted_round_trip, round_trip, AnalyzerBasis, PolarizationState, TelescopePose,
};
use crate::timing::{
    analyze_intervals, detection_windows, expected_arrivals, interval_fields, offset_histogram,
    ArrivalGrid, GateConfig, HistogramBin, IntervalPlan, IntervalStats, SlotSchedule, TimeTag,
    TimeTagStream, Window, INTERVAL_HEADER,
};

/// Decoy-state feasibility guidelines.
pub const QBER_THRESHOLD: f64 = 0.11;
pub const MU_THRESHOLD: f64 = 2.0;

/// Upper bound on simulated detections, to keep a mistyped μ from
/// exhausting memory.
const MAX_EVENTS: f64 = 5e7;

/// One segment of the transmitted state sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    /// s
    pub duration: f64,
    pub state: PolarizationState,
    pub analyzer: AnalyzerBasis,
}

/// What sets the mean photon number of the returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceModel {
    /// The satellite acts as a source of `mu_sat` photons per pulse,
    /// attenuated by the downlink transmissivity.
    Downlink { mu_sat: f64 },
    /// Full two-way radar equation from the transmitted pulse energy.
    Radar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub satellite: SatelliteSpec,
    pub pass: PassGeometry,
    /// Station parameters; range and airmass are replaced per slot.
    pub link: LinkBudgetParams,
    pub schedule: SlotSchedule,
    pub gate: GateConfig,
    pub state_schedule: Vec<ScheduleEntry>,
    /// Total over both detectors while the receiver is open, Hz.
    pub background_rate: f64,
    pub rng_seed: u64,
    pub source: SourceModel,
    /// Fixed downlink transmissivity instead of the geometric one.
    pub transmissivity_override: Option<f64>,
    /// Faraday rotation on board, rad.
    pub fr_angle: f64,
    /// Telescope azimuth at the pass start and its rate, rad and rad/s.
    pub azimuth: f64,
    pub azimuth_rate: f64,
    pub pulse_rate: f64,
    /// Analysis interval length, s.
    pub interval: f64,
    pub resolution_ps: u64,
}

impl SessionConfig {
    /// A session with reference station parameters, default timing and
    /// gate, and no states scheduled.
    pub fn new(satellite: SatelliteSpec, pass: PassGeometry) -> Self {
        let link = LinkBudgetParams::reference(&satellite, 1e6, 1.0);
        Self {
            satellite,
            pass,
            link,
            schedule: SlotSchedule::default(),
            gate: GateConfig::default(),
            state_schedule: Vec::new(),
            background_rate: 0.0,
            rng_seed: 0,
            source: SourceModel::Downlink { mu_sat: 1.0 },
            transmissivity_override: None,
            fr_angle: 0.0,
            azimuth: 0.0,
            azimuth_rate: 0.0,
            pulse_rate: crate::linkbudget::reference::PULSE_RATE,
            interval: 5.0,
            resolution_ps: crate::timing::TAGGER_RESOLUTION_PS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.satellite.validate()?;
        self.link.validate()?;
        self.schedule.validate()?;
        self.gate.validate()?;
        let total: f64 = self.state_schedule.iter().map(|e| e.duration).sum();
        if self.state_schedule.iter().any(|e| !(e.duration > 0.0 && e.duration.is_finite())) {
            return Err(Error::invalid("schedule durations must be positive"));
        }
        if total > self.pass.duration() + 1e-9 {
            return Err(Error::invalid(format!(
                "state schedule lasts {total} s but the pass only {} s",
                self.pass.duration()
            )));
        }
        if !(self.background_rate >= 0.0 && self.background_rate.is_finite()) {
            return Err(Error::invalid("background rate must be non-negative"));
        }
        if let SourceModel::Downlink { mu_sat } = self.source {
            if !(mu_sat >= 0.0 && mu_sat.is_finite()) {
                return Err(Error::invalid("mu_sat must be non-negative"));
            }
        }
        if let Some(t) = self.transmissivity_override {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid("transmissivity must lie in [0, 1]"));
            }
        }
        if !(self.interval > 0.0 && self.interval.is_finite()) {
            return Err(Error::invalid("interval length must be positive"));
        }
        if self.resolution_ps == 0 {
            return Err(Error::invalid("time-tag resolution must be positive"));
        }
        if !(self.fr_angle.is_finite() && self.azimuth.is_finite() && self.azimuth_rate.is_finite()) {
            return Err(Error::invalid("angles must be finite"));
        }
        self.subdivisions().map(|_| ())
    }

    /// Pulses per slot, which is also the arrival-grid subdivision.
    pub fn subdivisions(&self) -> Result<u64> {
        let n = self.pulse_rate * self.schedule.slot_period;
        let r = n.round();
        if !(r >= 1.0 && (n - r).abs() <= 1e-6) {
            return Err(Error::invalid(format!(
                "pulse rate {} Hz gives a non-integer {n} pulses per slot",
                self.pulse_rate
            )));
        }
        Ok(r as u64)
    }

    fn segment_at(&self, t_rel: f64) -> Option<&ScheduleEntry> {
        let mut acc = 0.0;
        for e in &self.state_schedule {
            acc += e.duration;
            if t_rel < acc {
                return Some(e);
            }
        }
        None
    }

    /// Detector that should fire for the prepared state at `t_rel`.
    fn correct_channel_at(&self, t_rel: f64) -> Result<u8> {
        match self.segment_at(t_rel) {
            Some(e) => {
                let ideal = predicted_round_trip(self.fr_angle, &e.state)?;
                Ok(e.analyzer.expected_port(&ideal)? as u8)
            }
            None => Ok(0),
        }
    }

    fn pose_at(&self, t: f64, elevation: f64) -> Result<TelescopePose> {
        let az = self.azimuth + self.azimuth_rate * (t - self.pass.start());
        TelescopePose::wrapped(az, elevation.clamp(0.0, std::f64::consts::FRAC_PI_2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub stats: IntervalStats,
    /// Gate-corrected, background-subtracted detection rate while open, Hz.
    pub return_rate_hz: f64,
    pub mu_sat_estimate: Option<f64>,
    /// Means over the interval's windows.
    pub slant_range: f64,
    pub elevation: f64,
    pub airmass: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityVerdict {
    pub qber_ok: bool,
    pub mu_ok: bool,
    pub overall: bool,
    pub qber_threshold: f64,
    pub mu_threshold: f64,
}

/// Strict QBER threshold, inclusive μ guideline.
pub fn feasibility_verdict(qber: f64, mu_sat: f64) -> FeasibilityVerdict {
    let qber_ok = qber < QBER_THRESHOLD;
    let mu_ok = mu_sat <= MU_THRESHOLD;
    FeasibilityVerdict {
        qber_ok,
        mu_ok,
        overall: qber_ok && mu_ok,
        qber_threshold: QBER_THRESHOLD,
        mu_threshold: MU_THRESHOLD,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub intervals: Vec<IntervalRecord>,
    pub qualified: usize,
    /// Pooled Bayesian QBER over qualified intervals.
    pub qber: Option<f64>,
    /// Gate-corrected in-window return rate over qualified intervals, Hz.
    pub return_rate_hz: Option<f64>,
    /// Mean of the per-interval μ_sat estimates.
    pub mu_sat: Option<f64>,
    /// Mean over slots that had an open window.
    pub mean_duty_cycle: f64,
    pub verdict: Option<FeasibilityVerdict>,
    pub histogram: Vec<HistogramBin>,
    /// SLR epochs as detected, ps.
    pub slr_epochs_ps: Vec<i64>,
}

pub const REPORT_EXTRA_HEADER: [&str; 5] = [
    "correct_channel",
    "return_rate_hz",
    "mu_sat_estimate",
    "slant_range_m",
    "elevation_deg",
];

impl SessionReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<&str> = INTERVAL_HEADER.iter().chain(&REPORT_EXTRA_HEADER).copied().collect();
        writeln!(w, "{}", header.join(","))?;
        for r in &self.intervals {
            let mut f = interval_fields(&r.stats).to_vec();
            f.push(r.stats.correct_channel.to_string());
            f.push(csv_float(r.return_rate_hz));
            f.push(csv_float(r.mu_sat_estimate.unwrap_or(f64::NAN)));
            f.push(csv_float(r.slant_range));
            f.push(csv_float(r.elevation.to_degrees()));
            writeln!(w, "{}", f.join(","))?;
        }
        Ok(())
    }
}

/// Slot geometry and photon statistics, computed once per window.
#[derive(Debug, Clone, Copy)]
struct SlotPlan {
    window: Window,
    slant_range: f64,
    elevation: f64,
    airmass: Option<f64>,
    /// Per-pulse click probabilities per detector.
    click: [f64; 2],
}

/// Simulates the session and analyzes its own time tags.
pub fn simulate_pass(cfg: &SessionConfig) -> Result<(SessionReport, TimeTagStream)> {
    cfg.validate()?;
    let n_sub = cfg.subdivisions()?;
    let period = cfg.schedule.slot_period;
    let slots = (cfg.pass.duration() / period + 1e-9).floor() as usize;
    if slots < 1 {
        return Err(Error::invalid("pass is shorter than one slot"));
    }

    // SLR pulse n leaves at t_n and is detected at t_n + RTT(t_n).
    let mut epochs_ps = Vec::with_capacity(slots + 1);
    for n in 0..=slots {
        let t = cfg.pass.start() + n as f64 * period;
        let e = t + round_trip_time(cfg.pass.at(t).slant_range)?;
        epochs_ps.push(ps_from_seconds(e).ok_or_else(|| Error::invalid("epoch out of range"))?);
    }
    let epochs: Vec<f64> = epochs_ps.iter().map(|&p| ps_to_seconds(p)).collect();
    let windows = detection_windows(&epochs, &cfg.pass, &cfg.schedule)?;
    let grid = expected_arrivals(&epochs, n_sub)?.with_windows(windows.clone())?;

    let plans = windows
        .iter()
        .map(|w| slot_plan(cfg, *w))
        .collect::<Result<Vec<_>>>()?;
    let expected_events: f64 = plans
        .iter()
        .map(|p| {
            let pulses = p.window.duration() * cfg.pulse_rate;
            pulses * (p.click[0] + p.click[1]) + cfg.background_rate * p.window.duration()
        })
        .sum();
    if expected_events > MAX_EVENTS {
        return Err(Error::OutOfModel(format!(
            "session would produce {expected_events:.3e} detections; reduce μ or background"
        )));
    }

    let jitter = Normal::new(0.0, cfg.gate.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let slot_events: Vec<Vec<TimeTag>> = plans
        .par_iter()
        .enumerate()
        .map(|(slot, plan)| simulate_slot(cfg, &grid, slot, plan, &jitter))
        .collect::<Result<_>>()?;
    let mut events: Vec<TimeTag> = slot_events.into_iter().flatten().collect();
    events.sort_unstable();
    let stream = TimeTagStream::new(events, cfg.resolution_ps)?;

    let report = build_report(cfg, &grid, &plans, &stream, epochs_ps)?;
    Ok((report, stream))
}

fn slot_plan(cfg: &SessionConfig, window: Window) -> Result<SlotPlan> {
    let g = cfg.pass.at(window.start);
    let airmass = airmass_from_elevation(g.elevation).ok();
    let mu_rx = match airmass {
        None => 0.0,
        Some(am) => {
            let p = cfg.link.at_geometry(g.slant_range, am);
            match cfg.source {
                SourceModel::Downlink { mu_sat } => {
                    let t = match cfg.transmissivity_override {
                        Some(t) => t,
                        None => downlink_transmissivity(&p)?,
                    };
                    mu_sat * t
                }
                SourceModel::Radar => radar_mu_rx(&p)?,
            }
        }
    };
    let probs = match cfg.segment_at(window.start - cfg.pass.start()) {
        None => [0.0, 0.0],
        Some(_) if !cfg.satellite.polarization_preserving => [0.5, 0.5],
        Some(e) => {
            let pose = cfg.pose_at(window.start, g.elevation)?;
            let received = round_trip(&pose, cfg.fr_angle, &e.state)?;
            e.analyzer.probabilities(&received)?
        }
    };
    let mu = if cfg.segment_at(window.start - cfg.pass.start()).is_some() { mu_rx } else { 0.0 };
    // Poisson photons thinned per port; a threshold detector clicks on ≥ 1.
    let click = probs.map(|p| -(-mu * p).exp_m1());
    Ok(SlotPlan {
        window,
        slant_range: g.slant_range,
        elevation: g.elevation,
        airmass,
        click,
    })
}

fn slot_rng(seed: u64, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot as u64);
    rng
}

/// Indices in `[lo, hi)` of pulses that click, each independently with
/// probability `q`, found by jumping geometric gaps instead of visiting
/// every pulse.
pub fn sample_clicks<R: Rng + ?Sized>(rng: &mut R, q: f64, lo: u64, hi: u64) -> Vec<u64> {
    let mut out = Vec::new();
    if !(q > 0.0) || hi <= lo {
        return out;
    }
    if q >= 1.0 {
        return (lo..hi).collect();
    }
    let gap = Geometric::new(q).expect("0 < q < 1");
    let mut k = lo;
    loop {
        let skip = gap.sample(rng);
        k = match k.checked_add(skip) {
            Some(v) if v < hi => v,
            _ => break,
        };
        out.push(k);
        k += 1;
    }
    out
}

fn simulate_slot(
    cfg: &SessionConfig,
    grid: &ArrivalGrid,
    slot: usize,
    plan: &SlotPlan,
    jitter: &Normal<f64>,
) -> Result<Vec<TimeTag>> {
    let mut rng = slot_rng(cfg.rng_seed, slot);
    let mut times: Vec<(f64, u8)> = Vec::new();
    let w = &plan.window;
    let pulse_spacing = cfg.schedule.slot_period / grid.subdivisions() as f64;
    for cell in grid.cells_overlapping(w) {
        let (lo, hi) = grid.cell_range(cell, w);
        for ch in 0..2u8 {
            for k in sample_clicks(&mut rng, plan.click[usize::from(ch)], lo, hi) {
                // Pulse k of cell n left the ground k spacings after SLR
                // pulse n and returns at s + RTT(s); the analysis only
                // sees the SLR epochs.
                let s = cfg.pass.start() + cell as f64 * cfg.schedule.slot_period + k as f64 * pulse_spacing;
                let arrival = s + round_trip_time(cfg.pass.at(s).slant_range)?;
                times.push((arrival + jitter.sample(&mut rng), ch));
            }
        }
    }
    let mean_bg = cfg.background_rate * w.duration();
    if mean_bg > 0.0 {
        let n = Poisson::new(mean_bg).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng) as u64;
        for _ in 0..n {
            let t = w.start + rng.random::<f64>() * w.duration();
            times.push((t, rng.random_range(0..2u8)));
        }
    }
    let res = cfg.resolution_ps as i64;
    times
        .into_iter()
        .map(|(t, ch)| {
            let ps = ps_from_seconds(t).ok_or_else(|| Error::invalid("event time out of range"))?;
            let q = (ps.div_euclid(res) + i64::from(ps.rem_euclid(res) * 2 >= res)) * res;
            Ok(TimeTag { time_ps: q, channel: ch })
        })
        .collect()
}

fn build_report(
    cfg: &SessionConfig,
    grid: &ArrivalGrid,
    plans: &[SlotPlan],
    stream: &TimeTagStream,
    epochs_ps: Vec<i64>,
) -> Result<SessionReport> {
    let t0 = cfg.pass.start();
    let last = plans.last().map_or(t0, |p| p.window.start);
    let n_intervals = ((last - t0) / cfg.interval).floor().max(0.0) as usize + 1;
    let correct_channels = (0..n_intervals)
        .map(|i| cfg.correct_channel_at(i as f64 * cfg.interval))
        .collect::<Result<Vec<_>>>()?;
    let plan = IntervalPlan {
        start: t0,
        length: cfg.interval,
        correct_channels,
    };
    let stats = analyze_intervals(stream, grid, &cfg.gate, &plan)?;
    let capture = cfg.gate.capture_fraction();

    let mut intervals = Vec::with_capacity(stats.len());
    for s in stats {
        let members: Vec<&SlotPlan> = plans
            .iter()
            .filter(|p| ((p.window.start - t0) / cfg.interval).floor() as usize == s.index && p.window.start >= t0)
            .collect();
        let n = members.len().max(1) as f64;
        let slant_range = members.iter().map(|p| p.slant_range).sum::<f64>() / n;
        let elevation = members.iter().map(|p| p.elevation).sum::<f64>() / n;
        let airmass = if members.iter().all(|p| p.airmass.is_some()) && !members.is_empty() {
            Some(members.iter().filter_map(|p| p.airmass).sum::<f64>() / n)
        } else {
            None
        };
        let return_rate_hz = return_rate(&s, capture);
        let mu_sat_estimate = match airmass {
            Some(am) => Some(estimate_mu_sat(return_rate_hz, cfg.pulse_rate, &cfg.link.at_geometry(slant_range, am))?),
            None => None,
        };
        intervals.push(IntervalRecord {
            stats: s,
            return_rate_hz,
            mu_sat_estimate,
            slant_range,
            elevation,
            airmass,
        });
    }

    let q: Vec<&IntervalRecord> = intervals.iter().filter(|r| r.stats.qualified).collect();
    let (corr, wrong) = q.iter().fold((0, 0), |(c, w), r| {
        (c + r.stats.counts.n_signal_correct, w + r.stats.counts.n_signal_wrong)
    });
    let qber = (!q.is_empty()).then(|| crate::timing::qber_bayesian(corr, wrong));
    let open: f64 = q.iter().map(|r| r.stats.open_time).sum();
    let return_rate_hz = (open > 0.0).then(|| {
        let net: f64 = q
            .iter()
            .map(|r| net_signal(&r.stats))
            .sum();
        net / open / capture
    });
    let estimates: Vec<f64> = q.iter().filter_map(|r| r.mu_sat_estimate).collect();
    let mu_sat = (!estimates.is_empty()).then(|| estimates.iter().sum::<f64>() / estimates.len() as f64);
    let open_plans: Vec<&SlotPlan> = plans.iter().filter(|p| p.window.duration() > 0.0).collect();
    let mean_duty_cycle = if open_plans.is_empty() {
        0.0
    } else {
        open_plans.iter().map(|p| p.window.duty_cycle).sum::<f64>() / open_plans.len() as f64
    };
    let verdict = match (qber, mu_sat) {
        (Some(qb), Some(mu)) => Some(feasibility_verdict(qb, mu)),
        _ => None,
    };
    let qualified = q.len();
    let histogram = offset_histogram(stream.events(), grid, 0.1e-9, 5e-9)?;
    Ok(SessionReport {
        intervals,
        qualified,
        qber,
        return_rate_hz,
        mu_sat,
        mean_duty_cycle,
        verdict,
        histogram,
        slr_epochs_ps: epochs_ps,
    })
}

/// Signal counts in the gates minus the expected background in both.
fn net_signal(s: &IntervalStats) -> f64 {
    let total = (s.counts.n_signal_correct + s.counts.n_signal_wrong) as f64;
    (total - 2.0 * s.expected_background).max(0.0)
}

fn return_rate(s: &IntervalStats, capture: f64) -> f64 {
    if s.open_time > 0.0 {
        net_signal(s) / s.open_time / capture
    } else {
        0.0
    }
}

/// μ_sat per qualified interval, from its return rate at the interval's
/// mean slant range and airmass.
pub fn estimate_pass_mu_sat(report: &SessionReport, link: &LinkBudgetParams, pulse_rate: f64) -> Result<Vec<f64>> {
    let q: Vec<&IntervalRecord> = report.intervals.iter().filter(|r| r.stats.qualified).collect();
    if q.is_empty() {
        return Err(Error::InsufficientData("no qualified intervals".into()));
    }
    q.iter()
        .map(|r| {
            let am = r
                .airmass
                .ok_or_else(|| Error::OutOfModel("interval below the elevation floor".into()))?;
            estimate_mu_sat(r.return_rate_hz, pulse_rate, &link.at_geometry(r.slant_range, am))
        })
        .collect()
}

/// A key symbol: Faraday rotation applied on board and the basis and bit
/// it encodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoding {
    pub fr_angle: f64,
    pub basis: u8,
    pub bit: u8,
}

/// The BB84 alphabet: received states `R(2φ)σ_z|H⟩` for φ ∈ {0, π/4}
/// (rectilinear) and {π/8, 3π/8} (diagonal).
pub fn default_alphabet() -> Vec<Encoding> {
    use std::f64::consts::PI;
    vec![
        Encoding { fr_angle: 0.0, basis: 0, bit: 0 },
        Encoding { fr_angle: PI / 4.0, basis: 0, bit: 1 },
        Encoding { fr_angle: PI / 8.0, basis: 1, bit: 0 },
        Encoding { fr_angle: 3.0 * PI / 8.0, basis: 1, bit: 1 },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoWaySessionConfig {
    pub alphabet: Vec<Encoding>,
    /// Telescope pose per slot; cycled if shorter than the session.
    pub pose_track: Vec<TelescopePose>,
    /// Mean photon number leaving the satellite after its attenuator.
    pub mu_sat: f64,
    /// Downlink transmissivity; `None` uses the session geometry at culmination.
    pub transmissivity: Option<f64>,
    pub slots: usize,
    /// Probability of a background click per detector per slot.
    pub dark_click_probability: f64,
    pub intensity_monitor: bool,
}

impl TwoWaySessionConfig {
    pub fn new(slots: usize) -> Self {
        Self {
            alphabet: default_alphabet(),
            pose_track: Vec::new(),
            mu_sat: 1.0,
            transmissivity: None,
            slots,
            dark_click_probability: 0.0,
            intensity_monitor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoWayResult {
    /// Slot index of every sifted bit.
    pub slots: Vec<usize>,
    pub satellite_bits: Vec<u8>,
    pub ground_bits: Vec<u8>,
    pub qber: f64,
    pub intensity_monitor: bool,
}

/// A basis's analyzer: its ports are the ideal received states of bit 0
/// and bit 1.
fn basis_analyzers(alphabet: &[Encoding]) -> Result<Vec<(u8, AnalyzerBasis)>> {
    if alphabet.is_empty() {
        return Err(Error::invalid("encoding alphabet is empty"));
    }
    for (i, a) in alphabet.iter().enumerate() {
        if !a.fr_angle.is_finite() || a.bit > 1 {
            return Err(Error::invalid(format!("encoding {i} is malformed")));
        }
        for b in &alphabet[..i] {
            let d = (a.fr_angle - b.fr_angle).rem_euclid(std::f64::consts::PI);
            if d < 1e-12 || std::f64::consts::PI - d < 1e-12 {
                return Err(Error::invalid("alphabet angles must be distinct modulo π"));
            }
        }
    }
    let mut bases: Vec<u8> = alphabet.iter().map(|e| e.basis).collect();
    bases.sort_unstable();
    bases.dedup();
    bases
        .into_iter()
        .map(|b| {
            let port = |bit: u8| -> Result<PolarizationState> {
                let e = alphabet
                    .iter()
                    .find(|e| e.basis == b && e.bit == bit)
                    .ok_or_else(|| Error::invalid(format!("basis {b} lacks bit {bit}")))?;
                predicted_round_trip(e.fr_angle, &PolarizationState::H)
            };
            Ok((b, AnalyzerBasis::new(port(0)?, port(1)?)?))
        })
        .collect()
}

/// Two-way key exchange: the ground injects |H⟩, the satellite encodes a
/// key symbol by Faraday rotation, and the ground measures the return in
/// a random basis. Slots with matching bases are kept.
pub fn two_way_session(cfg: &TwoWaySessionConfig, session: &SessionConfig) -> Result<TwoWayResult> {
    let analyzers = basis_analyzers(&cfg.alphabet)?;
    if !(cfg.mu_sat >= 0.0 && cfg.mu_sat.is_finite()) {
        return Err(Error::invalid("mu_sat must be non-negative"));
    }
    if !(0.0..=1.0).contains(&cfg.dark_click_probability) {
        return Err(Error::invalid("dark click probability must lie in [0, 1]"));
    }
    let transmissivity = match cfg.transmissivity {
        Some(t) if (0.0..=1.0).contains(&t) => t,
        Some(t) => return Err(Error::invalid(format!("transmissivity {t} outside [0, 1]"))),
        None => {
            let c = session.pass.samples()[session.pass.culmination_index()];
            let am = airmass_from_elevation(c.elevation)?;
            downlink_transmissivity(&session.link.at_geometry(c.slant_range, am))?
        }
    };
    let mu = cfg.mu_sat * transmissivity;
    let zenith = TelescopePose::new(0.0, std::f64::consts::FRAC_PI_2)?;

    let outcomes: Vec<Option<(usize, u8, u8, bool)>> = (0..cfg.slots)
        .into_par_iter()
        .map(|slot| -> Result<_> {
            let mut rng = slot_rng(session.rng_seed, slot);
            // Fixed number of draws per slot keeps streams aligned across
            // configurations.
            let u_enc: f64 = rng.random();
            let u_basis: f64 = rng.random();
            let u_click: [f64; 2] = [rng.random(), rng.random()];
            let u_dark: [f64; 2] = [rng.random(), rng.random()];
            let tie: u8 = rng.random_range(0..2);

            let enc = cfg.alphabet[((u_enc * cfg.alphabet.len() as f64) as usize).min(cfg.alphabet.len() - 1)];
            let (basis, analyzer) = analyzers[((u_basis * analyzers.len() as f64) as usize).min(analyzers.len() - 1)];
            let pose = if cfg.pose_track.is_empty() {
                zenith
            } else {
                cfg.pose_track[slot % cfg.pose_track.len()]
            };
            let received = round_trip(&pose, enc.fr_angle, &PolarizationState::H)?;
            let probs = analyzer.probabilities(&received)?;
            let clicks: Vec<u8> = (0..2u8)
                .filter(|&c| {
                    let ci = usize::from(c);
                    u_click[ci] < -(-mu * probs[ci]).exp_m1() || u_dark[ci] < cfg.dark_click_probability
                })
                .collect();
            let bit = match clicks.as_slice() {
                [] => return Ok(None),
                [c] => *c,
                _ => tie,
            };
            Ok(Some((slot, enc.bit, bit, basis == enc.basis)))
        })
        .collect::<Result<_>>()?;

    let mut out = TwoWayResult {
        slots: Vec::new(),
        satellite_bits: Vec::new(),
        ground_bits: Vec::new(),
        qber: 0.5,
        intensity_monitor: cfg.intensity_monitor,
    };
    for (slot, sat_bit, ground_bit, matched) in outcomes.into_iter().flatten() {
        if matched {
            out.slots.push(slot);
            out.satellite_bits.push(sat_bit);
            out.ground_bits.push(ground_bit);
        }
    }
    let wrong = out
        .satellite_bits
        .iter()
        .zip(&out.ground_bits)
        .filter(|(a, b)| a != b)
        .count() as u64;
    out.qber = crate::timing::qber_bayesian(out.slots.len() as u64 - wrong, wrong);
    Ok(out)
}

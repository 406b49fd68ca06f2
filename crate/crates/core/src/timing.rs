//! Shutter timing, SLR-anchored arrival grids, time-tag gating and QBER
//! estimation.
//!
//! Each 100 ms slot between two SLR pulses is split into a transmit half
//! and a receive half. Qubit arrival times are predicted by dividing every
//! interval between consecutive SLR epochs into equal subintervals, which
//! follows the Doppler stretch of the time scale automatically. Tags within
//! `±signal_halfwidth·σ` of a predicted arrival are signal; tags farther than
//! `background_exclusion·σ` from every arrival estimate the background; tags
//! in between are discarded.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{csv_float, ps_from_seconds_str, ps_to_seconds, seconds_from_ps};
use crate::orbitpass::{round_trip_time, PassGeometry};

/// Time-tagger resolution, ps.
pub const TAGGER_RESOLUTION_PS: u64 = 81;

/// Subintervals between consecutive SLR epochs (one SLR pulse every 10⁷ qubits).
pub const SLR_SUBDIVISIONS: u64 = 10_000_000;

/// Timing of one transmit/receive slot between SLR pulses. Offsets are
/// seconds from the start of the slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotSchedule {
    pub slot_period: f64,
    pub tx_window: (f64, f64),
    pub rx_window: (f64, f64),
    pub shutter_open_delay: f64,
    pub shutter_close_delay: f64,
}

impl Default for SlotSchedule {
    fn default() -> Self {
        Self {
            slot_period: 0.1,
            tx_window: (0.0, 0.05),
            rx_window: (0.05, 0.1),
            shutter_open_delay: 0.002,
            shutter_close_delay: 0.0025,
        }
    }
}

impl SlotSchedule {
    pub fn validate(&self) -> Result<()> {
        let p = self.slot_period;
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid(format!("slot period {p} s must be positive")));
        }
        for (name, (a, b)) in [("tx", self.tx_window), ("rx", self.rx_window)] {
            if !(0.0 <= a && a < b && b <= p) {
                return Err(Error::invalid(format!("{name} window ({a}, {b}) must lie in [0, {p}]")));
            }
        }
        let (t, r) = (self.tx_window, self.rx_window);
        if t.1 > r.0 && r.1 > t.0 {
            return Err(Error::invalid("tx and rx windows overlap"));
        }
        if !(self.shutter_open_delay >= 0.0 && self.shutter_close_delay >= 0.0) {
            return Err(Error::invalid("shutter delays must be non-negative"));
        }
        Ok(())
    }

    pub fn rx_length(&self) -> f64 {
        self.rx_window.1 - self.rx_window.0
    }

    pub fn tx_length(&self) -> f64 {
        self.tx_window.1 - self.tx_window.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxWindow {
    /// s
    pub duration: f64,
    pub duty_cycle: f64,
}

/// Effective detection time per slot for a given round-trip time. The
/// transmitted train can be no longer than the RTT, and both shutter
/// transitions are charged against the receive half.
pub fn effective_rx_window(rtt: f64, schedule: &SlotSchedule) -> Result<RxWindow> {
    schedule.validate()?;
    if !(rtt > 0.0 && rtt < schedule.slot_period) {
        return Err(Error::OutOfModel(format!(
            "round-trip time {rtt} s outside (0, {}) s",
            schedule.slot_period
        )));
    }
    let overhead = schedule.shutter_open_delay + schedule.shutter_close_delay;
    let duration = (rtt.min(schedule.tx_length()) - overhead).clamp(0.0, schedule.rx_length());
    Ok(RxWindow {
        duration,
        duty_cycle: duration / schedule.slot_period,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeTag {
    pub time_ps: i64,
    pub channel: u8,
}

impl TimeTag {
    pub fn seconds(&self) -> f64 {
        ps_to_seconds(self.time_ps)
    }
}

/// Detector events ordered by time and quantized to `resolution_ps`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    events: Vec<TimeTag>,
    resolution_ps: u64,
}

pub const TIMETAG_HEADER: [&str; 2] = ["time_s", "channel"];

impl TimeTagStream {
    pub fn new(events: Vec<TimeTag>, resolution_ps: u64) -> Result<Self> {
        if resolution_ps == 0 {
            return Err(Error::invalid("time-tag resolution must be positive"));
        }
        for (i, e) in events.iter().enumerate() {
            if e.channel > 1 {
                return Err(Error::invalid(format!("event {i}: channel {} not in {{0,1}}", e.channel)));
            }
            if i > 0 && e.time_ps < events[i - 1].time_ps {
                return Err(Error::invalid(format!("event {i}: time decreases")));
            }
            if e.time_ps.rem_euclid(resolution_ps as i64) != 0 {
                return Err(Error::invalid(format!("event {i}: time not on the {resolution_ps} ps grid")));
            }
        }
        Ok(Self {
            events,
            resolution_ps,
        })
    }

    pub fn events(&self) -> &[TimeTag] {
        &self.events
    }

    pub fn resolution_ps(&self) -> u64 {
        self.resolution_ps
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `lo ≤ t < hi` (seconds).
    pub fn slice_seconds(&self, lo: f64, hi: f64) -> &[TimeTag] {
        let a = self.events.partition_point(|e| e.seconds() < lo);
        let b = self.events.partition_point(|e| e.seconds() < hi);
        &self.events[a..b.max(a)]
    }

    /// Reads `time_s,channel` CSV, rounding each time to the tagger grid.
    pub fn load<R: Read>(reader: R, resolution_ps: u64) -> Result<Self> {
        if resolution_ps == 0 {
            return Err(Error::invalid("time-tag resolution must be positive"));
        }
        let res = resolution_ps as i64;
        let mut events: Vec<TimeTag> = Vec::new();
        let mut saw_header = false;
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != TIMETAG_HEADER {
                    return Err(Error::parse(lineno, format!("header must be `{}`", TIMETAG_HEADER.join(","))));
                }
                saw_header = true;
                continue;
            }
            let (t, c) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(lineno, "expected `time_s,channel`"))?;
            let ps = ps_from_seconds_str(t)
                .ok_or_else(|| Error::parse(lineno, format!("`{}` is not a time in seconds", t.trim())))?;
            let channel: u8 = match c.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::parse(lineno, format!("channel `{other}` not in {{0,1}}"))),
            };
            let q = (ps.div_euclid(res) + i64::from(ps.rem_euclid(res) * 2 >= res)) * res;
            if let Some(prev) = events.last() {
                if q < prev.time_ps {
                    return Err(Error::parse(lineno, "time tags must be non-decreasing"));
                }
            }
            events.push(TimeTag { time_ps: q, channel });
        }
        if !saw_header {
            return Ok(Self { events, resolution_ps });
        }
        Self::new(events, resolution_ps)
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{}", TIMETAG_HEADER.join(","))?;
        for e in &self.events {
            writeln!(writer, "{},{}", seconds_from_ps(e.time_ps), e.channel)?;
        }
        Ok(())
    }
}

/// SLR epoch file: one time in seconds per line, rounded to 1 ps.
pub fn load_epochs<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ps = ps_from_seconds_str(line)
            .ok_or_else(|| Error::parse(lineno, format!("`{line}` is not a time in seconds")))?;
        let t = ps_to_seconds(ps);
        if let Some(&prev) = out.last() {
            if t <= prev {
                return Err(Error::parse(lineno, "SLR epochs must be strictly increasing"));
            }
        }
        out.push(t);
    }
    Ok(out)
}

pub fn save_epochs<W: Write>(epochs_ps: &[i64], mut writer: W) -> Result<()> {
    for &e in epochs_ps {
        writeln!(writer, "{}", seconds_from_ps(e))?;
    }
    Ok(())
}

/// A span of arrival time during which the receiver observes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub duty_cycle: f64,
}

impl Window {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Receive windows for each slot, anchored on the SLR epochs. The slot
/// whose SLR return is detected at `E` started at `E − RTT(E)`.
pub fn detection_windows(epochs: &[f64], pass: &PassGeometry, schedule: &SlotSchedule) -> Result<Vec<Window>> {
    schedule.validate()?;
    let mut out = Vec::with_capacity(epochs.len().saturating_sub(1));
    for &e in epochs.iter().take(epochs.len().saturating_sub(1)) {
        let rtt = round_trip_time(pass.at(e).slant_range)?;
        let rx = effective_rx_window(rtt, schedule)?;
        let start = e - rtt + schedule.rx_window.0 + schedule.shutter_open_delay;
        out.push(Window {
            start,
            end: start + rx.duration,
            duty_cycle: rx.duty_cycle,
        });
    }
    Ok(out)
}

/// Predicted qubit arrival times: `subdivisions` equidistant points per SLR
/// epoch interval, optionally restricted to observation windows. Points are
/// computed on demand rather than stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalGrid {
    epochs: Vec<f64>,
    subdivisions: u64,
    windows: Option<Vec<Window>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub cell: usize,
    pub index: u64,
    pub time: f64,
    /// Event time minus grid time.
    pub offset: f64,
}

/// Arrival grid from SLR epochs.
pub fn expected_arrivals(slr_epochs: &[f64], subdivisions: u64) -> Result<ArrivalGrid> {
    if slr_epochs.len() < 2 {
        return Err(Error::invalid("at least two SLR epochs are required"));
    }
    if subdivisions == 0 {
        return Err(Error::invalid("subdivisions must be positive"));
    }
    for w in slr_epochs.windows(2) {
        if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
            return Err(Error::invalid("SLR epochs must be finite and strictly increasing"));
        }
    }
    Ok(ArrivalGrid {
        epochs: slr_epochs.to_vec(),
        subdivisions,
        windows: None,
    })
}

impl ArrivalGrid {
    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn subdivisions(&self) -> u64 {
        self.subdivisions
    }

    pub fn cells(&self) -> usize {
        self.epochs.len() - 1
    }

    /// Total number of grid points, ignoring windows.
    pub fn len(&self) -> u64 {
        self.subdivisions * self.cells() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pitch(&self, cell: usize) -> f64 {
        (self.epochs[cell + 1] - self.epochs[cell]) / self.subdivisions as f64
    }

    pub fn point(&self, cell: usize, index: u64) -> f64 {
        self.epochs[cell] + index as f64 * self.pitch(cell)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.cells()).flat_map(move |c| (0..self.subdivisions).map(move |k| self.point(c, k)))
    }

    pub fn windows(&self) -> Option<&[Window]> {
        self.windows.as_deref()
    }

    /// Restricts the active points to those inside `windows` (sorted,
    /// non-overlapping, half-open `[start, end)`).
    pub fn with_windows(mut self, windows: Vec<Window>) -> Result<Self> {
        for (i, w) in windows.iter().enumerate() {
            if !(w.start.is_finite() && w.end.is_finite() && w.end >= w.start) {
                return Err(Error::invalid(format!("window {i} is malformed")));
            }
            if i > 0 && w.start < windows[i - 1].end {
                return Err(Error::invalid(format!("window {i} overlaps its predecessor")));
            }
        }
        self.windows = Some(windows);
        Ok(self)
    }

    /// Windows used for analysis: the configured ones, or one per epoch
    /// interval when none are configured.
    pub fn analysis_windows(&self) -> Vec<Window> {
        match &self.windows {
            Some(w) => w.clone(),
            None => self
                .epochs
                .windows(2)
                .map(|e| Window {
                    start: e[0],
                    end: e[1],
                    duty_cycle: 1.0,
                })
                .collect(),
        }
    }

    /// Nearest grid point; exact midpoints go to the earlier point.
    pub fn nearest(&self, t: f64) -> GridPoint {
        let n = self.subdivisions;
        let last_cell = self.cells() - 1;
        let cell = self.epochs.partition_point(|&e| e <= t).saturating_sub(1).min(last_cell);
        let pitch = self.pitch(cell);
        let d = t - self.epochs[cell];
        let (cell, index) = if d <= 0.0 {
            (cell, 0)
        } else {
            let q = d / pitch;
            let base = q.floor();
            let k = if q - base > 0.5 { base + 1.0 } else { base };
            if k >= n as f64 {
                if cell < last_cell {
                    (cell + 1, 0)
                } else {
                    (cell, n - 1)
                }
            } else {
                (cell, k as u64)
            }
        };
        let time = self.point(cell, index);
        GridPoint {
            cell,
            index,
            time,
            offset: t - time,
        }
    }

    /// Half-open index range of the points of `cell` inside `w`.
    pub(crate) fn cell_range(&self, cell: usize, w: &Window) -> (u64, u64) {
        let e0 = self.epochs[cell];
        let e1 = self.epochs[cell + 1];
        let p = self.pitch(cell);
        let n = self.subdivisions as f64;
        let lo = ((w.start.max(e0) - e0) / p).ceil().clamp(0.0, n);
        let hi = if w.end >= e1 {
            n
        } else {
            ((w.end - e0) / p).ceil().clamp(0.0, n)
        };
        (lo as u64, (hi as u64).max(lo as u64))
    }

    pub(crate) fn cells_overlapping(&self, w: &Window) -> std::ops::Range<usize> {
        let first = self.epochs.partition_point(|&e| e <= w.start).saturating_sub(1);
        let last = self.epochs.partition_point(|&e| e < w.end).min(self.cells());
        first..last.max(first)
    }

    fn point_in_windows(&self, gp: &GridPoint, windows: &[Window]) -> bool {
        let p = self.pitch(gp.cell);
        let j = windows.partition_point(|w| w.start <= gp.time + p);
        windows[j.saturating_sub(2)..j].iter().any(|w| {
            if w.end <= self.epochs[gp.cell] || w.start >= self.epochs[gp.cell + 1] {
                return false;
            }
            let (lo, hi) = self.cell_range(gp.cell, w);
            (lo..hi).contains(&gp.index)
        })
    }

    /// `(active point count, Σ pitches of active points)` over `windows`.
    fn active_extent(&self, windows: Option<&[Window]>) -> Vec<(u64, f64)> {
        match windows {
            None => (0..self.cells()).map(|c| (self.subdivisions, self.pitch(c))).collect(),
            Some(ws) => {
                let mut out = Vec::new();
                for w in ws {
                    for c in self.cells_overlapping(w) {
                        let (lo, hi) = self.cell_range(c, w);
                        if hi > lo {
                            out.push((hi - lo, self.pitch(c)));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Signal gate and background exclusion, in units of the timing jitter σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    /// s
    pub sigma: f64,
    pub signal_halfwidth: f64,
    pub background_exclusion: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5e-9,
            signal_halfwidth: 1.0,
            background_exclusion: 3.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma {} s must be positive", self.sigma)));
        }
        if !(self.signal_halfwidth > 0.0 && self.signal_halfwidth.is_finite()) {
            return Err(Error::invalid("signal half-width must be positive"));
        }
        if !(self.background_exclusion >= self.signal_halfwidth && self.background_exclusion.is_finite()) {
            return Err(Error::invalid("background exclusion must be ≥ signal half-width"));
        }
        Ok(())
    }

    /// Fraction of Gaussian-jittered signal inside the gate.
    pub fn capture_fraction(&self) -> f64 {
        libm::erf(self.signal_halfwidth / std::f64::consts::SQRT_2)
    }
}

/// Per-channel gating tallies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelGating {
    pub signal: [u64; 2],
    pub exterior: [u64; 2],
    /// Between the signal gate and the background exclusion.
    pub guard: [u64; 2],
    /// Nearest grid point not observed.
    pub inactive: [u64; 2],
    /// s
    pub gate_span: f64,
    /// s
    pub exterior_span: f64,
    pub active_points: u64,
}

impl ChannelGating {
    pub fn oriented(&self, correct_channel: u8) -> GatedCounts {
        let c = usize::from(correct_channel.min(1));
        GatedCounts {
            n_signal_correct: self.signal[c],
            n_signal_wrong: self.signal[1 - c],
            n_background_exterior: self.exterior[0] + self.exterior[1],
            exterior_span: self.exterior_span,
            gate_span: self.gate_span,
        }
    }

    pub fn total(&self, channel: usize) -> u64 {
        self.signal[channel] + self.exterior[channel] + self.guard[channel] + self.inactive[channel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedCounts {
    pub n_signal_correct: u64,
    pub n_signal_wrong: u64,
    pub n_background_exterior: u64,
    pub exterior_span: f64,
    pub gate_span: f64,
}

impl GatedCounts {
    /// Expected background per channel inside the signal gate, assuming
    /// unpolarized light split evenly over the two detectors.
    pub fn expected_background_per_channel(&self) -> Result<f64> {
        if !(self.exterior_span > 0.0) {
            return Err(Error::InsufficientData("no exterior span to estimate background".into()));
        }
        Ok(self.n_background_exterior as f64 * (self.gate_span / self.exterior_span) / 2.0)
    }
}

/// Classifies every tag against the grid.
pub fn gate_events(stream: &[TimeTag], grid: &ArrivalGrid, cfg: &GateConfig) -> Result<ChannelGating> {
    gate_in_windows(stream, grid, grid.windows(), cfg)
}

fn gate_in_windows(
    stream: &[TimeTag],
    grid: &ArrivalGrid,
    windows: Option<&[Window]>,
    cfg: &GateConfig,
) -> Result<ChannelGating> {
    cfg.validate()?;
    let extent = grid.active_extent(windows);
    let active_points: u64 = extent.iter().map(|e| e.0).sum();
    if grid.is_empty() || active_points == 0 {
        return Err(Error::invalid("arrival grid has no active points"));
    }
    let gate = cfg.signal_halfwidth * cfg.sigma;
    let excl = cfg.background_exclusion * cfg.sigma;
    let mut out = ChannelGating {
        active_points,
        gate_span: extent.iter().map(|&(n, p)| n as f64 * (2.0 * gate).min(p)).sum(),
        exterior_span: extent.iter().map(|&(n, p)| n as f64 * (p - 2.0 * excl).max(0.0)).sum(),
        ..Default::default()
    };
    for e in stream {
        let ch = usize::from(e.channel.min(1));
        let gp = grid.nearest(e.seconds());
        let active = windows.is_none_or(|ws| grid.point_in_windows(&gp, ws));
        let d = gp.offset.abs();
        if !active {
            out.inactive[ch] += 1;
        } else if d <= gate {
            out.signal[ch] += 1;
        } else if d > excl {
            out.exterior[ch] += 1;
        } else {
            out.guard[ch] += 1;
        }
    }
    Ok(out)
}

/// Bayesian QBER estimate `(n_wrong + 1) / (n_corr + n_wrong + 2)`.
pub fn qber_bayesian(n_corr: u64, n_wrong: u64) -> f64 {
    (n_wrong as f64 + 1.0) / (n_corr as f64 + n_wrong as f64 + 2.0)
}

/// Bayesian QBER after removing the expected in-gate background from each
/// channel (floored at zero).
pub fn qber_background_subtracted(counts: &GatedCounts) -> Result<f64> {
    let b = counts.expected_background_per_channel()?;
    let corr = (counts.n_signal_correct as f64 - b).max(0.0);
    let wrong = (counts.n_signal_wrong as f64 - b).max(0.0);
    Ok((wrong + 1.0) / (corr + wrong + 2.0))
}

/// True when either channel's signal exceeds its expected background `b`
/// by more than five Poisson standard deviations.
pub fn exceeds_background(signal: [u64; 2], b: f64) -> bool {
    let threshold = b + 5.0 * b.max(0.0).sqrt();
    signal.iter().any(|&n| n as f64 > threshold)
}

/// Partition of the pass into fixed-length analysis intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPlan {
    pub start: f64,
    pub length: f64,
    /// Correct (prepared-state) channel per interval; the last entry
    /// repeats for later intervals.
    pub correct_channels: Vec<u8>,
}

impl IntervalPlan {
    pub fn new(start: f64, length: f64) -> Self {
        Self {
            start,
            length,
            correct_channels: vec![0],
        }
    }

    pub fn correct_channel(&self, index: usize) -> u8 {
        match self.correct_channels.get(index) {
            Some(&c) => c,
            None => self.correct_channels.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStats {
    pub index: usize,
    pub t_start: f64,
    pub correct_channel: u8,
    pub gating: ChannelGating,
    pub counts: GatedCounts,
    pub windows: usize,
    /// Σ window durations, s.
    pub open_time: f64,
    pub duty_cycle: f64,
    pub background_rate_hz: f64,
    /// Expected in-gate background per channel.
    pub expected_background: f64,
    pub qber_raw: f64,
    pub qber_bg_subtracted: Option<f64>,
    pub qualified: bool,
}

/// Gating statistics for every interval of `plan` that holds at least one
/// window. A window belongs to the interval containing its start.
pub fn analyze_intervals(
    stream: &TimeTagStream,
    grid: &ArrivalGrid,
    cfg: &GateConfig,
    plan: &IntervalPlan,
) -> Result<Vec<IntervalStats>> {
    cfg.validate()?;
    if !(plan.length > 0.0 && plan.length.is_finite() && plan.start.is_finite()) {
        return Err(Error::invalid("interval length must be positive"));
    }
    let windows = grid.analysis_windows();
    let mut groups: Vec<Vec<Window>> = Vec::new();
    for w in windows {
        let rel = (w.start - plan.start) / plan.length;
        if rel < 0.0 {
            continue;
        }
        let idx = rel.floor() as usize;
        if groups.len() <= idx {
            groups.resize_with(idx + 1, Vec::new);
        }
        groups[idx].push(w);
    }
    let max_pitch = (0..grid.cells()).map(|c| grid.pitch(c)).fold(0.0, f64::max);
    groups
        .into_par_iter()
        .enumerate()
        .map(|(index, ws)| interval_stats(stream, grid, cfg, plan, index, &ws, max_pitch))
        .collect()
}

fn interval_stats(
    stream: &TimeTagStream,
    grid: &ArrivalGrid,
    cfg: &GateConfig,
    plan: &IntervalPlan,
    index: usize,
    ws: &[Window],
    margin: f64,
) -> Result<IntervalStats> {
    let correct_channel = plan.correct_channel(index);
    let t_start = plan.start + index as f64 * plan.length;
    let open_time: f64 = ws.iter().map(Window::duration).sum();
    let duty_cycle = if ws.is_empty() {
        0.0
    } else {
        ws.iter().map(|w| w.duty_cycle).sum::<f64>() / ws.len() as f64
    };
    let gating = if ws.is_empty() {
        None
    } else {
        let lo = ws[0].start - margin;
        let hi = ws[ws.len() - 1].end + margin;
        match gate_in_windows(stream.slice_seconds(lo, hi), grid, Some(ws), cfg) {
            Ok(g) => Some(g),
            Err(Error::InvalidArgument(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let gating = gating.unwrap_or_default();
    let counts = gating.oriented(correct_channel);
    let expected_background = counts.expected_background_per_channel().unwrap_or(0.0);
    let background_rate_hz = if gating.exterior_span > 0.0 {
        counts.n_background_exterior as f64 / gating.exterior_span
    } else {
        0.0
    };
    Ok(IntervalStats {
        index,
        t_start,
        correct_channel,
        gating,
        counts,
        windows: ws.len(),
        open_time,
        duty_cycle,
        background_rate_hz,
        expected_background,
        qber_raw: qber_bayesian(counts.n_signal_correct, counts.n_signal_wrong),
        qber_bg_subtracted: qber_background_subtracted(&counts).ok(),
        qualified: gating.active_points > 0 && exceeds_background(gating.signal, expected_background),
    })
}

/// The intervals whose signal passes the five-sigma background test.
pub fn select_intervals(
    stream: &TimeTagStream,
    grid: &ArrivalGrid,
    cfg: &GateConfig,
    plan: &IntervalPlan,
) -> Result<Vec<IntervalStats>> {
    Ok(analyze_intervals(stream, grid, cfg, plan)?
        .into_iter()
        .filter(|s| s.qualified)
        .collect())
}

/// Columns shared by every per-interval report.
pub const INTERVAL_HEADER: [&str; 8] = [
    "t_start_s",
    "n_corr",
    "n_wrong",
    "background_rate_hz",
    "duty_cycle",
    "qber_raw",
    "qber_bg_subtracted",
    "qualified",
];

pub fn interval_fields(s: &IntervalStats) -> [String; 8] {
    [
        csv_float(s.t_start),
        s.counts.n_signal_correct.to_string(),
        s.counts.n_signal_wrong.to_string(),
        csv_float(s.background_rate_hz),
        csv_float(s.duty_cycle),
        csv_float(s.qber_raw),
        csv_float(s.qber_bg_subtracted.unwrap_or(f64::NAN)),
        s.qualified.to_string(),
    ]
}

pub fn write_interval_report<W: Write>(stats: &[IntervalStats], mut writer: W) -> Result<()> {
    writeln!(writer, "{}", INTERVAL_HEADER.join(","))?;
    for s in stats {
        writeln!(writer, "{}", interval_fields(s).join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    /// Offset from the predicted arrival, s.
    pub center: f64,
    pub counts: [u64; 2],
}

/// Histogram of tag offsets from their nearest active arrival.
pub fn offset_histogram(stream: &[TimeTag], grid: &ArrivalGrid, bin_width: f64, half_range: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0 && half_range > 0.0 && bin_width.is_finite() && half_range.is_finite()) {
        return Err(Error::invalid("histogram bin width and range must be positive"));
    }
    let nbins = (2.0 * half_range / bin_width).round().max(1.0) as usize;
    let mut bins: Vec<HistogramBin> = (0..nbins)
        .map(|i| HistogramBin {
            center: -half_range + (i as f64 + 0.5) * bin_width,
            counts: [0, 0],
        })
        .collect();
    for e in stream {
        let gp = grid.nearest(e.seconds());
        if let Some(ws) = grid.windows() {
            if !grid.point_in_windows(&gp, ws) {
                continue;
            }
        }
        if gp.offset.abs() > half_range {
            continue;
        }
        let i = (((gp.offset + half_range) / bin_width).floor() as usize).min(nbins - 1);
        bins[i].counts[usize::from(e.channel.min(1))] += 1;
    }
    Ok(bins)
}

pub const HISTOGRAM_HEADER: [&str; 3] = ["offset_ns", "ch0", "ch1"];

pub fn write_histogram<W: Write>(bins: &[HistogramBin], mut writer: W) -> Result<()> {
    writeln!(writer, "{}", HISTOGRAM_HEADER.join(","))?;
    for b in bins {
        writeln!(writer, "{},{},{}", csv_float(b.center * 1e9), b.counts[0], b.counts[1])?;
    }
    Ok(())
}

//! Satellite pass geometry over a ground station: spherical non-rotating
//! Earth, circular two-body orbit.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::format::csv_float;
use crate::SPEED_OF_LIGHT;

/// Mean Earth radius, m.
pub const EARTH_RADIUS: f64 = 6_371_000.0;
/// Earth gravitational parameter, m³/s².
pub const EARTH_GM: f64 = 3.986_004_418e14;

pub const PASS_HEADER: [&str; 3] = ["time_s", "slant_range_m", "elevation_deg"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassSample {
    /// s
    pub time: f64,
    /// m
    pub slant_range: f64,
    /// rad
    pub elevation: f64,
    /// m/s, positive when receding.
    pub radial_velocity: f64,
}

/// A pass as an ordered time series of geometry samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PassGeometry {
    samples: Vec<PassSample>,
}

impl PassGeometry {
    pub fn new(samples: Vec<PassSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("pass has no samples"));
        }
        for (i, s) in samples.iter().enumerate() {
            validate_sample(s).map_err(|m| Error::invalid(format!("sample {i}: {m}")))?;
            if i > 0 && s.time <= samples[i - 1].time {
                return Err(Error::invalid(format!("sample {i}: time not strictly increasing")));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PassSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].time
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].time
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// Index of the sample with the highest elevation (earliest on ties).
    pub fn culmination_index(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.samples.iter().enumerate() {
            if s.elevation > self.samples[best].elevation {
                best = i;
            }
        }
        best
    }

    /// Geometry at time `t`, linearly interpolated, clamped to the pass ends.
    pub fn at(&self, t: f64) -> PassSample {
        let s = &self.samples;
        if t <= s[0].time {
            return PassSample { time: t, ..s[0] };
        }
        if t >= s[s.len() - 1].time {
            return PassSample {
                time: t,
                ..s[s.len() - 1]
            };
        }
        let j = s.partition_point(|p| p.time <= t);
        let (a, b) = (&s[j - 1], &s[j]);
        let w = (t - a.time) / (b.time - a.time);
        let lerp = |x: f64, y: f64| x + w * (y - x);
        PassSample {
            time: t,
            slant_range: lerp(a.slant_range, b.slant_range),
            elevation: lerp(a.elevation, b.elevation),
            radial_velocity: lerp(a.radial_velocity, b.radial_velocity),
        }
    }

    /// The samples within `duration/2` of culmination, re-timed to start at 0.
    pub fn around_culmination(&self, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::invalid(format!("duration {duration} s must be positive")));
        }
        let tc = self.samples[self.culmination_index()].time;
        let half = duration / 2.0 + 1e-9;
        let kept: Vec<PassSample> = self
            .samples
            .iter()
            .filter(|s| (s.time - tc).abs() <= half)
            .copied()
            .collect();
        let t0 = kept[0].time;
        Self::new(kept.into_iter().map(|s| PassSample { time: s.time - t0, ..s }).collect())
    }
}

fn validate_sample(s: &PassSample) -> std::result::Result<(), String> {
    if !s.time.is_finite() {
        return Err("time must be finite".into());
    }
    if !(s.slant_range > 0.0 && s.slant_range.is_finite()) {
        return Err(format!("slant range {} m must be positive", s.slant_range));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&s.elevation) {
        return Err(format!("elevation {}° outside [0°, 90°]", s.elevation.to_degrees()));
    }
    if !s.radial_velocity.is_finite() {
        return Err("radial velocity must be finite".into());
    }
    Ok(())
}

/// Slant range from a station to a satellite at `altitude` seen at `elevation`.
pub fn slant_range(altitude: f64, elevation: f64, earth_radius: f64) -> Result<f64> {
    if !(altitude > 0.0 && altitude.is_finite()) {
        return Err(Error::invalid(format!("altitude {altitude} m must be positive")));
    }
    if !(earth_radius > 0.0 && earth_radius.is_finite()) {
        return Err(Error::invalid("earth radius must be positive"));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&elevation) {
        return Err(Error::invalid(format!("elevation {elevation} rad outside [0, π/2]")));
    }
    let r = earth_radius + altitude;
    let c = earth_radius * elevation.cos();
    Ok((r * r - c * c).sqrt() - earth_radius * elevation.sin())
}

/// Circular orbital speed at `altitude`.
pub fn orbital_speed(altitude: f64) -> f64 {
    (EARTH_GM / (EARTH_RADIUS + altitude)).sqrt()
}

/// `2R/c`.
pub fn round_trip_time(slant_range: f64) -> Result<f64> {
    if !(slant_range > 0.0 && slant_range.is_finite()) {
        return Err(Error::invalid(format!("slant range {slant_range} m must be positive")));
    }
    Ok(2.0 * slant_range / SPEED_OF_LIGHT)
}

/// A horizon-to-horizon pass of a circular orbit whose closest approach
/// reaches `max_elevation`. Culmination falls on a sample; times start at 0.
pub fn circular_pass(altitude: f64, max_elevation: f64, sample_period: f64) -> Result<PassGeometry> {
    if !(altitude > 0.0 && altitude.is_finite()) {
        return Err(Error::invalid(format!("altitude {altitude} m must be positive")));
    }
    let floor = crate::linkbudget::ELEVATION_FLOOR;
    if !(max_elevation > floor && max_elevation <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::invalid(format!(
            "max elevation {:.3}° outside (5°, 90°]",
            max_elevation.to_degrees()
        )));
    }
    if !(sample_period > 0.0 && sample_period.is_finite()) {
        return Err(Error::invalid(format!("sample period {sample_period} s must be positive")));
    }
    let re = EARTH_RADIUS;
    let r = re + altitude;
    // Earth-central angle between station and sub-satellite point at culmination.
    let psi_min = ((re * max_elevation.cos() / r).acos() - max_elevation).max(0.0);
    let mean_motion = (EARTH_GM / (r * r * r)).sqrt();
    let half_arc = (re / (r * psi_min.cos())).min(1.0).acos();
    let half_time = half_arc / mean_motion;
    let k_max = (half_time / sample_period).floor() as i64;
    if k_max < 1 {
        return Err(Error::invalid("sample period longer than the pass"));
    }
    let s_min = (psi_min / 2.0).sin();
    let mut samples = Vec::with_capacity((2 * k_max + 1) as usize);
    for k in -k_max..=k_max {
        let u = mean_motion * k as f64 * sample_period;
        let s_u = (u / 2.0).sin();
        let cos_psi = psi_min.cos() * u.cos();
        // 1 − cos ψ without cancellation.
        let one_minus = 2.0 * s_min * s_min + psi_min.cos() * 2.0 * s_u * s_u;
        let range = (altitude * altitude + 2.0 * r * re * one_minus).sqrt();
        let sin_el = ((r * cos_psi - re) / range).clamp(0.0, 1.0);
        let radial_velocity = r * re * psi_min.cos() * u.sin() * mean_motion / range;
        samples.push(PassSample {
            time: (k + k_max) as f64 * sample_period,
            slant_range: range,
            elevation: sin_el.asin(),
            radial_velocity,
        });
    }
    PassGeometry::new(samples)
}

/// Reads a pass CSV (`time_s,slant_range_m,elevation_deg`). Radial
/// velocity is derived by central differences.
pub fn load_pass<R: Read>(reader: R) -> Result<PassGeometry> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != PASS_HEADER {
        return Err(Error::parse(1, format!("pass header must be `{}`", PASS_HEADER.join(","))));
    }
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 3 {
            return Err(Error::parse(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let field = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| Error::parse(line, format!("{}: `{}` is not a number", PASS_HEADER[i], &rec[i])))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("{} must be finite", PASS_HEADER[i])));
            }
            Ok(v)
        };
        let (t, range, el_deg) = (field(0)?, field(1)?, field(2)?);
        if let Some(&(prev, _, _)) = rows.last() {
            if t <= prev {
                return Err(Error::parse(line, format!("time {t} s not after previous {prev} s")));
            }
        }
        if range <= 0.0 {
            return Err(Error::parse(line, format!("slant range {range} m must be positive")));
        }
        if !(0.0..=90.0).contains(&el_deg) {
            return Err(Error::parse(line, format!("elevation {el_deg}° outside [0°, 90°]")));
        }
        rows.push((t, range, el_deg));
    }
    if rows.is_empty() {
        return Err(Error::parse(2, "pass file has no samples"));
    }
    let n = rows.len();
    let samples = (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let radial_velocity = if hi == lo {
                0.0
            } else {
                (rows[hi].1 - rows[lo].1) / (rows[hi].0 - rows[lo].0)
            };
            PassSample {
                time: rows[i].0,
                slant_range: rows[i].1,
                elevation: rows[i].2.to_radians().min(std::f64::consts::FRAC_PI_2),
                radial_velocity,
            }
        })
        .collect();
    PassGeometry::new(samples)
}

pub fn save_pass<W: Write>(pass: &PassGeometry, mut writer: W) -> Result<()> {
    writeln!(writer, "{}", PASS_HEADER.join(","))?;
    for s in pass.samples() {
        writeln!(
            writer,
            "{},{},{}",
            csv_float(s.time),
            csv_float(s.slant_range),
            csv_float(s.elevation.to_degrees())
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn slant_range_examples() {
        assert_relative_eq!(slant_range(691e3, FRAC_PI_2, EARTH_RADIUS).unwrap(), 691e3, max_relative = 1e-12);
        let el = 30f64.to_radians();
        let got = slant_range(691e3, el, EARTH_RADIUS).unwrap();
        // Law-of-cosines oracle through the Earth-central angle.
        let r = EARTH_RADIUS + 691e3;
        let psi = (EARTH_RADIUS * el.cos() / r).acos() - el;
        let oracle = (r * r + EARTH_RADIUS * EARTH_RADIUS - 2.0 * r * EARTH_RADIUS * psi.cos()).sqrt();
        assert_relative_eq!(got, oracle, max_relative = 1e-9);
        assert!((got - 1_222_403.5).abs() < 1.0, "{got}");
        assert!(slant_range(0.0, 0.3, EARTH_RADIUS).is_err());
        assert!(slant_range(691e3, -0.1, EARTH_RADIUS).is_err());
    }

    #[test]
    fn orbital_speed_example() {
        assert!((orbital_speed(691e3) - 7512.86).abs() < 0.01);
    }

    #[test]
    fn round_trip_time_examples() {
        assert!((round_trip_time(750e3).unwrap() * 1e3 - 5.003).abs() < 5e-4);
        assert!((round_trip_time(2998e3).unwrap() * 1e3 - 20.0).abs() < 1e-3);
        assert!(round_trip_time(0.0).is_err());
        assert!(round_trip_time(1e-3).unwrap() > 0.0);
    }

    #[test]
    fn overhead_pass() {
        let pass = circular_pass(691e3, FRAC_PI_2, 1.0).unwrap();
        let min = pass.samples().iter().map(|s| s.slant_range).fold(f64::INFINITY, f64::min);
        assert_relative_eq!(min, 691e3, max_relative = 1e-12);
    }

    #[test]
    fn pass_shape() {
        let pass = circular_pass(691e3, 40f64.to_radians(), 0.5).unwrap();
        let s = pass.samples();
        let c = pass.culmination_index();
        assert_eq!(c, s.len() / 2);
        assert_relative_eq!(s[c].elevation, 40f64.to_radians(), max_relative = 1e-9);
        assert_eq!(s[c].radial_velocity, 0.0);
        let min_idx = (0..s.len()).min_by(|&a, &b| s[a].slant_range.total_cmp(&s[b].slant_range)).unwrap();
        assert_eq!(min_idx, c);
        for i in 1..=c {
            assert!(s[i].elevation > s[i - 1].elevation);
        }
        for i in c + 1..s.len() {
            assert!(s[i].elevation < s[i - 1].elevation);
        }
        for k in 1..=c {
            let (a, b) = (s[c - k].radial_velocity, s[c + k].radial_velocity);
            assert!((a + b).abs() <= 1e-6 * b.abs(), "antisymmetry at {k}");
        }
        // Radial velocity versus central differences of the range.
        let dense = circular_pass(691e3, 40f64.to_radians(), 0.01).unwrap();
        let d = dense.samples();
        for i in (1..d.len() - 1).step_by(997) {
            let fd = (d[i + 1].slant_range - d[i - 1].slant_range) / (d[i + 1].time - d[i - 1].time);
            if d[i].radial_velocity.abs() > 100.0 {
                assert!(((fd - d[i].radial_velocity) / d[i].radial_velocity).abs() < 0.01);
            }
        }
    }

    #[test]
    fn circular_pass_rejects_bad_input() {
        assert!(circular_pass(691e3, 4f64.to_radians(), 1.0).is_err());
        assert!(circular_pass(691e3, 0.5, 0.0).is_err());
        assert!(circular_pass(-1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn window_around_culmination() {
        let pass = circular_pass(691e3, 30.311f64.to_radians(), 1.0).unwrap();
        let w = pass.around_culmination(40.0).unwrap();
        assert_eq!(w.samples().len(), 41);
        assert_eq!(w.start(), 0.0);
        assert_eq!(w.duration(), 40.0);
        assert_eq!(w.culmination_index(), 20);
    }

    #[test]
    fn load_examples() {
        let ok = "time_s,slant_range_m,elevation_deg\n0,1.2e6,30\n1,1.19e6,30.5\n2,1.18e6,31\n";
        let pass = load_pass(ok.as_bytes()).unwrap();
        assert_eq!(pass.samples().len(), 3);
        for s in pass.samples() {
            assert_relative_eq!(s.radial_velocity, -1e4, max_relative = 1e-12);
        }
        assert_relative_eq!(pass.samples()[0].elevation, 30f64.to_radians());

        let backwards = "time_s,slant_range_m,elevation_deg\n0,1.2e6,30\n2,1.19e6,30.5\n1,1.18e6,31\n";
        assert!(matches!(load_pass(backwards.as_bytes()), Err(Error::Parse { line: 4, .. })));
        let bad_el = "time_s,slant_range_m,elevation_deg\n0,1.2e6,95\n";
        assert!(matches!(load_pass(bad_el.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let junk = "time_s,slant_range_m,elevation_deg\n0,abc,30\n";
        assert!(matches!(load_pass(junk.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let short = "time_s,slant_range_m,elevation_deg\n0,1e6\n";
        assert!(matches!(load_pass(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(load_pass("time,range\n".as_bytes()).is_err());
        assert!(load_pass("time_s,slant_range_m,elevation_deg\n".as_bytes()).is_err());
    }

    #[test]
    fn interpolation() {
        let pass = circular_pass(691e3, 50f64.to_radians(), 1.0).unwrap();
        let a = pass.samples()[10];
        let b = pass.samples()[11];
        let mid = pass.at(0.5 * (a.time + b.time));
        assert_relative_eq!(mid.slant_range, 0.5 * (a.slant_range + b.slant_range));
        assert_eq!(pass.at(-5.0).slant_range, pass.samples()[0].slant_range);
    }

    proptest! {
        #[test]
        fn save_load_round_trip_is_textual_identity(alt in 400e3..2000e3f64, el in 6.0..90.0f64, period in 0.5..5.0f64) {
            let pass = circular_pass(alt, el.to_radians(), period).unwrap();
            let mut first = Vec::new();
            save_pass(&pass, &mut first).unwrap();
            let reloaded = load_pass(first.as_slice()).unwrap();
            let mut second = Vec::new();
            save_pass(&reloaded, &mut second).unwrap();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn rtt_bounds_over_leo(alt in 400e3..2000e3f64, el in 0.0..FRAC_PI_2) {
            let rtt = round_trip_time(slant_range(alt, el, EARTH_RADIUS).unwrap()).unwrap();
            prop_assert!(rtt >= 2.0 * alt / SPEED_OF_LIGHT * (1.0 - 1e-12));
            // Horizon range at 2000 km altitude is 5430 km.
            prop_assert!(rtt < 0.0365);
        }

        #[test]
        fn slant_range_decreasing_in_elevation(alt in 200e3..2000e3f64, el in 0.0..1.5f64, de in 1e-4..0.07f64) {
            prop_assert!(slant_range(alt, el + de, EARTH_RADIUS).unwrap() < slant_range(alt, el, EARTH_RADIUS).unwrap());
        }
    }
}

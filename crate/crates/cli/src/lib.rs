//! `qsatlink` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input (usage,
//! config, parse errors, refusing to overwrite).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use qsatlink_core::config::{load_session, parse_state};
use qsatlink_core::format::{csv_float, sig};
use qsatlink_core::linkbudget::{
    airmass_from_elevation, attenuation_db, downlink_transmissivity, mu_tx_from_power, radar_mu_rx,
    reference, LinkBudgetParams, SatelliteCatalog, SatelliteSpec, ELEVATION_FLOOR,
};
use qsatlink_core::orbitpass::{circular_pass, load_pass, save_pass, PassGeometry};
use qsatlink_core::polarization::{predicted_round_trip, round_trip, TelescopePose};
use qsatlink_core::protocol::simulate_pass;
use qsatlink_core::timing::{
    analyze_intervals, detection_windows, expected_arrivals, load_epochs, offset_histogram,
    write_histogram, write_interval_report, GateConfig, IntervalPlan, SlotSchedule, TimeTagStream,
    SLR_SUBDIVISIONS, TAGGER_RESOLUTION_PS,
};
use qsatlink_core::Error as CoreError;

/// Overrides the seed of a session config.
pub const SEED_ENV: &str = "QSATLINK_SEED";

#[derive(Debug, Parser)]
#[command(name = "qsatlink", version, about = "Retroreflector satellite quantum-link simulator and analyzer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a pass session; writes report, time tags, histogram, SLR epochs and pass.
    Simulate(SimulateArgs),
    /// Elevation-resolved link budget over a pass.
    Linkbudget(LinkbudgetArgs),
    /// Gate and analyze a recorded time-tag file against SLR epochs.
    Analyze(AnalyzeArgs),
    /// Propagate a polarization state through the round trip and compare to R(2φ)σ_z|ψ⟩.
    Polcheck(PolcheckArgs),
    /// Generate a circular-orbit pass CSV.
    PassGen(PassGenArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Session config (TOML).
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SatelliteArgs {
    /// Catalog entry name.
    #[arg(long, default_value = "Larets")]
    pub satellite: String,
    /// Satellite catalog CSV (bundled catalog when omitted).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LinkbudgetArgs {
    #[command(flatten)]
    pub sat: SatelliteArgs,
    /// Pass CSV; otherwise a circular pass is generated.
    #[arg(long, conflicts_with_all = ["altitude_km", "max_elevation_deg"])]
    pub pass: Option<PathBuf>,
    /// Orbit altitude (defaults to the catalog value).
    #[arg(long)]
    pub altitude_km: Option<f64>,
    #[arg(long, default_value_t = 90.0)]
    pub max_elevation_deg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sample_period_s: f64,
    /// Rows at or below this elevation are omitted (≥ 5°).
    #[arg(long, default_value_t = 5.0)]
    pub elevation_floor_deg: f64,
    /// Source strength at the satellite; with it, mu_rx follows the downlink
    /// model instead of the full radar equation.
    #[arg(long)]
    pub mu_sat: Option<f64>,
    #[arg(long, default_value_t = reference::ETA_DET)]
    pub eta_det: f64,
    #[arg(long, default_value_t = reference::ETA_TX)]
    pub eta_tx: f64,
    #[arg(long, default_value_t = reference::ETA_RX)]
    pub eta_rx: f64,
    #[arg(long, default_value_t = reference::TELESCOPE_AREA)]
    pub telescope_area_m2: f64,
    #[arg(long, default_value_t = reference::T_ZENITH)]
    pub t_zenith: f64,
    /// Effective transmitter gain G_t.
    #[arg(long, default_value_t = reference::EFFECTIVE_GAIN)]
    pub gain: f64,
    #[arg(long, default_value_t = reference::AVERAGE_POWER)]
    pub power_w: f64,
    #[arg(long, default_value_t = reference::WAVELENGTH * 1e9)]
    pub wavelength_nm: f64,
    #[arg(long, default_value_t = reference::PULSE_RATE)]
    pub pulse_rate_hz: f64,
    #[arg(long, default_value = "linkbudget.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Time-tag CSV (`time_s,channel`).
    pub timetags: PathBuf,
    /// SLR epoch file, one time in seconds per line.
    pub slr_epochs: PathBuf,
    /// Pass CSV; restricts analysis to the receive windows it implies.
    #[arg(long)]
    pub pass: Option<PathBuf>,
    /// Correct channel per interval, comma separated; the last repeats.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub correct_channels: Vec<u8>,
    #[arg(long, default_value_t = 5.0)]
    pub interval_s: f64,
    /// Start of the first interval (pass start or first epoch by default).
    #[arg(long)]
    pub t0_s: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_ns: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal_halfwidth: f64,
    #[arg(long, default_value_t = 3.0)]
    pub background_exclusion: f64,
    #[arg(long, default_value_t = TAGGER_RESOLUTION_PS)]
    pub resolution_ps: u64,
    /// Qubit pulses between consecutive SLR epochs.
    #[arg(long, default_value_t = SLR_SUBDIVISIONS)]
    pub subdivisions: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PolcheckArgs {
    /// H, V, L, R, D, A or normalized amplitudes `a,b` (e.g. `0.6,0.8i`).
    #[arg(long, default_value = "H", allow_hyphen_values = true)]
    pub state: String,
    /// Faraday rotation in degrees.
    #[arg(long, conflicts_with = "fr_rad", allow_hyphen_values = true)]
    pub fr_deg: Option<f64>,
    /// Faraday rotation in radians.
    #[arg(long, alias = "fr", allow_hyphen_values = true)]
    pub fr_rad: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub azimuth_deg: f64,
    #[arg(long, default_value_t = 90.0)]
    pub elevation_deg: f64,
}

#[derive(Debug, Args)]
pub struct PassGenArgs {
    #[command(flatten)]
    pub sat: SatelliteArgs,
    /// Orbit altitude (defaults to the satellite's).
    #[arg(long)]
    pub altitude_km: Option<f64>,
    #[arg(long)]
    pub max_elevation_deg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sample_period_s: f64,
    /// Keep only this much of the pass, centred on culmination.
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long, default_value = "pass.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Exit 2.
    Input(String),
    /// Exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn in_file(path: &Path, e: CoreError) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, out, err),
        Command::Linkbudget(a) => cmd_linkbudget(&a, out, err),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Polcheck(a) => cmd_polcheck(&a, out),
        Command::PassGen(a) => cmd_pass_gen(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn refuse_existing<'a>(paths: impl IntoIterator<Item = &'a Path>, force: bool) -> CliResult {
    if !force {
        for p in paths {
            if p.exists() {
                return Err(CliError::Input(format!("{} exists; pass --force to overwrite", p.display())));
            }
        }
    }
    Ok(())
}

/// Outputs prepared in memory, committed together by temp-file + rename.
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    force: bool,
}

impl Outputs {
    fn new(force: bool) -> Self {
        Self {
            files: Vec::new(),
            force,
        }
    }

    fn add(&mut self, path: PathBuf, write: impl FnOnce(&mut Vec<u8>) -> qsatlink_core::Result<()>) -> CliResult {
        let mut buf = Vec::new();
        write(&mut buf).map_err(runtime)?;
        self.files.push((path, buf));
        Ok(())
    }

    fn commit(self) -> CliResult {
        refuse_existing(self.files.iter().map(|f| f.0.as_path()), self.force)?;
        for (path, data) in self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            };
            std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            let mut builder = tempfile::Builder::new();
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                builder.permissions(std::fs::Permissions::from_mode(0o644));
            }
            let mut tmp = builder
                .tempfile_in(&dir)
                .map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            tmp.write_all(&data).map_err(runtime)?;
            tmp.as_file().sync_all().map_err(runtime)?;
            tmp.persist(&path).map_err(|e| runtime(format!("{}: {}", path.display(), e.error)))?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_catalog(args: &SatelliteArgs) -> CliResult<SatelliteSpec> {
    let catalog = match &args.catalog {
        Some(p) => SatelliteCatalog::parse(open(p)?).map_err(|e| in_file(p, e))?,
        None => SatelliteCatalog::bundled(),
    };
    catalog.get(&args.satellite).cloned().map_err(input)
}

/// Round-trips a pass through its CSV form so that the in-memory geometry
/// equals what any later reader of `pass.csv` will see.
fn canonical_pass(pass: &PassGeometry) -> CliResult<(PassGeometry, Vec<u8>)> {
    let mut buf = Vec::new();
    save_pass(pass, &mut buf).map_err(runtime)?;
    let back = load_pass(buf.as_slice()).map_err(runtime)?;
    Ok((back, buf))
}

fn percent(x: f64) -> String {
    format!("{}%", sig(x * 100.0, 2))
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let mut cfg = load_session(&a.config).map_err(|e| match e {
        CoreError::Parse { .. } | CoreError::InvalidArgument(_) | CoreError::OutOfModel(_) => {
            CliError::Input(format!("{}: {e}", a.config.display()))
        }
        other => input(other),
    })?;
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.rng_seed = v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        let _ = writeln!(err, "seed {} from {SEED_ENV}", cfg.rng_seed);
    }
    let (pass, pass_csv) = canonical_pass(&cfg.pass)?;
    cfg.pass = pass;

    let dir = &a.out_dir;
    let names = ["report.csv", "timetags.csv", "histogram.csv", "slr_epochs.txt", "pass.csv"];
    let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    // Fail before the simulation rather than after it.
    refuse_existing(paths.iter().map(PathBuf::as_path), a.force)?;

    let mut outputs = Outputs::new(a.force);
    let (report, stream) = simulate_pass(&cfg).map_err(runtime)?;
    outputs.add(dir.join("report.csv"), |w| report.write_csv(w))?;
    outputs.add(dir.join("timetags.csv"), |w| stream.save(w))?;
    outputs.add(dir.join("histogram.csv"), |w| write_histogram(&report.histogram, w))?;
    outputs.add(dir.join("slr_epochs.txt"), |w| {
        qsatlink_core::timing::save_epochs(&report.slr_epochs_ps, w)
    })?;
    outputs.files.push((dir.join("pass.csv"), pass_csv));
    outputs.commit()?;

    let na = |o: Option<String>| o.unwrap_or_else(|| "n/a".into());
    let w = |r: io::Result<()>| r.map_err(runtime);
    w(writeln!(out, "satellite: {}", cfg.satellite.name))?;
    w(writeln!(out, "seed: {}", cfg.rng_seed))?;
    w(writeln!(out, "detections: {}", stream.len()))?;
    w(writeln!(out, "intervals: {} ({} qualified)", report.intervals.len(), report.qualified))?;
    w(writeln!(out, "QBER: {}", na(report.qber.map(percent))))?;
    w(writeln!(out, "return rate: {}", na(report.return_rate_hz.map(|r| format!("{} Hz", sig(r, 3))))))?;
    w(writeln!(out, "mu_sat: {}", na(report.mu_sat.map(|m| format!("{} photons/pulse", sig(m, 3))))))?;
    w(writeln!(out, "mean duty cycle: {}", percent(report.mean_duty_cycle)))?;
    let verdict = report.verdict.map(|v| {
        format!(
            "qber_ok={} (< {}), mu_ok={} (<= {}), overall={}",
            v.qber_ok, v.qber_threshold, v.mu_ok, v.mu_threshold, v.overall
        )
    });
    w(writeln!(out, "verdict: {}", na(verdict)))?;
    Ok(0)
}

pub fn cmd_linkbudget(a: &LinkbudgetArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let sat = load_catalog(&a.sat)?;
    if !(a.elevation_floor_deg.is_finite() && a.elevation_floor_deg >= ELEVATION_FLOOR.to_degrees() - 1e-12) {
        return Err(CliError::Input(format!(
            "--elevation-floor-deg {} is below the model floor of 5°",
            a.elevation_floor_deg
        )));
    }
    let pass = match &a.pass {
        Some(p) => load_pass(open(p)?).map_err(|e| in_file(p, e))?,
        None => circular_pass(
            a.altitude_km.map_or(sat.altitude, |k| k * 1e3),
            a.max_elevation_deg.to_radians(),
            a.sample_period_s,
        )
        .map_err(input)?,
    };
    let mut link = LinkBudgetParams::reference(&sat, 1e6, 1.0);
    link.eta_det = a.eta_det;
    link.eta_tx = a.eta_tx;
    link.eta_rx = a.eta_rx;
    link.telescope_area = a.telescope_area_m2;
    link.t_zenith = a.t_zenith;
    link.gain_t = a.gain;
    link.mu_tx = mu_tx_from_power(a.power_w, a.pulse_rate_hz, a.wavelength_nm * 1e-9).map_err(input)?;
    link.validate().map_err(input)?;
    if let Some(m) = a.mu_sat {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(CliError::Input(format!("--mu-sat {m} must be non-negative")));
        }
    }

    let floor = a.elevation_floor_deg.to_radians();
    let mut rows = Vec::new();
    let mut omitted = 0usize;
    for s in pass.samples() {
        let am = match airmass_from_elevation(s.elevation) {
            Ok(am) if s.elevation > floor => am,
            _ => {
                omitted += 1;
                continue;
            }
        };
        let p = link.at_geometry(s.slant_range, am);
        let t = downlink_transmissivity(&p).map_err(input)?;
        let mu_rx = match a.mu_sat {
            Some(m) => m * t,
            None => radar_mu_rx(&p).map_err(input)?,
        };
        rows.push((s.elevation, s.slant_range, am, p.atmospheric_transmissivity(), t, mu_rx));
    }
    if omitted > 0 {
        let _ = writeln!(err, "warning: {omitted} samples at or below {}° omitted", a.elevation_floor_deg);
    }
    let header = [
        "elevation_deg",
        "slant_range_m",
        "airmass",
        "t_a",
        "transmissivity",
        "transmissivity_db",
        "mu_rx",
        "expected_rate_hz",
    ];
    let mut outputs = Outputs::new(a.force);
    outputs.add(a.out.clone(), |w| {
        writeln!(w, "{}", header.join(","))?;
        for &(el, r, am, ta, t, mu) in &rows {
            let f = [el.to_degrees(), r, am, ta, t, attenuation_db(t), mu, mu * a.pulse_rate_hz];
            writeln!(w, "{}", f.map(csv_float).join(","))?;
        }
        Ok(())
    })?;
    outputs.commit()?;

    let w = |r: io::Result<()>| r.map_err(runtime);
    w(writeln!(out, "satellite: {}", sat.name))?;
    w(writeln!(out, "rows: {} ({} omitted)", rows.len(), omitted))?;
    if let Some(&(el, r, _, _, t, mu)) = rows.iter().max_by(|x, y| x.0.total_cmp(&y.0)) {
        w(writeln!(
            out,
            "culmination: elevation {}°, range {} km, transmissivity {} ({} dB), mu_rx {}, expected rate {} Hz",
            sig(el.to_degrees(), 4),
            sig(r / 1e3, 5),
            sig(t, 3),
            sig(attenuation_db(t), 4),
            sig(mu, 3),
            sig(mu * a.pulse_rate_hz, 3)
        ))?;
    }
    Ok(0)
}

pub fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> CliResult<i32> {
    let stream = TimeTagStream::load(open(&a.timetags)?, a.resolution_ps).map_err(|e| in_file(&a.timetags, e))?;
    let epochs = load_epochs(open(&a.slr_epochs)?).map_err(|e| in_file(&a.slr_epochs, e))?;
    let mut grid = expected_arrivals(&epochs, a.subdivisions).map_err(|e| in_file(&a.slr_epochs, e))?;
    let pass = match &a.pass {
        Some(p) => Some(load_pass(open(p)?).map_err(|e| in_file(p, e))?),
        None => None,
    };
    if let Some(pass) = &pass {
        let windows = detection_windows(&epochs, pass, &SlotSchedule::default()).map_err(input)?;
        grid = grid.with_windows(windows).map_err(input)?;
    }
    let gate = GateConfig {
        sigma: a.sigma_ns * 1e-9,
        signal_halfwidth: a.signal_halfwidth,
        background_exclusion: a.background_exclusion,
    };
    gate.validate().map_err(input)?;
    if a.correct_channels.iter().any(|&c| c > 1) {
        return Err(CliError::Input("--correct-channels entries must be 0 or 1".into()));
    }
    let plan = IntervalPlan {
        start: a.t0_s.unwrap_or_else(|| pass.as_ref().map_or(epochs[0], |p| p.start())),
        length: a.interval_s,
        correct_channels: a.correct_channels.clone(),
    };
    let stats = analyze_intervals(&stream, &grid, &gate, &plan).map_err(input)?;
    let histogram = offset_histogram(stream.events(), &grid, 0.1e-9, 5e-9).map_err(runtime)?;

    let mut outputs = Outputs::new(a.force);
    outputs.add(a.out_dir.join("analysis.csv"), |w| write_interval_report(&stats, w))?;
    outputs.add(a.out_dir.join("histogram.csv"), |w| write_histogram(&histogram, w))?;
    outputs.commit()?;

    let qualified: Vec<_> = stats.iter().filter(|s| s.qualified).collect();
    let (c, wr) = qualified.iter().fold((0, 0), |(c, w), s| {
        (c + s.counts.n_signal_correct, w + s.counts.n_signal_wrong)
    });
    let w = |r: io::Result<()>| r.map_err(runtime);
    w(writeln!(out, "events: {}", stream.len()))?;
    w(writeln!(out, "intervals: {} ({} qualified)", stats.len(), qualified.len()))?;
    if qualified.is_empty() {
        w(writeln!(out, "QBER: n/a"))?;
    } else {
        w(writeln!(
            out,
            "QBER: {} ({c} correct, {wr} wrong)",
            percent(qsatlink_core::timing::qber_bayesian(c, wr))
        ))?;
    }
    Ok(0)
}

pub fn cmd_polcheck(a: &PolcheckArgs, out: &mut dyn Write) -> CliResult<i32> {
    let psi = parse_state(&a.state).map_err(|e| CliError::Input(format!("--state: {e}")))?;
    let fr = match (a.fr_deg, a.fr_rad) {
        (Some(d), _) => d.to_radians(),
        (None, Some(r)) => r,
        (None, None) => 0.0,
    };
    if !fr.is_finite() {
        return Err(CliError::Input("Faraday angle must be finite".into()));
    }
    let pose = TelescopePose::wrapped(a.azimuth_deg.to_radians(), a.elevation_deg.to_radians()).map_err(input)?;
    let received = round_trip(&pose, fr, &psi).map_err(input)?;
    let predicted = predicted_round_trip(fr, &psi).map_err(input)?;
    let fidelity = received.fidelity(&predicted);
    let w = |r: io::Result<()>| r.map_err(runtime);
    w(writeln!(out, "input:     {psi}"))?;
    w(writeln!(out, "received:  {received}"))?;
    w(writeln!(out, "predicted: {predicted}"))?;
    w(writeln!(out, "fidelity:  {fidelity:.12}"))?;
    Ok(if fidelity >= 1.0 - 1e-9 { 0 } else { 1 })
}

pub fn cmd_pass_gen(a: &PassGenArgs, out: &mut dyn Write) -> CliResult<i32> {
    let altitude = match a.altitude_km {
        Some(k) => k * 1e3,
        None => load_catalog(&a.sat)?.altitude,
    };
    let mut pass = circular_pass(altitude, a.max_elevation_deg.to_radians(), a.sample_period_s).map_err(input)?;
    if let Some(d) = a.duration_s {
        pass = pass.around_culmination(d).map_err(input)?;
    }
    let mut outputs = Outputs::new(a.force);
    outputs.add(a.out.clone(), |w| save_pass(&pass, w))?;
    outputs.commit()?;
    writeln!(
        out,
        "{} samples over {} s written to {}",
        pass.samples().len(),
        sig(pass.duration(), 6),
        a.out.display()
    )
    .map_err(runtime)?;
    Ok(0)
}

use std::path::Path;

use qsatlink_core::config::load_session;
use qsatlink_core::polarization::{AnalyzerBasis, PolarizationState};
use qsatlink_core::protocol::{estimate_pass_mu_sat, simulate_pass, ScheduleEntry, SessionConfig, SourceModel};
use qsatlink_core::timing::{load_epochs, save_epochs, TimeTagStream};

fn example() -> SessionConfig {
    load_session(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/larets_example.toml")).unwrap()
}

#[test]
fn mu_sat_closed_loop() {
    let base = example();
    let SourceModel::Downlink { mu_sat } = base.source else { panic!("example uses the downlink model") };
    let mut estimates = Vec::new();
    for seed in 0..10 {
        let mut cfg = base.clone();
        cfg.rng_seed = 300 + seed;
        let (r, _) = simulate_pass(&cfg).unwrap();
        let per = estimate_pass_mu_sat(&r, &cfg.link, cfg.pulse_rate).unwrap();
        assert!(!per.is_empty());
        estimates.extend(per);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((mean / mu_sat - 1.0).abs() < 0.1, "{mean} vs {mu_sat}");
}

#[test]
fn detection_count_matches_poisson_mean() {
    let mut cfg = example();
    cfg.background_rate = 0.0;
    cfg.transmissivity_override = Some(1e-3);
    cfg.source = SourceModel::Downlink { mu_sat: 1.0 };
    cfg.state_schedule =
        vec![ScheduleEntry { duration: 40.0, state: PolarizationState::H, analyzer: AnalyzerBasis::HV }];
    let (r, stream) = simulate_pass(&cfg).unwrap();
    let open: f64 = r.intervals.iter().map(|i| i.stats.open_time).sum();
    let mu_rx: f64 = 1e-3;
    let expected = open * cfg.pulse_rate * -(-mu_rx).exp_m1();
    let got = stream.len() as f64;
    assert!((got - expected).abs() < 3.0 * expected.sqrt(), "{got} vs {expected}");
    assert!(stream.events().iter().all(|e| e.channel == 0));
}

#[test]
fn outputs_round_trip_through_loaders() {
    let (r, stream) = simulate_pass(&example()).unwrap();
    let mut buf = Vec::new();
    stream.save(&mut buf).unwrap();
    let back = TimeTagStream::load(buf.as_slice(), stream.resolution_ps()).unwrap();
    assert_eq!(back, stream);

    let mut buf = Vec::new();
    save_epochs(&r.slr_epochs_ps, &mut buf).unwrap();
    let epochs = load_epochs(buf.as_slice()).unwrap();
    assert_eq!(epochs.len(), r.slr_epochs_ps.len());
    for (a, &b) in epochs.iter().zip(&r.slr_epochs_ps) {
        assert_eq!((a * 1e12).round() as i64, b);
    }
}

#[test]
fn report_is_bit_reproducible() {
    let cfg = example();
    let (a, sa) = simulate_pass(&cfg).unwrap();
    let (b, sb) = simulate_pass(&cfg).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(sa, sb);
}

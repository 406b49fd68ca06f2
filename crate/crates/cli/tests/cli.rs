use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::tempdir;

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/larets_example.toml")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["qsatlink"];
    argv.extend_from_slice(args);
    let code = qsatlink::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate_into(dir: &Path) -> String {
    let (code, out, err) = run(&["simulate", p(&example_config()), "--out-dir", p(dir)]);
    assert_eq!(code, 0, "{err}");
    out
}

/// Columns of a CSV file keyed by header name.
fn columns(path: &Path) -> Vec<(String, Vec<String>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let mut cols: Vec<(String, Vec<String>)> = header.into_iter().map(|h| (h, Vec::new())).collect();
    for line in lines {
        for (i, v) in line.split(',').enumerate() {
            cols[i].1.push(v.to_string());
        }
    }
    cols
}

fn column<'a>(cols: &'a [(String, Vec<String>)], name: &str) -> &'a [String] {
    &cols.iter().find(|c| c.0 == name).unwrap_or_else(|| panic!("no column {name}")).1
}

#[test]
fn simulate_writes_outputs_and_summary() {
    let dir = tempdir().unwrap();
    let out = simulate_into(dir.path());
    for f in ["report.csv", "timetags.csv", "histogram.csv", "slr_epochs.txt", "pass.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let qber = out.lines().find(|l| l.starts_with("QBER: ")).unwrap();
    let pct = qber.trim_start_matches("QBER: ").trim_end_matches('%');
    let digits: String = pct.chars().filter(|c| c.is_ascii_digit()).collect();
    assert!(digits.trim_start_matches('0').len() <= 2, "{qber}");
    assert!(out.contains("verdict: "));
    let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(hist.starts_with("offset_ns,ch0,ch1\n"));
    assert_eq!(hist.lines().count(), 101);
}

#[test]
fn simulate_is_deterministic() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    simulate_into(a.path());
    simulate_into(b.path());
    for f in ["report.csv", "timetags.csv", "histogram.csv", "slr_epochs.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_refuses_to_overwrite() {
    let dir = tempdir().unwrap();
    simulate_into(dir.path());
    let before = fs::read(dir.path().join("report.csv")).unwrap();
    let (code, _, err) = run(&["simulate", p(&example_config()), "--out-dir", p(dir.path())]);
    assert_eq!(code, 2);
    assert!(err.contains("--force"));
    let (code, _, _) = run(&["simulate", p(&example_config()), "--out-dir", p(dir.path()), "--force"]);
    assert_eq!(code, 0);
    assert_eq!(fs::read(dir.path().join("report.csv")).unwrap(), before);
}

#[test]
fn missing_catalog_entry_exits_2() {
    let dir = tempdir().unwrap();
    let text = fs::read_to_string(example_config()).unwrap().replace("\"Larets\"", "\"Zarya\"");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let (code, _, err) = run(&["simulate", p(&cfg), "--out-dir", p(dir.path())]);
    assert_eq!(code, 2);
    assert!(err.contains("Zarya"), "{err}");
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[session]\nsatellite = \"Larets\"\nmu_sat = \"lots\"\n[states]\nsequence = \"H/HV:1\"\n").unwrap();
    let (code, _, err) = run(&["simulate", p(&cfg), "--out-dir", p(dir.path())]);
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn analyze_closes_the_loop() {
    let sim = tempdir().unwrap();
    simulate_into(sim.path());
    let report = columns(&sim.path().join("report.csv"));
    let channels = column(&report, "correct_channel").join(",");
    let ana = tempdir().unwrap();
    let d = sim.path();
    let (code, _, err) = run(&[
        "analyze",
        p(&d.join("timetags.csv")),
        p(&d.join("slr_epochs.txt")),
        "--pass",
        p(&d.join("pass.csv")),
        "--correct-channels",
        &channels,
        "--out-dir",
        p(ana.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    let analysis = columns(&ana.path().join("analysis.csv"));
    for name in ["t_start_s", "n_corr", "n_wrong", "qualified"] {
        assert_eq!(column(&report, name), column(&analysis, name), "{name}");
    }
    for name in ["qber_raw", "qber_bg_subtracted", "background_rate_hz", "duty_cycle"] {
        for (a, b) in column(&report, name).iter().zip(column(&analysis, name)) {
            let (a, b): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            assert!((a - b).abs() <= 1e-9, "{name}: {a} vs {b}");
        }
    }
    assert_eq!(
        fs::read(d.join("histogram.csv")).unwrap(),
        fs::read(ana.path().join("histogram.csv")).unwrap()
    );
}

#[test]
fn analyze_empty_and_bad_inputs() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    fs::write(d.join("two.txt"), "0.1\n0.2\n").unwrap();
    fs::write(d.join("one.txt"), "0.1\n").unwrap();
    let (code, out, _) = run(&["analyze", p(&d.join("empty.csv")), p(&d.join("two.txt")), "--out-dir", p(&d.join("a"))]);
    assert_eq!(code, 0);
    assert!(out.contains("(0 qualified)"));
    let (code, _, _) = run(&["analyze", p(&d.join("empty.csv")), p(&d.join("one.txt")), "--out-dir", p(&d.join("b"))]);
    assert_eq!(code, 2);
    fs::write(d.join("bad.csv"), "time_s,channel\n0.1,0\nx,1\n").unwrap();
    let (code, _, err) = run(&["analyze", p(&d.join("bad.csv")), p(&d.join("two.txt")), "--out-dir", p(&d.join("c"))]);
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn linkbudget_defaults() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("lb.csv");
    let (code, stdout, err) = run(&["linkbudget", "--out", p(&out)]);
    assert_eq!(code, 0);
    assert!(err.contains("omitted"), "{err}");
    assert!(stdout.contains("culmination"));
    let cols = columns(&out);
    let el: Vec<f64> = column(&cols, "elevation_deg").iter().map(|v| v.parse().unwrap()).collect();
    assert!(el.iter().all(|&e| e > 5.0));
    let t: Vec<f64> = column(&cols, "transmissivity").iter().map(|v| v.parse().unwrap()).collect();
    let db: Vec<f64> = column(&cols, "transmissivity_db").iter().map(|v| v.parse().unwrap()).collect();
    for (t, db) in t.iter().zip(&db) {
        // Both columns are printed to 9 significant digits.
        assert!((db + 10.0 * t.log10()).abs() <= 1e-9_f64.max(db.abs() * 1e-8));
    }
    let best = t.iter().cloned().fold(0.0, f64::max);
    assert!(best > 4.3e-8 && best < 4.3e-6, "{best}");
}

#[test]
fn linkbudget_rejects_low_floor() {
    let dir = tempdir().unwrap();
    let (code, _, _) = run(&["linkbudget", "--elevation-floor-deg", "3", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(code, 2);
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn polcheck_examples() {
    let (code, out, _) = run(&["polcheck", "--state", "H", "--fr-deg", "0", "--azimuth-deg", "211", "--elevation-deg", "12"]);
    assert_eq!(code, 0);
    assert!(out.contains("received:  (+1.000000+0.000000i, +0.000000+0.000000i)") || out.contains("received:  (-1.000000"), "{out}");
    assert!(out.contains("fidelity:  1.000000000000"));
    let (code, out, _) = run(&["polcheck", "--state", "V", "--fr", "0.3927"]);
    assert_eq!(code, 0);
    assert!(out.contains("fidelity:  1.0000"));
    assert_eq!(run(&["polcheck", "--state", "0.6,0.9i"]).0, 2);
    assert_eq!(run(&["polcheck", "--state", "0.6,0.8i"]).0, 0);
    assert_eq!(run(&["polcheck", "--fr-deg", "1", "--fr-rad", "1"]).0, 2);
}

#[test]
fn pass_gen_round_trips() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let (code, _, _) = run(&["pass-gen", "--max-elevation-deg", "40", "--duration-s", "30", "--out", p(&out)]);
    assert_eq!(code, 0);
    let pass = qsatlink_core::orbitpass::load_pass(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(pass.samples().len(), 31);
    let mut again = Vec::new();
    qsatlink_core::orbitpass::save_pass(&pass, &mut again).unwrap();
    assert_eq!(again, fs::read(&out).unwrap());
    assert_eq!(run(&["pass-gen", "--max-elevation-deg", "2", "--out", p(&dir.path().join("q.csv"))]).0, 2);
}

#[test]
fn unknown_flags_and_help() {
    assert_eq!(run(&["simulate", "--frobnicate"]).0, 2);
    assert_eq!(run(&["teleport"]).0, 2);
    let (code, out, _) = run(&["analyze", "--help"]);
    assert_eq!(code, 0);
    for flag in ["--pass", "--correct-channels", "--sigma-ns", "--out-dir", "--force"] {
        assert!(out.contains(flag), "{flag}");
    }
}

#[test]
fn binary_exit_codes_and_seed_override() {
    let bin = env!("CARGO_BIN_EXE_qsatlink");
    let dir = tempdir().unwrap();
    let status = Command::new(bin).args(["polcheck", "--state", "nope"]).output().unwrap().status;
    assert_eq!(status.code(), Some(2));

    let run_seed = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = Command::new(bin)
            .args(["simulate", p(&example_config()), "--out-dir", p(&out)])
            .env("QSATLINK_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("seed: {seed}")));
        fs::read(out.join("report.csv")).unwrap()
    };
    assert_eq!(run_seed("11", "a"), run_seed("11", "b"));
    assert_ne!(run_seed("11", "a2"), run_seed("12", "c"));

    let o = Command::new(bin)
        .args(["simulate", p(&example_config()), "--out-dir", p(&dir.path().join("d"))])
        .env("QSATLINK_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use g2x::optics::{Channel, TimestampStream};

fn g2x(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2x"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Coherent light with Δ far beyond the coherence time, so residual
/// first-order interference cannot bias the split between the ports.
const LONG_DELAY: &str = r#"
[source]
kind = "coherent"
rate = 1e5
coherence_time = 3e-6

[interferometer]
delay = 90e-6

[simulation]
duration = 10.0
seed = 5
"#;

const SHORT: &str = r#"
[source]
kind = "coherent"
rate = 2e6

[simulation]
duration = 0.05
seed = 3
"#;

#[test]
fn simulate_splits_counts_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", LONG_DELAY);
    let prefix = dir.path().join("run");
    let out = g2x(&["simulate", "--config", s(&cfg), "--output", s(&prefix)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(
        summary.contains("channel A") && summary.contains("channel B"),
        "{summary}"
    );
    for (suffix, channel) in [("_A.pts", Channel::A), ("_B.pts", Channel::B)] {
        let stream = TimestampStream::read_file(&dir.path().join(format!("run{suffix}")), channel).unwrap();
        // each port carries the full mean input rate: 1e5/s for 10 s
        let n = stream.len() as f64;
        assert!((n - 1e6).abs() < 5.0 * 1e6f64.sqrt(), "{suffix}: {n} events");
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SHORT);
    for run in ["one", "two"] {
        let out = g2x(&["simulate", "--config", s(&cfg), "--output", s(&dir.path().join(run))]);
        assert!(out.status.success());
        let hist = dir.path().join(format!("{run}.hist"));
        let out = g2x(&[
            "correlate",
            s(&dir.path().join(format!("{run}_A.pts"))),
            s(&dir.path().join(format!("{run}_B.pts"))),
            "--output",
            s(&hist),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = g2x(&[
            "analyze",
            s(&hist),
            "--output",
            s(&dir.path().join(format!("{run}.toml"))),
            "--plot",
            s(&dir.path().join(format!("{run}.tsv"))),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for suffix in ["_A.pts", "_B.pts", ".hist", ".toml", ".tsv"] {
        let a = fs::read(dir.path().join(format!("one{suffix}"))).unwrap();
        let b = fs::read(dir.path().join(format!("two{suffix}"))).unwrap();
        assert!(a == b, "{suffix} differs");
    }
    // a different seed changes the streams
    let out = g2x(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        "4",
        "--output",
        s(&dir.path().join("three")),
    ]);
    assert!(out.status.success());
    assert_ne!(
        fs::read(dir.path().join("one_A.pts")).unwrap(),
        fs::read(dir.path().join("three_A.pts")).unwrap()
    );
}

#[test]
fn full_mixture_matches_coherent_source() {
    let dir = tempfile::tempdir().unwrap();
    let coherent = write(dir.path(), "c.toml", SHORT);
    let mixture = write(
        dir.path(),
        "m.toml",
        &SHORT.replace("kind = \"coherent\"", "kind = \"mixture\"\nrho = 1.0\nunc_g2 = 1.5"),
    );
    for (cfg, prefix) in [(&coherent, "c"), (&mixture, "m")] {
        let out = g2x(&["simulate", "--config", s(cfg), "--output", s(&dir.path().join(prefix))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for suffix in ["_A.pts", "_B.pts"] {
        assert!(
            fs::read(dir.path().join(format!("c{suffix}"))).unwrap()
                == fs::read(dir.path().join(format!("m{suffix}"))).unwrap(),
            "{suffix} differs"
        );
    }
}

#[test]
fn analyze_reports_dip_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SHORT);
    let prefix = dir.path().join("r");
    assert!(g2x(&["simulate", "--config", s(&cfg), "--output", s(&prefix)])
        .status
        .success());
    let hist = dir.path().join("r.hist");
    assert!(g2x(&[
        "correlate",
        s(&dir.path().join("r_A.pts")),
        s(&dir.path().join("r_B.pts")),
        "--output",
        s(&hist)
    ])
    .status
    .success());
    let out = g2x(&["analyze", s(&hist)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: toml::Table = toml::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let a = record["amplitude"].as_float().unwrap();
    let sigma = record["sigma_amplitude"].as_float().unwrap();
    assert!((a - 0.5).abs() < 5.0 * sigma + 0.01, "A = {a} +- {sigma}");
    let upper = record["rho_upper"]["mean"].as_float().unwrap();
    let lower = record["rho_lower"]["mean"].as_float().unwrap();
    assert!(lower <= upper && upper <= 1.0 && lower > 0.9, "{lower} {upper}");
    assert_eq!(record["method"].as_str(), Some("quadrature"));

    let mc = g2x(&["analyze", s(&hist), "--monte-carlo", "200000", "--seed", "3"]);
    assert!(mc.status.success());
    let mc: toml::Table = toml::from_str(&String::from_utf8_lossy(&mc.stdout)).unwrap();
    assert_eq!(mc["method"].as_str(), Some("monte-carlo"));
    assert_eq!(mc["seed"].as_integer(), Some(3));
    assert!((mc["rho_upper"]["mean"].as_float().unwrap() - upper).abs() < 2e-3);
}

#[test]
fn single_point_sweep_equals_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SHORT);
    let prefix = dir.path().join("p");
    assert!(g2x(&["simulate", "--config", s(&cfg), "--output", s(&prefix)])
        .status
        .success());
    let hist = dir.path().join("p.hist");
    assert!(g2x(&[
        "correlate",
        s(&dir.path().join("p_A.pts")),
        s(&dir.path().join("p_B.pts")),
        "--output",
        s(&hist)
    ])
    .status
    .success());
    let analyzed = g2x(&["analyze", s(&hist)]);
    let record: toml::Table = toml::from_str(&String::from_utf8_lossy(&analyzed.stdout)).unwrap();

    let sweep = g2x(&["sweep", "--config", s(&cfg), "--axis", "rate", "--values", "2e6"]);
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    let table = String::from_utf8_lossy(&sweep.stdout);
    let row: Vec<f64> = table
        .lines()
        .nth(1)
        .unwrap()
        .split('\t')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(row[4], record["amplitude"].as_float().unwrap());
    assert_eq!(row[5], record["sigma_amplitude"].as_float().unwrap());
    assert_eq!(row[9], record["rho_upper"]["mean"].as_float().unwrap());
    assert_eq!(row[12], record["rho_lower"]["mean"].as_float().unwrap());
}

#[test]
fn region_emits_boundary_table() {
    let out = g2x(&["region", "--points", "16", "--max", "1.5"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[4], vec!["4e-1", "0e0", "8e-1"]);
    assert_eq!(rows[15], vec!["1.5e0", "3e0", "NaN"]);
}

#[test]
fn validation_errors_exit_with_two_and_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[source]\nkind = \"mixture\"\nrate = 1e5\nrho = 2\n",
    );
    let out = g2x(&["simulate", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4") && err.contains("source.rho"), "{err}");

    let out = g2x(&[
        "correlate",
        "/nonexistent/a.pts",
        "/nonexistent/b.pts",
        "--output",
        "/dev/null",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

/// Histogram text with `g(τ)` given by `f`.
fn histogram_file(dir: &Path, name: &str, f: impl Fn(f64) -> f64) -> PathBuf {
    let (w, k, norm) = (2e-9f64, 1000i64, 1e6f64);
    let r = (norm / w).sqrt();
    let mut text = format!(
        "# r_A={r:e}\tr_B={r:e}\tT=1e0\tw={w:e}\tW={:e}\n# tau_s\tcount\tg\tsigma\n",
        k as f64 * w
    );
    for i in -k..=k {
        let tau = i as f64 * w;
        let c = (f(tau) * norm).round() as u64;
        let g = c as f64 / norm;
        text.push_str(&format!("{tau:e}\t{c}\t{g:e}\t{:e}\n", (c.max(1) as f64).sqrt() / norm));
    }
    write(dir, name, &text)
}

#[test]
fn non_physical_amplitude_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let hist = histogram_file(dir.path(), "deep.hist", |t| 1.0 - 0.8 * (-t.abs() / 150e-9).exp());
    let out = g2x(&["analyze", s(&hist)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runaway_fit_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // a dip far wider than the histogram window pushes tau_c past W
    let hist = histogram_file(dir.path(), "wide.hist", |t| 1.0 - 0.3 * (-t.abs() / 50e-6).exp());
    let out = g2x(&["analyze", s(&hist), "--delta", "0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

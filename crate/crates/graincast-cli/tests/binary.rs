//! End-to-end tests of the `graincast` binary: flag plumbing, exit codes,
//! and byte-level reproducibility across reruns and thread counts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graincast"))
}

/// Synthetic inputs small enough for fast end-to-end runs: 2 countries,
/// levels for 1961-1980, one climate panel over the same span.
fn write_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let yield_path = dir.join("yield.csv");
    let climate_path = dir.join("climate.csv");
    let mut y = String::from("country,year,value\n");
    let mut c = String::from("country,year,mean_temp\n");
    for (i, country) in ["ARG", "BRA"].iter().enumerate() {
        let mut level = 80.0 + 10.0 * i as f64;
        for year in 1961..=1980 {
            // Deterministic wiggle, different phase per country.
            let t = (year - 1961) as f64;
            level *= (0.012 + 0.03 * (t * 0.9 + i as f64).sin() * 0.1).exp();
            y.push_str(&format!("{country},{year},{level}\n"));
            c.push_str(&format!(
                "{country},{year},{}\n",
                14.0 + 0.02 * t + 0.3 * (t * 0.7 + i as f64).cos()
            ));
        }
    }
    std::fs::write(&yield_path, y).unwrap();
    std::fs::write(&climate_path, c).unwrap();
    (yield_path, climate_path)
}

fn run_fit(dir: &Path, out_name: &str, extra: &[&str]) -> Output {
    let (yield_path, climate_path) = write_inputs(dir);
    bin()
        .arg("fit")
        .arg(format!("--paths.yield={}", yield_path.display()))
        .arg(format!("--paths.climate={}", climate_path.display()))
        .arg("--smc.n_particles=200")
        .arg("--seed")
        .arg("42")
        .arg("--output")
        .arg(dir.join(out_name))
        .args(extra)
        .output()
        .expect("binary runs")
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

fn manifest_line(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("manifest-fit.txt")).unwrap();
    text.lines()
        .find(|l| l.starts_with(&format!("{key}=")))
        .unwrap_or_else(|| panic!("manifest missing {key}"))
        .to_string()
}

#[test]
fn fit_is_byte_identical_across_reruns_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();

    // Identical invocation twice: every artifact byte-identical,
    // manifest included.
    let a1 = run_fit(tmp.path(), "out-a", &["--threads", "1"]);
    assert!(
        a1.status.success(),
        "{}",
        String::from_utf8_lossy(&a1.stderr)
    );
    let bytes_a1 = read_dir_bytes(&tmp.path().join("out-a"));
    assert_eq!(bytes_a1.len(), 3, "posterior, diagnostics, manifest");
    let a2 = run_fit(tmp.path(), "out-a", &["--threads", "1"]);
    assert!(
        a2.status.success(),
        "{}",
        String::from_utf8_lossy(&a2.stderr)
    );
    assert_eq!(bytes_a1, read_dir_bytes(&tmp.path().join("out-a")));

    // Different worker counts: result CSVs byte-identical (the manifest
    // records the effective config, which differs in threads/output_dir).
    let b = run_fit(tmp.path(), "out-b", &["--threads", "2"]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let c = run_fit(tmp.path(), "out-c", &["--threads", "4"]);
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    for name in ["posterior.csv", "diagnostics.csv"] {
        let da = std::fs::read(tmp.path().join("out-a").join(name)).unwrap();
        for out in ["out-b", "out-c"] {
            let db = std::fs::read(tmp.path().join(out).join(name)).unwrap();
            assert_eq!(da, db, "{name} differs between thread counts");
        }
    }
    let ev = manifest_line(&tmp.path().join("out-a"), "log_evidence");
    assert_eq!(ev, manifest_line(&tmp.path().join("out-b"), "log_evidence"));
    assert_eq!(ev, manifest_line(&tmp.path().join("out-c"), "log_evidence"));
}

#[test]
fn config_file_and_overrides_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let (yield_path, climate_path) = write_inputs(tmp.path());
    let config_path = tmp.path().join("run.ini");
    std::fs::write(
        &config_path,
        format!(
            "[paths]\nyield = {}\nclimate = {}\n\n[smc]\nn_particles = 200\n\n[run]\nseed = 7\noutput_dir = {}\n",
            yield_path.display(),
            climate_path.display(),
            tmp.path().join("from-file").display(),
        ),
    )
    .unwrap();

    // Config file alone.
    let out = bin()
        .arg("fit")
        .arg("--config")
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("from-file/posterior.csv").exists());

    // --seed and --output override the file; different seed changes bytes.
    let out = bin()
        .arg("fit")
        .arg("--config")
        .arg(&config_path)
        .arg("--seed")
        .arg("8")
        .arg("--output")
        .arg(tmp.path().join("overridden"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(tmp.path().join("from-file/posterior.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("overridden/posterior.csv")).unwrap();
    assert_ne!(a, b, "different seeds must change the posterior sample");
    let manifest = std::fs::read_to_string(tmp.path().join("overridden/manifest-fit.txt")).unwrap();
    assert!(manifest.contains("seed=8"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown command"));

    let out = bin().arg("fit").arg("--bogus-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing seed is a config error naming the field.
    let tmp = tempfile::tempdir().unwrap();
    let (yield_path, climate_path) = write_inputs(tmp.path());
    let out = bin()
        .arg("fit")
        .arg(format!("--paths.yield={}", yield_path.display()))
        .arg(format!("--paths.climate={}", climate_path.display()))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.seed"));

    // Unknown config key is rejected, naming the key.
    let out = bin()
        .arg("fit")
        .arg("--seed")
        .arg("1")
        .arg("--smc.particle_count=100")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("smc.particle_count"));
}

#[test]
fn missing_input_file_exits_2_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("fit")
        .arg("--paths.yield=/definitely/not/here.csv")
        .arg(format!(
            "--paths.climate={}",
            tmp.path().join("x.csv").display()
        ))
        .arg("--seed")
        .arg("1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.yield"));
}

#[test]
fn malformed_input_data_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let yield_path = tmp.path().join("bad.csv");
    std::fs::write(&yield_path, "country,year,value\nARG,not-a-year,3\n").unwrap();
    let climate_path = tmp.path().join("climate.csv");
    std::fs::write(&climate_path, "country,year,mean_temp\nARG,1961,14.0\n").unwrap();
    let out = bin()
        .arg("fit")
        .arg(format!("--paths.yield={}", yield_path.display()))
        .arg(format!("--paths.climate={}", climate_path.display()))
        .arg("--seed")
        .arg("1")
        .arg("--output")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn evidence_accepts_variant_names_and_rejects_unknown_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let (yield_path, climate_path) = write_inputs(tmp.path());
    let base = |cmd: &mut Command| {
        cmd.arg(format!("--paths.yield={}", yield_path.display()))
            .arg(format!("--paths.climate={}", climate_path.display()))
            .arg("--smc.n_particles=150")
            .arg("--selection.replicates=1")
            .arg("--seed")
            .arg("3")
            .arg("--output")
            .arg(tmp.path().join("ev"));
    };
    let mut cmd = bin();
    cmd.arg("evidence").arg("pooled").arg("hier-variance");
    base(&mut cmd);
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(tmp.path().join("ev/evidence.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "header + 2 variants:\n{table}");

    let mut cmd = bin();
    cmd.arg("evidence").arg("super-model");
    base(&mut cmd);
    let out = cmd.output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("super-model"));
}

#[test]
fn verify_runs_clean_without_config() {
    let out = bin().arg("verify").output().unwrap();
    assert!(
        out.status.success(),
        "verify failed:\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pass"));
    assert!(!stdout.contains("FAIL"));
}

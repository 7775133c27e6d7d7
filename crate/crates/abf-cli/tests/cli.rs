//! End-to-end checks of the `abf` binary: artifact layout, byte-identical
//! reruns, verdict reproducibility from the CSVs, and config-file strictness.

use std::path::Path;
use std::process::Command;

fn abf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_abf"))
}

/// A small, fast scenario used by most of the tests here.
fn small_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        format!(
            "[potential]\n\
             family = gaussian-channel\n\
             amplitude = 0.3\n\
             separation = 1.0\n\
             width = 1.0\n\
             exclusion = 0.25:0.75\n\
             [model]\n\
             lambda = 3.0\n\
             [grid]\n\
             n_x = 32\n\
             n_y = 32\n\
             l = auto\n\
             [run]\n\
             mode = both\n\
             t_end = 0.4\n\
             dt = auto\n\
             record_every = 40\n\
             snapshot_every = 4000\n\
             [initial]\n\
             kind = channel0-bump\n\
             center = 0.0\n\
             y_offset = 0.3\n\
             [sde]\n\
             n_walkers = 2000\n\
             dt = 0.002\n\
             n_bins = 32\n\
             seed = {seed}\n\
             record_every = 100\n\
             [output]\n\
             dir = {}\n",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn full_run_emits_the_artifact_set_and_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 11);
    let out = tmp.path().join("out");
    let status = abf()
        .args(["run", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success(), "run failed");
    for name in [
        "reference.csv",
        "entropy.csv",
        "rates.csv",
        "spectral.csv",
        "prediction.csv",
        "summary.csv",
        "summary.txt",
        "psi_t0.csv",
        "bias_t0.csv",
        "psi_final.csv",
        "bias_final.csv",
        "bins_t0.csv",
        "hist_t0.csv",
    ] {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("verdict: PASS"), "{summary}");
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 99);
    let out = tmp.path().join("out");
    assert!(abf().args(["run", "--config"]).arg(&cfg).status().unwrap().success());
    let mut first = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(&out).unwrap() {
        let p = entry.unwrap().path();
        first.insert(p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap());
    }
    assert!(abf().args(["run", "--config"]).arg(&cfg).status().unwrap().success());
    for (name, bytes) in &first {
        let again = std::fs::read(out.join(name)).unwrap();
        assert_eq!(&again, bytes, "{name:?} differs between identical runs");
    }
}

#[test]
fn report_recomputes_the_verdict_from_csvs_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 5);
    let out = tmp.path().join("out");
    assert!(abf().args(["run", "--config"]).arg(&cfg).status().unwrap().success());
    let output = abf()
        .args(["report", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("verdict: PASS"), "{stdout}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.cfg");
    std::fs::write(&path, "[grid]\nn_x = 32\nn_z = 7\n").unwrap();
    let output = abf()
        .args(["validate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown key"), "{stderr}");
}

#[test]
fn validate_flags_an_empty_exclusion() {
    let tmp = tempfile::tempdir().unwrap();
    let output = abf()
        .args(["validate", "--preset", "remark2-lambda"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    // the remark-2 preset intentionally violates the exclusion-measure clause
    assert_eq!(output.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("measure"), "{stdout}");
}

#[test]
fn validate_accepts_the_default_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let output = abf()
        .args(["validate", "--preset", "bichannel-default"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(output.status.success());
}

#[test]
fn doublewell_preset_runs_the_beta_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scan");
    let status = abf()
        .args(["run", "--preset", "doublewell-lsi", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let scan = std::fs::read_to_string(out.join("lsi_scan.csv")).unwrap();
    assert_eq!(scan.lines().count(), 8); // header + 7 betas
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("lsi_slope_error"));
    assert!(summary.contains("true"));
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 1);
    let out = tmp.path().join("out");
    assert!(abf()
        .args(["simulate-sde", "--config"])
        .arg(&cfg)
        .args(["--seed", "2"])
        .status()
        .unwrap()
        .success());
    let with_seed2 = std::fs::read(out.join("bins_t0.csv")).unwrap();
    assert!(abf().args(["simulate-sde", "--config"]).arg(&cfg).status().unwrap().success());
    let with_seed1 = std::fs::read(out.join("bins_t0.csv")).unwrap();
    assert_ne!(with_seed1, with_seed2, "different seeds must change the run");
}

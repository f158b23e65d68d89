// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! End-to-end checks of the `spinreg` binary: exit codes, output files and
//! flag handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const XY8: &str = r#"
[[register.nuclei]]
a_zx = 598e3
a_zz = 2963e3

[experiment]
order = 1
tau_dd = { start = 0.5e-6, stop = 1.5e-6, count = 11 }
"#;

const SSR: &str = r#"
seed = 1
photon = "reference"

[experiment]
shots = 2000
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinreg")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = match std::fs::read_dir(dir) {
        Ok(entries) => entries.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    names
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn success_writes_both_formats() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "xy8.toml", XY8);
    let o = run(tmp.path(), &["xy8", "--config", "xy8.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("out")), ["xy8_spectrum.csv", "xy8_spectrum.json"]);
    let csv = std::fs::read_to_string(tmp.path().join("out/xy8_spectrum.csv")).unwrap();
    assert!(csv.starts_with("tau_dd_s,survival\n"));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn format_flag_filters_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "xy8.toml", XY8);
    let o = run(tmp.path(), &["xy8", "--config", "xy8.toml", "--out", "csv", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("csv")), ["xy8_spectrum.csv"]);
    let o = run(tmp.path(), &["xy8", "--config", "xy8.toml", "--out", "json", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("json")), ["xy8_spectrum.json"]);
}

#[test]
fn malformed_config_exits_2_with_line_and_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.toml", "[experiment]\norder = 1\ntau_dd = [1e-6,\n");
    let o = run(tmp.path(), &["xy8", "--config", "bad.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unknown_field_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "typo.toml", &XY8.replace("order = 1", "ordr = 1"));
    let o = run(tmp.path(), &["xy8", "--config", "typo.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ordr"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn invalid_values_exit_2_without_partial_files() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "grid.toml", &XY8.replace("count = 11", "count = 0"));
    let o = run(tmp.path(), &["xy8", "--config", "grid.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());

    write(tmp.path(), "ssr.toml", &SSR.replace("shots = 2000", "shots = 0"));
    let o = run(tmp.path(), &["ssr", "--config", "ssr.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn stochastic_command_without_seed_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "ssr.toml", &SSR.replace("seed = 1", ""));
    let o = run(tmp.path(), &["ssr", "--config", "ssr.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    let o = run(tmp.path(), &["ssr", "--config", "ssr.toml", "--out", "out", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "ssr.toml", SSR);
    let summary = |out: &str, extra: &[&str]| {
        let mut args = vec!["ssr", "--config", "ssr.toml", "--out", out, "--format", "json"];
        args.extend_from_slice(extra);
        let o = run(tmp.path(), &args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(tmp.path().join(out).join("ssr_summary.json")).unwrap()
    };
    let from_config = summary("a", &[]);
    let same_seed = summary("b", &["--seed", "1"]);
    let other_seed = summary("c", &["--seed", "2"]);
    assert_eq!(from_config, same_seed);
    assert_ne!(from_config, other_seed);
}

#[test]
fn missing_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["xy8", "--config", "absent.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_trace(dir: &Path, stem: &str, counts: &[u32], sidecar: &str) {
    let mut csv = String::from("time_bin,counts\n");
    for (i, c) in counts.iter().enumerate() {
        csv.push_str(&format!("{i},{c}\n"));
    }
    write(dir, &format!("{stem}.csv"), &csv);
    write(dir, &format!("{stem}.json"), sidecar);
}

#[test]
fn missing_sidecar_field_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    write_trace(tmp.path(), "t", &[30, 0, 31, 29, 0, 0, 30], r#"{"bin_width": 0.001}"#);
    write(tmp.path(), "blink.toml", "[experiment]\ntraces = [\"t.csv\"]\n");
    let o = run(tmp.path(), &["blink", "--config", "blink.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("power"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn trace_without_switching_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    write_trace(tmp.path(), "flat", &[30; 200], r#"{"bin_width": 0.001, "power": 20.0}"#);
    write(tmp.path(), "blink.toml", "[experiment]\ntraces = [\"flat.csv\"]\n");
    let o = run(tmp.path(), &["blink", "--config", "blink.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn output_dir_from_config_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "xy8.toml", &format!("output_dir = \"from_config\"\n{XY8}"));
    let o = run(tmp.path(), &["xy8", "--config", "xy8.toml", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("from_config")), ["xy8_spectrum.csv"]);
}

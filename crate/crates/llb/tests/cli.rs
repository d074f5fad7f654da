//! End-to-end checks of the `llb` binary: flag handling, exit-code contract,
//! artifact placement and the config round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn llb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_llb"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("llb_bin_{tag}_{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_prints_usage() {
    let out = llb().arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("subcommands"));
}

#[test]
fn missing_subcommand_is_usage_error() {
    let out = llb().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = llb().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn error_categories_map_to_distinct_exit_codes() {
    let dir = tmp_dir("codes");

    // parse error (bad syntax) -> 3
    let bad_syntax = write_config(&dir, "syntax.cfg", "[domain]\ndimension 1\n");
    let out = llb()
        .args(["spectrum", "--config", bad_syntax.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // validation error (unknown key) -> 4
    let bad_key = write_config(&dir, "key.cfg", "[domain]\nwibble = 1\n");
    let out = llb()
        .args(["spectrum", "--config", bad_key.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain.wibble"));

    // regime error (T <= Tc) -> 6
    let below_curie = write_config(
        &dir,
        "curie.cfg",
        "[params]\ntemperature = 1\ncurie_temperature = 2\nchi_parallel = 0.5\n",
    );
    let out = llb()
        .args(["spectrum", "--config", below_curie.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("T > Tc"));

    // summability error (slow noise decay) -> 7
    let slow = write_config(&dir, "slow.cfg", "[noise]\ndecay = 1.2\n");
    let out = llb()
        .args(["spectrum", "--config", slow.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(7));

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn spectrum_prints_eigenvalue_table() {
    let dir = tmp_dir("spec");
    let cfg = write_config(&dir, "run.cfg", "[domain]\nn_modes = 4\n[noise]\nk = 2\n");
    let out = llb()
        .args([
            "spectrum",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("artifacts").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // lambda_1 = pi^2, lambda_3 = 9 pi^2
    assert!(stdout.contains("9.869604401089"));
    assert!(stdout.contains("88.826439609804"));
    assert!(dir.join("artifacts/spectrum.csv").exists());
    assert!(dir.join("artifacts/manifest.txt").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn artifacts_stay_under_the_output_directory() {
    let dir = tmp_dir("outdir");
    let cfg = write_config(
        &dir,
        "run.cfg",
        "[domain]\nn_modes = 8\n[noise]\nk = 2\n[time]\nn_steps = 20\nt_end = 0.02\n[run]\nscheme = imex\npaths = 2\n[init]\npreset = random\n",
    );
    let out_dir = dir.join("nested/output");
    let out = llb()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "123",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("simulate done"), "summary line missing: {stdout}");
    let entries: Vec<_> = fs::read_dir(&out_dir).unwrap().collect();
    assert!(entries.len() >= 3, "expected trajectories + manifest");
    // nothing written next to the config
    let stray: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name() != "run.cfg" && e.file_name() != "nested")
        .collect();
    assert!(stray.is_empty(), "stray files: {stray:?}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_override_changes_trajectories() {
    let dir = tmp_dir("seeds");
    let cfg = write_config(
        &dir,
        "run.cfg",
        "[domain]\nn_modes = 8\n[noise]\nk = 2\n[time]\nn_steps = 10\nt_end = 0.01\n[run]\nscheme = imex\n[init]\npreset = random\n",
    );
    let run = |seed: &str, sub: &str| -> Vec<u8> {
        let out_dir = dir.join(format!("out_{sub}_{seed}"));
        let out = llb()
            .args([
                "simulate",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--seed",
                seed,
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        fs::read(out_dir.join("trajectory_0000.llb1")).unwrap()
    };
    let a1 = run("7", "a");
    let a2 = run("7", "b");
    let b = run("8", "c");
    assert_eq!(a1, a2, "same seed must reproduce bitwise");
    assert_ne!(a1, b, "different seed must change the path");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn uniqueness_subcommand_reports_bitwise_control() {
    let dir = tmp_dir("uniq");
    let cfg = write_config(
        &dir,
        "run.cfg",
        "[domain]\nn_modes = 8\n[noise]\nk = 2\n[time]\nn_steps = 50\nt_end = 0.05\n[run]\nscheme = imex\n[init]\npreset = random\n[uniqueness]\ndeltas = 1e-4 1e-5\n",
    );
    let out = llb()
        .args([
            "uniqueness",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bitwise identical"), "{stdout}");
    let csv = fs::read_to_string(dir.join("out/uniqueness.csv")).unwrap();
    assert!(csv.lines().count() >= 5, "{csv}");
    fs::remove_dir_all(&dir).ok();
}

//! Batch front-end: flag parsing, subcommand dispatch and artifact output.
//!
//! ```text
//! llb <subcommand> [--config <path>] [--out <dir>] [--seed <u64>]
//!                  [--paths <int>] [--override section.key=value]...
//! ```
//!
//! Subcommands: `simulate`, `energy-check`, `moments`, `converge`,
//! `uniqueness`, `invariant`, `spectrum`.  Every run writes its artifacts
//! under the configured output directory next to a `manifest.txt` that embeds
//! the canonical config, so any report can be reproduced from its manifest
//! alone.  `LLB_THREADS` caps the worker pool.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{InitPreset, RunConfig};
use crate::diagnostics::{
    h1_energy_residual, l2_energy_residual, max_abs, write_ledger_csv, HolderAccumulator,
    StructureNorm,
};
use crate::error::{Error, Result};
use crate::experiments::{
    run_galerkin_convergence, run_invariant_measure, run_moment_panel, run_uniqueness,
    write_convergence_csv,
};
use crate::integrator::{simulate_path, write_checkpoint, RecordSpec, Trajectory};
use crate::model::System;
use crate::spectral::SpectralField;
use crate::wiener::WienerIncrements;

const SUBCOMMANDS: &[&str] = &[
    "simulate",
    "energy-check",
    "moments",
    "converge",
    "uniqueness",
    "invariant",
    "spectrum",
];

pub const USAGE: &str = "usage: llb <subcommand> [options]

subcommands:
  simulate      integrate sample paths, write trajectory checkpoints
  energy-check  record the energy ledger and write balance residuals
  moments       moment panel across Galerkin resolutions, common noise
  converge      Galerkin error against a fine reference resolution
  uniqueness    two-solution separation under common noise
  invariant     long-horizon occupation statistics and window CDFs
  spectrum      print the Neumann eigenvalue table

options:
  --config <path>              sectioned key = value configuration file
  --out <dir>                  output directory (overrides run.out_dir)
  --seed <u64>                 master seed (overrides run.seed)
  --paths <n>                  path count (overrides run.paths)
  --override section.key=val   set any config key (repeatable)
  --help                       print this text

environment:
  LLB_THREADS                  worker threads for path-parallel runs
";

struct CliArgs {
    subcommand: String,
    config_path: Option<String>,
    overrides: Vec<String>,
}

fn parse_args(args: &[String]) -> std::result::Result<CliArgs, String> {
    let mut subcommand = None;
    let mut config_path = None;
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--help" | "-h" => return Err(String::new()),
            "--config" => {
                config_path = Some(
                    it.next()
                        .ok_or("--config needs a path")?
                        .clone(),
                )
            }
            "--out" => {
                let dir = it.next().ok_or("--out needs a directory")?;
                overrides.push(format!("run.out_dir={dir}"));
            }
            "--seed" => {
                let seed = it.next().ok_or("--seed needs a value")?;
                overrides.push(format!("run.seed={seed}"));
            }
            "--paths" => {
                let n = it.next().ok_or("--paths needs a value")?;
                overrides.push(format!("run.paths={n}"));
            }
            "--override" => {
                overrides.push(it.next().ok_or("--override needs section.key=value")?.clone())
            }
            other if other.starts_with('-') => return Err(format!("unknown flag `{other}`")),
            other => {
                if subcommand.is_some() {
                    return Err(format!("unexpected extra argument `{other}`"));
                }
                subcommand = Some(other.to_string());
            }
        }
    }
    let subcommand = subcommand.ok_or("missing subcommand")?;
    if !SUBCOMMANDS.contains(&subcommand.as_str()) {
        return Err(format!("unknown subcommand `{subcommand}`"));
    }
    Ok(CliArgs {
        subcommand,
        config_path,
        overrides,
    })
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("LLB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            // ignore the error if a pool already exists (tests, repeat calls)
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Process entry point; returns the exit code.
pub fn run(args: &[String]) -> i32 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(msg) => {
            if msg.is_empty() {
                print!("{USAGE}");
                return 0;
            }
            eprintln!("error: {msg}");
            eprint!("{USAGE}");
            return 2;
        }
    };
    init_thread_pool();
    let text = match &parsed.config_path {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read config {path}: {e}");
                return Error::Io(e).exit_code();
            }
        },
        None => String::new(),
    };
    let cfg = match RunConfig::parse_with_overrides(&text, &parsed.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match dispatch(&parsed.subcommand, &cfg) {
        Ok(artifacts) => {
            println!(
                "{} done, config {} -> {} artifact(s) under {}",
                parsed.subcommand,
                cfg.fingerprint(),
                artifacts.len(),
                cfg.out_dir
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run one subcommand and return the artifact paths it wrote.
pub fn dispatch(subcommand: &str, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir)?;
    let mut artifacts = match subcommand {
        "spectrum" => cmd_spectrum(cfg, &out_dir)?,
        "simulate" => cmd_simulate(cfg, &out_dir)?,
        "energy-check" => cmd_energy_check(cfg, &out_dir)?,
        "moments" => cmd_moments(cfg, &out_dir)?,
        "converge" => cmd_converge(cfg, &out_dir)?,
        "uniqueness" => cmd_uniqueness(cfg, &out_dir)?,
        "invariant" => cmd_invariant(cfg, &out_dir)?,
        other => {
            return Err(Error::Config(format!("unknown subcommand `{other}`")));
        }
    };
    let manifest = write_manifest(cfg, subcommand, &out_dir, &artifacts)?;
    artifacts.push(manifest);
    Ok(artifacts)
}

fn write_manifest(
    cfg: &RunConfig,
    subcommand: &str,
    out_dir: &Path,
    artifacts: &[PathBuf],
) -> Result<PathBuf> {
    let path = out_dir.join("manifest.txt");
    let mut w = fs::File::create(&path)?;
    writeln!(w, "# llb run manifest")?;
    writeln!(w, "fingerprint = {}", cfg.fingerprint())?;
    writeln!(w, "subcommand = {subcommand}")?;
    writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "seed = {}", cfg.master_seed)?;
    let names: Vec<String> = artifacts
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    writeln!(w, "artifacts = {}", names.join(" "))?;
    writeln!(w, "--- canonical config ---")?;
    write!(w, "{}", cfg.canonical())?;
    Ok(path)
}

fn cmd_spectrum(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let sys = cfg.build_system()?;
    let basis = sys.domain.basis();
    println!("index  lambda            multi-index");
    for i in 0..basis.len() {
        let [k0, k1] = basis.multi_index(i);
        if cfg.dimension == 1 {
            println!("{i:<6} {:<17.12} ({k0})", basis.eigenvalues()[i]);
        } else {
            println!("{i:<6} {:<17.12} ({k0}, {k1})", basis.eigenvalues()[i]);
        }
    }
    let path = out_dir.join("spectrum.csv");
    let mut w = fs::File::create(&path)?;
    writeln!(w, "# Neumann eigenvalues, flat ordering")?;
    writeln!(w, "# config {}", cfg.fingerprint())?;
    writeln!(w, "index,lambda,k0,k1")?;
    for i in 0..basis.len() {
        let [k0, k1] = basis.multi_index(i);
        writeln!(w, "{i},{},{k0},{k1}", basis.eigenvalues()[i])?;
    }
    Ok(vec![path])
}

fn build_run(cfg: &RunConfig) -> Result<(System, SpectralField)> {
    let sys = cfg.build_system()?;
    let u0 = cfg.initial_state(&sys.domain)?;
    Ok((sys, u0))
}

fn run_paths(
    cfg: &RunConfig,
    sys: &System,
    u0: &SpectralField,
    record: RecordSpec,
) -> Result<Vec<std::result::Result<Trajectory, usize>>> {
    let grid = cfg.time_grid()?;
    let results: Vec<Result<std::result::Result<Trajectory, usize>>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let w = WienerIncrements::sample(cfg.master_seed, path, grid, sys.noise.len());
            match simulate_path(sys, u0, grid, cfg.scheme, &w, record) {
                Ok(mut t) => {
                    t.provenance = cfg.fingerprint();
                    Ok(Ok(t))
                }
                Err(Error::BlowUp { step }) => Ok(Err(step)),
                Err(e) => Err(e),
            }
        })
        .collect();
    results.into_iter().collect()
}

fn report_blow_ups(outcomes: &[std::result::Result<Trajectory, usize>]) -> f64 {
    let blown = outcomes.iter().filter(|t| t.is_err()).count();
    let frac = blown as f64 / outcomes.len().max(1) as f64;
    if blown > 0 {
        println!("blow-up fraction: {frac} ({blown}/{} paths)", outcomes.len());
    }
    frac
}

fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (sys, u0) = build_run(cfg)?;
    let record = RecordSpec {
        state_stride: cfg.stride,
        energy: cfg.energy,
    };
    let outcomes = run_paths(cfg, &sys, &u0, record)?;
    report_blow_ups(&outcomes);
    let mut artifacts = Vec::new();
    for (i, outcome) in outcomes.iter().enumerate() {
        if let Ok(traj) = outcome {
            if traj.stability_warning {
                println!(
                    "warning: path {i}: dt * kappa1 * lambda_max > 1, explicit scheme may be unstable"
                );
            }
            let path = out_dir.join(format!("trajectory_{i:04}.llb1"));
            write_checkpoint(&path, &sys, traj)?;
            artifacts.push(path);
            if let Some(ledger) = &traj.ledger {
                let lpath = out_dir.join(format!("ledger_{i:04}.csv"));
                let f = fs::File::create(&lpath)?;
                write_ledger_csv(std::io::BufWriter::new(f), ledger, &cfg.fingerprint())?;
                artifacts.push(lpath);
            }
        }
    }
    if let Some(Ok(first)) = outcomes.first() {
        println!(
            "final |u|_L2 of path 0: {}",
            sys.domain.l2_norm_sq(first.final_state()).sqrt()
        );
    }
    Ok(artifacts)
}

fn cmd_energy_check(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (sys, u0) = build_run(cfg)?;
    let record = RecordSpec {
        state_stride: 1,
        energy: true,
    };
    let outcomes = run_paths(cfg, &sys, &u0, record)?;
    report_blow_ups(&outcomes);
    let mut artifacts = Vec::new();
    let mut worst_l2: f64 = 0.0;
    let mut worst_h1: f64 = 0.0;
    for (i, outcome) in outcomes.iter().enumerate() {
        if let Ok(traj) = outcome {
            let l2 = l2_energy_residual(&sys, traj)?;
            let h1 = h1_energy_residual(&sys, traj)?;
            worst_l2 = worst_l2.max(max_abs(&l2));
            worst_h1 = worst_h1.max(max_abs(&h1));
            let path = out_dir.join(format!("residuals_{i:04}.csv"));
            let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
            writeln!(w, "# discrete energy-balance residuals")?;
            writeln!(w, "# config {}", cfg.fingerprint())?;
            writeln!(w, "t,l2_residual,h1_residual")?;
            let ledger = traj.ledger.as_ref().unwrap();
            for (m, row) in ledger.rows.iter().enumerate() {
                writeln!(w, "{},{},{}", row.t, l2[m], h1[m])?;
            }
            artifacts.push(path);
        }
    }
    println!("max |L2 residual| over paths: {worst_l2}");
    println!("max |H1 residual| over paths: {worst_h1}");
    Ok(artifacts)
}

fn cmd_moments(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (sys, u0) = build_run(cfg)?;
    let grid = cfg.time_grid()?;
    let panel = run_moment_panel(
        &sys,
        &u0,
        grid,
        cfg.scheme,
        &cfg.moment_n_list,
        cfg.moment_paths,
        cfg.master_seed,
        &cfg.moment_p,
        cfg.moment_r,
    )?;
    let mut artifacts = Vec::new();
    for (n, report) in &panel {
        let path = out_dir.join(format!("moments_n{n:04}.csv"));
        let f = fs::File::create(&path)?;
        report.write_csv(std::io::BufWriter::new(f), &cfg.fingerprint())?;
        artifacts.push(path);
    }
    // headline spread across resolutions
    for name in ["sup_grad_sq", "int_lap_sq"] {
        let means: Vec<f64> = panel
            .iter()
            .filter_map(|(_, r)| r.get(name, 1.0).map(|e| e.mean))
            .collect();
        if means.len() >= 2 {
            let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!("{name}: across n {:?} -> spread {:.1}%", means, 100.0 * (hi - lo) / hi);
        }
    }

    // temporal structure function at the working resolution
    if cfg.regularity_paths > 0 {
        let lags = HolderAccumulator::dyadic_lags(grid);
        if lags.is_empty() {
            println!("structure function skipped: too few steps for the [4 dt, T/8] window");
        } else {
            let norm = StructureNorm::parse(&cfg.regularity_norm)?;
            let mut acc = HolderAccumulator::new(grid, lags, norm)?;
            for path in 0..cfg.regularity_paths as u64 {
                let w = WienerIncrements::sample(cfg.master_seed, path, grid, sys.noise.len());
                let traj = simulate_path(
                    &sys,
                    &u0,
                    grid,
                    cfg.scheme,
                    &w,
                    RecordSpec {
                        state_stride: 1,
                        energy: false,
                    },
                )?;
                acc.add_path(&sys, &traj)?;
            }
            let sf = acc.finalize()?;
            println!(
                "S2 log-log slope over lags [{:.3e}, {:.3e}]: {:.3}",
                sf.lags[sf.fit_window.0], sf.lags[sf.fit_window.1], sf.slope
            );
            let spath = out_dir.join("structure.csv");
            let f = fs::File::create(&spath)?;
            sf.write_csv(std::io::BufWriter::new(f), &cfg.fingerprint())?;
            artifacts.push(spath);
        }
    }
    Ok(artifacts)
}

fn cmd_converge(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (sys, u0) = build_run(cfg)?;
    let grid = cfg.time_grid()?;
    let rows = run_galerkin_convergence(
        &sys,
        &u0,
        grid,
        cfg.scheme,
        &cfg.converge_n_list,
        cfg.converge_n_ref,
        cfg.converge_paths,
        cfg.master_seed,
    )?;
    for r in &rows {
        println!(
            "n = {:<4} median sup|u_n - u_ref|_L2 = {:<12.6e} median int H1^2 = {:.6e}",
            r.n_per_axis, r.median_sup_l2, r.median_int_h1_sq
        );
    }
    let path = out_dir.join("converge.csv");
    let f = fs::File::create(&path)?;
    write_convergence_csv(
        std::io::BufWriter::new(f),
        &rows,
        cfg.converge_n_ref,
        &cfg.fingerprint(),
    )?;
    Ok(vec![path])
}

fn cmd_uniqueness(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (sys, u0) = build_run(cfg)?;
    let grid = cfg.time_grid()?;
    // always include the delta = 0 control
    let mut deltas = vec![0.0];
    deltas.extend(cfg.deltas.iter().cloned().filter(|&d| d != 0.0));
    let direction = crate::config::build_initial(
        &InitPreset::Random {
            seed: cfg.direction_seed,
            h1_radius: 1.0,
            max_mode: 0,
        },
        &sys.domain,
    )?;
    let report = run_uniqueness(
        &sys,
        &u0,
        &deltas,
        &direction,
        grid,
        cfg.scheme,
        cfg.master_seed,
        cfg.n_paths,
    )?;
    match report.zero_delta_bitwise {
        Some(true) => println!("delta = 0 control: bitwise identical"),
        Some(false) => println!("delta = 0 control: NOT bitwise identical"),
        None => {}
    }
    for s in report.summaries.iter().filter(|s| s.delta > 0.0) {
        println!(
            "delta = {:<8.1e} sup|v|/delta = {:<12.6e} envelope = {:.4}",
            s.delta,
            s.sup_v_l2 / s.delta,
            s.envelope
        );
    }
    let path = out_dir.join("uniqueness.csv");
    let f = fs::File::create(&path)?;
    report.write_csv(std::io::BufWriter::new(f), &cfg.fingerprint())?;
    Ok(vec![path])
}

fn cmd_invariant(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (sys, u0) = build_run(cfg)?;
    let report = run_invariant_measure(
        &sys,
        &u0,
        &cfg.horizons,
        cfg.invariant_dt,
        cfg.scheme,
        &cfg.r_grid,
        cfg.invariant_paths,
        cfg.master_seed,
        cfg.burn_in,
    )?;
    for h in &report.horizons {
        println!(
            "T = {:<8} (1/T)int|u|_H1^2 = {:<12.6e} (1/T)int|u|_H2^2 = {:<12.6e} KS[T,2T|2T,4T] = {:.4}",
            h.horizon, h.mean_h1_sq, h.mean_h2_sq, h.ks_dyadic
        );
    }
    println!(
        "Chebyshev consistency pi_T(R) <= m2(T)/R^2: {}",
        report.chebyshev_consistent()
    );
    let path = out_dir.join("invariant.csv");
    let f = fs::File::create(&path)?;
    report.write_csv(std::io::BufWriter::new(f), &cfg.fingerprint())?;
    let opath = out_dir.join("occupation.csv");
    let f = fs::File::create(&opath)?;
    report.write_occupation_csv(std::io::BufWriter::new(f), &cfg.fingerprint())?;
    Ok(vec![path, opath])
}

//! Reproducible multi-path studies built on the integrator: perturbation
//! growth under common noise, Galerkin convergence against a fine reference,
//! long-horizon occupation statistics, and moment panels across resolutions.
//!
//! Paths are independent work units keyed by `path_index`; parallel execution
//! cannot change any per-path result because seeding is index-based.  Batch
//! reductions collect per-path values in index order before aggregating, so
//! reports are identical run to run at a fixed path count.

use rayon::prelude::*;
use std::io::Write;

use crate::diagnostics::{moment_report, MomentReport};
use crate::error::{Error, Result};
use crate::integrator::{couple_resolutions, simulate_path, step, RecordSpec, Scheme, Trajectory};
use crate::model::System;
use crate::spectral::SpectralField;
use crate::wiener::{TimeGrid, WienerIncrements};

/// One perturbation size of the common-noise two-solution experiment, on one
/// Wiener path.
#[derive(Debug, Clone)]
pub struct UniquenessCase {
    pub delta: f64,
    /// sup_t |v(t)|_L2 with v = u2 - u1.
    pub sup_v_l2: f64,
    /// sup_t |v(t)|^2 / |v(0)|^2.
    pub amplification: f64,
    /// max_t log(|v(t)|^2 / |v0|^2) / (1 + int_0^t Phi).
    pub envelope: f64,
    pub times: Vec<f64>,
    pub v_sq: Vec<f64>,
    /// Running integral of the Gronwall weight Phi.
    pub phi_int: Vec<f64>,
}

/// One perturbation size aggregated over a path batch.
#[derive(Debug, Clone)]
pub struct UniquenessSummary {
    pub delta: f64,
    /// max over paths of sup_t |v|_L2
    pub sup_v_l2: f64,
    /// amplification quantiles over paths
    pub amplification_median: f64,
    pub amplification_q90: f64,
    pub amplification_max: f64,
    /// max over paths and times of the Gronwall ratio
    pub envelope: f64,
}

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    /// Per-delta, per-path cases; path-major inner order.
    pub cases: Vec<UniquenessCase>,
    /// Per-delta aggregates over paths.
    pub summaries: Vec<UniquenessSummary>,
    pub n_paths: usize,
    /// Whether the delta = 0 control reproduced the base path bitwise on
    /// every path.
    pub zero_delta_bitwise: Option<bool>,
}

impl UniquenessReport {
    pub fn write_csv<W: Write>(&self, mut w: W, fingerprint: &str) -> std::io::Result<()> {
        writeln!(
            w,
            "# perturbation growth under common noise, {} path(s)",
            self.n_paths
        )?;
        writeln!(w, "# config {fingerprint}")?;
        match self.zero_delta_bitwise {
            Some(true) => writeln!(w, "# delta = 0 control: bitwise identical")?,
            Some(false) => writeln!(w, "# delta = 0 control: NOT bitwise identical")?,
            None => {}
        }
        writeln!(
            w,
            "delta,sup_v_l2,amplification_median,amplification_q90,amplification_max,envelope"
        )?;
        for s in self.summaries.iter().filter(|s| s.delta > 0.0) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.delta,
                s.sup_v_l2,
                s.amplification_median,
                s.amplification_q90,
                s.amplification_max,
                s.envelope
            )?;
        }
        Ok(())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Gronwall weight from the two-solution estimate.  In 1-d,
/// `Phi = |u2|_inf (|u1|_inf + |u2|_inf) + |grad u2|^2 + |grad u2|^4`;
/// in 2-d the gradient terms become
/// `|grad u2|^2 |u2|_H2^2 + |grad u2| |u2|_H2`.
fn gronwall_phi(sys: &System, u1: &SpectralField, u2: &SpectralField) -> Result<f64> {
    let dom = &sys.domain;
    let p1 = dom.synthesize(u1)?;
    let p2 = dom.synthesize(u2)?;
    let linf1 = dom.linf_norm(&p1);
    let linf2 = dom.linf_norm(&p2);
    let grad2_sq = dom.grad_norm_sq(u2);
    let base = linf2 * (linf1 + linf2);
    Ok(match dom.dimension() {
        1 => base + grad2_sq + grad2_sq * grad2_sq,
        2 => {
            let h2_sq = dom.h2_norm_sq(u2);
            base + grad2_sq * h2_sq + grad2_sq.sqrt() * h2_sq.sqrt()
        }
        d => {
            return Err(Error::Unsupported(format!(
                "two-solution estimate holds for d = 1, 2 only, got {d}"
            )))
        }
    })
}

/// Evolve the base state and a perturbed copy `u0 + delta * direction` with
/// identical Wiener increments on one path.  `direction` should be
/// H1-normalised.  Returns one case per delta plus the bitwise flag of the
/// delta = 0 control if present.
pub fn run_uniqueness_single(
    sys: &System,
    u0: &SpectralField,
    deltas: &[f64],
    direction: &SpectralField,
    grid: TimeGrid,
    scheme: Scheme,
    increments: &WienerIncrements,
) -> Result<(Vec<UniquenessCase>, Option<bool>)> {
    let dt = grid.dt();
    let mut cases = Vec::with_capacity(deltas.len());
    let mut zero_delta_bitwise = None;

    for &delta in deltas {
        let mut u1 = u0.clone();
        let mut u2 = u0.clone();
        u2.axpy(delta, direction);
        let v0_sq = {
            let mut v = u2.clone();
            v.axpy(-1.0, &u1);
            sys.domain.l2_norm_sq(&v)
        };

        let mut times = Vec::with_capacity(grid.n_steps + 1);
        let mut v_sq = Vec::with_capacity(grid.n_steps + 1);
        let mut phi_int = Vec::with_capacity(grid.n_steps + 1);
        let mut acc_phi = 0.0;
        let mut bitwise = true;

        fn separation_sq(sys: &System, u1: &SpectralField, u2: &SpectralField) -> f64 {
            let mut v = u2.clone();
            v.axpy(-1.0, u1);
            sys.domain.l2_norm_sq(&v)
        }

        times.push(0.0);
        v_sq.push(separation_sq(sys, &u1, &u2));
        phi_int.push(acc_phi);
        bitwise &= u1.coeffs == u2.coeffs;

        for m in 0..grid.n_steps {
            acc_phi += gronwall_phi(sys, &u1, &u2)? * dt;
            let dw = increments.row(m);
            u1 = step(sys, scheme, &u1, dt, dw)?;
            u2 = step(sys, scheme, &u2, dt, dw)?;
            if !u1.is_finite() || !u2.is_finite() {
                return Err(Error::BlowUp { step: m });
            }
            times.push(grid.time(m + 1));
            v_sq.push(separation_sq(sys, &u1, &u2));
            phi_int.push(acc_phi);
            bitwise &= u1.coeffs == u2.coeffs;
        }

        if delta == 0.0 {
            zero_delta_bitwise = Some(bitwise);
        }
        let sup_v_l2 = v_sq.iter().fold(0.0f64, |a, &b| a.max(b)).sqrt();
        let amplification = if v0_sq > 0.0 {
            v_sq.iter().fold(0.0f64, |a, &b| a.max(b)) / v0_sq
        } else {
            f64::NAN
        };
        // t = 0 is excluded: its ratio is 0 by construction and would mask
        // the actual growth/decay envelope.
        let mut envelope = f64::NEG_INFINITY;
        if v0_sq > 0.0 {
            for (m, &vs) in v_sq.iter().enumerate().skip(1) {
                if vs > 0.0 {
                    envelope = envelope.max((vs / v0_sq).ln() / (1.0 + phi_int[m]));
                }
            }
        }
        cases.push(UniquenessCase {
            delta,
            sup_v_l2,
            amplification,
            envelope,
            times,
            v_sq,
            phi_int,
        });
    }
    Ok((cases, zero_delta_bitwise))
}

/// Multi-path two-solution study: every delta runs against `n_paths` common
/// Wiener paths seeded by index; amplification quantiles are taken over
/// paths, the envelope over paths and times.
#[allow(clippy::too_many_arguments)]
pub fn run_uniqueness(
    sys: &System,
    u0: &SpectralField,
    deltas: &[f64],
    direction: &SpectralField,
    grid: TimeGrid,
    scheme: Scheme,
    master_seed: u64,
    n_paths: usize,
) -> Result<UniquenessReport> {
    if n_paths == 0 {
        return Err(Error::Config("uniqueness study needs at least one path".into()));
    }
    let per_path: Vec<Result<(Vec<UniquenessCase>, Option<bool>)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let w = WienerIncrements::sample(master_seed, path, grid, sys.noise.len());
            run_uniqueness_single(sys, u0, deltas, direction, grid, scheme, &w)
        })
        .collect();

    let mut cases = Vec::with_capacity(deltas.len() * n_paths);
    let mut zero_delta_bitwise: Option<bool> = None;
    let mut by_delta: Vec<Vec<usize>> = vec![Vec::new(); deltas.len()];
    for path_result in per_path {
        let (path_cases, bitwise) = path_result?;
        if let Some(b) = bitwise {
            zero_delta_bitwise = Some(zero_delta_bitwise.unwrap_or(true) && b);
        }
        for (i, c) in path_cases.into_iter().enumerate() {
            by_delta[i].push(cases.len());
            cases.push(c);
        }
    }
    let mut summaries = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let group: Vec<&UniquenessCase> = by_delta[i].iter().map(|&j| &cases[j]).collect();
        let sup_v_l2 = group.iter().map(|c| c.sup_v_l2).fold(0.0f64, f64::max);
        let envelope = group
            .iter()
            .map(|c| c.envelope)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut amps: Vec<f64> = group
            .iter()
            .map(|c| c.amplification)
            .filter(|a| a.is_finite())
            .collect();
        amps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        summaries.push(UniquenessSummary {
            delta,
            sup_v_l2,
            amplification_median: quantile(&amps, 0.5),
            amplification_q90: quantile(&amps, 0.9),
            amplification_max: amps.last().copied().unwrap_or(f64::NAN),
            envelope,
        });
    }
    Ok(UniquenessReport {
        cases,
        summaries,
        n_paths,
        zero_delta_bitwise,
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n_per_axis: usize,
    pub median_sup_l2: f64,
    pub median_int_h1_sq: f64,
}

pub fn write_convergence_csv<W: Write>(
    mut w: W,
    rows: &[ConvergenceRow],
    n_ref: usize,
    fingerprint: &str,
) -> std::io::Result<()> {
    writeln!(w, "# Galerkin error against the n = {n_ref} reference")?;
    writeln!(w, "# config {fingerprint}")?;
    writeln!(w, "n,median_sup_l2,median_int_h1_sq")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.n_per_axis, r.median_sup_l2, r.median_int_h1_sq)?;
    }
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Common-noise Galerkin error against the finest run: per path, run every
/// truncation in `n_list` plus `n_ref` with the same increments and measure
/// `sup_t |u_n - u_ref|_L2` and `int |u_n - u_ref|_H1^2 dt`.
#[allow(clippy::too_many_arguments)]
pub fn run_galerkin_convergence(
    base: &System,
    u0: &SpectralField,
    grid: TimeGrid,
    scheme: Scheme,
    n_list: &[usize],
    n_ref: usize,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let mut all_n: Vec<usize> = n_list.to_vec();
    all_n.push(n_ref);
    let per_path: Vec<Result<Vec<(f64, f64)>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let w = WienerIncrements::sample(master_seed, path, grid, base.noise.len());
            let runs = couple_resolutions(
                base,
                u0,
                grid,
                scheme,
                &w,
                &all_n,
                RecordSpec {
                    state_stride: 1,
                    energy: false,
                },
            )?;
            let (reference, coarse) = runs.split_last().unwrap();
            let ref_dom = &reference.system.domain;
            let dt = grid.dt();
            let mut out = Vec::with_capacity(coarse.len());
            for run in coarse {
                let mut sup_l2: f64 = 0.0;
                let mut int_h1 = 0.0;
                for (s_coarse, s_ref) in run
                    .trajectory
                    .states
                    .iter()
                    .zip(&reference.trajectory.states)
                {
                    let mut diff = ref_dom.embed_from(s_coarse, &run.system.domain)?;
                    diff.axpy(-1.0, s_ref);
                    sup_l2 = sup_l2.max(ref_dom.l2_norm_sq(&diff));
                    int_h1 += ref_dom.h1_norm_sq(&diff) * dt;
                }
                out.push((sup_l2.sqrt(), int_h1));
            }
            Ok(out)
        })
        .collect();

    let mut sup_by_n: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); n_list.len()];
    let mut int_by_n: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); n_list.len()];
    for path_result in per_path {
        let vals = path_result?;
        for (i, (sup, int)) in vals.into_iter().enumerate() {
            sup_by_n[i].push(sup);
            int_by_n[i].push(int);
        }
    }
    Ok(n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| ConvergenceRow {
            n_per_axis: n,
            median_sup_l2: median(&mut sup_by_n[i]),
            median_int_h1_sq: median(&mut int_by_n[i]),
        })
        .collect())
}

/// Statistics of one horizon T of the long-run study.
#[derive(Debug, Clone)]
pub struct HorizonStats {
    pub horizon: f64,
    /// (1/T) int_0^T |u|_H1^2 dt, averaged over paths.
    pub mean_h1_sq: f64,
    /// (1/T) int_0^T |u|_H2^2 dt, averaged over paths.
    pub mean_h2_sq: f64,
    /// (R, fraction of time in [0, T] with |u|_H1 > R).
    pub occupation: Vec<(f64, f64)>,
    /// Two-sample KS distance between |u|_H1 samples on [T, 2T] and [2T, 4T]
    /// (after burn-in inside each window), averaged over paths.
    pub ks_dyadic: f64,
}

#[derive(Debug, Clone)]
pub struct InvariantMeasureReport {
    pub horizons: Vec<HorizonStats>,
    pub n_paths: usize,
    pub burn_in_frac: f64,
}

impl InvariantMeasureReport {
    pub fn write_csv<W: Write>(&self, mut w: W, fingerprint: &str) -> std::io::Result<()> {
        writeln!(
            w,
            "# long-horizon occupation statistics over {} paths; window sizes are heuristic",
            self.n_paths
        )?;
        writeln!(w, "# config {fingerprint}")?;
        writeln!(w, "horizon,mean_h1_sq,mean_h2_sq,ks_dyadic")?;
        for h in &self.horizons {
            writeln!(
                w,
                "{},{},{},{}",
                h.horizon, h.mean_h1_sq, h.mean_h2_sq, h.ks_dyadic
            )?;
        }
        Ok(())
    }

    pub fn write_occupation_csv<W: Write>(
        &self,
        mut w: W,
        fingerprint: &str,
    ) -> std::io::Result<()> {
        writeln!(w, "# occupation fractions pi_T(R) = frac of time |u|_H1 > R")?;
        writeln!(w, "# config {fingerprint}")?;
        writeln!(w, "horizon,r,pi,pi_times_r_sq")?;
        for h in &self.horizons {
            for &(r, pi) in &h.occupation {
                writeln!(w, "{},{},{},{}", h.horizon, r, pi, pi * r * r)?;
            }
        }
        Ok(())
    }

    /// Markov/Chebyshev consistency: pi_T(R) <= m2(T) / R^2 for every R.
    pub fn chebyshev_consistent(&self) -> bool {
        self.horizons.iter().all(|h| {
            h.occupation
                .iter()
                .all(|&(r, pi)| r <= 0.0 || pi <= h.mean_h1_sq / (r * r) + 1e-12)
        })
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Long-horizon runs for the time-averaged occupation diagnostics.  The
/// trajectory is integrated once to `4 * max(horizons)` so every dyadic
/// comparison window [T, 2T] vs [2T, 4T] is populated.
#[allow(clippy::too_many_arguments)]
pub fn run_invariant_measure(
    sys: &System,
    u0: &SpectralField,
    horizons: &[f64],
    dt: f64,
    scheme: Scheme,
    r_grid: &[f64],
    n_paths: usize,
    master_seed: u64,
    burn_in_frac: f64,
) -> Result<InvariantMeasureReport> {
    if horizons.is_empty() {
        return Err(Error::Config("empty horizon schedule".into()));
    }
    let t_max = horizons.iter().cloned().fold(0.0f64, f64::max);
    let total = 4.0 * t_max;
    let n_steps = (total / dt).round() as usize;
    let grid = TimeGrid::new(total, n_steps)?;

    // per path: the |u|_H1^2 and |u|_H2^2 series (cheap spectral norms)
    let series: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let w = WienerIncrements::sample(master_seed, path, grid, sys.noise.len());
            let traj = simulate_path(
                sys,
                u0,
                grid,
                scheme,
                &w,
                RecordSpec {
                    state_stride: usize::MAX, // norms suffice, skip state storage
                    energy: false,
                },
            )?;
            Ok((traj.norms.h1_sq, traj.norms.h2_sq))
        })
        .collect();
    let mut h1_series = Vec::with_capacity(n_paths);
    let mut h2_series = Vec::with_capacity(n_paths);
    for s in series {
        let (h1, h2) = s?;
        h1_series.push(h1);
        h2_series.push(h2);
    }

    let real_dt = grid.dt();
    let mut horizons_sorted = horizons.to_vec();
    horizons_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(horizons_sorted.len());
    for &t_h in &horizons_sorted {
        let m_h = ((t_h / real_dt).round() as usize).min(grid.n_steps);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let mut occ: Vec<f64> = vec![0.0; r_grid.len()];
        let mut count = 0usize;
        for (h1, h2) in h1_series.iter().zip(&h2_series) {
            for m in 0..m_h {
                m1 += h1[m];
                m2 += h2[m];
                for (ri, &r) in r_grid.iter().enumerate() {
                    if h1[m].sqrt() > r {
                        occ[ri] += 1.0;
                    }
                }
                count += 1;
            }
        }
        let mean_h1_sq = m1 / count as f64;
        let mean_h2_sq = m2 / count as f64;
        let occupation: Vec<(f64, f64)> = r_grid
            .iter()
            .zip(&occ)
            .map(|(&r, &c)| (r, c / count as f64))
            .collect();

        // dyadic window CDFs of |u|_H1 with burn-in inside each window;
        // the KS statistic is computed per path and averaged
        let window = |h1: &[f64], from: f64, to: f64| -> Vec<f64> {
            let start = from + burn_in_frac * (to - from);
            let lo = ((start / real_dt).ceil() as usize).min(grid.n_steps);
            let hi = ((to / real_dt).floor() as usize).min(grid.n_steps);
            h1[lo..hi].iter().map(|v| v.sqrt()).collect()
        };
        let mut ks_sum = 0.0;
        for h1 in &h1_series {
            let mut wa = window(h1, t_h, 2.0 * t_h);
            let mut wb = window(h1, 2.0 * t_h, 4.0 * t_h);
            ks_sum += ks_distance(&mut wa, &mut wb);
        }
        let ks = ks_sum / h1_series.len() as f64;
        out.push(HorizonStats {
            horizon: t_h,
            mean_h1_sq,
            mean_h2_sq,
            occupation,
            ks_dyadic: ks,
        });
    }
    Ok(InvariantMeasureReport {
        horizons: out,
        n_paths,
        burn_in_frac,
    })
}

/// Moment panel across Galerkin resolutions under common noise; the estimates
/// should be flat in n.
#[allow(clippy::too_many_arguments)]
pub fn run_moment_panel(
    base: &System,
    u0: &SpectralField,
    grid: TimeGrid,
    scheme: Scheme,
    n_list: &[usize],
    n_paths: usize,
    master_seed: u64,
    p_exponents: &[f64],
    r_exponent: f64,
) -> Result<Vec<(usize, MomentReport)>> {
    let per_path: Vec<Result<Vec<Trajectory>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let w = WienerIncrements::sample(master_seed, path, grid, base.noise.len());
            let runs = couple_resolutions(
                base,
                u0,
                grid,
                scheme,
                &w,
                n_list,
                RecordSpec {
                    state_stride: usize::MAX,
                    energy: true,
                },
            )?;
            Ok(runs.into_iter().map(|r| r.trajectory).collect())
        })
        .collect();

    let mut by_n: Vec<Vec<Trajectory>> = (0..n_list.len()).map(|_| Vec::new()).collect();
    for p in per_path {
        for (i, t) in p?.into_iter().enumerate() {
            by_n[i].push(t);
        }
    }
    let mut out = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        out.push((n, moment_report(&by_n[i], p_exponents, r_exponent)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, NoiseBasis};
    use crate::spectral::{Domain, DomainSpec};

    fn system_1d(n: usize, k_noise: usize) -> System {
        let dom = Domain::new(DomainSpec::new_1d(1.0, n).unwrap()).unwrap();
        let nb = if k_noise == 0 {
            NoiseBasis::empty()
        } else {
            NoiseBasis::default_family(&dom, k_noise, 0.1, 2.0).unwrap()
        };
        System::new(dom, nb, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap())
    }

    fn h1_normalized(sys: &System, seed: u64) -> SpectralField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut d = sys.domain.zero_field();
        for (i, c) in d.coeffs.iter_mut().enumerate() {
            let mode = i % sys.domain.n_modes();
            *c = rng.gen_range(-1.0..1.0) / (1.0 + mode as f64);
        }
        let h1 = sys.domain.h1_norm_sq(&d).sqrt();
        d.scale(1.0 / h1);
        d
    }

    #[test]
    fn zero_delta_is_bitwise() {
        let sys = system_1d(8, 3);
        let grid = TimeGrid::new(0.05, 50).unwrap();
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 0.4);
        let dir = h1_normalized(&sys, 4);
        let report =
            run_uniqueness(&sys, &u0, &[0.0, 1e-5], &dir, grid, Scheme::Heun, 10, 2).unwrap();
        assert_eq!(report.zero_delta_bitwise, Some(true));
        assert_eq!(report.cases.len(), 4); // 2 deltas x 2 paths
        let zero_case = &report.cases[0];
        assert!(zero_case.v_sq.iter().all(|&v| v == 0.0));
        // I(t) non-decreasing, v_sq >= 0
        let small = &report.cases[1];
        assert!(small.phi_int.windows(2).all(|w| w[0] <= w[1]));
        assert!(small.v_sq.iter().all(|&v| v >= 0.0));
        // quantiles ordered
        let s = &report.summaries[1];
        assert!(s.amplification_median <= s.amplification_q90 + 1e-15);
        assert!(s.amplification_q90 <= s.amplification_max + 1e-15);
    }

    #[test]
    fn perturbation_response_is_linear_in_delta() {
        let sys = system_1d(8, 2);
        let grid = TimeGrid::new(0.1, 100).unwrap();
        let w = WienerIncrements::sample(77, 1, grid, 2);
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 0.5);
        u0.set(1, 2, -0.2);
        let dir = h1_normalized(&sys, 9);
        let (cases, _) = run_uniqueness_single(
            &sys,
            &u0,
            &[1e-4, 5e-5, 2.5e-5],
            &dir,
            grid,
            Scheme::Heun,
            &w,
        )
        .unwrap();
        let ratios: Vec<f64> = cases.iter().map(|c| c.sup_v_l2 / c.delta).collect();
        for pair in ratios.windows(2) {
            assert!(
                (pair[0] / pair[1] - 1.0).abs() < 0.1,
                "ratios not constant: {ratios:?}"
            );
        }
        for c in &cases {
            assert!(c.amplification.is_finite());
        }
    }

    #[test]
    fn galerkin_convergence_is_exact_for_mode_decoupled_dynamics() {
        // gamma = mu = 0: modes evolve independently, so shared modes agree
        // exactly and the error equals the reference's unresolved tail.
        let dom = Domain::new(DomainSpec::new_1d(1.0, 16).unwrap()).unwrap();
        let nb = NoiseBasis::default_family(&dom, 2, 0.1, 2.0).unwrap();
        let sys = System::new(dom, nb, ModelParams::unchecked(0.02, 0.5, 0.0, 0.0));
        let mut u0 = sys.domain.zero_field();
        for i in 0..16 {
            u0.set(0, i, 1.0 / (1.0 + i as f64).powi(2));
        }
        let grid = TimeGrid::new(0.1, 100).unwrap();
        let w = WienerIncrements::sample(5, 0, grid, 2);
        let runs = couple_resolutions(
            &sys,
            &u0,
            grid,
            Scheme::EulerMaruyama,
            &w,
            &[4, 16],
            RecordSpec {
                state_stride: 1,
                energy: false,
            },
        )
        .unwrap();
        let coarse = &runs[0];
        let fine = &runs[1];
        for (sc, sf) in coarse.trajectory.states.iter().zip(&fine.trajectory.states) {
            let emb = fine
                .system
                .domain
                .embed_from(sc, &coarse.system.domain)
                .unwrap();
            for i in 0..4 {
                assert_eq!(emb.get(0, i), sf.get(0, i), "mode {i} diverged");
            }
        }
    }

    #[test]
    fn galerkin_errors_decrease_with_resolution() {
        let sys = system_1d(8, 2);
        let mut u0 = sys.domain.zero_field();
        for i in 0..8 {
            u0.set(0, i, 0.5 / (1.0 + i as f64));
            u0.set(1, i, -0.3 / (1.0 + i as f64).powi(2));
        }
        let grid = TimeGrid::new(0.05, 200).unwrap();
        let rows =
            run_galerkin_convergence(&sys, &u0, grid, Scheme::Imex, &[3, 5], 8, 6, 2024).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(
            rows[0].median_sup_l2 > rows[1].median_sup_l2,
            "sup errors: {} vs {}",
            rows[0].median_sup_l2,
            rows[1].median_sup_l2
        );
        assert!(rows[0].median_int_h1_sq > rows[1].median_int_h1_sq);
    }

    #[test]
    fn ks_distance_basics() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        let mut b = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_distance(&mut a, &mut b), 0.0);
        let mut a = vec![0.0, 0.0, 0.0];
        let mut b = vec![1.0, 1.0, 1.0];
        assert_eq!(ks_distance(&mut a, &mut b), 1.0);
    }

    #[test]
    fn invariant_run_contracts_without_noise() {
        // kappa2 > 0 and no noise: the dynamics decay to zero, so late
        // windows concentrate near 0 and occupation above any R > 0 dies.
        let sys = system_1d(8, 0);
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 1.0);
        let report = run_invariant_measure(
            &sys,
            &u0,
            &[2.0, 4.0],
            1e-2,
            Scheme::Imex,
            &[0.1, 1.0, 10.0],
            1,
            7,
            0.1,
        )
        .unwrap();
        assert!(report.chebyshev_consistent());
        let last = report.horizons.last().unwrap();
        let pi_at_1 = last.occupation.iter().find(|&&(r, _)| r == 1.0).unwrap().1;
        assert!(pi_at_1 < 0.1, "pi(1) = {pi_at_1}");
        assert!(last.mean_h2_sq > 0.0 && last.mean_h2_sq.is_finite());
        // occupation fractions live in [0,1] and cannot increase with R
        for h in &report.horizons {
            for pair in h.occupation.windows(2) {
                assert!(pair[0].1 >= pair[1].1);
            }
            for &(_, pi) in &h.occupation {
                assert!((0.0..=1.0).contains(&pi));
            }
        }
    }

    #[test]
    fn moment_panel_is_flat_in_resolution() {
        let sys = system_1d(16, 3);
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 0.5);
        u0.set(1, 2, 0.3);
        let grid = TimeGrid::new(0.1, 200).unwrap();
        let panel =
            run_moment_panel(&sys, &u0, grid, Scheme::Imex, &[8, 16], 8, 99, &[1.0], 1.2).unwrap();
        let a = panel[0].1.get("sup_l2_sq", 1.0).unwrap().mean;
        let b = panel[1].1.get("sup_l2_sq", 1.0).unwrap().mean;
        assert!(
            (a - b).abs() / a.max(b) < 0.2,
            "sup L2 moments far apart: {a} vs {b}"
        );
    }
}

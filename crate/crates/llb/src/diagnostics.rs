//! Executable versions of the model's analytical estimates.
//!
//! The discrete L2 balance reads
//!
//! ```text
//! 1/2 |u(t)|^2 + kappa1 int |grad u|^2 + kappa2 int (1 + mu |u|^2)|u|^2
//!   = 1/2 |u0|^2 + (kappa1^2/2) t sum_k |h_k|^2_L2 + kappa1 sum_k int <u, h_k> dW_k,
//! ```
//!
//! and the H1 balance
//!
//! ```text
//! 1/2 |grad u(t)|^2 + kappa1 int |Lap u|^2 + kappa2 int (1 + mu |u|^2)|grad u|^2
//!   + 2 mu kappa2 int sum_j (u . d_j u)^2 dx
//!   = 1/2 |grad u0|^2 + sum_k int R(u, h_k) + sum_k int <grad u, gamma u x grad h_k + kappa1 grad h_k> dW_k,
//! ```
//!
//! with the remainder
//!
//! ```text
//! R(u, h_k) = (gamma/2) <grad u, G_k(u) x grad h_k>
//!           + (1/2) <gamma u x grad h_k + kappa1 grad h_k, grad G_k(u)>.
//! ```
//!
//! Both identities hold exactly for the continuous-time Galerkin system, so
//! the recorded residuals measure pure time-discretisation error: they shrink
//! under dt-refinement on a fixed Brownian path.  Stochastic integrals are
//! accumulated with left-point (Ito) sums.
//!
//! The `(u . grad u)^2` term is integrated pointwise per direction,
//! `int sum_j (u . d_j u)^2 dx`; that is the pairing produced by integration
//! by parts, and the only one under which the H1 residual actually vanishes
//! with dt.

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::model::{cross, noise_operator_phys, System};
use crate::spectral::{PhysicalField, SpectralField};
use crate::wiener::TimeGrid;
use std::io::Write;

/// Deterministic per-state entries of the energy ledger.
#[derive(Debug, Clone, Copy)]
pub struct LedgerRow {
    pub t: f64,
    /// 1/2 |u|^2_L2
    pub half_l2: f64,
    pub grad_sq: f64,
    pub lap_sq: f64,
    /// int (1 + mu |u|^2) |u|^2 dx
    pub quartic: f64,
    /// |u|^4_L4
    pub l4_4: f64,
    /// |u x Delta u|_L2
    pub cross_norm: f64,
    /// int (1 + mu |u|^2) |grad u|^2 dx
    pub grad_quartic: f64,
    /// int sum_j (u . d_j u)^2 dx
    pub pair_sq: f64,
    /// squared grid maximum of |u|
    pub linf_sq: f64,
    /// |(1 + mu |u|^2) u|^2_L2 (quadrature value; integrand is degree six,
    /// so this one is an approximation, used only as a moment observable)
    pub cubic_norm_sq: f64,
}

/// Running terms of the L2 and H1 balance identities along one path.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub dt: f64,
    pub rows: Vec<LedgerRow>,
    /// Cumulative Ito sums `kappa1 sum_k <u, h_k> dW_k`, index m = value at t_m.
    pub stoch_l2: Vec<f64>,
    /// Cumulative Ito sums `sum_k <grad u, gamma u x grad h_k + kappa1 grad h_k> dW_k`.
    pub stoch_h1: Vec<f64>,
    /// Cumulative `sum_k R(u, h_k) dt`.
    pub r_int: Vec<f64>,
    /// `sum_k |h_k|^2_L2`, the additive constant of the L2 balance.
    pub sum_h_l2_sq: f64,
    cache: StateCache,
}

#[derive(Debug, Clone)]
struct StateCache {
    pu: PhysicalField,
    grads: Vec<PhysicalField>,
}

impl EnergyLedger {
    pub fn start(sys: &System, u0: &SpectralField, dt: f64) -> Result<Self> {
        let cache = make_cache(sys, u0)?;
        let row = compute_row(sys, u0, &cache, 0.0)?;
        Ok(EnergyLedger {
            dt,
            rows: vec![row],
            stoch_l2: vec![0.0],
            stoch_h1: vec![0.0],
            r_int: vec![0.0],
            sum_h_l2_sq: sys.noise.sum_l2_sq(),
            cache,
        })
    }

    /// Accumulate the stochastic and remainder terms for the step leaving the
    /// most recently recorded state (left-point evaluation).
    pub fn advance(&mut self, sys: &System, u: &SpectralField, dw_row: &[f64]) -> Result<()> {
        let kappa1 = sys.params.kappa1;
        let gamma = sys.params.gamma;
        let mut dl2 = 0.0;
        let mut dh1 = 0.0;
        let mut dr = 0.0;
        for (k, &dw) in dw_row.iter().enumerate() {
            dl2 += kappa1 * u.dot(sys.noise.field(k)) * dw;
            let pairing = h1_noise_pairing(sys, &self.cache, k, gamma, kappa1);
            dh1 += pairing * dw;
            dr += r_remainder_cached(sys, &self.cache, k)? * self.dt;
        }
        let l2_last = *self.stoch_l2.last().unwrap();
        let h1_last = *self.stoch_h1.last().unwrap();
        let r_last = *self.r_int.last().unwrap();
        self.stoch_l2.push(l2_last + dl2);
        self.stoch_h1.push(h1_last + dh1);
        self.r_int.push(r_last + dr);
        Ok(())
    }

    /// Record the state reached after a step.
    pub fn record_state(&mut self, sys: &System, u: &SpectralField) -> Result<()> {
        let t = self.rows.len() as f64 * self.dt;
        self.cache = make_cache(sys, u)?;
        let row = compute_row(sys, u, &self.cache, t)?;
        self.rows.push(row);
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.rows.len() - 1
    }

    /// Left-point prefix sums `dt * sum_{j<m} f(row_j)`.
    pub fn left_point_integral<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&LedgerRow) -> f64,
    {
        let mut out = Vec::with_capacity(self.rows.len());
        let mut acc = 0.0;
        for row in &self.rows {
            out.push(acc);
            acc += f(row) * self.dt;
        }
        out
    }
}

fn make_cache(sys: &System, u: &SpectralField) -> Result<StateCache> {
    let pu = sys.domain.synthesize(u)?;
    let mut grads = Vec::with_capacity(sys.domain.dimension());
    for a in 0..sys.domain.dimension() {
        grads.push(sys.domain.synthesize_grad(u, a)?);
    }
    Ok(StateCache { pu, grads })
}

fn compute_row(sys: &System, u: &SpectralField, cache: &StateCache, t: f64) -> Result<LedgerRow> {
    let dom = &sys.domain;
    let mu = sys.params.mu;
    let pu = &cache.pu;
    let m = dom.n_points();

    let l2_sq = dom.l2_norm_sq(u);
    let l4_4 = dom.l4_norm_4(pu);
    let quartic = l2_sq + mu * l4_4;

    let lap = dom.laplacian(u)?;
    let plap = dom.synthesize(&lap)?;
    let cross_sq = dom.integrate(|j| {
        let c = cross(pu.at(j), plap.at(j));
        c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
    });

    let mut grad_quartic = 0.0;
    let mut pair_sq = 0.0;
    {
        let (ux, uy, uz) = pu.comps();
        for g in &cache.grads {
            let (dx, dy, dz) = g.comps();
            for j in 0..m {
                let vv = ux[j] * ux[j] + uy[j] * uy[j] + uz[j] * uz[j];
                let g2 = dx[j] * dx[j] + dy[j] * dy[j] + dz[j] * dz[j];
                let p = ux[j] * dx[j] + uy[j] * dy[j] + uz[j] * dz[j];
                grad_quartic += (1.0 + mu * vv) * g2;
                pair_sq += p * p;
            }
        }
    }
    grad_quartic *= dom.quad_weight();
    pair_sq *= dom.quad_weight();

    let linf = dom.linf_norm(pu);
    let cubic_norm_sq = dom.integrate(|j| {
        let v = pu.at(j);
        let vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let w = 1.0 + mu * vv;
        w * w * vv
    });

    Ok(LedgerRow {
        t,
        half_l2: 0.5 * l2_sq,
        grad_sq: dom.grad_norm_sq(u),
        lap_sq: dom.lap_norm_sq(u),
        quartic,
        l4_4,
        cross_norm: cross_sq.max(0.0).sqrt(),
        grad_quartic,
        pair_sq,
        linf_sq: linf * linf,
        cubic_norm_sq,
    })
}

/// `<grad u, gamma u x grad h_k + kappa1 grad h_k>` summed over directions.
fn h1_noise_pairing(sys: &System, cache: &StateCache, k: usize, gamma: f64, kappa1: f64) -> f64 {
    let dom = &sys.domain;
    let hgrads = sys.noise.grad_physical(k);
    let (ux, uy, uz) = cache.pu.comps();
    let mut acc = 0.0;
    for (gu, gh) in cache.grads.iter().zip(hgrads) {
        let (ax, ay, az) = gu.comps();
        let (hx, hy, hz) = gh.comps();
        for j in 0..ax.len() {
            let cx = uy[j] * hz[j] - uz[j] * hy[j];
            let cy = uz[j] * hx[j] - ux[j] * hz[j];
            let cz = ux[j] * hy[j] - uy[j] * hx[j];
            acc += ax[j] * (gamma * cx + kappa1 * hx[j])
                + ay[j] * (gamma * cy + kappa1 * hy[j])
                + az[j] * (gamma * cz + kappa1 * hz[j]);
        }
    }
    acc * dom.quad_weight()
}

/// `R(u, h_k)` by dealiased quadrature.
pub fn r_remainder(sys: &System, u: &SpectralField, k: usize) -> Result<f64> {
    if k >= sys.noise.len() {
        return Err(Error::Index(format!(
            "noise index {k} out of range, family has {}",
            sys.noise.len()
        )));
    }
    let cache = make_cache(sys, u)?;
    r_remainder_cached(sys, &cache, k)
}

fn r_remainder_cached(sys: &System, cache: &StateCache, k: usize) -> Result<f64> {
    let dom = &sys.domain;
    let gamma = sys.params.gamma;
    let kappa1 = sys.params.kappa1;
    let g = noise_operator_phys(dom, &cache.pu, k, &sys.noise, &sys.params)?;
    let pg = dom.synthesize(&g)?;
    let hgrads = sys.noise.grad_physical(k);

    // (gamma/2) <grad u, G x grad h>
    let mut first = 0.0;
    {
        let (gx, gy, gz) = pg.comps();
        for (gu, gh) in cache.grads.iter().zip(hgrads) {
            let (ax, ay, az) = gu.comps();
            let (hx, hy, hz) = gh.comps();
            for j in 0..ax.len() {
                let cx = gy[j] * hz[j] - gz[j] * hy[j];
                let cy = gz[j] * hx[j] - gx[j] * hz[j];
                let cz = gx[j] * hy[j] - gy[j] * hx[j];
                first += ax[j] * cx + ay[j] * cy + az[j] * cz;
            }
        }
    }
    first *= 0.5 * gamma * dom.quad_weight();

    // (1/2) <gamma u x grad h + kappa1 grad h, grad G>
    let mut second = 0.0;
    let (ux, uy, uz) = cache.pu.comps();
    for (a, gh) in hgrads.iter().enumerate() {
        let gg = dom.synthesize_grad(&g, a)?;
        let (bx, by, bz) = gg.comps();
        let (hx, hy, hz) = gh.comps();
        for j in 0..bx.len() {
            let cx = uy[j] * hz[j] - uz[j] * hy[j];
            let cy = uz[j] * hx[j] - ux[j] * hz[j];
            let cz = ux[j] * hy[j] - uy[j] * hx[j];
            second += (gamma * cx + kappa1 * hx[j]) * bx[j]
                + (gamma * cy + kappa1 * hy[j]) * by[j]
                + (gamma * cz + kappa1 * hz[j]) * bz[j];
        }
    }
    second *= 0.5 * dom.quad_weight();
    Ok(first + second)
}

fn require_ledger(traj: &Trajectory) -> Result<&EnergyLedger> {
    traj.ledger.as_ref().ok_or_else(|| {
        Error::Config("energy ledger not recorded; rerun with energy recording on".into())
    })
}

/// Pointwise residual of the L2 balance, one value per step boundary.
///
/// The additive constant is `(kappa1^2 / 2) t sum_k |h_k|^2`: it comes from
/// `(kappa1/2) sum_k <h_k, G_k(u)>` with `<h_k, G_k(u)> = kappa1 |h_k|^2`
/// (the gamma part pairs a repeated vector in the triple product), so kappa1
/// enters squared.
pub fn l2_energy_residual(sys: &System, traj: &Trajectory) -> Result<Vec<f64>> {
    let ledger = require_ledger(traj)?;
    let p = &sys.params;
    let int_grad = ledger.left_point_integral(|r| r.grad_sq);
    let int_quartic = ledger.left_point_integral(|r| r.quartic);
    let mut out = Vec::with_capacity(ledger.rows.len());
    for (m, row) in ledger.rows.iter().enumerate() {
        let lhs = row.half_l2 + p.kappa1 * int_grad[m] + p.kappa2 * int_quartic[m];
        let rhs = ledger.rows[0].half_l2
            + 0.5 * p.kappa1 * p.kappa1 * row.t * ledger.sum_h_l2_sq
            + ledger.stoch_l2[m];
        out.push(lhs - rhs);
    }
    Ok(out)
}

/// Pointwise residual of the H1 balance.
pub fn h1_energy_residual(sys: &System, traj: &Trajectory) -> Result<Vec<f64>> {
    let ledger = require_ledger(traj)?;
    let p = &sys.params;
    let int_lap = ledger.left_point_integral(|r| r.lap_sq);
    let int_gq = ledger.left_point_integral(|r| r.grad_quartic);
    let int_pair = ledger.left_point_integral(|r| r.pair_sq);
    let mut out = Vec::with_capacity(ledger.rows.len());
    for (m, row) in ledger.rows.iter().enumerate() {
        let lhs = 0.5 * row.grad_sq
            + p.kappa1 * int_lap[m]
            + p.kappa2 * int_gq[m]
            + 2.0 * p.mu * p.kappa2 * int_pair[m];
        let rhs = 0.5 * ledger.rows[0].grad_sq + ledger.r_int[m] + ledger.stoch_h1[m];
        out.push(lhs - rhs);
    }
    Ok(out)
}

pub fn max_abs(series: &[f64]) -> f64 {
    series.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Sample mean and standard error of the terminal stochastic-integral ledger
/// over a batch of paths; both should sit within a few standard errors of 0.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleCheck {
    pub l2_mean: f64,
    pub l2_std_error: f64,
    pub h1_mean: f64,
    pub h1_std_error: f64,
    pub n_paths: usize,
}

impl MartingaleCheck {
    pub fn l2_within(&self, k_sigma: f64) -> bool {
        self.l2_mean.abs() <= k_sigma * self.l2_std_error
    }

    pub fn h1_within(&self, k_sigma: f64) -> bool {
        self.h1_mean.abs() <= k_sigma * self.h1_std_error
    }
}

pub fn martingale_check(trajs: &[Trajectory]) -> Result<MartingaleCheck> {
    if trajs.len() < 2 {
        return Err(Error::Stats("martingale check needs at least 2 paths".into()));
    }
    let mut l2 = MeanAcc::default();
    let mut h1 = MeanAcc::default();
    for t in trajs {
        let ledger = require_ledger(t)?;
        l2.push(*ledger.stoch_l2.last().unwrap());
        h1.push(*ledger.stoch_h1.last().unwrap());
    }
    Ok(MartingaleCheck {
        l2_mean: l2.mean(),
        l2_std_error: l2.std_error(),
        h1_mean: h1.mean(),
        h1_std_error: h1.std_error(),
        n_paths: trajs.len(),
    })
}

/// Streaming mean / standard-error accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAcc {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.m2 / (self.n - 1) as f64
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct MomentEntry {
    pub observable: String,
    pub p: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub entries: Vec<MomentEntry>,
    pub n_paths: usize,
}

impl MomentReport {
    pub fn get(&self, observable: &str, p: f64) -> Option<&MomentEntry> {
        self.entries
            .iter()
            .find(|e| e.observable == observable && e.p == p)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, fingerprint: &str) -> std::io::Result<()> {
        writeln!(w, "# moment report over {} paths", self.n_paths)?;
        writeln!(w, "# config {fingerprint}")?;
        writeln!(w, "observable,p,mean,std_error")?;
        for e in &self.entries {
            writeln!(w, "{},{},{},{}", e.observable, e.p, e.mean, e.std_error)?;
        }
        Ok(())
    }
}

/// Monte Carlo moment estimates of the a priori bounded functionals:
/// running suprema of L2/H1 energies, time integrals of the dissipation
/// terms, the cubic-term norm, the cross term at exponent `r < 4/3` and the
/// grid-max proxy of `int |u|^2_Linf`.
pub fn moment_report(
    trajs: &[Trajectory],
    p_exponents: &[f64],
    r_exponent: f64,
) -> Result<MomentReport> {
    if trajs.is_empty() {
        return Ok(MomentReport {
            entries: Vec::new(),
            n_paths: 0,
        });
    }
    struct PathFunctionals {
        sup_l2_sq: f64,
        sup_h1_sq: f64,
        int_grad: f64,
        int_quartic: f64,
        sup_grad_sq: f64,
        int_lap: f64,
        int_cubic: f64,
        int_cross_r: f64,
        int_linf_sq: f64,
    }
    let mut per_path = Vec::with_capacity(trajs.len());
    for t in trajs {
        let ledger = require_ledger(t)?;
        let dt = ledger.dt;
        let mut f = PathFunctionals {
            sup_l2_sq: 0.0,
            sup_h1_sq: 0.0,
            int_grad: 0.0,
            int_quartic: 0.0,
            sup_grad_sq: 0.0,
            int_lap: 0.0,
            int_cubic: 0.0,
            int_cross_r: 0.0,
            int_linf_sq: 0.0,
        };
        for (m, row) in ledger.rows.iter().enumerate() {
            f.sup_l2_sq = f.sup_l2_sq.max(2.0 * row.half_l2);
            f.sup_h1_sq = f.sup_h1_sq.max(2.0 * row.half_l2 + row.grad_sq);
            f.sup_grad_sq = f.sup_grad_sq.max(row.grad_sq);
            if m + 1 < ledger.rows.len() {
                f.int_grad += row.grad_sq * dt;
                f.int_quartic += row.quartic * dt;
                f.int_lap += row.lap_sq * dt;
                f.int_cubic += row.cubic_norm_sq * dt;
                f.int_cross_r += row.cross_norm.powf(r_exponent) * dt;
                f.int_linf_sq += row.linf_sq * dt;
            }
        }
        per_path.push(f);
    }

    let mut entries = Vec::new();
    let mut push = |name: &str, p: f64, values: Box<dyn Fn(&PathFunctionals) -> f64>| {
        let mut acc = MeanAcc::default();
        for f in &per_path {
            acc.push(values(f).powf(p));
        }
        entries.push(MomentEntry {
            observable: name.to_string(),
            p,
            mean: acc.mean(),
            std_error: acc.std_error(),
        });
    };
    for &p in p_exponents {
        push("sup_l2_sq", p, Box::new(|f| f.sup_l2_sq));
        push("sup_h1_sq", p, Box::new(|f| f.sup_h1_sq));
        push("int_grad_sq", p, Box::new(|f| f.int_grad));
        push("int_quartic", p, Box::new(|f| f.int_quartic));
        push("sup_grad_sq", p, Box::new(|f| f.sup_grad_sq));
        push("int_lap_sq", p, Box::new(|f| f.int_lap));
        push("int_cross_r", p, Box::new(|f| f.int_cross_r));
        push("int_linf_sq", p, Box::new(|f| f.int_linf_sq));
    }
    push("int_cubic_sq", 1.0, Box::new(|f| f.int_cubic));
    Ok(MomentReport {
        entries,
        n_paths: trajs.len(),
    })
}

/// Max over samples of the interpolation-inequality ratio:
/// `|v|_Linf / (|v|_L2^(1/2) |v|_H1^(1/2))` in 1-d,
/// `|v|_L4 / (|v|_L2^(1/2) |v|_H1^(1/2))` in 2-d.
pub fn interpolation_ratios(sys: &System, samples: &[SpectralField]) -> Result<f64> {
    let dom = &sys.domain;
    let mut worst: f64 = 0.0;
    for v in samples {
        let p = dom.synthesize(v)?;
        let num = if dom.dimension() == 1 {
            dom.linf_norm(&p)
        } else {
            dom.l4_norm_4(&p).powf(0.25)
        };
        let den = dom.l2_norm_sq(v).sqrt().sqrt() * dom.h1_norm_sq(v).sqrt().sqrt();
        if den > 1e-300 {
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureNorm {
    L2,
    L32,
}

impl StructureNorm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(StructureNorm::L2),
            "l32" | "l3/2" => Ok(StructureNorm::L32),
            other => Err(Error::Config(format!(
                "unknown structure-function norm `{other}` (expected l2 or l32)"
            ))),
        }
    }
}

/// Temporal structure function `S_2(tau)` with its log-log fit slope.
#[derive(Debug, Clone)]
pub struct StructureFunction {
    pub lags: Vec<f64>,
    pub s2: Vec<f64>,
    pub pairs: Vec<u64>,
    pub slope: f64,
    /// Lag window (inclusive indices into `lags`) used for the fit.
    pub fit_window: (usize, usize),
}

impl StructureFunction {
    pub fn write_csv<W: Write>(&self, mut w: W, fingerprint: &str) -> std::io::Result<()> {
        writeln!(w, "# temporal structure function, fit slope {}", self.slope)?;
        writeln!(w, "# config {fingerprint}")?;
        writeln!(w, "lag,s2,pairs")?;
        for ((lag, s2), pairs) in self.lags.iter().zip(&self.s2).zip(&self.pairs) {
            writeln!(w, "{lag},{s2},{pairs}")?;
        }
        Ok(())
    }
}

/// Accumulates squared increments `|u(t+tau) - u(t)|^2` over paths without
/// retaining the batch.
pub struct HolderAccumulator {
    lag_steps: Vec<usize>,
    sums: Vec<f64>,
    pairs: Vec<u64>,
    grid: TimeGrid,
    norm: StructureNorm,
}

impl HolderAccumulator {
    pub fn new(grid: TimeGrid, lag_steps: Vec<usize>, norm: StructureNorm) -> Result<Self> {
        if lag_steps.is_empty() {
            return Err(Error::Stats("no lags requested".into()));
        }
        if lag_steps.windows(2).any(|w| w[0] >= w[1]) || lag_steps[0] == 0 {
            return Err(Error::Stats("lags must be strictly increasing and nonzero".into()));
        }
        if *lag_steps.last().unwrap() >= grid.n_steps {
            return Err(Error::Stats("largest lag exceeds the trajectory length".into()));
        }
        let n = lag_steps.len();
        Ok(HolderAccumulator {
            lag_steps,
            sums: vec![0.0; n],
            pairs: vec![0; n],
            grid,
            norm,
        })
    }

    /// Lags `4 dt * 2^j` capped at T/8, the window used for slope fitting.
    pub fn dyadic_lags(grid: TimeGrid) -> Vec<usize> {
        let mut lags = Vec::new();
        let mut lag = 4usize;
        while lag <= grid.n_steps / 8 {
            lags.push(lag);
            lag *= 2;
        }
        lags
    }

    pub fn add_path(&mut self, sys: &System, traj: &Trajectory) -> Result<()> {
        if traj.state_stride != 1 {
            return Err(Error::Stats(
                "structure functions need stride-1 trajectories".into(),
            ));
        }
        if traj.grid != self.grid {
            return Err(Error::Dimension("trajectory grid mismatch".into()));
        }
        match self.norm {
            StructureNorm::L2 => {
                for (li, &lag) in self.lag_steps.iter().enumerate() {
                    for t in 0..traj.states.len() - lag {
                        let a = &traj.states[t];
                        let b = &traj.states[t + lag];
                        let mut d2 = 0.0;
                        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                            let d = x - y;
                            d2 += d * d;
                        }
                        self.sums[li] += d2;
                        self.pairs[li] += 1;
                    }
                }
            }
            StructureNorm::L32 => {
                let phys: Vec<PhysicalField> = traj
                    .states
                    .iter()
                    .map(|s| sys.domain.synthesize(s))
                    .collect::<Result<_>>()?;
                for (li, &lag) in self.lag_steps.iter().enumerate() {
                    for t in 0..phys.len() - lag {
                        let a = &phys[t];
                        let b = &phys[t + lag];
                        let int = sys.domain.integrate(|j| {
                            let va = a.at(j);
                            let vb = b.at(j);
                            let dx = va[0] - vb[0];
                            let dy = va[1] - vb[1];
                            let dz = va[2] - vb[2];
                            let s = (dx * dx + dy * dy + dz * dz).sqrt();
                            s.powf(1.5)
                        });
                        let norm = int.powf(2.0 / 3.0);
                        self.sums[li] += norm * norm;
                        self.pairs[li] += 1;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finalize(self) -> Result<StructureFunction> {
        for (li, &p) in self.pairs.iter().enumerate() {
            if p < 8 {
                return Err(Error::Stats(format!(
                    "lag index {li} has only {p} increment pairs, need >= 8"
                )));
            }
        }
        let dt = self.grid.dt();
        let lags: Vec<f64> = self.lag_steps.iter().map(|&l| l as f64 * dt).collect();
        let s2: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.pairs)
            .map(|(s, &p)| s / p as f64)
            .collect();

        // fit on lags within [4 dt, T/8]
        let lo = 4.0 * dt * (1.0 - 1e-12);
        let hi = self.grid.t_end / 8.0 * (1.0 + 1e-12);
        let in_window: Vec<usize> = (0..lags.len())
            .filter(|&i| lags[i] >= lo && lags[i] <= hi && s2[i] > 0.0)
            .collect();
        if in_window.len() < 2 {
            return Err(Error::Stats(
                "fewer than two lags in the fit window [4 dt, T/8]".into(),
            ));
        }
        let xs: Vec<f64> = in_window.iter().map(|&i| lags[i].ln()).collect();
        let ys: Vec<f64> = in_window.iter().map(|&i| s2[i].ln()).collect();
        let slope = least_squares_slope(&xs, &ys);
        Ok(StructureFunction {
            lags,
            s2,
            pairs: self.pairs,
            slope,
            fit_window: (*in_window.first().unwrap(), *in_window.last().unwrap()),
        })
    }
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Ledger CSV: one row per time step with every balance term.
pub fn write_ledger_csv<W: Write>(
    mut w: W,
    ledger: &EnergyLedger,
    fingerprint: &str,
) -> std::io::Result<()> {
    writeln!(w, "# energy ledger, dt = {}", ledger.dt)?;
    writeln!(w, "# config {fingerprint}")?;
    writeln!(
        w,
        "t,half_l2,grad_sq,lap_sq,quartic,l4_4,cross_norm,grad_quartic,pair_sq,linf_sq,cubic_norm_sq,stoch_l2,stoch_h1,r_int"
    )?;
    for (m, row) in ledger.rows.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.t,
            row.half_l2,
            row.grad_sq,
            row.lap_sq,
            row.quartic,
            row.l4_4,
            row.cross_norm,
            row.grad_quartic,
            row.pair_sq,
            row.linf_sq,
            row.cubic_norm_sq,
            ledger.stoch_l2[m],
            ledger.stoch_h1[m],
            ledger.r_int[m]
        )?;
    }
    Ok(())
}

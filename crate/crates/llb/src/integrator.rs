//! Time discretisation of the Galerkin system
//! `du = F(u) dt + sum_k G_k(u) dW_k`.
//!
//! Three schemes:
//!
//! * `em` — Ito Euler-Maruyama on the drift including the Stratonovich
//!   correction;
//! * `heun` — stochastic Heun (midpoint predictor-corrector) on the
//!   Stratonovich drift, no correction term; weakly consistent with `em`;
//! * `imex` — Euler-Maruyama with the stiff `kappa1 Delta` part treated
//!   implicitly per mode, unconditionally stable in the linear part.
//!
//! Explicit schemes get a stability warning (not an error) when
//! `dt * kappa1 * lambda_max > 1`; probing instability is a legitimate use.

use std::io::{Read, Write};
use std::path::Path;

use crate::diagnostics::EnergyLedger;
use crate::error::{Error, Result};
use crate::model::{NoiseBasis, System};
use crate::spectral::{Domain, DomainSpec, SpectralField};
use crate::wiener::{TimeGrid, WienerIncrements};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
    Heun,
    Imex,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "em",
            Scheme::Heun => "heun",
            Scheme::Imex => "imex",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(Scheme::EulerMaruyama),
            "heun" => Ok(Scheme::Heun),
            "imex" => Ok(Scheme::Imex),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected em, heun or imex)"
            ))),
        }
    }

    fn is_explicit_in_laplacian(&self) -> bool {
        !matches!(self, Scheme::Imex)
    }
}

/// What to keep while stepping.
#[derive(Debug, Clone, Copy)]
pub struct RecordSpec {
    /// Keep every `state_stride`-th state (plus the initial and final one).
    pub state_stride: usize,
    /// Record the full energy ledger (needed by the balance residuals).
    pub energy: bool,
}

impl Default for RecordSpec {
    fn default() -> Self {
        RecordSpec {
            state_stride: 1,
            energy: false,
        }
    }
}

/// Cheap per-step scalar norms, kept for every step regardless of stride.
#[derive(Debug, Clone, Default)]
pub struct NormSeries {
    pub l2_sq: Vec<f64>,
    pub h1_sq: Vec<f64>,
    pub h2_sq: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub norms: NormSeries,
    pub ledger: Option<EnergyLedger>,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub path_index: u64,
    pub state_stride: usize,
    pub stability_warning: bool,
    /// Config fingerprint when launched from a run configuration.
    pub provenance: String,
}

impl Trajectory {
    pub fn final_state(&self) -> &SpectralField {
        self.states.last().expect("trajectory has at least u0")
    }
}

/// One Euler-Maruyama step `u + dt F(u) + sum_k G_k(u) dW_k`.
pub fn step_em_ito(sys: &System, u: &SpectralField, dt: f64, dw_row: &[f64]) -> Result<SpectralField> {
    let drift = sys.drift(u)?;
    let noise = sys.noise_sum(u, dw_row)?;
    let mut next = u.clone();
    next.axpy(dt, &drift);
    next.axpy(1.0, &noise);
    Ok(next)
}

/// Stochastic Heun on the Stratonovich form: midpoint predictor-corrector in
/// both drift (without correction) and diffusion.
pub fn step_heun_strat(
    sys: &System,
    u: &SpectralField,
    dt: f64,
    dw_row: &[f64],
) -> Result<SpectralField> {
    let a0 = sys.drift_strat(u)?;
    let g0 = sys.noise_sum(u, dw_row)?;
    let mut predictor = u.clone();
    predictor.axpy(dt, &a0);
    predictor.axpy(1.0, &g0);
    let a1 = sys.drift_strat(&predictor)?;
    let g1 = sys.noise_sum(&predictor, dw_row)?;
    let mut next = u.clone();
    next.axpy(0.5 * dt, &a0);
    next.axpy(0.5 * dt, &a1);
    next.axpy(0.5, &g0);
    next.axpy(0.5, &g1);
    Ok(next)
}

/// Linear-implicit step: the Laplacian is absorbed into a per-mode resolvent,
/// everything else (nonlinear drift, correction, noise) stays explicit:
/// `(1 + dt kappa1 lambda_i) u+_i = u_i + dt (F(u)_i + kappa1 lambda_i u_i) + noise_i`.
pub fn step_imex(sys: &System, u: &SpectralField, dt: f64, dw_row: &[f64]) -> Result<SpectralField> {
    let drift = sys.drift(u)?;
    let noise = sys.noise_sum(u, dw_row)?;
    let n = sys.domain.n_modes();
    let mut next = SpectralField::zeros(n);
    let kappa1 = sys.params.kappa1;
    for comp in 0..3 {
        for i in 0..n {
            let lam = sys.domain.eigenvalue(i);
            let idx = comp * n + i;
            let numer =
                u.coeffs[idx] + dt * (drift.coeffs[idx] + kappa1 * lam * u.coeffs[idx]) + noise.coeffs[idx];
            next.coeffs[idx] = numer / (1.0 + dt * kappa1 * lam);
        }
    }
    Ok(next)
}

pub fn step(
    sys: &System,
    scheme: Scheme,
    u: &SpectralField,
    dt: f64,
    dw_row: &[f64],
) -> Result<SpectralField> {
    match scheme {
        Scheme::EulerMaruyama => step_em_ito(sys, u, dt, dw_row),
        Scheme::Heun => step_heun_strat(sys, u, dt, dw_row),
        Scheme::Imex => step_imex(sys, u, dt, dw_row),
    }
}

/// Integrate one path.  A pure function of its arguments; identical inputs
/// give bitwise-identical trajectories.
pub fn simulate_path(
    sys: &System,
    u0: &SpectralField,
    grid: TimeGrid,
    scheme: Scheme,
    increments: &WienerIncrements,
    record: RecordSpec,
) -> Result<Trajectory> {
    if !u0.is_finite() {
        return Err(Error::Config("initial state has non-finite entries".into()));
    }
    if increments.n_steps != grid.n_steps || increments.k_modes != sys.noise.len() {
        return Err(Error::Dimension(format!(
            "increments shaped {}x{} do not match {} steps x {} noise modes",
            increments.n_steps,
            increments.k_modes,
            grid.n_steps,
            sys.noise.len()
        )));
    }
    let dt = grid.dt();
    let stability_warning = scheme.is_explicit_in_laplacian()
        && dt * sys.params.kappa1 * sys.domain.largest_eigenvalue() > 1.0;

    let stride = record.state_stride.max(1);
    let mut u = u0.clone();
    let mut times = vec![0.0];
    let mut states = vec![u.clone()];
    let mut norms = NormSeries::default();
    push_norms(sys, &u, &mut norms);
    let mut ledger = if record.energy {
        Some(EnergyLedger::start(sys, &u, dt)?)
    } else {
        None
    };

    for m in 0..grid.n_steps {
        let dw = increments.row(m);
        if let Some(ledger) = ledger.as_mut() {
            ledger.advance(sys, &u, dw)?;
        }
        u = step(sys, scheme, &u, dt, dw)?;
        if !u.is_finite() {
            return Err(Error::BlowUp { step: m });
        }
        push_norms(sys, &u, &mut norms);
        if let Some(ledger) = ledger.as_mut() {
            ledger.record_state(sys, &u)?;
        }
        if (m + 1) % stride == 0 || m + 1 == grid.n_steps {
            times.push(grid.time(m + 1));
            states.push(u.clone());
        }
    }

    Ok(Trajectory {
        times,
        states,
        norms,
        ledger,
        grid,
        scheme,
        master_seed: increments.master_seed,
        path_index: increments.path_index,
        state_stride: stride,
        stability_warning,
        provenance: String::new(),
    })
}

fn push_norms(sys: &System, u: &SpectralField, norms: &mut NormSeries) {
    norms.l2_sq.push(sys.domain.l2_norm_sq(u));
    norms.h1_sq.push(sys.domain.h1_norm_sq(u));
    norms.h2_sq.push(sys.domain.h2_norm_sq(u));
}

/// One Galerkin resolution of a coupled run.
pub struct ResolutionRun {
    pub n_per_axis: usize,
    pub system: System,
    pub trajectory: Trajectory,
}

/// Run the same Wiener path through several Galerkin truncations.
///
/// `base` is the resolution `u0` and the noise family live on; each entry of
/// `n_list` is a per-axis mode count.  The noise fields must be fully
/// resolved by every truncation, otherwise the common-noise coupling would
/// silently change the driving field.
pub fn couple_resolutions(
    base: &System,
    u0: &SpectralField,
    grid: TimeGrid,
    scheme: Scheme,
    increments: &WienerIncrements,
    n_list: &[usize],
    record: RecordSpec,
) -> Result<Vec<ResolutionRun>> {
    let mut runs = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let spec = DomainSpec::new(
            base.domain.spec().lengths(),
            &vec![n; base.domain.dimension()],
        )?;
        let domain = Domain::new(spec)?;
        let mut fields = Vec::with_capacity(base.noise.len());
        for k in 0..base.noise.len() {
            let h = base.noise.field(k);
            let projected = base.domain.project_to(h, &domain)?;
            let lost = base.domain.l2_norm_sq(h) - domain.l2_norm_sq(&projected);
            if lost.abs() > 1e-12 * base.domain.l2_norm_sq(h).max(1e-300) {
                return Err(Error::Config(format!(
                    "noise mode {k} is not resolved by the n = {n} truncation"
                )));
            }
            fields.push(projected);
        }
        let noise = NoiseBasis::from_fields(&domain, fields)?;
        let sys_n = System::new(domain, noise, base.params);
        let u0_n = base.domain.project_to(u0, &sys_n.domain)?;
        let trajectory = simulate_path(&sys_n, &u0_n, grid, scheme, increments, record)?;
        runs.push(ResolutionRun {
            n_per_axis: n,
            system: sys_n,
            trajectory,
        });
    }
    Ok(runs)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"LLB1";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialise a trajectory: magic, version, domain, params, stride, then one
/// `time + raw little-endian f64 coefficients` record per snapshot.
pub fn write_checkpoint(path: &Path, sys: &System, traj: &Trajectory) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let spec = sys.domain.spec();
    w.write_all(&(spec.dimension() as u32).to_le_bytes())?;
    for a in 0..spec.dimension() {
        w.write_all(&spec.lengths()[a].to_le_bytes())?;
        w.write_all(&(spec.n_modes()[a] as u32).to_le_bytes())?;
        w.write_all(&(spec.quad_points()[a] as u32).to_le_bytes())?;
    }
    let p = &sys.params;
    for v in [p.kappa1, p.kappa2, p.gamma, p.mu] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[u8::from(p.strat_gamma)])?;
    w.write_all(&(traj.state_stride as u32).to_le_bytes())?;
    w.write_all(&(traj.states.len() as u32).to_le_bytes())?;
    w.write_all(&(sys.domain.n_modes() as u32).to_le_bytes())?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        w.write_all(&t.to_le_bytes())?;
        for c in &s.coeffs {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct Checkpoint {
    pub spec: DomainSpec,
    pub kappa1: f64,
    pub kappa2: f64,
    pub gamma: f64,
    pub mu: f64,
    pub strat_gamma: bool,
    pub stride: usize,
    pub snapshots: Vec<(f64, SpectralField)>,
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Config("not a trajectory checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let dim = read_u32(&mut r)? as usize;
    let mut lengths = Vec::with_capacity(dim);
    let mut n_modes = Vec::with_capacity(dim);
    let mut quad = Vec::with_capacity(dim);
    for _ in 0..dim {
        lengths.push(read_f64(&mut r)?);
        n_modes.push(read_u32(&mut r)? as usize);
        quad.push(read_u32(&mut r)? as usize);
    }
    let spec = DomainSpec::with_quad(&lengths, &n_modes, &quad)?;
    let kappa1 = read_f64(&mut r)?;
    let kappa2 = read_f64(&mut r)?;
    let gamma = read_f64(&mut r)?;
    let mu = read_f64(&mut r)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let stride = read_u32(&mut r)? as usize;
    let n_snapshots = read_u32(&mut r)? as usize;
    let n_total = read_u32(&mut r)? as usize;
    let mut snapshots = Vec::with_capacity(n_snapshots);
    for _ in 0..n_snapshots {
        let t = read_f64(&mut r)?;
        let mut field = SpectralField::zeros(n_total);
        for c in field.coeffs.iter_mut() {
            *c = read_f64(&mut r)?;
        }
        snapshots.push((t, field));
    }
    Ok(Checkpoint {
        spec,
        kappa1,
        kappa2,
        gamma,
        mu,
        strat_gamma: flag[0] != 0,
        stride,
        snapshots,
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::spectral::DomainSpec;
    use std::f64::consts::PI;

    fn system_1d(n: usize, k_noise: usize, params: ModelParams) -> System {
        let dom = Domain::new(DomainSpec::new_1d(1.0, n).unwrap()).unwrap();
        let nb = if k_noise == 0 {
            NoiseBasis::empty()
        } else {
            NoiseBasis::default_family(&dom, k_noise, 0.1, 2.0).unwrap()
        };
        System::new(dom, nb, params)
    }

    /// Closed form for the constant-field decay `dy/dt = -kappa2 (1 + mu y^2) y`
    /// in the squared norm `z = y^2`:
    /// `z(t) = z0 e^(-2 kappa2 t) / (1 + mu z0 (1 - e^(-2 kappa2 t)))`.
    fn logistic_sq_norm(z0: f64, kappa2: f64, mu: f64, t: f64) -> f64 {
        let e = (-2.0 * kappa2 * t).exp();
        z0 * e / (1.0 + mu * z0 * (1.0 - e))
    }

    #[test]
    fn zero_state_with_resolved_noise_stays_zero_on_zero_increments() {
        let sys = system_1d(8, 3, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let w = WienerIncrements::zeros(grid, 3);
        let traj = simulate_path(
            &sys,
            &sys.domain.zero_field(),
            grid,
            Scheme::EulerMaruyama,
            &w,
            RecordSpec::default(),
        )
        .unwrap();
        for s in &traj.states {
            assert!(s.coeffs.iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn single_mode_linear_decay_step() {
        // kappa2 = 0 kills f3; u = e1 is parallel to its Laplacian so f2 = 0.
        let sys = system_1d(8, 0, ModelParams::unchecked(1.0, 0.0, 0.7, 1.0));
        let dt = 1e-3;
        let mut u = sys.domain.zero_field();
        u.set(0, 1, 1.0);
        let next = step_em_ito(&sys, &u, dt, &[]).unwrap();
        assert!((next.get(0, 1) - (1.0 - PI * PI * dt)).abs() < 1e-12);
    }

    #[test]
    fn em_converges_to_logistic_oracle() {
        let sys = system_1d(4, 0, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 0, 1.0);
        let expect = logistic_sq_norm(1.0, 1.0, 1.0, 1.0);
        assert!((expect - 0.07258).abs() < 5e-6);

        let mut prev_err = f64::INFINITY;
        for n_steps in [100, 200, 400] {
            let grid = TimeGrid::new(1.0, n_steps).unwrap();
            let w = WienerIncrements::zeros(grid, 0);
            let traj = simulate_path(
                &sys,
                &u0,
                grid,
                Scheme::EulerMaruyama,
                &w,
                RecordSpec::default(),
            )
            .unwrap();
            let got = sys.domain.l2_norm_sq(traj.final_state());
            let err = (got - expect).abs();
            assert!(err < prev_err, "EM error must shrink: {prev_err} -> {err}");
            prev_err = err;
        }
    }

    #[test]
    fn heun_is_second_order_on_logistic() {
        let sys = system_1d(4, 0, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 0, 1.0);
        let expect = logistic_sq_norm(1.0, 1.0, 1.0, 1.0);
        let run = |n_steps: usize| {
            let grid = TimeGrid::new(1.0, n_steps).unwrap();
            let w = WienerIncrements::zeros(grid, 0);
            let traj =
                simulate_path(&sys, &u0, grid, Scheme::Heun, &w, RecordSpec::default()).unwrap();
            (sys.domain.l2_norm_sq(traj.final_state()) - expect).abs()
        };
        let e1 = run(100);
        let e2 = run(200);
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "Heun observed order {order}");
    }

    #[test]
    fn heun_at_zero_state_matches_em_additive_structure() {
        // At u = 0 with constant-in-space noise both schemes produce the
        // additive kick kappa1 sum_k h_k dW_k plus O(dt) terms.
        let dom = Domain::new(DomainSpec::new_1d(1.0, 6).unwrap()).unwrap();
        let mut h = dom.zero_field();
        h.set(2, 0, 0.8);
        let nb = NoiseBasis::from_fields(&dom, vec![h]).unwrap();
        let sys = System::new(dom, nb, ModelParams::new(1.3, 1.0, 1.0, 1.0).unwrap());
        let dt = 1e-4;
        let dw = [0.02];
        let zero = sys.domain.zero_field();
        let em = step_em_ito(&sys, &zero, dt, &dw).unwrap();
        let heun = step_heun_strat(&sys, &zero, dt, &dw).unwrap();
        let mut diff = em.clone();
        diff.axpy(-1.0, &heun);
        // difference is O(dt*dW + dt^2)
        assert!(diff.norm_l2() < 10.0 * (dt * dw[0].abs() + dt * dt));
        assert!((em.get(2, 0) - 1.3 * 0.8 * 0.02 - dt * em_drift_mode0(&sys)).abs() < 1e-12);
    }

    fn em_drift_mode0(sys: &System) -> f64 {
        // drift z-component at u = 0: only -kappa2*0 and the correction
        // (gamma/2) sum (kappa1 h x h) = 0 survive, i.e. zero: keep for clarity.
        let zero = sys.domain.zero_field();
        sys.drift(&zero).unwrap().get(2, 0)
    }

    #[test]
    fn imex_resolvent_examples() {
        let sys = system_1d(8, 0, ModelParams::unchecked(1.0, 0.0, 0.4, 1.0));
        let dt = 0.01;
        let mut u = sys.domain.zero_field();
        u.set(0, 1, 1.0);
        let next = step_imex(&sys, &u, dt, &[]).unwrap();
        assert!((next.get(0, 1) - 1.0 / (1.0 + PI * PI * dt)).abs() < 1e-12);

        // constant field: resolvent is the identity on mode 0, so IMEX == EM
        let sys = system_1d(8, 0, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let mut c = sys.domain.zero_field();
        c.set(0, 0, 0.9);
        let a = step_imex(&sys, &c, dt, &[]).unwrap();
        let b = step_em_ito(&sys, &c, dt, &[]).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn imex_agrees_with_em_at_second_order_per_step() {
        let sys = system_1d(8, 2, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let mut u = sys.domain.zero_field();
        u.set(0, 1, 0.5);
        u.set(1, 2, -0.2);
        let dw = [0.0, 0.0];
        let err_at = |dt: f64| {
            let a = step_imex(&sys, &u, dt, &dw).unwrap();
            let b = step_em_ito(&sys, &u, dt, &dw).unwrap();
            let mut d = a;
            d.axpy(-1.0, &b);
            d.norm_l2()
        };
        let e1 = err_at(1e-3);
        let e2 = err_at(5e-4);
        let order = (e1 / e2).log2();
        assert!(order > 1.9, "per-step agreement order {order}");
    }

    #[test]
    fn trajectories_are_bitwise_reproducible() {
        let sys = system_1d(8, 4, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let grid = TimeGrid::new(0.2, 50).unwrap();
        let w = WienerIncrements::sample(99, 5, grid, 4);
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 0.3);
        let run = || {
            simulate_path(&sys, &u0, grid, Scheme::Heun, &w, RecordSpec::default()).unwrap()
        };
        let a = run();
        let b = run();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.coeffs, sb.coeffs);
        }
    }

    #[test]
    fn stability_warning_flags_large_steps() {
        let sys = system_1d(32, 0, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let grid = TimeGrid::new(1.0, 100).unwrap(); // dt = 0.01, lambda_max ~ 9477
        let w = WienerIncrements::zeros(grid, 0);
        let traj = simulate_path(
            &sys,
            &sys.domain.zero_field(),
            grid,
            Scheme::EulerMaruyama,
            &w,
            RecordSpec::default(),
        )
        .unwrap();
        assert!(traj.stability_warning);
        let traj = simulate_path(
            &sys,
            &sys.domain.zero_field(),
            grid,
            Scheme::Imex,
            &w,
            RecordSpec::default(),
        )
        .unwrap();
        assert!(!traj.stability_warning);
    }

    #[test]
    fn blow_up_reports_step_index() {
        // Explicit EM on a stiff mode with a huge dt diverges quickly.
        let sys = system_1d(32, 0, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let grid = TimeGrid::new(10.0, 10).unwrap();
        let w = WienerIncrements::zeros(grid, 0);
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 31, 1.0);
        match simulate_path(&sys, &u0, grid, Scheme::EulerMaruyama, &w, RecordSpec::default()) {
            Err(Error::BlowUp { step }) => assert!(step < 10),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn coupled_resolutions_agree_on_resolved_linear_dynamics() {
        // Pure heat flow on e1 stays in span{e1}; every truncation >= 2
        // produces the same trajectory.
        let sys = system_1d(16, 0, ModelParams::unchecked(1.0, 0.0, 0.0, 0.0));
        let grid = TimeGrid::new(0.1, 20).unwrap();
        let w = WienerIncrements::zeros(grid, 0);
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 1.0);
        let runs = couple_resolutions(
            &sys,
            &u0,
            grid,
            Scheme::EulerMaruyama,
            &w,
            &[2, 4, 8],
            RecordSpec::default(),
        )
        .unwrap();
        let reference = &runs[0];
        for run in &runs[1..] {
            for (a, b) in reference
                .trajectory
                .states
                .iter()
                .zip(&run.trajectory.states)
            {
                assert!((a.get(0, 1) - b.get(0, 1)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coupled_single_resolution_matches_direct_run() {
        let sys = system_1d(8, 2, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let w = WienerIncrements::sample(3, 0, grid, 2);
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 0.4);
        let direct =
            simulate_path(&sys, &u0, grid, Scheme::Heun, &w, RecordSpec::default()).unwrap();
        let runs =
            couple_resolutions(&sys, &u0, grid, Scheme::Heun, &w, &[8], RecordSpec::default())
                .unwrap();
        for (a, b) in direct.states.iter().zip(&runs[0].trajectory.states) {
            assert_eq!(a.coeffs, b.coeffs);
        }
    }

    #[test]
    fn coupling_rejects_unresolved_noise() {
        let sys = system_1d(16, 6, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let w = WienerIncrements::sample(3, 0, grid, 6);
        let u0 = sys.domain.zero_field();
        // n = 4 resolves only modes 0..3 but the family uses modes 1..6
        let res = couple_resolutions(
            &sys,
            &u0,
            grid,
            Scheme::EulerMaruyama,
            &w,
            &[4],
            RecordSpec::default(),
        );
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn em_strong_order_on_constant_field_sde() {
        // Constant-in-space SDE: h = (0,0,b) on mode 0 gives additive +
        // multiplicative noise while the state stays on mode 0.  Strong error
        // against a dt/64 reference on the same refined path decays with
        // observed order >= 0.4.
        let dom = Domain::new(DomainSpec::new_1d(1.0, 4).unwrap()).unwrap();
        let mut h = dom.zero_field();
        h.set(2, 0, 0.5);
        let nb = NoiseBasis::from_fields(&dom, vec![h]).unwrap();
        let sys = System::new(dom, nb, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 0, 1.0);

        let n_paths = 40;
        let base = TimeGrid::new(0.5, 32).unwrap();
        let mut errs = [0.0f64; 3]; // dt, dt/2, dt/4
        for path in 0..n_paths {
            let w0 = WienerIncrements::sample(1234, path, base, 1);
            let w_ref = w0.refined_by(6);
            let grid_ref = TimeGrid::new(0.5, base.n_steps << 6).unwrap();
            let reference = simulate_path(
                &sys,
                &u0,
                grid_ref,
                Scheme::EulerMaruyama,
                &w_ref,
                RecordSpec::default(),
            )
            .unwrap();
            let target = reference.final_state().clone();
            for (lvl, err) in errs.iter_mut().enumerate() {
                let w = w0.refined_by(lvl as u32);
                let grid = TimeGrid::new(0.5, base.n_steps << lvl).unwrap();
                let traj = simulate_path(
                    &sys,
                    &u0,
                    grid,
                    Scheme::EulerMaruyama,
                    &w,
                    RecordSpec::default(),
                )
                .unwrap();
                let mut d = traj.final_state().clone();
                d.axpy(-1.0, &target);
                *err += d.norm_l2() * d.norm_l2();
            }
        }
        let rms: Vec<f64> = errs.iter().map(|e| (e / n_paths as f64).sqrt()).collect();
        let order = (rms[0] / rms[2]).log2() / 2.0;
        assert!(
            order >= 0.4,
            "EM strong order {order}, rms errors {rms:?}"
        );
    }

    #[test]
    fn heun_and_em_agree_weakly_under_common_increments() {
        // Common increments give an accurate estimate of the difference
        // E|u_heun(T)|^2 - E|u_em(T)|^2; weak consistency means it sits
        // below the Monte Carlo resolution of the weak quantity itself.
        let sys = system_1d(8, 4, ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        let mut u0 = sys.domain.zero_field();
        u0.set(0, 1, 0.5);
        u0.set(1, 0, 0.3);
        let grid = TimeGrid::new(0.25, 250).unwrap();
        let mut diff = crate::diagnostics::MeanAcc::default();
        let mut weak = crate::diagnostics::MeanAcc::default();
        for path in 0..64 {
            let w = WienerIncrements::sample(550, path, grid, 4);
            let em = simulate_path(&sys, &u0, grid, Scheme::EulerMaruyama, &w, RecordSpec::default())
                .unwrap();
            let heun =
                simulate_path(&sys, &u0, grid, Scheme::Heun, &w, RecordSpec::default()).unwrap();
            let em_sq = sys.domain.l2_norm_sq(em.final_state());
            diff.push(sys.domain.l2_norm_sq(heun.final_state()) - em_sq);
            weak.push(em_sq);
        }
        assert!(
            diff.mean().abs() <= 3.0 * weak.std_error(),
            "weak disagreement: {} vs MC resolution {}",
            diff.mean(),
            weak.std_error()
        );
    }

    #[test]
    fn checkpoint_roundtrip() {
        let sys = system_1d(6, 2, ModelParams::new(1.0, 0.5, 1.2, 0.9).unwrap());
        let grid = TimeGrid::new(0.1, 8).unwrap();
        let w = WienerIncrements::sample(21, 1, grid, 2);
        let mut u0 = sys.domain.zero_field();
        u0.set(1, 3, -0.6);
        let traj = simulate_path(
            &sys,
            &u0,
            grid,
            Scheme::Heun,
            &w,
            RecordSpec {
                state_stride: 2,
                energy: false,
            },
        )
        .unwrap();
        let dir = std::env::temp_dir().join("llb_checkpoint_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.llb1");
        write_checkpoint(&path, &sys, &traj).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.spec, sys.domain.spec().clone());
        assert_eq!(back.stride, 2);
        assert_eq!(back.snapshots.len(), traj.states.len());
        for ((t, s), (tt, ss)) in back.snapshots.iter().zip(traj.times.iter().zip(&traj.states)) {
            assert_eq!(t, tt);
            assert_eq!(&s.coeffs, &ss.coeffs);
        }
        assert!((back.gamma - 1.2).abs() < 1e-15);
        std::fs::remove_dir_all(&dir).ok();
    }
}

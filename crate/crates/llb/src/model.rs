//! The stochastic Landau-Lifshitz-Bloch right-hand side in Galerkin form.
//!
//! With A the negative Neumann Laplacian and Pi_n the projection onto the
//! resolved span, the Ito drift splits into
//!
//! ```text
//! F(u) = kappa1 * Delta u                      (f1)
//!      + gamma  * Pi_n(u x Delta u)            (f2)
//!      - kappa2 * Pi_n((1 + mu |u|^2) u)       (f3)
//!      + (gamma/2) * sum_k Pi_n(G_k(u) x h_k)  (Stratonovich correction)
//! ```
//!
//! where `G_k(u) = Pi_n(gamma u x h_k + kappa1 h_k)` is the noise operator
//! per Wiener mode.  The correction carries the chain-rule factor gamma; set
//! [`ModelParams::strat_gamma`] to `false` to drop it and reproduce the
//! alternative convention.
//!
//! Every noise field h_k lives in the resolved span, so `Pi_n h_k = h_k` and
//! the additive part of the noise is identical across Galerkin resolutions.

use crate::error::{Error, Result};
use crate::spectral::{Domain, PhysicalField, SpectralField};

/// Effective coefficients of the above-Curie model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub gamma: f64,
    pub mu: f64,
    /// Include the chain-rule gamma factor in the Stratonovich correction.
    pub strat_gamma: bool,
}

impl ModelParams {
    pub fn new(kappa1: f64, kappa2: f64, gamma: f64, mu: f64) -> Result<Self> {
        for (name, v) in [
            ("kappa1", kappa1),
            ("kappa2", kappa2),
            ("gamma", gamma),
            ("mu", mu),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "model coefficient {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(ModelParams {
            kappa1,
            kappa2,
            gamma,
            mu,
            strat_gamma: true,
        })
    }

    /// Derive kappa2 = kappa1/chi and mu = 3T/(5(T - Tc)) from raw inputs.
    pub fn from_temperature(
        kappa1: f64,
        gamma: f64,
        temperature: f64,
        curie_temperature: f64,
        chi_parallel: f64,
    ) -> Result<Self> {
        if curie_temperature <= 0.0 || !curie_temperature.is_finite() {
            return Err(Error::Regime(format!(
                "Curie temperature must be positive, got {curie_temperature}"
            )));
        }
        if temperature <= curie_temperature {
            return Err(Error::Regime(format!(
                "above-Curie model only: requires T > Tc, got T = {temperature}, Tc = {curie_temperature}"
            )));
        }
        if chi_parallel <= 0.0 || !chi_parallel.is_finite() {
            return Err(Error::Config(format!(
                "chi_parallel must be positive, got {chi_parallel}"
            )));
        }
        let kappa2 = kappa1 / chi_parallel;
        let mu = 3.0 * temperature / (5.0 * (temperature - curie_temperature));
        ModelParams::new(kappa1, kappa2, gamma, mu)
    }

    /// Coefficients without the positivity check, for reduced regimes such as
    /// pure heat flow (gamma = kappa2 = 0) used as closed-form oracles.
    pub fn unchecked(kappa1: f64, kappa2: f64, gamma: f64, mu: f64) -> Self {
        ModelParams {
            kappa1,
            kappa2,
            gamma,
            mu,
            strat_gamma: true,
        }
    }

    fn strat_coefficient(&self) -> f64 {
        if self.strat_gamma {
            self.gamma
        } else {
            1.0
        }
    }
}

/// The family {h_k} with its W^{1,inf} bound ledger.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    fields: Vec<SpectralField>,
    phys: Vec<PhysicalField>,
    /// Per k, per axis: grid values of the partial derivative of h_k.
    grads: Vec<Vec<PhysicalField>>,
    w1inf_sq: Vec<f64>,
    l2_sq: Vec<f64>,
    total_bound: f64,
}

impl NoiseBasis {
    pub fn empty() -> Self {
        NoiseBasis {
            fields: Vec::new(),
            phys: Vec::new(),
            grads: Vec::new(),
            w1inf_sq: Vec::new(),
            l2_sq: Vec::new(),
            total_bound: 0.0,
        }
    }

    /// Wrap explicit spectral fields; the ledger is filled by grid evaluation.
    pub fn from_fields(domain: &Domain, fields: Vec<SpectralField>) -> Result<Self> {
        let mut phys = Vec::with_capacity(fields.len());
        let mut grads = Vec::with_capacity(fields.len());
        let mut w1inf_sq = Vec::with_capacity(fields.len());
        let mut l2_sq = Vec::with_capacity(fields.len());
        for h in &fields {
            if !h.is_finite() {
                return Err(Error::Config("noise field with non-finite entries".into()));
            }
            let p = domain.synthesize(h)?;
            let mut axis_grads = Vec::with_capacity(domain.dimension());
            for a in 0..domain.dimension() {
                axis_grads.push(domain.synthesize_grad(h, a)?);
            }
            let sup = domain.linf_norm(&p);
            let grad_sup = grad_linf(domain, &axis_grads);
            let w1inf = sup + grad_sup;
            w1inf_sq.push(w1inf * w1inf);
            l2_sq.push(domain.l2_norm_sq(h));
            phys.push(p);
            grads.push(axis_grads);
        }
        let total_bound = w1inf_sq.iter().sum();
        Ok(NoiseBasis {
            fields,
            phys,
            grads,
            w1inf_sq,
            l2_sq,
            total_bound,
        })
    }

    /// Default spectral family `h_k = a k^-s e_k` with the component cycling
    /// through x, y, z.  `decay > 1.5` keeps the W^{1,inf} ledger summable as
    /// the family grows.
    pub fn default_family(domain: &Domain, count: usize, amplitude: f64, decay: f64) -> Result<Self> {
        if count > 0 && decay <= 1.5 {
            return Err(Error::Summability(format!(
                "noise decay s = {decay} too slow: sum_k |h_k|^2_W1inf diverges unless s > 1.5"
            )));
        }
        if count + 1 > domain.n_modes() {
            return Err(Error::Config(format!(
                "noise family of size {count} needs mode {count} but the truncation has only {} modes",
                domain.n_modes()
            )));
        }
        let mut fields = Vec::with_capacity(count);
        for k in 1..=count {
            let mut h = domain.zero_field();
            let comp = (k - 1) % 3;
            h.set(comp, k, amplitude * (k as f64).powf(-decay));
            fields.push(h);
        }
        NoiseBasis::from_fields(domain, fields)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, k: usize) -> &SpectralField {
        &self.fields[k]
    }

    pub fn physical(&self, k: usize) -> &PhysicalField {
        &self.phys[k]
    }

    pub fn grad_physical(&self, k: usize) -> &[PhysicalField] {
        &self.grads[k]
    }

    /// `|h_k|^2_{W^{1,inf}}` from grid maxima.
    pub fn w1inf_sq(&self, k: usize) -> f64 {
        self.w1inf_sq[k]
    }

    pub fn l2_sq(&self, k: usize) -> f64 {
        self.l2_sq[k]
    }

    /// `sum_k |h_k|^2_L2`, the additive constant in the L2 energy balance.
    pub fn sum_l2_sq(&self) -> f64 {
        self.l2_sq.iter().sum()
    }

    pub fn total_bound(&self) -> f64 {
        self.total_bound
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.fields.len() {
            return Err(Error::Index(format!(
                "noise index {k} out of range, family has {} fields",
                self.fields.len()
            )));
        }
        Ok(())
    }
}

fn grad_linf(domain: &Domain, axis_grads: &[PhysicalField]) -> f64 {
    let m = domain.n_points();
    let mut best: f64 = 0.0;
    for j in 0..m {
        let mut s = 0.0;
        for g in axis_grads {
            let v = g.at(j);
            s += v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        }
        if s > best {
            best = s;
        }
    }
    best.sqrt()
}

#[inline]
pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// out = a x b pointwise over the grid.
fn cross_fields(out: &mut PhysicalField, a: &PhysicalField, b: &PhysicalField) {
    let (ax, ay, az) = a.comps();
    let (bx, by, bz) = b.comps();
    let (ox, oy, oz) = out.comps_mut();
    for j in 0..ox.len() {
        ox[j] = ay[j] * bz[j] - az[j] * by[j];
        oy[j] = az[j] * bx[j] - ax[j] * bz[j];
        oz[j] = ax[j] * by[j] - ay[j] * bx[j];
    }
}

/// out += a x b pointwise over the grid.
fn cross_fields_add(out: &mut PhysicalField, a: &PhysicalField, b: &PhysicalField) {
    let (ax, ay, az) = a.comps();
    let (bx, by, bz) = b.comps();
    let (ox, oy, oz) = out.comps_mut();
    for j in 0..ox.len() {
        ox[j] += ay[j] * bz[j] - az[j] * by[j];
        oy[j] += az[j] * bx[j] - ax[j] * bz[j];
        oz[j] += ax[j] * by[j] - ay[j] * bx[j];
    }
}

/// The four pieces of the Ito drift and their exact weighted sum.
#[derive(Debug, Clone)]
pub struct DriftBreakdown {
    pub f1: SpectralField,
    pub f2: SpectralField,
    pub f3: SpectralField,
    pub strat_correction: SpectralField,
    pub total: SpectralField,
}

/// `Pi_n(u x Delta u)` by dealiased pointwise cross product.
pub fn f2_cross_term(domain: &Domain, u: &SpectralField) -> Result<SpectralField> {
    let pu = domain.synthesize(u)?;
    f2_cross_term_with(domain, u, &pu)
}

fn f2_cross_term_with(
    domain: &Domain,
    u: &SpectralField,
    pu: &PhysicalField,
) -> Result<SpectralField> {
    let lap = domain.laplacian(u)?;
    let pl = domain.synthesize(&lap)?;
    let mut out = PhysicalField::zeros(domain.n_points());
    cross_fields(&mut out, pu, &pl);
    domain.analyze(&out)
}

/// `Pi_n((1 + mu |u|^2) u)` by dealiased evaluation.
pub fn f3_cubic_term(domain: &Domain, u: &SpectralField, mu: f64) -> Result<SpectralField> {
    let pu = domain.synthesize(u)?;
    f3_cubic_term_with(domain, &pu, mu)
}

fn f3_cubic_term_with(domain: &Domain, pu: &PhysicalField, mu: f64) -> Result<SpectralField> {
    let mut out = PhysicalField::zeros(domain.n_points());
    {
        let (ux, uy, uz) = pu.comps();
        let (ox, oy, oz) = out.comps_mut();
        for j in 0..ox.len() {
            let w = 1.0 + mu * (ux[j] * ux[j] + uy[j] * uy[j] + uz[j] * uz[j]);
            ox[j] = w * ux[j];
            oy[j] = w * uy[j];
            oz[j] = w * uz[j];
        }
    }
    domain.analyze(&out)
}

/// `G_k(u) = Pi_n(gamma u x h_k + kappa1 h_k)`.
pub fn noise_operator(
    domain: &Domain,
    u: &SpectralField,
    k: usize,
    noise: &NoiseBasis,
    params: &ModelParams,
) -> Result<SpectralField> {
    noise.check_index(k)?;
    let pu = domain.synthesize(u)?;
    noise_operator_phys(domain, &pu, k, noise, params)
}

/// `G_k` evaluated from a pre-synthesised state; shared with diagnostics.
pub(crate) fn noise_operator_phys(
    domain: &Domain,
    pu: &PhysicalField,
    k: usize,
    noise: &NoiseBasis,
    params: &ModelParams,
) -> Result<SpectralField> {
    let ph = noise.physical(k);
    let mut out = PhysicalField::zeros(domain.n_points());
    cross_fields(&mut out, pu, ph);
    let mut g = domain.analyze(&out)?;
    g.scale(params.gamma);
    g.axpy(params.kappa1, noise.field(k));
    Ok(g)
}

/// `(gamma/2) sum_k Pi_n(G_k(u) x h_k)`; the gamma factor follows the chain
/// rule of `v -> Pi_n(gamma v x h_k)` and is controlled by `strat_gamma`.
pub fn strat_correction(
    domain: &Domain,
    u: &SpectralField,
    noise: &NoiseBasis,
    params: &ModelParams,
) -> Result<SpectralField> {
    let pu = domain.synthesize(u)?;
    strat_correction_with(domain, &pu, noise, params)
}

fn strat_correction_with(
    domain: &Domain,
    pu: &PhysicalField,
    noise: &NoiseBasis,
    params: &ModelParams,
) -> Result<SpectralField> {
    if noise.is_empty() {
        return Ok(domain.zero_field());
    }
    let mut acc = PhysicalField::zeros(domain.n_points());
    for k in 0..noise.len() {
        let g = noise_operator_phys(domain, pu, k, noise, params)?;
        let pg = domain.synthesize(&g)?;
        cross_fields_add(&mut acc, &pg, noise.physical(k));
    }
    let mut out = domain.analyze(&acc)?;
    out.scale(0.5 * params.strat_coefficient());
    Ok(out)
}

/// Assemble the Ito drift; `total` is the exact linear combination of parts.
pub fn drift_ito(
    domain: &Domain,
    u: &SpectralField,
    noise: &NoiseBasis,
    params: &ModelParams,
) -> Result<DriftBreakdown> {
    let pu = domain.synthesize(u)?;
    drift_ito_with(domain, u, &pu, noise, params)
}

fn drift_ito_with(
    domain: &Domain,
    u: &SpectralField,
    pu: &PhysicalField,
    noise: &NoiseBasis,
    params: &ModelParams,
) -> Result<DriftBreakdown> {
    let f1 = domain.laplacian(u)?;
    let f2 = f2_cross_term_with(domain, u, pu)?;
    let f3 = f3_cubic_term_with(domain, pu, params.mu)?;
    let strat = strat_correction_with(domain, pu, noise, params)?;
    let total = combine_drift(&f1, &f2, &f3, &strat, params);
    Ok(DriftBreakdown {
        f1,
        f2,
        f3,
        strat_correction: strat,
        total,
    })
}

/// `kappa1 f1 + gamma f2 - kappa2 f3 + strat`, fused so the additivity
/// contract is bit-for-bit.
pub fn combine_drift(
    f1: &SpectralField,
    f2: &SpectralField,
    f3: &SpectralField,
    strat: &SpectralField,
    params: &ModelParams,
) -> SpectralField {
    let mut total = SpectralField::zeros(f1.n_modes());
    for i in 0..total.coeffs.len() {
        total.coeffs[i] = params.kappa1 * f1.coeffs[i] + params.gamma * f2.coeffs[i]
            - params.kappa2 * f3.coeffs[i]
            + strat.coeffs[i];
    }
    total
}

/// Shared read-only bundle for one resolution: domain, noise family, params.
#[derive(Debug, Clone)]
pub struct System {
    pub domain: Domain,
    pub noise: NoiseBasis,
    pub params: ModelParams,
}

impl System {
    pub fn new(domain: Domain, noise: NoiseBasis, params: ModelParams) -> Self {
        System {
            domain,
            noise,
            params,
        }
    }

    /// Full Ito drift.
    pub fn drift(&self, u: &SpectralField) -> Result<SpectralField> {
        Ok(self.drift_breakdown(u)?.total)
    }

    pub fn drift_breakdown(&self, u: &SpectralField) -> Result<DriftBreakdown> {
        let pu = self.domain.synthesize(u)?;
        drift_ito_with(&self.domain, u, &pu, &self.noise, &self.params)
    }

    /// Stratonovich drift (no correction term), for the Heun scheme.
    pub fn drift_strat(&self, u: &SpectralField) -> Result<SpectralField> {
        let pu = self.domain.synthesize(u)?;
        let f1 = self.domain.laplacian(u)?;
        let f2 = f2_cross_term_with(&self.domain, u, &pu)?;
        let f3 = f3_cubic_term_with(&self.domain, &pu, self.params.mu)?;
        let zero = self.domain.zero_field();
        Ok(combine_drift(&f1, &f2, &f3, &zero, &self.params))
    }

    /// `sum_k G_k(u) dW_k`, collapsed over k through bilinearity:
    /// `gamma Pi_n(u x sum_k dW_k h_k) + kappa1 sum_k dW_k h_k`.
    pub fn noise_sum(&self, u: &SpectralField, dw_row: &[f64]) -> Result<SpectralField> {
        if dw_row.len() != self.noise.len() {
            return Err(Error::Dimension(format!(
                "increment row has {} entries, noise family has {}",
                dw_row.len(),
                self.noise.len()
            )));
        }
        if self.noise.is_empty() {
            return Ok(self.domain.zero_field());
        }
        let m = self.domain.n_points();
        let mut h_sum_phys = PhysicalField::zeros(m);
        let mut h_sum_spec = self.domain.zero_field();
        for (k, &dw) in dw_row.iter().enumerate() {
            for (a, b) in h_sum_phys.values.iter_mut().zip(&self.noise.physical(k).values) {
                *a += dw * b;
            }
            h_sum_spec.axpy(dw, self.noise.field(k));
        }
        let pu = self.domain.synthesize(u)?;
        let mut crossed = PhysicalField::zeros(m);
        cross_fields(&mut crossed, &pu, &h_sum_phys);
        let mut out = self.domain.analyze(&crossed)?;
        out.scale(self.params.gamma);
        out.axpy(self.params.kappa1, &h_sum_spec);
        Ok(out)
    }
}

//! Neumann cosine eigenbasis on a 1-d interval or 2-d rectangle, with the
//! forward/inverse transforms, differential operators and Sobolev norms that
//! everything else is built on.
//!
//! The negative Neumann Laplacian on a box has the explicit orthonormal
//! eigenbasis of tensor cosines,
//!
//! ```text
//! phi_0(x) = sqrt(1/L),   phi_k(x) = sqrt(2/L) cos(k pi x / L),   lambda_k = (k pi / L)^2,
//! ```
//!
//! and the Galerkin space S_n is the span of the first n of them in a flat
//! ordering sorted by eigenvalue.  Nonlinear terms are evaluated on a midpoint
//! quadrature grid with at least `2*n_modes + 1` points per axis, which makes
//! the midpoint rule exact for every product of up to four resolved cosine
//! factors: projections of cubic nonlinearities are then true L2 projections
//! up to round-off, so the discrete energy identities close exactly.

use crate::error::{Error, Result};

const MAX_DIM: usize = 2;

/// Geometry and resolution of the simulation box.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    lengths: Vec<f64>,
    n_modes: Vec<usize>,
    quad_points: Vec<usize>,
}

impl DomainSpec {
    /// Box with the default dealiased grid (`2N+1` points per axis).
    pub fn new(lengths: &[f64], n_modes: &[usize]) -> Result<Self> {
        let quad: Vec<usize> = n_modes.iter().map(|&n| 2 * n + 1).collect();
        Self::with_quad(lengths, n_modes, &quad)
    }

    pub fn new_1d(length: f64, n_modes: usize) -> Result<Self> {
        Self::new(&[length], &[n_modes])
    }

    pub fn new_2d(lengths: [f64; 2], n_modes: [usize; 2]) -> Result<Self> {
        Self::new(&lengths, &n_modes)
    }

    /// Explicit quadrature resolution; must satisfy `quad >= 2*n_modes + 1`
    /// per axis so cubic nonlinearities project exactly.
    pub fn with_quad(lengths: &[f64], n_modes: &[usize], quad_points: &[usize]) -> Result<Self> {
        let d = lengths.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Unsupported(format!(
                "dimension must be 1 or 2, got {d}"
            )));
        }
        if n_modes.len() != d || quad_points.len() != d {
            return Err(Error::Config(format!(
                "per-axis lists disagree: {} lengths, {} n_modes, {} quad_points",
                d,
                n_modes.len(),
                quad_points.len()
            )));
        }
        for &l in lengths {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("axis length must be positive, got {l}")));
            }
        }
        for &n in n_modes {
            if n < 1 {
                return Err(Error::Config("n_modes must be >= 1 per axis".into()));
            }
        }
        for (&m, &n) in quad_points.iter().zip(n_modes) {
            if m < 2 * n + 1 {
                return Err(Error::Config(format!(
                    "quad_points {m} too small for n_modes {n}: need >= {} for cubic dealiasing",
                    2 * n + 1
                )));
            }
        }
        Ok(DomainSpec {
            lengths: lengths.to_vec(),
            n_modes: n_modes.to_vec(),
            quad_points: quad_points.to_vec(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn n_modes(&self) -> &[usize] {
        &self.n_modes
    }

    pub fn quad_points(&self) -> &[usize] {
        &self.quad_points
    }

    pub fn total_modes(&self) -> usize {
        self.n_modes.iter().product()
    }

    pub fn total_quad(&self) -> usize {
        self.quad_points.iter().product()
    }
}

/// Eigenvalues and mode bookkeeping for the tensor cosine basis.
///
/// Flat ordering: sorted by eigenvalue, ties broken lexicographically by
/// multi-index, so truncation is deterministic and independent of axis order.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    multi_indices: Vec<[usize; 2]>,
    flat_of_tensor: Vec<usize>,
}

impl EigenBasis {
    fn build(spec: &DomainSpec) -> Self {
        let d = spec.dimension();
        let n0 = spec.n_modes[0];
        let n1 = if d == 2 { spec.n_modes[1] } else { 1 };
        let mut modes: Vec<([usize; 2], f64)> = Vec::with_capacity(n0 * n1);
        for k0 in 0..n0 {
            for k1 in 0..n1 {
                let mut lam = axis_eigenvalue(k0, spec.lengths[0]);
                if d == 2 {
                    lam += axis_eigenvalue(k1, spec.lengths[1]);
                }
                modes.push(([k0, k1], lam));
            }
        }
        let mut order: Vec<usize> = (0..modes.len()).collect();
        order.sort_by(|&a, &b| {
            modes[a]
                .1
                .partial_cmp(&modes[b].1)
                .unwrap()
                .then(modes[a].0.cmp(&modes[b].0))
        });
        let mut eigenvalues = Vec::with_capacity(modes.len());
        let mut multi_indices = Vec::with_capacity(modes.len());
        let mut flat_of_tensor = vec![0usize; modes.len()];
        for (flat, &t) in order.iter().enumerate() {
            let ([k0, k1], lam) = modes[t];
            eigenvalues.push(lam);
            multi_indices.push([k0, k1]);
            flat_of_tensor[k0 * n1 + k1] = flat;
        }
        EigenBasis {
            eigenvalues,
            multi_indices,
            flat_of_tensor,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        self.multi_indices[flat]
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

fn axis_eigenvalue(k: usize, length: f64) -> f64 {
    let w = k as f64 * std::f64::consts::PI / length;
    w * w
}

/// R^3-valued field stored as coefficients in the flat eigenbasis ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    /// Component-major layout: `coeffs[c * n + i]` for component c, mode i.
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(n_modes: usize) -> Self {
        SpectralField {
            coeffs: vec![0.0; 3 * n_modes],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len() / 3
    }

    pub fn get(&self, component: usize, mode: usize) -> f64 {
        self.coeffs[component * self.n_modes() + mode]
    }

    pub fn set(&mut self, component: usize, mode: usize, value: f64) {
        let n = self.n_modes();
        self.coeffs[component * n + mode] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    /// self += s * other
    pub fn axpy(&mut self, s: f64, other: &SpectralField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    pub fn dot(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Values on the dealiased quadrature grid, same component-major layout.
#[derive(Debug, Clone)]
pub struct PhysicalField {
    pub values: Vec<f64>,
}

impl PhysicalField {
    pub fn zeros(n_points: usize) -> Self {
        PhysicalField {
            values: vec![0.0; 3 * n_points],
        }
    }

    pub fn n_points(&self) -> usize {
        self.values.len() / 3
    }

    /// R^3 vector at one grid point.
    #[inline]
    pub fn at(&self, point: usize) -> [f64; 3] {
        let m = self.values.len() / 3;
        [
            self.values[point],
            self.values[m + point],
            self.values[2 * m + point],
        ]
    }

    #[inline]
    pub fn set_at(&mut self, point: usize, v: [f64; 3]) {
        let m = self.values.len() / 3;
        self.values[point] = v[0];
        self.values[m + point] = v[1];
        self.values[2 * m + point] = v[2];
    }

    /// Component slices (x, y, z).
    #[inline]
    pub fn comps(&self) -> (&[f64], &[f64], &[f64]) {
        let m = self.values.len() / 3;
        let (x, rest) = self.values.split_at(m);
        let (y, z) = rest.split_at(m);
        (x, y, z)
    }

    /// Mutable component slices.
    #[inline]
    pub fn comps_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        let m = self.values.len() / 3;
        let (x, rest) = self.values.split_at_mut(m);
        let (y, z) = rest.split_at_mut(m);
        (x, y, z)
    }
}

/// Everything precomputed for one resolution: basis, grid, transform tables.
///
/// Immutable after construction; share it across Monte Carlo paths.
#[derive(Debug, Clone)]
pub struct Domain {
    spec: DomainSpec,
    basis: EigenBasis,
    /// Per axis: basis function values, `synth[axis][j * n + k] = phi_k(x_j)`.
    synth: Vec<Vec<f64>>,
    /// Per axis: derivative values `phi_k'(x_j)`.
    dsynth: Vec<Vec<f64>>,
    /// Per axis: midpoint grid coordinates.
    grid: Vec<Vec<f64>>,
    /// Quadrature weight per grid point (uniform for the midpoint rule).
    weight: f64,
    n_total: usize,
    m_total: usize,
}

impl Domain {
    pub fn new(spec: DomainSpec) -> Result<Self> {
        let d = spec.dimension();
        let basis = EigenBasis::build(&spec);
        let mut synth = Vec::with_capacity(d);
        let mut dsynth = Vec::with_capacity(d);
        let mut grid = Vec::with_capacity(d);
        for a in 0..d {
            let l = spec.lengths[a];
            let n = spec.n_modes[a];
            let m = spec.quad_points[a];
            let h = l / m as f64;
            let pts: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) * h).collect();
            let mut s = vec![0.0; m * n];
            let mut ds = vec![0.0; m * n];
            let c0 = (1.0 / l).sqrt();
            let ck = (2.0 / l).sqrt();
            for (j, &x) in pts.iter().enumerate() {
                s[j * n] = c0;
                for k in 1..n {
                    let w = k as f64 * std::f64::consts::PI / l;
                    s[j * n + k] = ck * (w * x).cos();
                    ds[j * n + k] = -ck * w * (w * x).sin();
                }
            }
            synth.push(s);
            dsynth.push(ds);
            grid.push(pts);
        }
        let volume: f64 = spec.lengths.iter().product();
        let m_total = spec.total_quad();
        let weight = volume / m_total as f64;
        let n_total = spec.total_modes();
        Ok(Domain {
            spec,
            basis,
            synth,
            dsynth,
            grid,
            weight,
            n_total,
            m_total,
        })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn n_modes(&self) -> usize {
        self.n_total
    }

    pub fn n_points(&self) -> usize {
        self.m_total
    }

    pub fn quad_weight(&self) -> f64 {
        self.weight
    }

    pub fn eigenvalue(&self, flat: usize) -> f64 {
        self.basis.eigenvalues[flat]
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.basis
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    pub fn zero_field(&self) -> SpectralField {
        SpectralField::zeros(self.n_total)
    }

    /// Coordinates of one quadrature point (second entry 0 in 1-d).
    pub fn point(&self, j: usize) -> [f64; 2] {
        if self.dimension() == 1 {
            [self.grid[0][j], 0.0]
        } else {
            let m1 = self.spec.quad_points[1];
            [self.grid[0][j / m1], self.grid[1][j % m1]]
        }
    }

    fn check_spectral(&self, f: &SpectralField) -> Result<()> {
        if f.coeffs.len() != 3 * self.n_total {
            return Err(Error::Dimension(format!(
                "spectral field has {} coefficients, domain expects {}",
                f.coeffs.len(),
                3 * self.n_total
            )));
        }
        Ok(())
    }

    fn check_physical(&self, f: &PhysicalField) -> Result<()> {
        if f.values.len() != 3 * self.m_total {
            return Err(Error::Dimension(format!(
                "physical field has {} values, domain expects {}",
                f.values.len(),
                3 * self.m_total
            )));
        }
        Ok(())
    }

    /// Coefficients -> grid values (inverse transform).
    pub fn synthesize(&self, c: &SpectralField) -> Result<PhysicalField> {
        self.check_spectral(c)?;
        let mut out = PhysicalField::zeros(self.m_total);
        for comp in 0..3 {
            let coeffs = &c.coeffs[comp * self.n_total..(comp + 1) * self.n_total];
            let values = &mut out.values[comp * self.m_total..(comp + 1) * self.m_total];
            self.synth_component(coeffs, values, None);
        }
        Ok(out)
    }

    /// Gradient along `axis`, evaluated on the grid.
    pub fn synthesize_grad(&self, c: &SpectralField, axis: usize) -> Result<PhysicalField> {
        self.check_spectral(c)?;
        if axis >= self.dimension() {
            return Err(Error::Index(format!(
                "axis {axis} out of range for dimension {}",
                self.dimension()
            )));
        }
        let mut out = PhysicalField::zeros(self.m_total);
        for comp in 0..3 {
            let coeffs = &c.coeffs[comp * self.n_total..(comp + 1) * self.n_total];
            let values = &mut out.values[comp * self.m_total..(comp + 1) * self.m_total];
            self.synth_component(coeffs, values, Some(axis));
        }
        Ok(out)
    }

    /// Grid values -> coefficients; implements the L2 projection onto S_n for
    /// grid-sampled functions.
    pub fn analyze(&self, f: &PhysicalField) -> Result<SpectralField> {
        self.check_physical(f)?;
        let mut out = SpectralField::zeros(self.n_total);
        for comp in 0..3 {
            let values = &f.values[comp * self.m_total..(comp + 1) * self.m_total];
            let coeffs = &mut out.coeffs[comp * self.n_total..(comp + 1) * self.n_total];
            self.analyze_component(values, coeffs);
        }
        Ok(out)
    }

    fn synth_component(&self, coeffs: &[f64], values: &mut [f64], grad_axis: Option<usize>) {
        let d = self.dimension();
        let n0 = self.spec.n_modes[0];
        let m0 = self.spec.quad_points[0];
        let tab0 = if grad_axis == Some(0) {
            &self.dsynth[0]
        } else {
            &self.synth[0]
        };
        if d == 1 {
            // values[j] = sum_k tab0[j*n0+k] * coeffs[flat(k)]
            for (j, v) in values.iter_mut().enumerate() {
                let row = &tab0[j * n0..(j + 1) * n0];
                let mut acc = 0.0;
                for k in 0..n0 {
                    acc += row[k] * coeffs[self.basis.flat_of_tensor[k]];
                }
                *v = acc;
            }
        } else {
            let n1 = self.spec.n_modes[1];
            let m1 = self.spec.quad_points[1];
            let tab1 = if grad_axis == Some(1) {
                &self.dsynth[1]
            } else {
                &self.synth[1]
            };
            // Gather flat coefficients into tensor layout, contract axis 1 then axis 0.
            let mut tensor = vec![0.0; n0 * n1];
            for k0 in 0..n0 {
                for k1 in 0..n1 {
                    tensor[k0 * n1 + k1] = coeffs[self.basis.flat_of_tensor[k0 * n1 + k1]];
                }
            }
            let mut half = vec![0.0; n0 * m1];
            for k0 in 0..n0 {
                for j1 in 0..m1 {
                    let row = &tab1[j1 * n1..(j1 + 1) * n1];
                    let t = &tensor[k0 * n1..(k0 + 1) * n1];
                    let mut acc = 0.0;
                    for k1 in 0..n1 {
                        acc += row[k1] * t[k1];
                    }
                    half[k0 * m1 + j1] = acc;
                }
            }
            for j0 in 0..m0 {
                let row = &tab0[j0 * n0..(j0 + 1) * n0];
                for j1 in 0..m1 {
                    let mut acc = 0.0;
                    for k0 in 0..n0 {
                        acc += row[k0] * half[k0 * m1 + j1];
                    }
                    values[j0 * m1 + j1] = acc;
                }
            }
        }
    }

    fn analyze_component(&self, values: &[f64], coeffs: &mut [f64]) {
        let d = self.dimension();
        let n0 = self.spec.n_modes[0];
        let m0 = self.spec.quad_points[0];
        let w = self.weight;
        if d == 1 {
            for k in 0..n0 {
                let mut acc = 0.0;
                for j in 0..m0 {
                    acc += self.synth[0][j * n0 + k] * values[j];
                }
                coeffs[self.basis.flat_of_tensor[k]] = w * acc;
            }
        } else {
            let n1 = self.spec.n_modes[1];
            let m1 = self.spec.quad_points[1];
            // Contract axis 1 first: half[j0*n1+k1] = sum_j1 phi_k1(y_j1) v[j0, j1]
            let mut half = vec![0.0; m0 * n1];
            for j0 in 0..m0 {
                let vrow = &values[j0 * m1..(j0 + 1) * m1];
                for k1 in 0..n1 {
                    let mut acc = 0.0;
                    for j1 in 0..m1 {
                        acc += self.synth[1][j1 * n1 + k1] * vrow[j1];
                    }
                    half[j0 * n1 + k1] = acc;
                }
            }
            for k0 in 0..n0 {
                for k1 in 0..n1 {
                    let mut acc = 0.0;
                    for j0 in 0..m0 {
                        acc += self.synth[0][j0 * n0 + k0] * half[j0 * n1 + k1];
                    }
                    coeffs[self.basis.flat_of_tensor[k0 * n1 + k1]] = w * acc;
                }
            }
        }
    }

    /// Apply a pointwise R^3 map to one or more fields on the dealiased grid
    /// and project back.  Equals the exact projection of the result whenever
    /// `op` is polynomial of total degree <= 3 in its inputs.
    pub fn dealiased_pointwise<F>(&self, inputs: &[&SpectralField], op: F) -> Result<SpectralField>
    where
        F: Fn(&[[f64; 3]]) -> [f64; 3],
    {
        let phys: Vec<PhysicalField> = inputs
            .iter()
            .map(|f| self.synthesize(f))
            .collect::<Result<_>>()?;
        let mut out = PhysicalField::zeros(self.m_total);
        let mut args = vec![[0.0; 3]; inputs.len()];
        for j in 0..self.m_total {
            for (slot, p) in args.iter_mut().zip(&phys) {
                *slot = p.at(j);
            }
            out.set_at(j, op(&args));
        }
        self.analyze(&out)
    }

    /// Multiply each mode coefficient by -lambda_i.
    pub fn laplacian(&self, c: &SpectralField) -> Result<SpectralField> {
        self.check_spectral(c)?;
        let mut out = c.clone();
        for comp in 0..3 {
            for (i, &lam) in self.basis.eigenvalues.iter().enumerate() {
                out.coeffs[comp * self.n_total + i] *= -lam;
            }
        }
        Ok(out)
    }

    /// Graph norm of (I+A)^beta: `(sum (1+lambda_i)^(2 beta) c_i^2)^(1/2)`.
    /// beta = 0 is the L2 norm, 1/2 the H1 graph norm, 1 the H2 graph norm.
    pub fn sobolev_norm(&self, c: &SpectralField, beta: f64) -> f64 {
        let mut acc = 0.0;
        for comp in 0..3 {
            for (i, &lam) in self.basis.eigenvalues.iter().enumerate() {
                let w = (1.0 + lam).powf(2.0 * beta);
                let v = c.coeffs[comp * self.n_total + i];
                acc += w * v * v;
            }
        }
        acc.sqrt()
    }

    /// Parseval form of the squared gradient norm, `sum lambda_i c_i^2`.
    pub fn grad_norm_sq(&self, c: &SpectralField) -> f64 {
        let mut acc = 0.0;
        for comp in 0..3 {
            for (i, &lam) in self.basis.eigenvalues.iter().enumerate() {
                let v = c.coeffs[comp * self.n_total + i];
                acc += lam * v * v;
            }
        }
        acc
    }

    /// `sum lambda_i^2 c_i^2 = |Delta u|_{L2}^2`.
    pub fn lap_norm_sq(&self, c: &SpectralField) -> f64 {
        let mut acc = 0.0;
        for comp in 0..3 {
            for (i, &lam) in self.basis.eigenvalues.iter().enumerate() {
                let v = c.coeffs[comp * self.n_total + i];
                acc += lam * lam * v * v;
            }
        }
        acc
    }

    pub fn l2_norm_sq(&self, c: &SpectralField) -> f64 {
        c.dot(c)
    }

    /// H1 graph norm squared, `|u|^2 + |grad u|^2`.
    pub fn h1_norm_sq(&self, c: &SpectralField) -> f64 {
        self.l2_norm_sq(c) + self.grad_norm_sq(c)
    }

    /// H2 graph norm squared, `|(I+A) u|^2`.
    pub fn h2_norm_sq(&self, c: &SpectralField) -> f64 {
        let mut acc = 0.0;
        for comp in 0..3 {
            for (i, &lam) in self.basis.eigenvalues.iter().enumerate() {
                let w = (1.0 + lam) * (1.0 + lam);
                let v = c.coeffs[comp * self.n_total + i];
                acc += w * v * v;
            }
        }
        acc
    }

    /// Quadrature integral of a scalar sample per grid point.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(usize) -> f64,
    {
        let mut acc = 0.0;
        for j in 0..self.m_total {
            acc += f(j);
        }
        acc * self.weight
    }

    /// Quadrature L2 inner product of two physical fields.
    pub fn quad_inner(&self, a: &PhysicalField, b: &PhysicalField) -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.values.iter().zip(&b.values) {
            acc += x * y;
        }
        acc * self.weight
    }

    /// Grid maximum of the pointwise Euclidean norm (L-infinity proxy).
    pub fn linf_norm(&self, p: &PhysicalField) -> f64 {
        let m = self.n_points();
        let mut best: f64 = 0.0;
        for j in 0..m {
            let v = p.at(j);
            let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            if s > best {
                best = s;
            }
        }
        best.sqrt()
    }

    /// `int |u|^4 dx` by quadrature.
    pub fn l4_norm_4(&self, p: &PhysicalField) -> f64 {
        self.integrate(|j| {
            let v = p.at(j);
            let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            s * s
        })
    }

    /// `( int |u|^q dx )^(1/q)` by quadrature; exact only for resolved
    /// polynomial integrands, used for diagnostics norms like L^{3/2}.
    pub fn lq_norm(&self, p: &PhysicalField, q: f64) -> f64 {
        self.integrate(|j| {
            let v = p.at(j);
            let s = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            s.powf(q)
        })
        .powf(1.0 / q)
    }

    /// Restrict `c` (living on `self`) onto the modes of a coarser domain,
    /// matching multi-indices.  Modes absent from `coarse` are dropped.
    pub fn project_to(&self, c: &SpectralField, coarse: &Domain) -> Result<SpectralField> {
        self.check_spectral(c)?;
        if coarse.spec.lengths != self.spec.lengths {
            return Err(Error::Config(
                "projection requires identical box lengths".into(),
            ));
        }
        let mut out = coarse.zero_field();
        let cn1 = if coarse.dimension() == 2 {
            coarse.spec.n_modes[1]
        } else {
            1
        };
        for flat in 0..self.n_total {
            let [k0, k1] = self.basis.multi_indices[flat];
            if k0 < coarse.spec.n_modes[0] && (coarse.dimension() == 1 && k1 == 0 || k1 < cn1) {
                let cflat = coarse.basis.flat_of_tensor[k0 * cn1 + k1];
                for comp in 0..3 {
                    out.coeffs[comp * coarse.n_total + cflat] =
                        c.coeffs[comp * self.n_total + flat];
                }
            }
        }
        Ok(out)
    }

    /// Embed `c` (living on `coarse`) into this finer domain.
    pub fn embed_from(&self, c: &SpectralField, coarse: &Domain) -> Result<SpectralField> {
        coarse.check_spectral(c)?;
        if coarse.spec.lengths != self.spec.lengths {
            return Err(Error::Config(
                "embedding requires identical box lengths".into(),
            ));
        }
        let n1 = if self.dimension() == 2 {
            self.spec.n_modes[1]
        } else {
            1
        };
        let mut out = self.zero_field();
        for cflat in 0..coarse.n_total {
            let [k0, k1] = coarse.basis.multi_indices[cflat];
            if k0 >= self.spec.n_modes[0] || k1 >= n1 {
                return Err(Error::Config(
                    "coarse mode outside the fine truncation".into(),
                ));
            }
            let flat = self.basis.flat_of_tensor[k0 * n1 + k1];
            for comp in 0..3 {
                out.coeffs[comp * self.n_total + flat] = c.coeffs[comp * coarse.n_total + cflat];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit_domain_1d(n: usize) -> Domain {
        Domain::new(DomainSpec::new_1d(1.0, n).unwrap()).unwrap()
    }

    /// Independent trapezoid-free oracle: midpoint quadrature of an analytic
    /// function against one basis mode, evaluated from scratch.
    fn quadrature_coeff_1d(f: impl Fn(f64) -> f64, k: usize, m: usize) -> f64 {
        let h = 1.0 / m as f64;
        let e = |x: f64| {
            if k == 0 {
                1.0
            } else {
                2f64.sqrt() * (k as f64 * PI * x).cos()
            }
        };
        (0..m)
            .map(|j| {
                let x = (j as f64 + 0.5) * h;
                f(x) * e(x) * h
            })
            .sum()
    }

    #[test]
    fn interval_spectrum_matches_neumann_table() {
        let dom = unit_domain_1d(4);
        let lam = dom.basis().eigenvalues();
        let expect = [0.0, PI * PI, 4.0 * PI * PI, 9.0 * PI * PI];
        for (a, b) in lam.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn square_spectrum_is_sorted_tensor_sum() {
        let dom = Domain::new(DomainSpec::new_2d([1.0, 1.0], [2, 2]).unwrap()).unwrap();
        let lam = dom.basis().eigenvalues();
        let expect = [0.0, PI * PI, PI * PI, 2.0 * PI * PI];
        for (a, b) in lam.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // tie broken lexicographically
        assert_eq!(dom.basis().multi_index(1), [0, 1]);
        assert_eq!(dom.basis().multi_index(2), [1, 0]);
    }

    #[test]
    fn stretched_interval_scales_eigenvalues() {
        let dom = Domain::new(DomainSpec::new_1d(2.0, 2).unwrap()).unwrap();
        let lam = dom.basis().eigenvalues();
        assert!((lam[0]).abs() < 1e-15);
        assert!((lam[1] - PI * PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        let dom = unit_domain_1d(6);
        let n = dom.n_modes();
        for a in 0..n {
            for b in a..n {
                let mut fa = dom.zero_field();
                fa.set(0, a, 1.0);
                let mut fb = dom.zero_field();
                fb.set(0, b, 1.0);
                let pa = dom.synthesize(&fa).unwrap();
                let pb = dom.synthesize(&fb).unwrap();
                let ip = dom.quad_inner(&pa, &pb);
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-12, "<e{a},e{b}> = {ip}");
            }
        }
    }

    #[test]
    fn neumann_derivative_vanishes_at_walls() {
        // One-sided finite differences hugging each wall.
        let dom = unit_domain_1d(5);
        for k in 0..5 {
            let mut f = dom.zero_field();
            f.set(0, k, 1.0);
            let eps = 1e-7;
            let eval = |x: f64| {
                if k == 0 {
                    1.0
                } else {
                    2f64.sqrt() * (k as f64 * PI * x).cos()
                }
            };
            let left = (eval(eps) - eval(0.0)) / eps;
            let right = (eval(1.0) - eval(1.0 - eps)) / eps;
            assert!(left.abs() < 1e-4, "mode {k} left slope {left}");
            assert!(right.abs() < 1e-4, "mode {k} right slope {right}");
        }
    }

    #[test]
    fn analyze_zero_is_zero() {
        let dom = unit_domain_1d(4);
        let p = PhysicalField::zeros(dom.n_points());
        let c = dom.analyze(&p).unwrap();
        assert!(c.coeffs.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn analyze_recovers_cosine_coefficient() {
        // f = cos(pi x) e1 has coefficient 1/sqrt(2) on mode 1.
        let dom = unit_domain_1d(4);
        let mut p = PhysicalField::zeros(dom.n_points());
        for j in 0..dom.n_points() {
            let x = dom.point(j)[0];
            p.set_at(j, [(PI * x).cos(), 0.0, 0.0]);
        }
        let c = dom.analyze(&p).unwrap();
        let oracle = quadrature_coeff_1d(|x| (PI * x).cos(), 1, dom.spec().quad_points()[0]);
        assert!((c.get(0, 1) - oracle).abs() < 1e-13);
        assert!((c.get(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        for i in 0..4 {
            if i != 1 {
                assert!(c.get(0, i).abs() < 1e-13);
            }
            assert!(c.get(1, i).abs() < 1e-13);
            assert!(c.get(2, i).abs() < 1e-13);
        }
    }

    #[test]
    fn unresolved_mode_projects_to_zero() {
        let dom = unit_domain_1d(4);
        let mut p = PhysicalField::zeros(dom.n_points());
        for j in 0..dom.n_points() {
            let x = dom.point(j)[0];
            p.set_at(j, [(5.0 * PI * x).cos(), 0.0, 0.0]);
        }
        let c = dom.analyze(&p).unwrap();
        for v in &c.coeffs {
            assert!(v.abs() < 1e-12, "leakage {v}");
        }
    }

    #[test]
    fn laplacian_examples() {
        let dom = unit_domain_1d(4);
        let mut constant = dom.zero_field();
        constant.set(0, 0, 1.0);
        let lc = dom.laplacian(&constant).unwrap();
        assert!(lc.coeffs.iter().all(|&x| x == 0.0));

        let mut e1 = dom.zero_field();
        e1.set(0, 1, 1.0);
        let le1 = dom.laplacian(&e1).unwrap();
        assert!((le1.get(0, 1) + PI * PI).abs() < 1e-12);

        let mut half = dom.zero_field();
        half.set(0, 1, 1.0 / 2f64.sqrt());
        let lh = dom.laplacian(&half).unwrap();
        assert!((lh.get(0, 1) + PI * PI / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sobolev_norm_single_mode() {
        let dom = unit_domain_1d(4);
        let mut e1 = dom.zero_field();
        e1.set(0, 1, 1.0);
        let got = dom.sobolev_norm(&e1, 0.5);
        assert!((got - (1.0 + PI * PI).sqrt()).abs() < 1e-12);
        assert!((got - 3.2969).abs() < 1e-4);
        assert_eq!(dom.sobolev_norm(&dom.zero_field(), 1.3), 0.0);
    }

    #[test]
    fn sobolev_norm_matches_quadrature_expansion() {
        // |(I+A)u|^2 = |u|^2 + 2|grad u|^2 + |Delta u|^2, each term by quadrature.
        let dom = unit_domain_1d(4);
        let mut f = dom.zero_field();
        f.set(0, 0, 1.0);
        f.set(1, 1, 1.0);
        let got = dom.sobolev_norm(&f, 1.0);

        let p = dom.synthesize(&f).unwrap();
        let g = dom.synthesize_grad(&f, 0).unwrap();
        let lap = dom.synthesize(&dom.laplacian(&f).unwrap()).unwrap();
        let l2 = dom.quad_inner(&p, &p);
        let gr = dom.quad_inner(&g, &g);
        let lp = dom.quad_inner(&lap, &lap);
        let oracle = (l2 + 2.0 * gr + lp).sqrt();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        assert!((got - (1.0 + (1.0 + PI * PI) * (1.0 + PI * PI)).sqrt()).abs() < 1e-12);
        assert!((got - 10.916).abs() < 1e-3);
    }

    #[test]
    fn grad_norm_examples() {
        let dom = unit_domain_1d(4);
        let mut c0 = dom.zero_field();
        c0.set(0, 0, 1.0);
        assert_eq!(dom.grad_norm_sq(&c0), 0.0);
        let mut e1 = dom.zero_field();
        e1.set(0, 1, 1.0);
        assert!((dom.grad_norm_sq(&e1) - PI * PI).abs() < 1e-12);
        e1.set(0, 1, 1.0 / 2f64.sqrt());
        assert!((dom.grad_norm_sq(&e1) - PI * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn dealiased_identity_and_constant_cube() {
        let dom = unit_domain_1d(4);
        let mut f = dom.zero_field();
        f.set(0, 1, 0.3);
        f.set(1, 2, -0.7);
        let id = dom.dealiased_pointwise(&[&f], |v| v[0]).unwrap();
        for (a, b) in id.coeffs.iter().zip(&f.coeffs) {
            assert!((a - b).abs() < 1e-13);
        }

        // |u|^2 u on the constant field (2,0,0) is (8,0,0).
        let mut c = dom.zero_field();
        c.set(0, 0, 2.0);
        let cubed = dom
            .dealiased_pointwise(&[&c], |v| {
                let u = v[0];
                let s = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
                [s * u[0], s * u[1], s * u[2]]
            })
            .unwrap();
        assert!((cubed.get(0, 0) - 8.0).abs() < 1e-12);
        assert!(cubed.coeffs.iter().skip(1).all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dom = unit_domain_1d(4);
        let bad = SpectralField::zeros(5);
        assert!(matches!(dom.synthesize(&bad), Err(Error::Dimension(_))));
        let badp = PhysicalField::zeros(7);
        assert!(matches!(dom.analyze(&badp), Err(Error::Dimension(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(DomainSpec::new_1d(0.0, 4).is_err());
        assert!(DomainSpec::new(&[1.0], &[0]).is_err());
        assert!(DomainSpec::with_quad(&[1.0], &[4], &[8]).is_err());
        assert!(DomainSpec::new(&[1.0, 1.0, 1.0], &[2, 2, 2]).is_err());
    }

    #[test]
    fn two_dimensional_analysis_and_gradients() {
        // f(x, y) = cos(2 pi x) cos(pi y) e2 = (1/2) e_(2,1), so analysis
        // puts 1/2 on that tensor mode; gradients match the analytic partials.
        let dom = Domain::new(DomainSpec::new_2d([1.0, 1.0], [4, 4]).unwrap()).unwrap();
        let mut p = PhysicalField::zeros(dom.n_points());
        for j in 0..dom.n_points() {
            let [x, y] = dom.point(j);
            p.set_at(j, [0.0, (2.0 * PI * x).cos() * (PI * y).cos(), 0.0]);
        }
        let c = dom.analyze(&p).unwrap();
        let mut nonzero = 0;
        for i in 0..dom.n_modes() {
            let v = c.get(1, i);
            if dom.basis().multi_index(i) == [2, 1] {
                assert!((v - 0.5).abs() < 1e-12, "coefficient {v}");
                nonzero += 1;
            } else {
                assert!(v.abs() < 1e-12);
            }
            assert!(c.get(0, i).abs() < 1e-12);
            assert!(c.get(2, i).abs() < 1e-12);
        }
        assert_eq!(nonzero, 1);

        let gx = dom.synthesize_grad(&c, 0).unwrap();
        let gy = dom.synthesize_grad(&c, 1).unwrap();
        for j in (0..dom.n_points()).step_by(7) {
            let [x, y] = dom.point(j);
            let dx = -2.0 * PI * (2.0 * PI * x).sin() * (PI * y).cos();
            let dy = -PI * (2.0 * PI * x).cos() * (PI * y).sin();
            assert!((gx.at(j)[1] - dx).abs() < 1e-11, "d/dx at {x},{y}");
            assert!((gy.at(j)[1] - dy).abs() < 1e-11, "d/dy at {x},{y}");
        }

        // Parseval in 2-d
        assert!((dom.l2_norm_sq(&c) - 0.25).abs() < 1e-12);
        assert!((dom.quad_inner(&p, &p) - 0.25).abs() < 1e-12);
        // eigenvalue of the (2,1) mode is 4 pi^2 + pi^2
        let flat = (0..dom.n_modes())
            .find(|&i| dom.basis().multi_index(i) == [2, 1])
            .unwrap();
        assert!((dom.eigenvalue(flat) - 5.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn projection_and_embedding_roundtrip() {
        let fine = Domain::new(DomainSpec::new_2d([1.0, 1.0], [8, 8]).unwrap()).unwrap();
        let coarse = Domain::new(DomainSpec::new_2d([1.0, 1.0], [4, 4]).unwrap()).unwrap();
        let mut f = coarse.zero_field();
        f.set(0, 3, 1.5);
        f.set(2, 7, -0.25);
        let up = fine.embed_from(&f, &coarse).unwrap();
        let back = fine.project_to(&up, &coarse).unwrap();
        assert_eq!(back.coeffs, f.coeffs);
        assert!((fine.l2_norm_sq(&up) - coarse.l2_norm_sq(&f)).abs() < 1e-15);
    }

    fn random_physical(dom: &Domain, seed: u64, max_degree: usize) -> PhysicalField {
        // Random cosine polynomial of the given degree, sampled analytically
        // on the grid (possibly beyond the domain truncation).
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut p = PhysicalField::zeros(dom.n_points());
        let degrees: Vec<usize> = (0..=max_degree).collect();
        let amps: Vec<[f64; 3]> = degrees
            .iter()
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        for j in 0..dom.n_points() {
            let x = dom.point(j)[0];
            let mut v = [0.0; 3];
            for (deg, amp) in degrees.iter().zip(&amps) {
                let b = (*deg as f64 * PI * x).cos();
                v[0] += amp[0] * b;
                v[1] += amp[1] * b;
                v[2] += amp[2] * b;
            }
            p.set_at(j, v);
        }
        p
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_contracts_l2(seed in 0u64..1000) {
            let dom = unit_domain_1d(8);
            let p = random_physical(&dom, seed, 15);
            let c = dom.analyze(&p).unwrap();
            let grid_norm_sq = dom.quad_inner(&p, &p);
            prop_assert!(dom.l2_norm_sq(&c) <= grid_norm_sq * (1.0 + 1e-10));
        }

        #[test]
        fn parseval_after_projection(seed in 0u64..1000) {
            let dom = unit_domain_1d(8);
            let p = random_physical(&dom, seed, 15);
            let c = dom.analyze(&p).unwrap();
            let back = dom.synthesize(&c).unwrap();
            let quad = dom.quad_inner(&back, &back);
            let spec = dom.l2_norm_sq(&c);
            prop_assert!((quad - spec).abs() <= 1e-10 * spec.max(1e-30));
        }

        #[test]
        fn analyze_synthesize_idempotent(seed in 0u64..1000) {
            let dom = unit_domain_1d(8);
            let p = random_physical(&dom, seed, 15);
            let c = dom.analyze(&p).unwrap();
            let again = dom.analyze(&dom.synthesize(&c).unwrap()).unwrap();
            for (a, b) in again.coeffs.iter().zip(&c.coeffs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn projection_self_adjoint(s1 in 0u64..500, s2 in 500u64..1000) {
            let dom = unit_domain_1d(8);
            let v = random_physical(&dom, s1, 15);
            let w = random_physical(&dom, s2, 15);
            // <Pi v, w> = <v, Pi w> with both sides by quadrature.
            let pv = dom.synthesize(&dom.analyze(&v).unwrap()).unwrap();
            let pw = dom.synthesize(&dom.analyze(&w).unwrap()).unwrap();
            let lhs = dom.quad_inner(&pv, &w);
            let rhs = dom.quad_inner(&v, &pw);
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn gradient_contraction(seed in 0u64..1000) {
            // Same degree-15 polynomial seen by the n=8 truncation and by an
            // n=16 domain that resolves it fully; the full gradient norm is
            // then exact and must dominate the projected one.
            let dom = unit_domain_1d(8);
            let p = random_physical(&dom, seed, 15);
            let c = dom.analyze(&p).unwrap();
            let big = unit_domain_1d(16);
            let pb = random_physical(&big, seed, 15);
            let cb = big.analyze(&pb).unwrap();
            let full_grad = big.grad_norm_sq(&cb);
            prop_assert!(dom.grad_norm_sq(&c) <= full_grad * (1.0 + 1e-10));
        }
    }
}

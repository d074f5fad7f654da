//! Wiener increment generation with seed provenance.
//!
//! Increments are a pure function of `(master_seed, path_index, n_steps, K)`,
//! so Monte Carlo paths can run in parallel in any order and still reproduce
//! bit-for-bit.  A midpoint (Levy bridge) refinement doubles the step count
//! on the *same* Brownian path, which is what dt-convergence studies need:
//! consecutive fine increments sum exactly to the coarse ones.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Uniform time grid on [0, t_end].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Config(format!("t_end must be positive, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        Ok(TimeGrid { t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt()
    }

    /// Same horizon, twice the steps.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            t_end: self.t_end,
            n_steps: 2 * self.n_steps,
        }
    }
}

/// splitmix64; decorrelates structured seed tuples.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_seed(master_seed: u64, tag: u64, path_index: u64) -> u64 {
    mix(mix(master_seed ^ mix(tag)) ^ mix(path_index))
}

const TAG_SAMPLE: u64 = 0x5731_3af1;
const TAG_REFINE: u64 = 0x9e3d_77c2;

/// Split `total` into the bridge halves around `0.5 * total + xi`.  The right
/// half is the exact remainder `total - left`, so re-summing the pair recovers
/// the coarse increment up to the single final rounding (one ulp).
fn exact_split(total: f64, xi: f64) -> (f64, f64) {
    let left = 0.5 * total + xi;
    (left, total - left)
}

/// Per-step, per-mode Gaussian increments `N(0, dt)`.
#[derive(Debug, Clone)]
pub struct WienerIncrements {
    /// Step-major: `data[step * k_modes + k]`.
    data: Vec<f64>,
    pub n_steps: usize,
    pub k_modes: usize,
    pub dt: f64,
    pub master_seed: u64,
    pub path_index: u64,
    /// How many midpoint refinements were applied after sampling.
    pub refinement_level: u32,
}

impl WienerIncrements {
    /// Draw a fresh path.  Deterministic in all arguments.
    pub fn sample(master_seed: u64, path_index: u64, grid: TimeGrid, k_modes: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(master_seed, TAG_SAMPLE, path_index));
        let sd = grid.dt().sqrt();
        let data = (0..grid.n_steps * k_modes)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        WienerIncrements {
            data,
            n_steps: grid.n_steps,
            k_modes,
            dt: grid.dt(),
            master_seed,
            path_index,
            refinement_level: 0,
        }
    }

    pub fn zeros(grid: TimeGrid, k_modes: usize) -> Self {
        WienerIncrements {
            data: vec![0.0; grid.n_steps * k_modes],
            n_steps: grid.n_steps,
            k_modes,
            dt: grid.dt(),
            master_seed: 0,
            path_index: 0,
            refinement_level: 0,
        }
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.data[step * self.k_modes..(step + 1) * self.k_modes]
    }

    /// Midpoint refinement: split each increment over [t, t+dt] into the two
    /// halves conditioned on the coarse value,
    /// `dW_left = dW/2 + xi`, `xi ~ N(0, dt/4)`, `dW_right = dW - dW_left`.
    /// The right half is the exact remainder, so pairwise sums reproduce the
    /// coarse increments to within one final rounding.
    pub fn refine(&self) -> WienerIncrements {
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(
            self.master_seed,
            TAG_REFINE ^ u64::from(self.refinement_level),
            self.path_index,
        ));
        let half_sd = (self.dt / 4.0).sqrt();
        let mut data = Vec::with_capacity(2 * self.data.len());
        for step in 0..self.n_steps {
            let row = self.row(step);
            // left halves for all k, then right halves, keeping step-major layout
            let halves: Vec<(f64, f64)> = row
                .iter()
                .map(|&dw| {
                    let xi = half_sd * rng.sample::<f64, _>(StandardNormal);
                    exact_split(dw, xi)
                })
                .collect();
            for &(left, _) in &halves {
                data.push(left);
            }
            for &(_, right) in &halves {
                data.push(right);
            }
        }
        WienerIncrements {
            data,
            n_steps: 2 * self.n_steps,
            k_modes: self.k_modes,
            dt: 0.5 * self.dt,
            master_seed: self.master_seed,
            path_index: self.path_index,
            refinement_level: self.refinement_level + 1,
        }
    }

    /// Refine `levels` times (2^levels more steps).
    pub fn refined_by(&self, levels: u32) -> WienerIncrements {
        let mut w = self.clone();
        for _ in 0..levels {
            w = w.refine();
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_across_calls() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let a = WienerIncrements::sample(42, 3, grid, 4);
        let b = WienerIncrements::sample(42, 3, grid, 4);
        assert_eq!(a.data, b.data);
        let c = WienerIncrements::sample(42, 4, grid, 4);
        assert_ne!(a.data, c.data);
        let d = WienerIncrements::sample(43, 3, grid, 4);
        assert_ne!(a.data, d.data);
    }

    #[test]
    fn refinement_sums_exactly() {
        let grid = TimeGrid::new(2.0, 16).unwrap();
        let coarse = WienerIncrements::sample(7, 0, grid, 3);
        let fine = coarse.refine();
        assert_eq!(fine.n_steps, 32);
        assert!((fine.dt - coarse.dt / 2.0).abs() < 1e-16);
        let ulp_tol = |x: f64| 2.0 * f64::EPSILON * (x.abs() + coarse.dt.sqrt());
        for step in 0..coarse.n_steps {
            for k in 0..3 {
                let dw = coarse.row(step)[k];
                let sum = fine.row(2 * step)[k] + fine.row(2 * step + 1)[k];
                assert!(
                    (sum - dw).abs() <= ulp_tol(dw),
                    "bridge sum off by more than rounding: {sum} vs {dw}"
                );
            }
        }
        // two levels deep
        let finer = fine.refine();
        for step in 0..fine.n_steps {
            for k in 0..3 {
                let dw = fine.row(step)[k];
                let sum = finer.row(2 * step)[k] + finer.row(2 * step + 1)[k];
                assert!((sum - dw).abs() <= ulp_tol(dw));
            }
        }
    }

    #[test]
    fn refinement_is_deterministic() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let a = WienerIncrements::sample(11, 2, grid, 2).refine();
        let b = WienerIncrements::sample(11, 2, grid, 2).refine();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn increments_have_the_right_scale() {
        // fixed-seed sanity: sample variance of N(0, dt) within 10%
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        let w = WienerIncrements::sample(5, 0, grid, 2);
        let dt = grid.dt();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for step in 0..w.n_steps {
            for &x in w.row(step) {
                sum += x;
                sum2 += x * x;
            }
        }
        let n = (w.n_steps * w.k_modes) as f64;
        let mean = sum / n;
        let var = sum2 / n - mean * mean;
        assert!((var / dt - 1.0).abs() < 0.1, "variance ratio {}", var / dt);
        assert!(mean.abs() < 3.0 * (dt / n).sqrt() * 2.0);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert!((g.dt() - 0.1).abs() < 1e-15);
        assert_eq!(g.refined().n_steps, 20);
    }
}

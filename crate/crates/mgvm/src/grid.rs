//! Dense grids over the D-torus: normalisation, evidence, KL divergence,
//! per-dimension moments and mode counting.
//!
//! Grids are the independent verification route for everything the series and
//! phasor algebra produce: parametrisation conversions are checked by density
//! matching, conditionals against renormalised joint slices, variational free
//! energies against `log Z_grid - KL(q‖p)`. They are also product code: the
//! CLI `compare` and `bench-inference` commands score fits by grid KL, exactly
//! as a dense numerical integration would.

use num_complex::Complex64;

use crate::angle::{log_sum_exp, TWO_PI};
use crate::error::{Error, Result};

/// Memory guard: n^dim may not exceed this many cells (~32 MiB of f64).
const MAX_CELLS: usize = 1 << 22;

/// A log-density evaluated over the uniform product grid
/// `θ_i = 2π i / n` per axis, C-order with the last axis fastest.
#[derive(Debug, Clone)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    log_density: Vec<f64>,
}

impl TorusGrid {
    /// Evaluate `log_density` over an `n^dim` grid.
    pub fn evaluate<F>(dim: usize, n: usize, mut log_density: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> f64,
    {
        if dim == 0 || n < 2 {
            return Err(Error::invalid("grid needs dim >= 1 and n >= 2"));
        }
        let cells = n.checked_pow(dim as u32).filter(|&c| c <= MAX_CELLS).ok_or_else(|| {
            Error::invalid(format!("grid {n}^{dim} exceeds the {MAX_CELLS}-cell cap"))
        })?;
        let step = TWO_PI / n as f64;
        let mut angles = vec![0.0; dim];
        let mut values = Vec::with_capacity(cells);
        for flat in 0..cells {
            let mut rem = flat;
            for d in (0..dim).rev() {
                angles[d] = (rem % n) as f64 * step;
                rem /= n;
            }
            let lf = log_density(&angles);
            if lf.is_nan() || lf == f64::INFINITY {
                return Err(Error::invalid("grid log-density must be finite"));
            }
            values.push(lf);
        }
        Ok(Self { dim, n, log_density: values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn points_per_dim(&self) -> usize {
        self.n
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Angle vector of a flat cell index.
    pub fn angles_of(&self, mut flat: usize) -> Vec<f64> {
        let step = TWO_PI / self.n as f64;
        let mut out = vec![0.0; self.dim];
        for d in (0..self.dim).rev() {
            out[d] = (flat % self.n) as f64 * step;
            flat /= self.n;
        }
        out
    }

    /// Trapezoid estimate of `log ∫ e^{log_density}` over the torus.
    pub fn log_evidence(&self) -> f64 {
        log_sum_exp(&self.log_density) + self.dim as f64 * (TWO_PI / self.n as f64).ln()
    }

    /// Normalised cell probabilities (sum to 1).
    pub fn pmf(&self) -> Vec<f64> {
        let hi = self.log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = self.log_density.iter().map(|lf| (lf - hi).exp()).collect();
        let total: f64 = out.iter().sum();
        for w in out.iter_mut() {
            *w /= total;
        }
        out
    }

    /// Per-dimension first trigonometric moment `⟨e^{iφ_d}⟩` under the grid
    /// pmf.
    pub fn marginal_m1(&self, pmf: &[f64], d: usize) -> Complex64 {
        let step = TWO_PI / self.n as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for (flat, &w) in pmf.iter().enumerate() {
            let idx = (flat / self.n.pow((self.dim - 1 - d) as u32)) % self.n;
            acc += w * Complex64::from_polar(1.0, idx as f64 * step);
        }
        acc
    }
}

/// `KL(p ‖ q) = Σ p_i log(p_i/q_i)` between two pmfs on the same grid.
/// Cells with `p_i = 0` contribute nothing; `q_i = 0 < p_i` gives `+∞`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "pmf lengths differ");
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            acc += pi * (pi / qi).ln();
        }
    }
    acc
}

/// Outer product of per-dimension pmfs (a factorised distribution on the
/// product grid, C-order to match [`TorusGrid`]).
pub fn product_pmf(factors: &[Vec<f64>]) -> Vec<f64> {
    let n = factors[0].len();
    assert!(factors.iter().all(|f| f.len() == n), "factor grids must share a size");
    let dim = factors.len();
    let cells = n.pow(dim as u32);
    let mut out = Vec::with_capacity(cells);
    for flat in 0..cells {
        let mut rem = flat;
        let mut w = 1.0;
        for d in (0..dim).rev() {
            w *= factors[d][rem % n];
            rem /= n;
        }
        out.push(w);
    }
    out
}

/// Count strict local maxima of a pmf on the circular grid. Exact plateaus
/// (the uniform law) count zero modes.
pub fn count_circular_modes(pmf: &[f64]) -> usize {
    let n = pmf.len();
    (0..n)
        .filter(|&i| {
            let prev = pmf[(i + n - 1) % n];
            let next = pmf[(i + 1) % n];
            pmf[i] > prev && pmf[i] > next
        })
        .count()
}

/// Bin samples on the product grid used by [`TorusGrid`]; returns an
/// empirical pmf with `n_bins^dim` cells.
pub fn histogram_pmf(samples: &[Vec<f64>], dim: usize, n_bins: usize) -> Vec<f64> {
    let step = TWO_PI / n_bins as f64;
    let mut counts = vec![0.0_f64; n_bins.pow(dim as u32)];
    for s in samples {
        let mut flat = 0usize;
        for d in 0..dim {
            let mut b = (s[d].rem_euclid(TWO_PI) / step) as usize;
            if b >= n_bins {
                b = n_bins - 1;
            }
            flat = flat * n_bins + b;
        }
        counts[flat] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    for c in counts.iter_mut() {
        *c /= total;
    }
    counts
}

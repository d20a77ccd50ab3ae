//! Distribution parameter types on the circle and torus, with log-density
//! evaluation, parametrisation conversions and exact conditional extraction.
//!
//! Two parametrisations of the multivariate Generalised von Mises coexist:
//!
//! * [`MgvmCanonical`] — the over-parametrised precision-block form obtained
//!   by restricting a 2D-dimensional Gaussian to the torus,
//!   ```text
//!   log p̃(φ) = κᵀcos(φ-ν) - ½ [cos φ; sin φ]ᵀ [W^cc  W^cs; (W^cs)ᵀ  W^ss] [cos φ; sin φ]
//!   ```
//!   This is the construction interface: regression builds `W` from kernel
//!   Gram matrices, cPCA from loading matrices.
//!
//! * [`MgvmMinimal`] — the harmonic form used by inference,
//!   ```text
//!   log p̃(φ) = Σ_d κ₁,d cos(φ_d-ν₁,d) + Σ_d κ₂,d cos(2(φ_d-ν₂,d))
//!            + ½ Σ_{d≠j} u_{d,j} cos(φ_d-φ_j-α_{d,j}) + v_{d,j} cos(φ_d+φ_j-β_{d,j})
//!   ```
//!   with `u`, `v` symmetric and zero-diagonal, `α` antisymmetric, `β`
//!   symmetric. Its one-dimensional conditionals are GvM with a first-harmonic
//!   phasor that is a plain complex sum over the coupling terms; Gibbs and
//!   mean-field updates both reduce to that sum.
//!
//! Both forms describe the same unnormalised density up to an additive
//! constant; [`MgvmCanonical::to_minimal`] is the exact map between them.
//! Conversions here are validated against dense grid oracles in the test
//! suite rather than trusted from the algebra alone (the v-term sign in the
//! conditional is easy to get wrong; see `conditional_phasor`).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::angle::{angle_diff, phasor, polar, wrap_2pi, wrap_pi};
use crate::error::{Error, Result};

/// Tolerance for symmetry/antisymmetry checks on user-supplied matrices.
const SYMMETRY_TOL: f64 = 1e-9;

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{name} contains a non-finite entry")));
    }
    Ok(())
}

fn check_square(name: &str, m: &[Vec<f64>], dim: usize) -> Result<()> {
    if m.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: m.len() });
    }
    for row in m {
        if row.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
        }
        check_finite(name, row)?;
    }
    Ok(())
}

fn zeros(dim: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; dim]; dim]
}

// ---------------------------------------------------------------------------
// von Mises
// ---------------------------------------------------------------------------

/// von Mises parameters: mean `μ ∈ [0, 2π)` and concentration `κ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVonMises")]
pub struct VonMisesParams {
    mu: f64,
    kappa: f64,
}

#[derive(Deserialize)]
struct RawVonMises {
    mu: f64,
    kappa: f64,
}

impl TryFrom<RawVonMises> for VonMisesParams {
    type Error = Error;
    fn try_from(r: RawVonMises) -> Result<Self> {
        VonMisesParams::new(r.mu, r.kappa)
    }
}

impl VonMisesParams {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !mu.is_finite() || !kappa.is_finite() {
            return Err(Error::invalid("von Mises parameters must be finite"));
        }
        if kappa < 0.0 {
            return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
        }
        Ok(Self { mu: wrap_2pi(mu), kappa })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `κ cos(φ - μ)`.
    pub fn log_density_unnorm(&self, phi: f64) -> f64 {
        self.kappa * (phi - self.mu).cos()
    }
}

// ---------------------------------------------------------------------------
// Generalised von Mises (order 2)
// ---------------------------------------------------------------------------

/// Generalised von Mises parameters.
///
/// Unnormalised log-density `κ₁ cos(φ-μ₁) + κ₂ cos(2(φ-μ₂))`. The second
/// harmonic is π-periodic in `μ₂`, so `μ₂` is stored in `[0, π)`. Bimodal iff
/// `4κ₂ > κ₁` once the means are aligned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGvm")]
pub struct GvmParams {
    kappa1: f64,
    kappa2: f64,
    mu1: f64,
    mu2: f64,
}

#[derive(Deserialize)]
struct RawGvm {
    kappa1: f64,
    kappa2: f64,
    mu1: f64,
    mu2: f64,
}

impl TryFrom<RawGvm> for GvmParams {
    type Error = Error;
    fn try_from(r: RawGvm) -> Result<Self> {
        GvmParams::new(r.kappa1, r.kappa2, r.mu1, r.mu2)
    }
}

impl GvmParams {
    pub fn new(kappa1: f64, kappa2: f64, mu1: f64, mu2: f64) -> Result<Self> {
        for (name, v) in [("kappa1", kappa1), ("kappa2", kappa2), ("mu1", mu1), ("mu2", mu2)] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        if kappa1 < 0.0 || kappa2 < 0.0 {
            return Err(Error::invalid("GvM concentrations must be >= 0"));
        }
        // Zero concentrations get a conventional zero phase.
        let mu1 = if kappa1 == 0.0 { 0.0 } else { wrap_2pi(mu1) };
        let mu2 = if kappa2 == 0.0 { 0.0 } else { wrap_pi(mu2) };
        Ok(Self { kappa1, kappa2, mu1, mu2 })
    }

    /// von Mises as the κ₂ = 0 special case.
    pub fn from_von_mises(vm: &VonMisesParams) -> Self {
        Self { kappa1: vm.kappa(), kappa2: 0.0, mu1: vm.mu(), mu2: 0.0 }
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    /// `κ₁ cos(φ-μ₁) + κ₂ cos(2(φ-μ₂))`.
    pub fn log_density_unnorm(&self, phi: f64) -> f64 {
        self.kappa1 * (phi - self.mu1).cos() + self.kappa2 * (2.0 * (phi - self.mu2)).cos()
    }

    /// Natural parameters against sufficient statistics
    /// `(cos φ, sin φ, cos 2φ, sin 2φ)`.
    pub fn natural_params(&self) -> [f64; 4] {
        let z1 = phasor(self.kappa1, self.mu1);
        let z2 = phasor(self.kappa2, 2.0 * self.mu2);
        [z1.re, z1.im, z2.re, z2.im]
    }

    /// Inverse of [`Self::natural_params`].
    pub fn from_natural(eta: [f64; 4]) -> Self {
        let (kappa1, mu1) = polar(Complex64::new(eta[0], eta[1]));
        let (kappa2, two_mu2) = polar(Complex64::new(eta[2], eta[3]));
        Self { kappa1, kappa2, mu1, mu2: wrap_pi(0.5 * two_mu2) }
    }
}

// ---------------------------------------------------------------------------
// multivariate von Mises
// ---------------------------------------------------------------------------

/// Multivariate von Mises parameters.
///
/// Unnormalised log-density `κᵀcos(φ-μ) + sin(φ)ᵀ G sin(φ)` with `G`
/// zero-diagonal. Its one-dimensional conditionals are von Mises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMvm")]
pub struct MvmParams {
    kappa: Vec<f64>,
    mu: Vec<f64>,
    g: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawMvm {
    kappa: Vec<f64>,
    mu: Vec<f64>,
    g: Vec<Vec<f64>>,
}

impl TryFrom<RawMvm> for MvmParams {
    type Error = Error;
    fn try_from(r: RawMvm) -> Result<Self> {
        MvmParams::new(r.kappa, r.mu, r.g)
    }
}

impl MvmParams {
    pub fn new(kappa: Vec<f64>, mu: Vec<f64>, g: Vec<Vec<f64>>) -> Result<Self> {
        let dim = kappa.len();
        if dim == 0 {
            return Err(Error::invalid("mvM dimension must be >= 1"));
        }
        if mu.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: mu.len() });
        }
        check_finite("kappa", &kappa)?;
        check_finite("mu", &mu)?;
        check_square("g", &g, dim)?;
        if kappa.iter().any(|&k| k < 0.0) {
            return Err(Error::invalid("mvM concentrations must be >= 0"));
        }
        for d in 0..dim {
            if g[d][d].abs() > SYMMETRY_TOL {
                return Err(Error::invalid("diagonal of G must be zero"));
            }
        }
        let mu = mu.into_iter().map(wrap_2pi).collect();
        Ok(Self { kappa, mu, g })
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn g(&self) -> &[Vec<f64>] {
        &self.g
    }

    pub fn log_density_unnorm(&self, phi: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if phi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: phi.len() });
        }
        let s: Vec<f64> = phi.iter().map(|p| p.sin()).collect();
        let mut acc = 0.0;
        for d in 0..dim {
            acc += self.kappa[d] * (phi[d] - self.mu[d]).cos();
            for j in 0..dim {
                acc += self.g[d][j] * s[d] * s[j];
            }
        }
        Ok(acc)
    }

    /// Embed the mvM in the minimal mGvM form.
    ///
    /// `sin φ_d sin φ_j = ½[cos(φ_d-φ_j) - cos(φ_d+φ_j)]`, so each coupling
    /// `c = g_{d,j} + g_{j,d}` becomes a u-term with phase 0 (or π for
    /// negative c) and a v-term of equal magnitude with the opposite phase.
    /// No second harmonic arises: the conditionals stay von Mises.
    pub fn to_mgvm(&self) -> MgvmMinimal {
        let dim = self.dim();
        let mut u = zeros(dim);
        let mut alpha = zeros(dim);
        let mut v = zeros(dim);
        let mut beta = zeros(dim);
        for d in 0..dim {
            for j in (d + 1)..dim {
                // The ½ prefactor of the minimal-form cross sum halves the
                // coupling magnitude.
                let c = self.g[d][j] + self.g[j][d];
                let mag = 0.5 * c.abs();
                u[d][j] = mag;
                u[j][d] = mag;
                v[d][j] = mag;
                v[j][d] = mag;
                let (a, b) = if c >= 0.0 { (0.0, std::f64::consts::PI) } else { (std::f64::consts::PI, 0.0) };
                alpha[d][j] = a;
                alpha[j][d] = -a;
                beta[d][j] = b;
                beta[j][d] = b;
            }
        }
        MgvmMinimal {
            kappa1: self.kappa.clone(),
            nu1: self.mu.clone(),
            kappa2: vec![0.0; dim],
            nu2: vec![0.0; dim],
            u,
            alpha,
            v,
            beta,
        }
    }
}

// ---------------------------------------------------------------------------
// mGvM, canonical (precision-block) form
// ---------------------------------------------------------------------------

/// Over-parametrised mGvM: concentration vector `κ`, mean-angle vector `ν`
/// and the precision blocks `W^cc`, `W^cs`, `W^ss` of the underlying
/// Gaussian.
///
/// `W^cc` and `W^ss` are symmetrised as `(M+Mᵀ)/2` on construction; a warning
/// is logged if the supplied asymmetry exceeds 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCanonical")]
pub struct MgvmCanonical {
    kappa: Vec<f64>,
    nu: Vec<f64>,
    w_cc: Vec<Vec<f64>>,
    w_cs: Vec<Vec<f64>>,
    w_ss: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawCanonical {
    kappa: Vec<f64>,
    nu: Vec<f64>,
    w_cc: Vec<Vec<f64>>,
    w_cs: Vec<Vec<f64>>,
    w_ss: Vec<Vec<f64>>,
}

impl TryFrom<RawCanonical> for MgvmCanonical {
    type Error = Error;
    fn try_from(r: RawCanonical) -> Result<Self> {
        MgvmCanonical::new(r.kappa, r.nu, r.w_cc, r.w_cs, r.w_ss)
    }
}

fn symmetrize(name: &str, m: &mut [Vec<f64>]) {
    let dim = m.len();
    let mut worst = 0.0_f64;
    for d in 0..dim {
        for j in (d + 1)..dim {
            worst = worst.max((m[d][j] - m[j][d]).abs());
            let avg = 0.5 * (m[d][j] + m[j][d]);
            m[d][j] = avg;
            m[j][d] = avg;
        }
    }
    if worst > SYMMETRY_TOL {
        log::warn!("{name} asymmetry {worst:.3e} exceeds {SYMMETRY_TOL:.0e}; symmetrised as (M+Mᵀ)/2");
    }
}

impl MgvmCanonical {
    pub fn new(
        kappa: Vec<f64>,
        nu: Vec<f64>,
        w_cc: Vec<Vec<f64>>,
        w_cs: Vec<Vec<f64>>,
        w_ss: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = kappa.len();
        if dim == 0 {
            return Err(Error::invalid("mGvM dimension must be >= 1"));
        }
        if nu.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: nu.len() });
        }
        check_finite("kappa", &kappa)?;
        check_finite("nu", &nu)?;
        if kappa.iter().any(|&k| k < 0.0) {
            return Err(Error::invalid("mGvM concentrations must be >= 0"));
        }
        let mut w_cc = w_cc;
        let mut w_ss = w_ss;
        check_square("w_cc", &w_cc, dim)?;
        check_square("w_cs", &w_cs, dim)?;
        check_square("w_ss", &w_ss, dim)?;
        symmetrize("w_cc", &mut w_cc);
        symmetrize("w_ss", &mut w_ss);
        let nu = nu.into_iter().map(wrap_2pi).collect();
        Ok(Self { kappa, nu, w_cc, w_cs, w_ss })
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn w_cc(&self) -> &[Vec<f64>] {
        &self.w_cc
    }

    pub fn w_cs(&self) -> &[Vec<f64>] {
        &self.w_cs
    }

    pub fn w_ss(&self) -> &[Vec<f64>] {
        &self.w_ss
    }

    pub fn log_density_unnorm(&self, phi: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if phi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: phi.len() });
        }
        let c: Vec<f64> = phi.iter().map(|p| p.cos()).collect();
        let s: Vec<f64> = phi.iter().map(|p| p.sin()).collect();
        let mut linear = 0.0;
        let mut quad = 0.0;
        for d in 0..dim {
            linear += self.kappa[d] * (phi[d] - self.nu[d]).cos();
            for j in 0..dim {
                quad += self.w_cc[d][j] * c[d] * c[j]
                    + self.w_ss[d][j] * s[d] * s[j]
                    + 2.0 * self.w_cs[d][j] * c[d] * s[j];
            }
        }
        Ok(linear - 0.5 * quad)
    }

    /// Exact map to the minimal harmonic form (equal density up to an
    /// additive constant).
    ///
    /// Diagonal W entries produce the second harmonic through
    /// `z2_d = -¼(w^cc_dd - w^ss_dd) - ½ i w^cs_dd`, off-diagonal entries the
    /// coupling phasors
    /// ```text
    /// zU_{d,j} = -½[(w^cc_dj + w^ss_dj) + i(w^cs_jd - w^cs_dj)]
    /// zV_{d,j} = -½[(w^cc_dj - w^ss_dj) + i(w^cs_dj + w^cs_jd)]
    /// ```
    /// for `d < j`, giving `u = |zU|`, `α = arg zU`, `v = |zV|`, `β = arg zV`.
    pub fn to_minimal(&self) -> MgvmMinimal {
        let dim = self.dim();
        let mut kappa2 = vec![0.0; dim];
        let mut nu2 = vec![0.0; dim];
        for d in 0..dim {
            let z2 = Complex64::new(
                -0.25 * (self.w_cc[d][d] - self.w_ss[d][d]),
                -0.5 * self.w_cs[d][d],
            );
            let (k2, arg2) = polar(z2);
            kappa2[d] = k2;
            nu2[d] = if k2 == 0.0 { 0.0 } else { wrap_pi(0.5 * z2.arg()) };
            let _ = arg2;
        }
        let mut u = zeros(dim);
        let mut alpha = zeros(dim);
        let mut v = zeros(dim);
        let mut beta = zeros(dim);
        for d in 0..dim {
            for j in (d + 1)..dim {
                let zu = Complex64::new(
                    -0.5 * (self.w_cc[d][j] + self.w_ss[d][j]),
                    -0.5 * (self.w_cs[j][d] - self.w_cs[d][j]),
                );
                let zv = Complex64::new(
                    -0.5 * (self.w_cc[d][j] - self.w_ss[d][j]),
                    -0.5 * (self.w_cs[d][j] + self.w_cs[j][d]),
                );
                let um = zu.norm();
                let vm = zv.norm();
                u[d][j] = um;
                u[j][d] = um;
                v[d][j] = vm;
                v[j][d] = vm;
                let a = if um == 0.0 { 0.0 } else { zu.arg() };
                let b = if vm == 0.0 { 0.0 } else { zv.arg() };
                alpha[d][j] = a;
                alpha[j][d] = -a;
                beta[d][j] = b;
                beta[j][d] = b;
            }
        }
        MgvmMinimal {
            kappa1: self.kappa.clone(),
            nu1: self.nu.clone(),
            kappa2,
            nu2,
            u,
            alpha,
            v,
            beta,
        }
    }
}

// ---------------------------------------------------------------------------
// mGvM, minimal (harmonic) form
// ---------------------------------------------------------------------------

/// Minimal-form mGvM: per-dimension harmonics `(κ₁, ν₁, κ₂, ν₂)` plus
/// cross-term matrices `(U, α)` for angle differences and `(V, β)` for angle
/// sums.
///
/// Invariants: `U`, `V` non-negative, symmetric, zero-diagonal; `α`
/// antisymmetric; `β` symmetric. These make the double sum in the density
/// well defined, since `u_{d,j}cos(φ_d-φ_j-α_{d,j})` must equal its `(j,d)`
/// counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMinimal")]
pub struct MgvmMinimal {
    kappa1: Vec<f64>,
    nu1: Vec<f64>,
    kappa2: Vec<f64>,
    nu2: Vec<f64>,
    u: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawMinimal {
    kappa1: Vec<f64>,
    nu1: Vec<f64>,
    kappa2: Vec<f64>,
    nu2: Vec<f64>,
    u: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

impl TryFrom<RawMinimal> for MgvmMinimal {
    type Error = Error;
    fn try_from(r: RawMinimal) -> Result<Self> {
        MgvmMinimal::new(r.kappa1, r.nu1, r.kappa2, r.nu2, r.u, r.alpha, r.v, r.beta)
    }
}

impl MgvmMinimal {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kappa1: Vec<f64>,
        nu1: Vec<f64>,
        kappa2: Vec<f64>,
        nu2: Vec<f64>,
        u: Vec<Vec<f64>>,
        alpha: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = kappa1.len();
        if dim == 0 {
            return Err(Error::invalid("mGvM dimension must be >= 1"));
        }
        for (name, vec) in [("nu1", &nu1), ("kappa2", &kappa2), ("nu2", &nu2)] {
            if vec.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: vec.len() });
            }
            check_finite(name, vec)?;
        }
        check_finite("kappa1", &kappa1)?;
        if kappa1.iter().chain(kappa2.iter()).any(|&k| k < 0.0) {
            return Err(Error::invalid("harmonic concentrations must be >= 0"));
        }
        check_square("u", &u, dim)?;
        check_square("alpha", &alpha, dim)?;
        check_square("v", &v, dim)?;
        check_square("beta", &beta, dim)?;
        for d in 0..dim {
            if u[d][d].abs() > 0.0 || v[d][d].abs() > 0.0 {
                return Err(Error::invalid("diagonals of U and V must be zero"));
            }
            for j in 0..dim {
                if u[d][j] < 0.0 || v[d][j] < 0.0 {
                    return Err(Error::invalid("U and V must be non-negative"));
                }
            }
            for j in (d + 1)..dim {
                if (u[d][j] - u[j][d]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid("U must be symmetric"));
                }
                if (v[d][j] - v[j][d]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid("V must be symmetric"));
                }
                if u[d][j] > 0.0 && angle_diff(alpha[d][j], -alpha[j][d]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid("alpha must be antisymmetric (mod 2π)"));
                }
                if v[d][j] > 0.0 && angle_diff(beta[d][j], beta[j][d]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid("beta must be symmetric (mod 2π)"));
                }
            }
        }
        let nu1 = nu1
            .iter()
            .zip(&kappa1)
            .map(|(&n, &k)| if k == 0.0 { 0.0 } else { wrap_2pi(n) })
            .collect();
        let nu2 = nu2
            .iter()
            .zip(&kappa2)
            .map(|(&n, &k)| if k == 0.0 { 0.0 } else { wrap_pi(n) })
            .collect();
        Ok(Self { kappa1, nu1, kappa2, nu2, u, alpha, v, beta })
    }

    /// Product of independent GvM factors: all cross matrices zero.
    pub fn independent(factors: &[GvmParams]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("mGvM dimension must be >= 1"));
        }
        let dim = factors.len();
        Ok(Self {
            kappa1: factors.iter().map(|f| f.kappa1()).collect(),
            nu1: factors.iter().map(|f| f.mu1()).collect(),
            kappa2: factors.iter().map(|f| f.kappa2()).collect(),
            nu2: factors.iter().map(|f| f.mu2()).collect(),
            u: zeros(dim),
            alpha: zeros(dim),
            v: zeros(dim),
            beta: zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.kappa1.len()
    }

    pub fn kappa1(&self) -> &[f64] {
        &self.kappa1
    }

    pub fn nu1(&self) -> &[f64] {
        &self.nu1
    }

    pub fn kappa2(&self) -> &[f64] {
        &self.kappa2
    }

    pub fn nu2(&self) -> &[f64] {
        &self.nu2
    }

    pub fn u(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn v(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }

    /// The marginal-prior GvM factor of dimension `d` (couplings ignored).
    pub fn factor(&self, d: usize) -> Result<GvmParams> {
        self.check_index(d)?;
        GvmParams::new(self.kappa1[d], self.kappa2[d], self.nu1[d], self.nu2[d])
    }

    fn check_index(&self, d: usize) -> Result<()> {
        if d >= self.dim() {
            return Err(Error::IndexOutOfRange { index: d, dim: self.dim() });
        }
        Ok(())
    }

    pub fn log_density_unnorm(&self, phi: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if phi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: phi.len() });
        }
        let mut acc = 0.0;
        for d in 0..dim {
            acc += self.kappa1[d] * (phi[d] - self.nu1[d]).cos()
                + self.kappa2[d] * (2.0 * (phi[d] - self.nu2[d])).cos();
            for j in 0..dim {
                if j == d {
                    continue;
                }
                acc += 0.5
                    * (self.u[d][j] * (phi[d] - phi[j] - self.alpha[d][j]).cos()
                        + self.v[d][j] * (phi[d] + phi[j] - self.beta[d][j]).cos());
            }
        }
        Ok(acc)
    }

    /// First-harmonic phasor of the conditional of dimension `d`, with each
    /// neighbour's `e^{iφ_j}` supplied by `unit(j)`.
    ///
    /// ```text
    /// z_d = κ₁,d e^{iν₁,d} + Σ_{j≠d} u_{d,j} e^{iα_{d,j}}·unit(j)
    ///                      + v_{d,j} e^{iβ_{d,j}}·conj(unit(j))
    /// ```
    /// With `unit(j) = e^{iφ_j}` this is the Gibbs conditional; with
    /// `unit(j) = ⟨e^{iφ_j}⟩` the mean-field update. The v-term enters through
    /// the conjugate because `cos(φ_d + φ_j - β) = cos(φ_d - (β - φ_j))`.
    pub fn conditional_phasor<F>(&self, d: usize, unit: F) -> Complex64
    where
        F: Fn(usize) -> Complex64,
    {
        let mut z = phasor(self.kappa1[d], self.nu1[d]);
        for j in 0..self.dim() {
            if j == d {
                continue;
            }
            let w = unit(j);
            if self.u[d][j] != 0.0 {
                z += self.u[d][j] * Complex64::from_polar(1.0, self.alpha[d][j]) * w;
            }
            if self.v[d][j] != 0.0 {
                z += self.v[d][j] * Complex64::from_polar(1.0, self.beta[d][j]) * w.conj();
            }
        }
        z
    }

    /// Exact GvM conditional `p(φ_d | φ_{≠d})`.
    ///
    /// `phi_rest` holds the conditioning angles for dimensions `≠ d`, in
    /// index order with slot `d` removed. The second harmonic passes through
    /// unchanged.
    pub fn conditional_gvm(&self, d: usize, phi_rest: &[f64]) -> Result<GvmParams> {
        self.check_index(d)?;
        if phi_rest.len() != self.dim() - 1 {
            return Err(Error::DimensionMismatch { expected: self.dim() - 1, got: phi_rest.len() });
        }
        let z = self.conditional_phasor(d, |j| {
            let idx = if j < d { j } else { j - 1 };
            Complex64::from_polar(1.0, phi_rest[idx])
        });
        let (k1, m1) = polar(z);
        GvmParams::new(k1, self.kappa2[d], m1, self.nu2[d])
    }

    /// Conditional with the full angle vector supplied (slot `d` ignored);
    /// avoids re-packing inside Gibbs sweeps.
    pub fn conditional_gvm_full(&self, d: usize, phi: &[f64]) -> Result<GvmParams> {
        self.check_index(d)?;
        if phi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: phi.len() });
        }
        let z = self.conditional_phasor(d, |j| Complex64::from_polar(1.0, phi[j]));
        let (k1, m1) = polar(z);
        GvmParams::new(k1, self.kappa2[d], m1, self.nu2[d])
    }

    /// Rotate every angle by `c`: `ν₁ → ν₁+c`, `ν₂ → ν₂+c`, `α` unchanged,
    /// `β → β+2c`. Leaves `log_density_unnorm(φ+c)` equal to the original at
    /// `φ`.
    pub fn rotated(&self, c: f64) -> Self {
        let dim = self.dim();
        let mut out = self.clone();
        for d in 0..dim {
            if out.kappa1[d] > 0.0 {
                out.nu1[d] = wrap_2pi(out.nu1[d] + c);
            }
            if out.kappa2[d] > 0.0 {
                out.nu2[d] = wrap_pi(out.nu2[d] + c);
            }
            for j in 0..dim {
                if out.v[d][j] > 0.0 {
                    out.beta[d][j] += 2.0 * c;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn gvm_rejects_bad_params() {
        assert!(GvmParams::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(GvmParams::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        assert!(GvmParams::new(1.0, 1.0, -0.5, 3.5).is_ok());
    }

    #[test]
    fn gvm_mu2_is_pi_periodic() {
        let p = GvmParams::new(1.0, 2.0, 0.0, PI + 0.3).unwrap();
        assert_abs_diff_eq!(p.mu2(), 0.3, epsilon = 1e-12);
        for phi in [0.0, 0.7, 4.1] {
            let q = GvmParams::new(1.0, 2.0, 0.0, 0.3).unwrap();
            assert_abs_diff_eq!(p.log_density_unnorm(phi), q.log_density_unnorm(phi), epsilon = 1e-12);
        }
    }

    #[test]
    fn natural_params_round_trip() {
        let p = GvmParams::new(1.7, 0.4, 2.2, 1.1).unwrap();
        let q = GvmParams::from_natural(p.natural_params());
        assert_abs_diff_eq!(p.kappa1(), q.kappa1(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.kappa2(), q.kappa2(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.mu1(), q.mu1(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.mu2(), q.mu2(), epsilon = 1e-12);
    }

    /// κ = 0, W = I collapses on the torus: cos² + sin² = 1.
    #[test]
    fn isotropic_precision_is_constant() {
        let dim = 3;
        let eye = |on: f64| {
            (0..dim)
                .map(|d| (0..dim).map(|j| if d == j { on } else { 0.0 }).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let p = MgvmCanonical::new(vec![0.0; dim], vec![0.0; dim], eye(1.0), eye(0.0), eye(1.0))
            .unwrap();
        let base = p.log_density_unnorm(&[0.1, 2.0, 4.4]).unwrap();
        for phi in [[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [5.9, 0.3, 2.2]] {
            assert_abs_diff_eq!(p.log_density_unnorm(&phi).unwrap(), base, epsilon = 1e-12);
        }
    }

    /// Zero W keeps only the linear term: minimal form is (κ, ν) with all
    /// else zero.
    #[test]
    fn zero_w_converts_to_pure_first_harmonic() {
        let dim = 3;
        let z = zeros(dim);
        let kappa = vec![1.0, 2.0, 0.5];
        let nu = vec![0.3, 5.0, 1.2];
        let p = MgvmCanonical::new(kappa.clone(), nu.clone(), z.clone(), z.clone(), z).unwrap();
        let m = p.to_minimal();
        assert_eq!(m.kappa1(), kappa.as_slice());
        for d in 0..dim {
            assert_abs_diff_eq!(m.nu1()[d], wrap_2pi(nu[d]), epsilon = 1e-12);
            assert_eq!(m.kappa2()[d], 0.0);
            for j in 0..dim {
                assert_eq!(m.u()[d][j], 0.0);
                assert_eq!(m.v()[d][j], 0.0);
            }
        }
    }

    /// Diagonal second-harmonic map: W^cc = diag(2), D = 1 gives
    /// -cos²φ = const - ½cos 2φ, i.e. κ₂ = ½, ν₂ = π/2.
    #[test]
    fn diagonal_w_gives_second_harmonic() {
        let p = MgvmCanonical::new(
            vec![0.0],
            vec![0.0],
            vec![vec![2.0]],
            vec![vec![0.0]],
            vec![vec![0.0]],
        )
        .unwrap();
        let m = p.to_minimal();
        assert_abs_diff_eq!(m.kappa2()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m.nu2()[0], PI / 2.0, epsilon = 1e-14);
        // Density match up to a constant on a few points.
        let shift = p.log_density_unnorm(&[0.0]).unwrap() - m.log_density_unnorm(&[0.0]).unwrap();
        for phi in [0.4, 1.9, 3.3, 6.0] {
            let lc = p.log_density_unnorm(&[phi]).unwrap();
            let lm = m.log_density_unnorm(&[phi]).unwrap();
            assert_abs_diff_eq!(lc - lm, shift, epsilon = 1e-12);
        }
    }

    /// mvM sparsity pattern: W = [[Λ, A], [Aᵀ, Λ]] with Λ diagonal and A
    /// antisymmetric leaves V = 0 and κ₂ = 0 — the conditionals are von
    /// Mises.
    #[test]
    fn sparsity_pattern_recognised_as_mvm() {
        let dim = 3;
        let lam = vec![1.5, 0.7, 2.0];
        let a = [[0.0, 0.8, -0.3], [-0.8, 0.0, 0.5], [0.3, -0.5, 0.0]];
        let w_cc: Vec<Vec<f64>> = (0..dim)
            .map(|d| (0..dim).map(|j| if d == j { lam[d] } else { 0.0 }).collect())
            .collect();
        let w_cs: Vec<Vec<f64>> = (0..dim).map(|d| a[d].to_vec()).collect();
        let p =
            MgvmCanonical::new(vec![1.0; dim], vec![0.0; dim], w_cc.clone(), w_cs, w_cc).unwrap();
        let m = p.to_minimal();
        for d in 0..dim {
            assert_abs_diff_eq!(m.kappa2()[d], 0.0, epsilon = 1e-14);
            for j in 0..dim {
                assert_abs_diff_eq!(m.v()[d][j], 0.0, epsilon = 1e-14);
                if d != j {
                    // α carries the coupling: u_{d,j} = |A_{d,j}|, phase ±π/2.
                    assert_abs_diff_eq!(m.u()[d][j], a[d][j].abs(), epsilon = 1e-14);
                    assert_abs_diff_eq!(m.alpha()[d][j].cos(), 0.0, epsilon = 1e-14);
                }
            }
            let cond = m.conditional_gvm(d, &[0.3; 2]).unwrap();
            assert_eq!(cond.kappa2(), 0.0);
        }
    }

    /// No coupling: conditional equals the marginal prior factor.
    #[test]
    fn conditional_without_coupling_is_the_factor() {
        let factors = [
            GvmParams::new(1.0, 0.5, 0.3, 0.9).unwrap(),
            GvmParams::new(2.0, 0.0, 4.0, 0.0).unwrap(),
        ];
        let m = MgvmMinimal::independent(&factors).unwrap();
        for d in 0..2 {
            let c = m.conditional_gvm(d, &[1.234]).unwrap();
            assert_abs_diff_eq!(c.kappa1(), factors[d].kappa1(), epsilon = 1e-12);
            assert_abs_diff_eq!(c.kappa2(), factors[d].kappa2(), epsilon = 1e-12);
            assert_abs_diff_eq!(c.mu1(), factors[d].mu1(), epsilon = 1e-12);
            assert_abs_diff_eq!(c.mu2(), factors[d].mu2(), epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_index_out_of_range() {
        let m = MgvmMinimal::independent(&[GvmParams::new(1.0, 0.0, 0.0, 0.0).unwrap()]).unwrap();
        assert!(matches!(
            m.conditional_gvm(1, &[]),
            Err(Error::IndexOutOfRange { index: 1, dim: 1 })
        ));
    }

    /// mvM → mGvM with G = 0 is a product of independent von Mises factors.
    #[test]
    fn mvm_without_coupling_is_independent_vm() {
        let p = MvmParams::new(vec![1.0, 2.0], vec![0.5, 1.5], zeros(2)).unwrap();
        let m = p.to_mgvm();
        assert_eq!(m.kappa2(), &[0.0, 0.0]);
        let c = m.conditional_gvm(0, &[0.7]).unwrap();
        assert_eq!(c.kappa2(), 0.0);
        assert_abs_diff_eq!(c.kappa1(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.mu1(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn mvm_rejects_nonzero_diagonal() {
        let mut g = zeros(2);
        g[0][0] = 0.1;
        assert!(MvmParams::new(vec![1.0, 1.0], vec![0.0, 0.0], g).is_err());
    }

    #[test]
    fn minimal_validates_symmetry() {
        let mut u = zeros(2);
        u[0][1] = 1.0;
        u[1][0] = 0.9; // asymmetric
        let r = MgvmMinimal::new(
            vec![0.0; 2],
            vec![0.0; 2],
            vec![0.0; 2],
            vec![0.0; 2],
            u,
            zeros(2),
            zeros(2),
            zeros(2),
        );
        assert!(r.is_err());
    }

    /// Rotation equivariance: shifting φ and all location parameters leaves
    /// the unnormalised density unchanged.
    #[test]
    fn rotation_equivariance() {
        let mut u = zeros(2);
        u[0][1] = 0.8;
        u[1][0] = 0.8;
        let mut alpha = zeros(2);
        alpha[0][1] = 0.4;
        alpha[1][0] = -0.4;
        let mut v = zeros(2);
        v[0][1] = 0.3;
        v[1][0] = 0.3;
        let mut beta = zeros(2);
        beta[0][1] = 1.1;
        beta[1][0] = 1.1;
        let m = MgvmMinimal::new(
            vec![1.2, 0.7],
            vec![0.2, 2.0],
            vec![0.5, 0.9],
            vec![0.1, 1.4],
            u,
            alpha,
            v,
            beta,
        )
        .unwrap();
        let c = 0.83;
        let r = m.rotated(c);
        for phi in [[0.0, 1.0], [2.5, 4.0], [5.9, 0.1]] {
            let shifted = [phi[0] + c, phi[1] + c];
            assert_abs_diff_eq!(
                m.log_density_unnorm(&phi).unwrap(),
                r.log_density_unnorm(&shifted).unwrap(),
                epsilon = 1e-12
            );
        }
    }
}

//! Angle reduction and phasor helpers.
//!
//! Angles live in `[0, 2π)`; reduction uses floored modulo so `-0.1` maps to
//! `2π - 0.1`. A phasor is the complex `κ·e^{iν}` encoding of a
//! (concentration, angle) pair: sums of `κ cos(φ - ν)` terms combine by
//! complex addition.

use num_complex::Complex64;
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Reduce an angle to `[0, 2π)` (floored modulo).
#[inline]
pub fn wrap_2pi(x: f64) -> f64 {
    let r = x.rem_euclid(TWO_PI);
    // rem_euclid can return the modulus itself when x is a tiny negative.
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Reduce an angle to `[0, π)`; the second GvM harmonic is π-periodic in μ₂.
#[inline]
pub fn wrap_pi(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Signed distance between two angles, in `(-π, π]`.
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_2pi(a - b);
    if d > PI {
        d - TWO_PI
    } else {
        d
    }
}

/// Phasor `κ·e^{iν}` from a (concentration, angle) pair.
#[inline]
pub fn phasor(kappa: f64, nu: f64) -> Complex64 {
    Complex64::from_polar(kappa, nu)
}

/// Back from a phasor to `(κ, ν)` with `κ = |z| ≥ 0` and `ν ∈ [0, 2π)`.
///
/// The zero phasor has undefined argument; by convention it maps to `(0, 0)`.
#[inline]
pub fn polar(z: Complex64) -> (f64, f64) {
    let kappa = z.norm();
    if kappa == 0.0 {
        (0.0, 0.0)
    } else {
        (kappa, wrap_2pi(z.arg()))
    }
}

/// `log(e^a + e^b)` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ e^{x_i}` without overflow; `-∞` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    let sum: f64 = xs.iter().map(|&x| (x - hi).exp()).sum();
    hi + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wrap_2pi_floored() {
        assert_abs_diff_eq!(wrap_2pi(-0.1), TWO_PI - 0.1, epsilon = 1e-15);
        assert_eq!(wrap_2pi(0.0), 0.0);
        assert_abs_diff_eq!(wrap_2pi(TWO_PI + 0.25), 0.25, epsilon = 1e-12);
        assert!(wrap_2pi(-1e-18) < TWO_PI);
    }

    #[test]
    fn phasor_round_trip() {
        let (k, n) = polar(phasor(2.5, 1.2));
        assert_abs_diff_eq!(k, 2.5, epsilon = 1e-14);
        assert_abs_diff_eq!(n, 1.2, epsilon = 1e-14);
        assert_eq!(polar(Complex64::new(0.0, 0.0)), (0.0, 0.0));
    }

    #[test]
    fn log_sum_exp_stable() {
        assert_abs_diff_eq!(log_add_exp(1000.0, 1000.0), 1000.0 + 2.0_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0, 0.0]), 3.0_f64.ln(), epsilon = 1e-12);
    }
}

//! Special functions evaluated in `f64`: the standard normal CDF in log space,
//! the inverse Mills ratio and log-scale modified Bessel functions of the
//! first kind.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::sync::OnceLock;

/// `0.5 * ln(2π)`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `log_ndtr` switches to the continued-fraction tail.
const NDTR_TAIL: f64 = -6.0;
/// Bessel orders at or above this use the uniform (Debye) expansion.
pub const DEBYE_MIN_ORDER: f64 = 50.0;
/// Smallest argument for the large-argument (Hankel) expansion.
pub const HANKEL_MIN_ARG: f64 = 50.0;
/// Number of Debye correction polynomials u_1..u_N kept.
const DEBYE_TERMS: usize = 8;

/// Standard normal density.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Standard normal CDF, accurate in relative terms for both tails.
pub fn ndtr(z: f64) -> f64 {
    if z < NDTR_TAIL {
        log_ndtr(z).exp()
    } else {
        0.5 * libm::erfc(-z / SQRT_2)
    }
}

/// Mills ratio `(1 - Φ(x)) / φ(x)` for `x >= 3` by backward evaluation of
/// its continued fraction `1/(x + 1/(x + 2/(x + 3/(x + ...))))`.
fn mills_ratio_tail(x: f64) -> f64 {
    debug_assert!(x >= 3.0);
    let depth = 120;
    let mut t = x;
    for k in (1..=depth).rev() {
        t = x + k as f64 / t;
    }
    1.0 / t
}

/// `ln Φ(z)` without intermediate underflow.
pub fn log_ndtr(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if z >= 0.0 {
        (-0.5 * libm::erfc(z / SQRT_2)).ln_1p()
    } else if z >= NDTR_TAIL {
        (0.5 * libm::erfc(-z / SQRT_2)).ln()
    } else {
        -0.5 * z * z - LN_SQRT_2PI + mills_ratio_tail(-z).ln()
    }
}

/// Inverse Mills ratio `φ(z) / Φ(z)`, evaluated in log space so it stays
/// finite (≈ `-z`) far in the lower tail.
pub fn inv_mills(z: f64) -> f64 {
    if z < NDTR_TAIL {
        // φ(z)/Φ(z) = 1 / R(-z)
        1.0 / mills_ratio_tail(-z)
    } else {
        (-0.5 * z * z - LN_SQRT_2PI - log_ndtr(z)).exp()
    }
}

/// `ln Γ(x)` for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Log surface area of the unit sphere `S^{d-1}` embedded in `R^d`.
pub fn ln_sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    LN_2 + h * PI.ln() - ln_gamma(h)
}

/// Power series `I_ν(x) = (x/2)^ν Σ_k (x²/4)^k / (k! Γ(ν+k+1))` summed in
/// log space with periodic rescaling; all terms are positive.
pub fn log_bessel_iv_series(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let q = 0.25 * x * x;
    let mut sum = 1.0_f64;
    let mut term = 1.0_f64;
    let mut log_scale = 0.0_f64;
    let mut k = 1.0_f64;
    loop {
        term *= q / (k * (nu + k));
        sum += term;
        if sum > 1e280 {
            sum *= 1e-280;
            term *= 1e-280;
            log_scale += 280.0 * std::f64::consts::LN_10;
        }
        if k * (nu + k) > q && term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    nu * (0.5 * x).ln() - ln_gamma(nu + 1.0) + sum.ln() + log_scale
}

/// Large-argument expansion
/// `I_ν(x) ~ e^x / √(2πx) Σ_k (-1)^k a_k(ν) / x^k`, truncated at its
/// smallest term.
pub fn log_bessel_iv_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut sum = 1.0_f64;
    let mut term = 1.0_f64;
    let mut k = 1.0_f64;
    while k < 200.0 {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (8.0 * k * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
}

/// Coefficients (ascending powers of t) of the Debye polynomials
/// `u_0..u_N`, generated by
/// `u_{k+1}(t) = ½ t²(1−t²) u_k'(t) + ⅛ ∫_0^t (1−5s²) u_k(s) ds`.
pub fn debye_polynomials() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys = vec![vec![1.0]];
        for _ in 0..DEBYE_TERMS {
            let u = polys.last().unwrap();
            let mut next = vec![0.0; u.len() + 3];
            // ½ t²(1 − t²) u'(t)
            for (j, &c) in u.iter().enumerate().skip(1) {
                let dc = 0.5 * c * j as f64;
                next[j + 1] += dc;
                next[j + 3] -= dc;
            }
            // ⅛ ∫ (1 − 5 s²) u(s) ds
            for (j, &c) in u.iter().enumerate() {
                next[j + 1] += 0.125 * c / (j as f64 + 1.0);
                next[j + 3] -= 0.625 * c / (j as f64 + 3.0);
            }
            while next.last() == Some(&0.0) {
                next.pop();
            }
            polys.push(next);
        }
        polys
    })
}

fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Uniform asymptotic (Debye) expansion of `ln I_ν(νz)`, valid for large ν
/// uniformly in `z > 0`.
pub fn log_bessel_iv_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let s = z.hypot(1.0);
    let t = 1.0 / s;
    let eta = s + (z / (1.0 + s)).ln();
    let polys = debye_polynomials();
    let mut sum = 0.0;
    let mut nu_pow = 1.0;
    for p in polys {
        sum += poly_eval(p, t) / nu_pow;
        nu_pow *= nu;
    }
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.5 * s.ln() + sum.ln()
}

/// `ln I_ν(x)` for `ν >= 0`, `x >= 0`.
///
/// Large orders use the Debye expansion, small orders with `x` large compared
/// to `ν²` use the Hankel expansion, and everything else the power series.
pub fn log_bessel_iv(nu: f64, x: f64) -> f64 {
    debug_assert!(nu >= 0.0 && x >= 0.0);
    if x == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if nu >= DEBYE_MIN_ORDER {
        log_bessel_iv_debye(nu, x)
    } else if x >= HANKEL_MIN_ARG.max(2.0 * nu * nu) {
        log_bessel_iv_hankel(nu, x)
    } else {
        log_bessel_iv_series(nu, x)
    }
}

/// Bessel ratio `I_{ν+1}(x) / I_ν(x)`; zero at `x = 0`.
pub fn bessel_ratio(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    (log_bessel_iv(nu + 1.0, x) - log_bessel_iv(nu, x)).exp()
}

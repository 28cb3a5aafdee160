//! Priors over feature space, closed-form KL divergences for the variational
//! objective, and von Mises-Fisher special functions and sampling.
//!
//! Two priors are supported: `N(0, (1/D) I)`, which concentrates around the
//! unit sphere, paired with an isotropic Gaussian posterior; and the uniform
//! distribution on `S^{D-1}`, paired with a vMF posterior.

use crate::embedding::{GaussianEmbedding, VmfEmbedding, MIN_VARIANCE};
use crate::error::{invalid, Result};
use crate::rng::seeded_rng;
use crate::scalar::{sq_norm, Scalar};
use crate::special;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// `N(0, (1/D) I)`
    GaussianUnitSphere,
    /// Uniform on `S^{D-1}`
    UniformSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    kind: PriorKind,
    dimension: usize,
}

impl PriorSpec {
    pub fn new(kind: PriorKind, dimension: usize) -> Result<Self> {
        let min = match kind {
            PriorKind::GaussianUnitSphere => 1,
            PriorKind::UniformSphere => 2,
        };
        if dimension < min {
            return Err(invalid(format!("{kind:?} prior needs D >= {min}, got {dimension}")));
        }
        Ok(Self { kind, dimension })
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

/// `KL(N(μ, σ² I_D) ‖ N(0, (1/D) I_D)) = ½ D [Dσ² + ‖μ‖² − 1 − ln(Dσ²)]`.
pub fn kl_gaussian_to_prior<T: Scalar>(e: &GaussianEmbedding<T>) -> Result<T> {
    let s = e.variance();
    if !(s > T::zero()) {
        return Err(invalid("KL to the Gaussian prior needs a positive variance"));
    }
    let d = T::from_count(e.dim());
    let ds = d * s;
    let kl = T::lit(0.5) * d * (ds + sq_norm(e.mean()) - T::one() - ds.ln());
    Ok(kl.max(T::zero()))
}

/// `ln I_ν(x)`.
pub fn log_bessel_iv<T: Scalar>(order: T, x: T) -> T {
    T::lit(special::log_bessel_iv(order.as_f64(), x.as_f64()))
}

fn check_vmf_dim(d: usize) {
    assert!(d >= 2, "vMF needs D >= 2, got {d}");
}

/// `ln C_D(κ) = (D/2 − 1) ln κ − (D/2) ln 2π − ln I_{D/2−1}(κ)`, the log
/// normalizer of the vMF density `C_D(κ) exp(κ μᵀx)`. Continuous at `κ = 0`
/// where it equals minus the log surface area of `S^{D−1}`.
pub fn vmf_log_normalizer<T: Scalar>(d: usize, kappa: T) -> T {
    check_vmf_dim(d);
    T::lit(vmf_log_normalizer_f64(d, kappa.as_f64()))
}

fn vmf_log_normalizer_f64(d: usize, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return -special::ln_sphere_area(d);
    }
    let nu = d as f64 / 2.0 - 1.0;
    let log_kappa_term = if nu == 0.0 { 0.0 } else { nu * kappa.ln() };
    log_kappa_term - (d as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln() - special::log_bessel_iv(nu, kappa)
}

/// Mean resultant length `A_D(κ) = I_{D/2}(κ) / I_{D/2−1}(κ)`.
pub fn vmf_mean_resultant<T: Scalar>(d: usize, kappa: T) -> T {
    check_vmf_dim(d);
    T::lit(special::bessel_ratio(d as f64 / 2.0 - 1.0, kappa.as_f64()))
}

/// `A_D(κ)` and `dA_D/dκ = 1 − A² − (D − 1) A / κ` (equal to `1/D` at κ = 0).
pub fn vmf_mean_resultant_with_derivative<T: Scalar>(d: usize, kappa: T) -> (T, T) {
    check_vmf_dim(d);
    let k = kappa.as_f64();
    let df = d as f64;
    if k == 0.0 {
        return (T::zero(), T::lit(1.0 / df));
    }
    let a = special::bessel_ratio(df / 2.0 - 1.0, k);
    let da = 1.0 - a * a - (df - 1.0) * a / k;
    (T::lit(a), T::lit(da))
}

/// `KL(vMF(μ, κ) ‖ Uniform(S^{D−1})) = κ A_D(κ) + ln C_D(κ) + ln |S^{D−1}|`.
pub fn kl_vmf_to_uniform<T: Scalar>(e: &VmfEmbedding<T>) -> T {
    let d = e.dim();
    check_vmf_dim(d);
    let k = e.concentration().as_f64();
    if k == 0.0 {
        return T::zero();
    }
    let a = special::bessel_ratio(d as f64 / 2.0 - 1.0, k);
    let kl = k * a + vmf_log_normalizer_f64(d, k) + special::ln_sphere_area(d);
    T::lit(kl.max(0.0))
}

/// Derivative of [`kl_vmf_to_uniform`] with respect to κ, `κ A_D'(κ)`.
pub fn kl_vmf_to_uniform_dkappa<T: Scalar>(d: usize, kappa: T) -> T {
    let (_, da) = vmf_mean_resultant_with_derivative(d, kappa);
    kappa * da
}

/// Isotropic Gaussian with the vMF's mean `A_D(κ) μ` and total second moment
/// `E‖x‖² = 1`, i.e. per-coordinate variance `(1 − A²)/D`.
pub fn vmf_to_gaussian_moments<T: Scalar>(e: &VmfEmbedding<T>) -> GaussianEmbedding<T> {
    let d = e.dim();
    check_vmf_dim(d);
    let (a, var) = vmf_matched_scalars(d, e.concentration().as_f64());
    let mean = e.direction().iter().map(|&x| x * T::lit(a)).collect();
    GaussianEmbedding::new(mean, T::lit(var.max(MIN_VARIANCE))).expect("valid moment-matched Gaussian")
}

/// `(A, (1 − A²)/D)` with `1 − A` evaluated without cancellation.
fn vmf_matched_scalars(d: usize, kappa: f64) -> (f64, f64) {
    if kappa == 0.0 {
        return (0.0, 1.0 / d as f64);
    }
    let nu = d as f64 / 2.0 - 1.0;
    let log_ratio = special::log_bessel_iv(nu + 1.0, kappa) - special::log_bessel_iv(nu, kappa);
    let a = log_ratio.exp();
    let one_minus_a = -log_ratio.exp_m1();
    (a, one_minus_a * (1.0 + a) / d as f64)
}

/// Wood's rejection sampler for vMF(μ, κ) on `S^{D−1}`.
#[derive(Debug, Clone)]
pub struct VmfSampler {
    direction: Vec<f64>,
    kappa: f64,
    b: f64,
    x0: f64,
    c: f64,
    beta: Beta<f64>,
}

impl VmfSampler {
    pub fn new<T: Scalar>(e: &VmfEmbedding<T>) -> Self {
        let d = e.dim();
        check_vmf_dim(d);
        let dm1 = (d - 1) as f64;
        let kappa = e.concentration().as_f64();
        let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
        Self {
            direction: e.direction().iter().map(|x| x.as_f64()).collect(),
            kappa,
            b,
            x0,
            c,
            beta: Beta::new(dm1 / 2.0, dm1 / 2.0).expect("valid beta parameters"),
        }
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// Draws the cosine `w = μᵀx` of one sample.
    pub fn sample_cosine<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let dm1 = (self.dim() - 1) as f64;
        loop {
            let z = self.beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random();
            if self.kappa * w + dm1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                return w;
            }
        }
    }

    /// Writes one unit-norm sample into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let w = self.sample_cosine(rng);
        let mu = &self.direction;
        // Uniform tangent direction: project a Gaussian vector off μ.
        let v = loop {
            for o in out.iter_mut() {
                *o = StandardNormal.sample(rng);
            }
            let proj: f64 = out.iter().zip(mu).map(|(a, b)| a * b).sum();
            for (o, m) in out.iter_mut().zip(mu) {
                *o -= proj * m;
            }
            let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break n;
            }
        };
        let s = (1.0 - w * w).max(0.0).sqrt();
        for (o, m) in out.iter_mut().zip(mu) {
            *o = w * m + s * *o / v;
        }
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        for o in out.iter_mut() {
            *o /= n;
        }
    }
}

/// `n` i.i.d. vMF samples from a generator seeded with `seed`.
pub fn sample_vmf<T: Scalar>(e: &VmfEmbedding<T>, n: usize, seed: u64) -> Vec<Vec<T>> {
    let sampler = VmfSampler::new(e);
    let mut rng = seeded_rng(seed);
    let mut buf = vec![0.0; e.dim()];
    (0..n)
        .map(|_| {
            sampler.sample_into(&mut rng, &mut buf);
            buf.iter().map(|&x| T::lit(x)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn prior_spec_validation() {
        assert!(PriorSpec::new(PriorKind::UniformSphere, 1).is_err());
        assert!(PriorSpec::new(PriorKind::GaussianUnitSphere, 1).is_ok());
        assert!(PriorSpec::new(PriorKind::GaussianUnitSphere, 0).is_err());
    }

    #[test]
    fn gaussian_kl_examples() {
        let d = 5;
        let at_prior = GaussianEmbedding::new(vec![0.0; d], 1.0 / d as f64).unwrap();
        assert!(kl_gaussian_to_prior(&at_prior).unwrap().abs() < 1e-15);
        let e = GaussianEmbedding::new(vec![0.0, 0.0], 1.0).unwrap();
        assert!((kl_gaussian_to_prior(&e).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-15);
        let p = GaussianEmbedding::point(vec![0.0, 1.0]).unwrap();
        assert!(kl_gaussian_to_prior(&p).is_err());
    }

    #[test]
    fn gaussian_kl_convex_in_variance_with_minimum_at_prior() {
        let d = 4;
        let f = |s: f64| kl_gaussian_to_prior(&GaussianEmbedding::new(vec![0.0; d], s).unwrap()).unwrap();
        let grid: Vec<f64> = (1..200).map(|i| i as f64 * 0.005).collect();
        for w in grid.windows(3) {
            assert!(f(w[0]) + f(w[2]) - 2.0 * f(w[1]) > 0.0);
        }
        let min = grid.iter().cloned().fold((f64::INFINITY, 0.0), |acc, s| if f(s) < acc.0 { (f(s), s) } else { acc });
        assert!((min.1 - 0.25).abs() < 0.005 + 1e-12);
    }

    #[test]
    fn half_integer_bessel_closed_form() {
        let x = 2.0f64;
        let exact = ((2.0 / (PI * x)).sqrt() * x.sinh()).ln();
        assert!((log_bessel_iv(0.5, x) - exact).abs() < 1e-13);
        assert_eq!(log_bessel_iv(0.0, 0.0), 0.0);
    }

    #[test]
    fn normalizer_d3() {
        // κ → 0: uniform on S², C = 1/(4π)
        assert!((vmf_log_normalizer(3, 0.0) + (4.0 * PI).ln()).abs() < 1e-14);
        assert!((vmf_log_normalizer(3, 1e-8) + (4.0 * PI).ln()).abs() < 1e-12);
        // C_3(κ) = κ / (4π sinh κ)
        let k = 1.0f64;
        let exact = (k / (4.0 * PI * k.sinh())).ln();
        assert!((vmf_log_normalizer(3, k) - exact).abs() < 1e-13);
        assert!((vmf_log_normalizer(2, 0.0) + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn mean_resultant_d3_closed_form() {
        assert_eq!(vmf_mean_resultant(3, 0.0), 0.0);
        let k = 1.0f64;
        let exact = 1.0 / k.tanh() - 1.0 / k;
        let a = vmf_mean_resultant(3, k);
        assert!((a - exact).abs() < 1e-13);
        assert!((a - 0.3130).abs() < 1e-4);
    }

    #[test]
    fn mean_resultant_strictly_increasing() {
        for d in [2usize, 3, 8, 64] {
            let mut prev = -1.0;
            for i in 0..400 {
                let a = vmf_mean_resultant(d, i as f64 * 0.25);
                assert!(a > prev && a < 1.0, "d={d} i={i}");
                prev = a;
            }
        }
    }

    #[test]
    fn mean_resultant_derivative_matches_finite_difference() {
        for d in [2usize, 3, 8, 64] {
            for k in [0.0, 0.01, 0.5, 3.0, 40.0, 300.0] {
                let (_, da): (f64, f64) = vmf_mean_resultant_with_derivative(d, k);
                let h = 1e-5 * (1.0 + k);
                let lo = if k == 0.0 { 0.0 } else { k - h };
                let fd = (vmf_mean_resultant(d, k + h) - vmf_mean_resultant(d, lo)) / (k + h - lo);
                assert!((da - fd).abs() < 1e-5 * da.abs().max(1e-3), "d={d} k={k} {da} {fd}");
            }
        }
    }

    #[test]
    fn vmf_kl_zero_and_monotone() {
        let e = VmfEmbedding::new(unit(3, 0), 0.0).unwrap();
        assert_eq!(kl_vmf_to_uniform(&e), 0.0);
        for d in [2usize, 3, 16, 128] {
            let mut prev = 0.0;
            for i in 1..200 {
                let kl = kl_vmf_to_uniform(&VmfEmbedding::new(unit(d, 0), i as f64 * 0.5).unwrap());
                assert!(kl > prev, "d={d} i={i}");
                prev = kl;
            }
        }
    }

    #[test]
    fn vmf_kl_derivative_matches_finite_difference() {
        for d in [2usize, 5, 32] {
            for k in [0.3, 2.0, 25.0] {
                let f = |k: f64| kl_vmf_to_uniform(&VmfEmbedding::new(unit(d, 1), k).unwrap());
                let h = 1e-5;
                let fd = (f(k + h) - f(k - h)) / (2.0 * h);
                let an = kl_vmf_to_uniform_dkappa(d, k);
                assert!((an - fd).abs() < 1e-6 * an.abs().max(1e-3), "d={d} k={k}");
            }
        }
    }

    #[test]
    fn moment_matching_limits() {
        let u = VmfEmbedding::new(unit(4, 2), 0.0).unwrap();
        let g = vmf_to_gaussian_moments(&u);
        assert!(g.mean().iter().all(|&x| x == 0.0));
        assert!((g.variance() - 0.25).abs() < 1e-15);
        let c = VmfEmbedding::new(unit(4, 2), 1e8).unwrap();
        let g = vmf_to_gaussian_moments(&c);
        assert!((g.mean()[2] - 1.0).abs() < 1e-7);
        assert!(g.variance() < 1e-8);
        // total second moment preserved
        let m = VmfEmbedding::new(unit(6, 0), 3.0).unwrap();
        let g = vmf_to_gaussian_moments(&m);
        let second = sq_norm(g.mean()) + 6.0 * g.variance();
        assert!((second - 1.0).abs() < 1e-14);
    }

    #[test]
    fn samples_are_unit_norm_and_seeded() {
        let e = VmfEmbedding::<f64>::from_unnormalized(vec![1.0, 2.0, -1.0, 0.5], 7.0).unwrap();
        let s = sample_vmf(&e, 500, 11);
        assert!(s.iter().all(|x| (sq_norm(x).sqrt() - 1.0).abs() < 1e-9));
        assert_eq!(s, sample_vmf(&e, 500, 11));
        assert_ne!(s, sample_vmf(&e, 500, 12));
    }

    #[test]
    fn uniform_samples_have_small_mean() {
        let n = 20_000;
        let e = VmfEmbedding::new(unit(5, 0), 0.0).unwrap();
        let s = sample_vmf(&e, n, 3);
        let mut m = vec![0.0; 5];
        for x in &s {
            for (a, b) in m.iter_mut().zip(x) {
                *a += b / n as f64;
            }
        }
        assert!(sq_norm(&m).sqrt() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn empirical_resultant_matches_bessel_ratio() {
        let (d, k, n) = (8usize, 5.0f64, 200_000usize);
        let e = VmfEmbedding::new(unit(d, 3), k).unwrap();
        let sampler = VmfSampler::new(&e);
        let mut rng = seeded_rng(5);
        let ws: Vec<f64> = (0..n).map(|_| sampler.sample_cosine(&mut rng)).collect();
        let mean = ws.iter().sum::<f64>() / n as f64;
        let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - vmf_mean_resultant(d, k)).abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn gaussian_kl_nonnegative(mean in proptest::collection::vec(-3.0f64..3.0, 1..20), s in 1e-6f64..10.0) {
            let e = GaussianEmbedding::new(mean, s).unwrap();
            prop_assert!(kl_gaussian_to_prior(&e).unwrap() >= 0.0);
        }

        #[test]
        fn bessel_recurrence(nu in 1.0f64..300.0, x in 0.01f64..1500.0) {
            // I_{ν−1} − I_{ν+1} = (2ν/x) I_ν
            let lm = log_bessel_iv(nu - 1.0, x);
            let lp = log_bessel_iv(nu + 1.0, x);
            let l0 = log_bessel_iv(nu, x);
            let lhs = lm + (-(lp - lm).exp_m1()).ln();
            let rhs = (2.0 * nu / x).ln() + l0;
            prop_assert!((lhs - rhs).abs() < 1e-6, "nu={} x={} lhs={} rhs={}", nu, x, lhs, rhs);
        }
    }
}

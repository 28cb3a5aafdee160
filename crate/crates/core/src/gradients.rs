//! Analytic gradients of the triplet NLL and the Gaussian KL term, and a
//! central finite-difference checker.
//!
//! Gradients are taken with respect to the means and the variances σ²
//! (not σ or any pre-activation); chaining through the encoder happens in
//! [`crate::encoder`].

use crate::embedding::{GaussianEmbedding, Triplet};
use crate::error::{Error, Result};
use crate::likelihood::Margin;
use crate::scalar::Scalar;
use crate::special;
use crate::tau::{gaps, tau_moments};
use serde::{Deserialize, Serialize};

/// Gradient of a scalar loss with respect to all parameters of a triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TripletGrad<T: Scalar> {
    pub d_mu_a: Vec<T>,
    pub d_mu_p: Vec<T>,
    pub d_mu_n: Vec<T>,
    pub d_var_a: T,
    pub d_var_p: T,
    pub d_var_n: T,
}

impl<T: Scalar> TripletGrad<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            d_mu_a: vec![T::zero(); d],
            d_mu_p: vec![T::zero(); d],
            d_mu_n: vec![T::zero(); d],
            d_var_a: T::zero(),
            d_var_p: T::zero(),
            d_var_n: T::zero(),
        }
    }

    pub fn scale(&mut self, c: T) {
        for v in [&mut self.d_mu_a, &mut self.d_mu_p, &mut self.d_mu_n] {
            v.iter_mut().for_each(|x| *x *= c);
        }
        self.d_var_a *= c;
        self.d_var_p *= c;
        self.d_var_n *= c;
    }

    /// Flattened as `[μ_a, μ_p, μ_n, σ²_a, σ²_p, σ²_n]`, matching
    /// [`triplet_to_params`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(3 * self.d_mu_a.len() + 3);
        out.extend_from_slice(&self.d_mu_a);
        out.extend_from_slice(&self.d_mu_p);
        out.extend_from_slice(&self.d_mu_n);
        out.extend([self.d_var_a, self.d_var_p, self.d_var_n]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

/// Flattens a triplet as `[μ_a, μ_p, μ_n, σ²_a, σ²_p, σ²_n]`.
pub fn triplet_to_params<T: Scalar>(t: &Triplet<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(3 * t.dim() + 3);
    out.extend_from_slice(t.anchor.mean());
    out.extend_from_slice(t.positive.mean());
    out.extend_from_slice(t.negative.mean());
    out.extend([t.anchor.variance(), t.positive.variance(), t.negative.variance()]);
    out
}

/// Inverse of [`triplet_to_params`].
pub fn triplet_from_params<T: Scalar>(params: &[T], d: usize) -> Result<Triplet<T>> {
    if params.len() != 3 * d + 3 {
        return Err(Error::DimensionMismatch { expected: 3 * d + 3, found: params.len() });
    }
    let e = |i: usize| GaussianEmbedding::new(params[i * d..(i + 1) * d].to_vec(), params[3 * d + i]);
    Triplet::new(e(0)?, e(1)?, e(2)?)
}

/// Gradient of `nll(tau_moments(t), m)`.
///
/// `∂NLL/∂μ_τ = λ(z)/σ_τ` and `∂NLL/∂σ²_τ = λ(z) z / (2σ²_τ)` with
/// `z = (−m − μ_τ)/σ_τ` and `λ = φ/Φ` the inverse Mills ratio, chained
/// through the closed-form moments.
pub fn nll_gradients<T: Scalar>(t: &Triplet<T>, m: Margin<T>) -> Result<TripletGrad<T>> {
    let mo = tau_moments(t);
    if !(mo.variance > T::zero()) {
        return Err(Error::DegenerateTriplet);
    }
    let sd = mo.std_dev();
    let z = (-m.value() - mo.mean) / sd;
    let lambda = T::lit(special::inv_mills(z.as_f64()));
    let g_mean = lambda / sd;
    let g_var = lambda * z / (T::lit(2.0) * mo.variance);
    Ok(moment_chain(t, g_mean, g_var))
}

/// Chains upstream gradients `(∂L/∂μ_τ, ∂L/∂σ²_τ)` through the closed forms.
pub fn moment_chain<T: Scalar>(t: &Triplet<T>, g_mean: T, g_var: T) -> TripletGrad<T> {
    let d = t.dim();
    let df = T::from_count(d);
    let (sa, sp, sn) = (t.anchor.variance(), t.positive.variance(), t.negative.variance());
    let (a, p, n) = (t.anchor.mean(), t.positive.mean(), t.negative.mean());
    let g = gaps(t);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let eight = T::lit(8.0);

    let mut out = TripletGrad::zeros(d);
    for i in 0..d {
        let pa = p[i] - a[i];
        let na = n[i] - a[i];
        let pn = p[i] - n[i];
        // ∂μ_τ: a → 2(μ_n − μ_p), p → 2(μ_p − μ_a), n → −2(μ_n − μ_a)
        // ∂σ²_τ: a → −8σ_p²(μ_p−μ_a) − 8σ_n²(μ_n−μ_a), p → 8σ_a²(μ_p−μ_n) + 8σ_p²(μ_p−μ_a),
        //        n → −8σ_a²(μ_p−μ_n) + 8σ_n²(μ_n−μ_a)
        out.d_mu_a[i] = g_mean * (-two * pn) - g_var * eight * (sp * pa + sn * na);
        out.d_mu_p[i] = g_mean * (two * pa) + g_var * eight * (sa * pn + sp * pa);
        out.d_mu_n[i] = g_mean * (-two * na) + g_var * eight * (sn * na - sa * pn);
    }
    out.d_var_a = g_var * four * (df * (sp + sn) + g.pn);
    out.d_var_p = g_mean * df + g_var * four * (df * (sp + sa) + g.pa);
    out.d_var_n = -g_mean * df + g_var * four * (df * (sn + sa) + g.na);
    out
}

/// Gradient of [`crate::priors::kl_gaussian_to_prior`]: `(D μ, ½ D (D − 1/σ²))`.
pub fn kl_gradients<T: Scalar>(e: &GaussianEmbedding<T>) -> Result<(Vec<T>, T)> {
    let s = e.variance();
    if !(s > T::zero()) {
        return Err(crate::error::invalid("KL gradient needs a positive variance"));
    }
    let d = T::from_count(e.dim());
    let d_mu = e.mean().iter().map(|&m| d * m).collect();
    let d_var = T::lit(0.5) * d * (d - T::one() / s);
    Ok((d_mu, d_var))
}

/// Per-coordinate comparison of an analytic gradient against central differences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdReport {
    pub numeric: Vec<f64>,
    pub analytic: Vec<f64>,
    pub abs_err: Vec<f64>,
    pub rel_err: Vec<f64>,
    /// Coordinates where `f` was not finite at a perturbed point.
    pub non_finite: Vec<usize>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl FdReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_err <= rel_tol
    }
}

/// Relative error floor: components whose magnitudes are both below this are
/// compared in absolute terms.
pub const FD_REL_FLOOR: f64 = 1e-8;

/// Relative error `|a − n| / max(|a|, |n|, FD_REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR)
}

fn five_point<F>(f: &F, x: &mut [f64], i: usize, step: f64) -> Option<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let orig = x[i];
    let mut at = |h: f64| {
        x[i] = orig + h;
        f(x)
    };
    let vals = [at(2.0 * step), at(step), at(-step), at(-2.0 * step)];
    x[i] = orig;
    vals.iter()
        .all(|v| v.is_finite())
        .then(|| (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * step))
}

/// Five-point central-difference gradient of `f` at `point` with step
/// `step` (truncation error `O(step⁴)`), compared against `analytic`.
pub fn finite_diff_check<F>(f: F, point: &[f64], step: f64, analytic: &[f64]) -> FdReport
where
    F: Fn(&[f64]) -> f64,
{
    finite_diff_check_piecewise(f, point, &[step], 0.0, analytic)
}

/// Like [`finite_diff_check`] for piecewise-smooth `f` (ReLU, hinge): a
/// component that misses `rel_tol` at one step is retried at the next,
/// and the closest estimate is kept. Steps stop early once a component
/// agrees to `rel_tol / 1000`. A kink within `2·step` of the point
/// then cannot fail a correct gradient, while sign or scale errors still
/// show up at every step.
pub fn finite_diff_check_piecewise<F>(f: F, point: &[f64], steps: &[f64], rel_tol: f64, analytic: &[f64]) -> FdReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    assert!(!steps.is_empty(), "at least one step");
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    let mut non_finite = Vec::new();
    for i in 0..point.len() {
        let mut best: Option<f64> = None;
        for &h in steps {
            let Some(n) = five_point(&f, &mut x, i, h) else { continue };
            if best.is_none_or(|b| relative_error(analytic[i], n) < relative_error(analytic[i], b)) {
                best = Some(n);
            }
            if relative_error(analytic[i], n) <= rel_tol * 1e-3 {
                break;
            }
        }
        match best {
            Some(n) => numeric.push(n),
            None => {
                non_finite.push(i);
                numeric.push(f64::NAN);
            }
        }
    }
    FdReport::new(numeric, analytic.to_vec(), non_finite)
}

impl FdReport {
    fn new(numeric: Vec<f64>, analytic: Vec<f64>, non_finite: Vec<usize>) -> Self {
        let abs_err: Vec<f64> = numeric.iter().zip(&analytic).map(|(n, a)| (n - a).abs()).collect();
        let rel_err: Vec<f64> = numeric.iter().zip(&analytic).map(|(&n, &a)| relative_error(a, n)).collect();
        let max_of = |v: &[f64]| v.iter().filter(|x| x.is_finite()).fold(0.0f64, |m, &x| m.max(x));
        FdReport {
            max_rel_err: max_of(&rel_err),
            max_abs_err: max_of(&abs_err),
            numeric,
            analytic,
            abs_err,
            rel_err,
            non_finite,
        }
    }

    /// Joins reports over disjoint coordinate blocks.
    pub fn concat(self, other: FdReport) -> FdReport {
        let offset = self.numeric.len();
        let mut numeric = self.numeric;
        numeric.extend(other.numeric);
        let mut analytic = self.analytic;
        analytic.extend(other.analytic);
        let mut non_finite = self.non_finite;
        non_finite.extend(other.non_finite.iter().map(|i| i + offset));
        FdReport::new(numeric, analytic, non_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::nll;
    use crate::priors::kl_gaussian_to_prior;

    fn g(mean: &[f64], var: f64) -> GaussianEmbedding<f64> {
        GaussianEmbedding::new(mean.to_vec(), var).unwrap()
    }

    #[test]
    fn fd_of_squared_norm() {
        let r = finite_diff_check(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5, &[2.0, 4.0]);
        assert!(r.max_abs_err < 1e-8);
        assert!(r.passes(1e-8));
    }

    #[test]
    fn fd_of_constant() {
        let r = finite_diff_check(|_| 3.5, &[1.0, -2.0, 0.3], 1e-4, &[0.0; 3]);
        assert!(r.numeric.iter().all(|&n| n == 0.0));
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn fd_flags_non_finite() {
        let r = finite_diff_check(|x| if x[1] > 1.0 { f64::NAN } else { x[0] }, &[0.0, 1.0], 1e-3, &[1.0, 0.0]);
        assert_eq!(r.non_finite, vec![1]);
        assert!(!r.passes(1.0));
    }

    #[test]
    fn nll_gradient_matches_fd_small_case() {
        let t = Triplet::new(g(&[0.1, -0.3], 0.2), g(&[0.4, 0.1], 0.05), g(&[-0.2, 0.3], 0.3)).unwrap();
        let m = Margin::new(0.1).unwrap();
        let an = nll_gradients(&t, m).unwrap().to_flat();
        let f = |x: &[f64]| nll(&tau_moments(&triplet_from_params(x, 2).unwrap()), m).value();
        let r = finite_diff_check(f, &triplet_to_params(&t), 1e-6, &an);
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn degenerate_triplet_is_an_error() {
        let p = |m: &[f64]| GaussianEmbedding::point(m.to_vec()).unwrap();
        let t = Triplet::new(p(&[0.0]), p(&[1.0]), p(&[2.0])).unwrap();
        assert_eq!(nll_gradients(&t, Margin::zero()), Err(Error::DegenerateTriplet));
    }

    #[test]
    fn kl_gradient_zero_at_prior_and_sign() {
        let d = 6;
        let (dm, dv) = kl_gradients(&g(&vec![0.0; d], 1.0 / d as f64)).unwrap();
        assert!(dm.iter().all(|&x| x == 0.0));
        assert!(dv.abs() < 1e-12);
        assert!(kl_gradients(&g(&vec![0.0; d], 0.5)).unwrap().1 > 0.0);
        assert!(kl_gradients(&g(&vec![0.0; d], 0.05)).unwrap().1 < 0.0);
    }

    #[test]
    fn kl_gradient_matches_fd() {
        let e = g(&[0.3, -0.7, 1.1], 0.4);
        let (dm, dv) = kl_gradients(&e).unwrap();
        let mut an = dm;
        an.push(dv);
        let mut x = e.mean().to_vec();
        x.push(e.variance());
        let f = |x: &[f64]| kl_gaussian_to_prior(&g(&x[..3], x[3])).unwrap();
        assert!(finite_diff_check(f, &x, 1e-6, &an).passes(1e-6));
    }

    #[test]
    fn swap_symmetry_of_mean_gradients() {
        // m = 0, σ_p = σ_n: swapping p and n negates μ_τ; the gradient w.r.t.
        // μ_p of one triplet mirrors the gradient w.r.t. μ_n of the swapped one
        // evaluated at the negated statistic.
        let t = Triplet::new(g(&[0.2, 0.1], 0.1), g(&[0.5, -0.4], 0.2), g(&[-0.3, 0.6], 0.2)).unwrap();
        let s = t.swapped();
        let m = Margin::zero();
        // ∂μ_τ/∂μ_p(t) = −∂μ_τ/∂μ_n(s), and σ²_τ is swap-invariant.
        let ct = moment_chain(&t, 1.0, 0.0);
        let cs = moment_chain(&s, 1.0, 0.0);
        for i in 0..2 {
            assert!((ct.d_mu_p[i] + cs.d_mu_n[i]).abs() < 1e-14);
        }
        let vt = moment_chain(&t, 0.0, 1.0);
        let vs = moment_chain(&s, 0.0, 1.0);
        for i in 0..2 {
            assert!((vt.d_mu_p[i] - vs.d_mu_n[i]).abs() < 1e-14);
        }
        // full NLL gradients at statistics of opposite sign remain finite
        assert!(nll_gradients(&t, m).unwrap().is_finite());
        assert!(nll_gradients(&s, m).unwrap().is_finite());
    }

    #[test]
    fn translation_leaves_variance_gradients_unchanged() {
        let t = Triplet::new(g(&[0.2, 0.1], 0.1), g(&[0.5, -0.4], 0.2), g(&[-0.3, 0.6], 0.3)).unwrap();
        let shift = |e: &GaussianEmbedding<f64>| g(&[e.mean()[0] + 3.0, e.mean()[1] - 1.5], e.variance());
        let u = Triplet::new(shift(&t.anchor), shift(&t.positive), shift(&t.negative)).unwrap();
        let m = Margin::new(0.05).unwrap();
        let (a, b) = (nll_gradients(&t, m).unwrap(), nll_gradients(&u, m).unwrap());
        for (x, y) in a.to_flat().iter().zip(b.to_flat()) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }
}

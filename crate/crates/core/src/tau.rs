//! Closed-form moments of `τ = ‖a − p‖² − ‖a − n‖²` for independent isotropic
//! Gaussian anchor, positive and negative embeddings.
//!
//! Per coordinate `d` the moments are
//!
//! ```text
//! E[τ_d]   = μ_p² + σ_p² − μ_n² − σ_n² − 2 μ_a (μ_p − μ_n)
//! Var[τ_d] = Var[p(p − 2a)] + Var[n(n − 2a)] − 2 · 4 μ_p μ_n σ_a²
//! Var[p(p − 2a)] = 2 [σ_p⁴ + 2μ_p²σ_p² + 2(σ_a² + μ_a²)(σ_p² + μ_p²) − 2μ_a²μ_p² − 4μ_aμ_pσ_p²]
//! ```
//!
//! and the `D`-dimensional moments are coordinate sums. Summing and
//! regrouping gives the translation-invariant forms evaluated here:
//!
//! ```text
//! E[τ]   = ‖μ_p − μ_a‖² − ‖μ_n − μ_a‖² + D (σ_p² − σ_n²)
//! Var[τ] = 2D (σ_p⁴ + σ_n⁴) + 4D σ_a² (σ_p² + σ_n²)
//!        + 4σ_a² ‖μ_p − μ_n‖² + 4σ_p² ‖μ_p − μ_a‖² + 4σ_n² ‖μ_n − μ_a‖²
//! ```
//!
//! Every term of the variance is nonnegative, so no cancellation occurs.

use crate::embedding::Triplet;
use crate::scalar::{sq_dist, Scalar};
use serde::{Deserialize, Serialize};

/// Mean and variance of τ together with the embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TauMoments<T: Scalar> {
    pub mean: T,
    pub variance: T,
    pub dimension: usize,
}

impl<T: Scalar> TauMoments<T> {
    pub fn std_dev(&self) -> T {
        self.variance.sqrt()
    }
}

/// Squared mean gaps shared by the moment formulas and their gradients.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Gaps<T> {
    /// ‖μ_p − μ_a‖²
    pub pa: T,
    /// ‖μ_n − μ_a‖²
    pub na: T,
    /// ‖μ_p − μ_n‖²
    pub pn: T,
}

pub(crate) fn gaps<T: Scalar>(t: &Triplet<T>) -> Gaps<T> {
    let (a, p, n) = (t.anchor.mean(), t.positive.mean(), t.negative.mean());
    Gaps { pa: sq_dist(p, a), na: sq_dist(n, a), pn: sq_dist(p, n) }
}

pub fn tau_mean<T: Scalar>(t: &Triplet<T>) -> T {
    let g = gaps(t);
    let d = T::from_count(t.dim());
    g.pa - g.na + d * (t.positive.variance() - t.negative.variance())
}

pub fn tau_variance<T: Scalar>(t: &Triplet<T>) -> T {
    let g = gaps(t);
    let d = T::from_count(t.dim());
    let (sa, sp, sn) = (t.anchor.variance(), t.positive.variance(), t.negative.variance());
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let v = two * d * (sp * sp + sn * sn)
        + four * d * sa * (sp + sn)
        + four * (sa * g.pn + sp * g.pa + sn * g.na);
    v.max(T::zero())
}

pub fn tau_moments<T: Scalar>(t: &Triplet<T>) -> TauMoments<T> {
    TauMoments { mean: tau_mean(t), variance: tau_variance(t), dimension: t.dim() }
}

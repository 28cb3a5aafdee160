//! Gaussian (central-limit) likelihood of the triplet constraint `τ < −m`.

use crate::embedding::{Triplet, TripletLabel};
use crate::error::{invalid, Result};
use crate::scalar::{sq_dist, Scalar};
use crate::special;
use crate::tau::TauMoments;
use serde::{Deserialize, Serialize};

/// Nonnegative triplet margin `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Margin<T: Scalar>(T);

impl<T: Scalar> Margin<T> {
    pub fn new(value: T) -> Result<Self> {
        if !(value >= T::zero()) || !value.is_finite() {
            return Err(invalid(format!("margin must be finite and nonnegative, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn zero() -> Self {
        Self(T::zero())
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Standardized constraint `z = (−m − μ_τ) / σ_τ`; `None` when σ_τ = 0.
pub fn standardized<T: Scalar>(mo: &TauMoments<T>, m: Margin<T>) -> Option<T> {
    let sd = mo.std_dev();
    (sd > T::zero()).then(|| (-m.value() - mo.mean) / sd)
}

/// `P(τ < −m) ≈ Φ((−m − μ_τ)/σ_τ)`. With σ_τ = 0 the constraint is
/// deterministic: 1 if satisfied, 0 if violated, ½ on the boundary.
pub fn triplet_probability<T: Scalar>(mo: &TauMoments<T>, m: Margin<T>) -> T {
    match standardized(mo, m) {
        Some(z) => T::lit(special::ndtr(z.as_f64())),
        None => {
            let bound = -m.value();
            if mo.mean < bound {
                T::one()
            } else if mo.mean > bound {
                T::zero()
            } else {
                T::lit(0.5)
            }
        }
    }
}

/// `ln Φ(z)`, stable over the whole real line.
pub fn log_std_normal_cdf<T: Scalar>(z: T) -> T {
    T::lit(special::log_ndtr(z.as_f64()))
}

/// Negative log-likelihood of a triplet. A deterministic (σ_τ = 0) violated
/// constraint has probability zero and is reported as `Infeasible`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NegLogLik<T> {
    Finite(T),
    Infeasible,
}

impl<T: Scalar> NegLogLik<T> {
    /// The numeric value, `+∞` when infeasible.
    pub fn value(self) -> T {
        match self {
            NegLogLik::Finite(v) => v,
            NegLogLik::Infeasible => T::infinity(),
        }
    }

    pub fn is_infeasible(self) -> bool {
        matches!(self, NegLogLik::Infeasible)
    }
}

/// `−ln P(τ < −m)` via the log-CDF.
pub fn nll<T: Scalar>(mo: &TauMoments<T>, m: Margin<T>) -> NegLogLik<T> {
    match standardized(mo, m) {
        Some(z) => NegLogLik::Finite(-log_std_normal_cdf(z)),
        None => {
            let p = triplet_probability(mo, m);
            if p == T::zero() {
                NegLogLik::Infeasible
            } else {
                NegLogLik::Finite(-p.ln())
            }
        }
    }
}

/// NLL under the triplet label: only labels with exactly one same-class pair
/// carry likelihood mass, all other triplets contribute zero.
pub fn labeled_nll<T: Scalar>(mo: &TauMoments<T>, m: Margin<T>, label: TripletLabel) -> NegLogLik<T> {
    if label.is_informative() {
        nll(mo, m)
    } else {
        NegLogLik::Finite(T::zero())
    }
}

/// Classic hinge triplet loss on the means:
/// `max(0, ‖μ_a − μ_p‖² − ‖μ_a − μ_n‖² + m)`.
pub fn hinge_triplet_loss<T: Scalar>(t: &Triplet<T>, m: Margin<T>) -> T {
    let a = t.anchor.mean();
    let v = sq_dist(a, t.positive.mean()) - sq_dist(a, t.negative.mean()) + m.value();
    v.max(T::zero())
}

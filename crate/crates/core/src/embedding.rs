//! Stochastic embeddings, triplets and deterministic distance utilities.
//!
//! A [`GaussianEmbedding`] is an isotropic Gaussian `N(μ, σ² I_D)` with a
//! single scalar variance. A [`VmfEmbedding`] is a von Mises-Fisher
//! distribution on the unit sphere.
//!
//! Serialized forms:
//!
//! * JSON: `{"mean": [μ_1, …, μ_D], "variance": σ²}`
//! * CSV row: `id,σ²,μ_1,…,μ_D` (no header; see [`GaussianEmbedding::to_csv_row`])

use crate::error::{invalid, Error, Result};
use crate::scalar::{sq_dist, sq_norm, Scalar};
use serde::{Deserialize, Serialize};

/// Smallest variance accepted by [`GaussianEmbedding::new`]; smaller positive
/// values are clamped up to this.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian<T>", bound = "T: Scalar")]
pub struct GaussianEmbedding<T: Scalar> {
    mean: Vec<T>,
    variance: T,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawGaussian<T: Scalar> {
    mean: Vec<T>,
    variance: T,
}

impl<T: Scalar> TryFrom<RawGaussian<T>> for GaussianEmbedding<T> {
    type Error = Error;
    fn try_from(raw: RawGaussian<T>) -> Result<Self> {
        if raw.variance == T::zero() {
            Self::point(raw.mean)
        } else {
            Self::new(raw.mean, raw.variance)
        }
    }
}

impl<T: Scalar> GaussianEmbedding<T> {
    /// Builds `N(mean, variance · I)`. The variance must be positive and is
    /// clamped from below at [`MIN_VARIANCE`].
    pub fn new(mean: Vec<T>, variance: T) -> Result<Self> {
        check_mean(&mean)?;
        if !(variance > T::zero()) || !variance.is_finite() {
            return Err(invalid(format!("variance must be positive and finite, got {variance}")));
        }
        let variance = variance.max(T::lit(MIN_VARIANCE));
        Ok(Self { mean, variance })
    }

    /// A point mass at `mean` (variance exactly zero), the deterministic limit
    /// of the Gaussian family. Used for baseline point embeddings and for
    /// checking closed forms in their deterministic limit.
    pub fn point(mean: Vec<T>) -> Result<Self> {
        check_mean(&mean)?;
        Ok(Self { mean, variance: T::zero() })
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_point(&self) -> bool {
        self.variance == T::zero()
    }

    pub fn into_parts(self) -> (Vec<T>, T) {
        (self.mean, self.variance)
    }

    /// Formats `id,σ²,μ_1,…,μ_D`. Values use the shortest representation that
    /// parses back to the same number.
    pub fn to_csv_row(&self, id: usize) -> String {
        let mut row = format!("{id},{}", self.variance);
        for m in &self.mean {
            row.push(',');
            row.push_str(&m.to_string());
        }
        row
    }

    /// Parses a row written by [`to_csv_row`](Self::to_csv_row).
    pub fn from_csv_row(line: &str) -> Result<(usize, Self)> {
        let mut fields = line.trim().split(',');
        let id = fields
            .next()
            .ok_or_else(|| Error::Parse("empty row".into()))?
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("bad id: {e}")))?;
        let variance: T = parse_field(fields.next(), "variance")?;
        let mean = fields
            .map(|f| parse_field(Some(f), "mean"))
            .collect::<Result<Vec<T>>>()?;
        let emb = if variance == T::zero() {
            Self::point(mean)?
        } else {
            Self::new(mean, variance)?
        };
        Ok((id, emb))
    }
}

fn parse_field<T: Scalar>(field: Option<&str>, what: &str) -> Result<T> {
    let f = field.ok_or_else(|| Error::Parse(format!("missing {what}")))?;
    f.trim()
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad {what} value {f:?}")))
}

fn check_mean<T: Scalar>(mean: &[T]) -> Result<()> {
    if mean.is_empty() {
        return Err(invalid("embedding dimension must be at least 1"));
    }
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(invalid("embedding mean has non-finite entries"));
    }
    Ok(())
}

/// von Mises-Fisher distribution on `S^{D-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VmfEmbedding<T: Scalar> {
    direction: Vec<T>,
    concentration: T,
}

impl<T: Scalar> VmfEmbedding<T> {
    /// `direction` must already have unit norm (within `1e-9`, or a few ulps
    /// for `f32`).
    pub fn new(direction: Vec<T>, concentration: T) -> Result<Self> {
        check_mean(&direction)?;
        check_concentration(concentration)?;
        let norm = sq_norm(&direction).sqrt();
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0));
        if (norm - T::one()).abs() > tol {
            return Err(invalid(format!("direction must have unit norm, got {norm}")));
        }
        Ok(Self { direction, concentration })
    }

    /// Normalizes `v` onto the sphere.
    pub fn from_unnormalized(v: Vec<T>, concentration: T) -> Result<Self> {
        check_mean(&v)?;
        check_concentration(concentration)?;
        let norm = sq_norm(&v).sqrt();
        if norm == T::zero() {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self {
            direction: v.into_iter().map(|x| x / norm).collect(),
            concentration,
        })
    }

    pub fn direction(&self) -> &[T] {
        &self.direction
    }

    pub fn concentration(&self) -> T {
        self.concentration
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }
}

fn check_concentration<T: Scalar>(k: T) -> Result<()> {
    if !(k >= T::zero()) || !k.is_finite() {
        return Err(invalid(format!("concentration must be finite and nonnegative, got {k}")));
    }
    Ok(())
}

/// Anchor, positive and negative embeddings of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet<T: Scalar> {
    pub anchor: GaussianEmbedding<T>,
    pub positive: GaussianEmbedding<T>,
    pub negative: GaussianEmbedding<T>,
}

impl<T: Scalar> Triplet<T> {
    pub fn new(
        anchor: GaussianEmbedding<T>,
        positive: GaussianEmbedding<T>,
        negative: GaussianEmbedding<T>,
    ) -> Result<Self> {
        let d = anchor.dim();
        for other in [&positive, &negative] {
            if other.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: other.dim() });
            }
        }
        Ok(Self { anchor, positive, negative })
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    /// Exchanges the roles of positive and negative.
    pub fn swapped(&self) -> Self {
        Self {
            anchor: self.anchor.clone(),
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

/// Number of images in a triplet that share the majority class: 1 (all
/// different), 2 (one matching pair) or 3 (all the same).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletLabel(u8);

impl TripletLabel {
    pub fn new(value: u8) -> Result<Self> {
        if (1..=3).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidLabel(value))
        }
    }

    /// Label of the class assignment `(anchor, positive, negative)`.
    pub fn from_classes(a: usize, p: usize, n: usize) -> Self {
        let same = [a == p, a == n, p == n].iter().filter(|&&b| b).count();
        Self(match same {
            0 => 1,
            3 => 3,
            _ => 2,
        })
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Only triplets with exactly one same-class pair carry likelihood mass.
    pub fn is_informative(self) -> bool {
        self.0 == 2
    }
}

/// Rescales the mean to unit norm, keeping the variance.
pub fn normalize_mean<T: Scalar>(e: &GaussianEmbedding<T>) -> Result<GaussianEmbedding<T>> {
    let norm = sq_norm(&e.mean).sqrt();
    if norm == T::zero() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(GaussianEmbedding {
        mean: e.mean.iter().map(|&m| m / norm).collect(),
        variance: e.variance,
    })
}

fn check_dims<T: Scalar>(q: &GaussianEmbedding<T>, x: &GaussianEmbedding<T>) -> Result<()> {
    if q.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), found: x.dim() });
    }
    Ok(())
}

/// `E‖q − x‖² = ‖μ_q − μ_x‖² + D (σ²_q + σ²_x)` for independent isotropic Gaussians.
pub fn expected_sq_distance<T: Scalar>(q: &GaussianEmbedding<T>, x: &GaussianEmbedding<T>) -> Result<T> {
    check_dims(q, x)?;
    Ok(sq_dist(&q.mean, &x.mean) + T::from_count(q.dim()) * (q.variance + x.variance))
}

/// `‖μ_q − μ_x‖²`.
pub fn sq_distance_of_means<T: Scalar>(q: &GaussianEmbedding<T>, x: &GaussianEmbedding<T>) -> Result<T> {
    check_dims(q, x)?;
    Ok(sq_dist(&q.mean, &x.mean))
}

//! Stochastic triplet embeddings.
//!
//! Images (or any inputs) are embedded as isotropic Gaussians or von
//! Mises-Fisher distributions instead of points. The probability that an
//! anchor is closer to a positive than to a negative is evaluated in closed
//! form through a Gaussian approximation of the triplet statistic
//! `τ = ‖a − p‖² − ‖a − n‖²`, giving a smooth loss whose minimization, together
//! with KL terms to a normalization prior, trains an encoder with calibrated
//! per-input uncertainty.
//!
//! All numerical code is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! below fix the precision used by the CLI and the verification suites.

pub mod embedding;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod gradients;
pub mod likelihood;
pub mod mc;
pub mod metrics;
pub mod priors;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod tau;

pub use embedding::{
    expected_sq_distance, normalize_mean, sq_distance_of_means, GaussianEmbedding, Triplet, TripletLabel,
    VmfEmbedding,
};
pub use encoder::{EmbeddingSet, Encoder, EvalReport, HeadKind, LossKind, TrainConfig};
pub use error::{Error, Result};
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
pub use gradients::{finite_diff_check, kl_gradients, nll_gradients, FdReport, TripletGrad};
pub use likelihood::{hinge_triplet_loss, log_std_normal_cdf, nll, triplet_probability, Margin, NegLogLik};
pub use priors::{
    kl_gaussian_to_prior, kl_vmf_to_uniform, log_bessel_iv, sample_vmf, vmf_log_normalizer, vmf_mean_resultant,
    vmf_to_gaussian_moments, PriorKind, PriorSpec,
};
pub use scalar::Scalar;
pub use tau::{tau_mean, tau_moments, tau_variance, TauMoments};

pub type Gaussian = GaussianEmbedding<f64>;
pub type Gaussian32 = GaussianEmbedding<f32>;
pub type Vmf = VmfEmbedding<f64>;
pub type Vmf32 = VmfEmbedding<f32>;
pub type Triplet64 = Triplet<f64>;
pub type Triplet32 = Triplet<f32>;
pub type Moments = TauMoments<f64>;
pub type Grad = TripletGrad<f64>;
pub type Model = encoder::Encoder<f64>;
pub type Model32 = encoder::Encoder<f32>;

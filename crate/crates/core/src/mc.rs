//! Monte Carlo ground truth for the triplet statistic and the KL terms.
//!
//! Two exact samplers for `τ = ‖a − p‖² − ‖a − n‖²` are provided:
//!
//! * [`sample_tau`] draws `a`, `p`, `n` coordinate by coordinate (cost `O(D)`
//!   per sample);
//! * [`TauSampler`] uses an exact distributional reduction: with
//!   `u = a − p`, `v = a − n`, each coordinate pair `(u_d, v_d)` is Gaussian
//!   with a covariance shared across coordinates, so after whitening and
//!   diagonalising `Lᵀ diag(1, −1) L`, τ is a constant plus a weighted sum of
//!   two independent noncentral χ²_D variables (or Gaussians along null
//!   directions). Each sample then costs `O(1)` regardless of `D`.
//!
//! Neither route uses the closed-form moments; both are keyed by
//! `(seed, chunk index)` so output never depends on the thread schedule.

use crate::embedding::{GaussianEmbedding, Triplet, VmfEmbedding};
use crate::error::{invalid, Result};
use crate::priors::{vmf_log_normalizer, VmfSampler};
use crate::rng::{derive_seed, keyed_rng, keyed_seed};
use crate::scalar::Scalar;
use crate::special;
use crate::tau::{tau_moments, TauMoments};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Samples per independently seeded chunk.
const CHUNK: usize = 8192;

fn fill_chunked<F>(n: usize, seed: u64, f: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let mut out = vec![0.0; n];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = keyed_rng(seed, c as u64);
        for x in chunk.iter_mut() {
            *x = f(&mut rng);
        }
    });
    out
}

#[derive(Debug, Clone)]
struct TripletF64 {
    mu: [Vec<f64>; 3],
    sd: [f64; 3],
}

impl TripletF64 {
    fn new<T: Scalar>(t: &Triplet<T>) -> Self {
        let m = |e: &GaussianEmbedding<T>| e.mean().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        Self {
            mu: [m(&t.anchor), m(&t.positive), m(&t.negative)],
            sd: [
                t.anchor.variance().as_f64().sqrt(),
                t.positive.variance().as_f64().sqrt(),
                t.negative.variance().as_f64().sqrt(),
            ],
        }
    }
}

/// `n` draws of τ by direct coordinate-wise sampling of `a`, `p`, `n`.
pub fn sample_tau<T: Scalar>(t: &Triplet<T>, n: usize, seed: u64) -> Vec<f64> {
    let tf = TripletF64::new(t);
    fill_chunked(n, seed, |rng| {
        let mut tau = 0.0;
        for d in 0..tf.mu[0].len() {
            let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let a = tf.mu[0][d] + tf.sd[0] * z[0];
            let p = tf.mu[1][d] + tf.sd[1] * z[1];
            let q = tf.mu[2][d] + tf.sd[2] * z[2];
            tau += (a - p) * (a - p) - (a - q) * (a - q);
        }
        tau
    })
}

/// Eigen-decomposition of the symmetric matrix `[[a, b], [b, c]]`;
/// eigenvectors are the columns of the returned rotation.
fn eig_sym2(a: f64, b: f64, c: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    if b == 0.0 {
        return ([a, c], [[1.0, 0.0], [0.0, 1.0]]);
    }
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = theta.sin_cos();
    let l1 = a * co * co + 2.0 * b * s * co + c * s * s;
    let l2 = a * s * s - 2.0 * b * s * co + c * co * co;
    ([l1, l2], [[co, -s], [s, co]])
}

#[derive(Debug, Clone)]
enum Component {
    /// `λ · χ'²_D(δ)` sampled as `λ [(Z + √δ)² + χ²_{D−1}]`.
    ScaledNoncentralChi { lambda: f64, sqrt_delta: f64, central: Option<ChiSquared<f64>> },
    /// Zero-weight quadratic direction; only the linear term survives.
    Normal { sd: f64 },
}

/// Exact O(1)-per-draw sampler of τ (see module docs).
#[derive(Debug, Clone)]
pub struct TauSampler {
    constant: f64,
    components: Vec<Component>,
}

impl TauSampler {
    pub fn new<T: Scalar>(t: &Triplet<T>) -> Self {
        let tf = TripletF64::new(t);
        let dim = tf.mu[0].len();
        let (sa, sp, sn) = (tf.sd[0].powi(2), tf.sd[1].powi(2), tf.sd[2].powi(2));
        // cov of (u, v) = (a − p, a − n) per coordinate
        let (ev, vecs) = eig_sym2(sa + sp, sa, sa + sn);
        let root = [ev[0].max(0.0).sqrt(), ev[1].max(0.0).sqrt()];
        let mut l = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                l[i][j] = (0..2).map(|k| vecs[i][k] * root[k] * vecs[j][k]).sum();
            }
        }
        // M = L J L with J = diag(1, −1)
        let lj = [[l[0][0], -l[0][1]], [l[1][0], -l[1][1]]];
        let m = |i: usize, j: usize| lj[i][0] * l[0][j] + lj[i][1] * l[1][j];
        let (lam, q) = eig_sym2(m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), m(1, 1));
        // B = Qᵀ L J, so the linear coefficients are b_d = B m_d
        let mut bmat = [[0.0; 2]; 2];
        for j in 0..2 {
            for c in 0..2 {
                bmat[j][c] = (0..2).map(|k| q[k][j] * lj[k][c]).sum();
            }
        }
        // Gram matrix of the mean differences m_d = (μ_a − μ_p, μ_a − μ_n)_d
        let mut gram = [[0.0; 2]; 2];
        for d in 0..dim {
            let md = [tf.mu[0][d] - tf.mu[1][d], tf.mu[0][d] - tf.mu[2][d]];
            for i in 0..2 {
                for j in 0..2 {
                    gram[i][j] += md[i] * md[j];
                }
            }
        }
        let mut constant = gram[0][0] - gram[1][1];
        let scale = 2.0 * sa + sp + sn;
        let mut components = Vec::with_capacity(2);
        for j in 0..2 {
            let bj = bmat[j];
            let beta: f64 = (0..2).map(|r| (0..2).map(|c| bj[r] * gram[r][c] * bj[c]).sum::<f64>()).sum();
            if scale > 0.0 && lam[j].abs() > 1e-12 * scale {
                constant -= beta / lam[j];
                let delta = beta / (lam[j] * lam[j]);
                components.push(Component::ScaledNoncentralChi {
                    lambda: lam[j],
                    sqrt_delta: delta.max(0.0).sqrt(),
                    central: (dim > 1).then(|| ChiSquared::new((dim - 1) as f64).expect("positive dof")),
                });
            } else if beta > 0.0 {
                components.push(Component::Normal { sd: 2.0 * beta.sqrt() });
            }
        }
        Self { constant, components }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut tau = self.constant;
        for c in &self.components {
            match c {
                Component::ScaledNoncentralChi { lambda, sqrt_delta, central } => {
                    let z: f64 = rng.sample(StandardNormal);
                    let mut chi = (z + sqrt_delta).powi(2);
                    if let Some(cs) = central {
                        chi += cs.sample(rng);
                    }
                    tau += lambda * chi;
                }
                Component::Normal { sd } => {
                    let z: f64 = rng.sample(StandardNormal);
                    tau += sd * z;
                }
            }
        }
        tau
    }

    /// `n` chunk-seeded draws.
    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<f64> {
        fill_chunked(n, seed, |rng| self.sample(rng))
    }
}

/// `n` draws of τ through the O(1) reduction.
pub fn sample_tau_fast<T: Scalar>(t: &Triplet<T>, n: usize, seed: u64) -> Vec<f64> {
    TauSampler::new(t).sample_n(n, seed)
}

/// Sample mean and variance with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `s / √n`.
    pub se_mean: f64,
    /// `√((m₄ − s⁴) / n)` with the empirical central fourth moment `m₄`.
    pub se_variance: f64,
}

impl SampleMoments {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        assert!(n >= 2, "need at least two samples");
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in xs {
            let d = (x - mean) * (x - mean);
            m2 += d;
            m4 += d * d;
        }
        let variance = m2 / (nf - 1.0);
        let m4 = m4 / nf;
        Self {
            n,
            mean,
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: ((m4 - variance * variance).max(0.0) / nf).sqrt(),
        }
    }

    /// Whether `mean_ref` and `var_ref` both lie within `k` standard errors.
    pub fn agrees_with(&self, mean_ref: f64, var_ref: f64, k: f64) -> bool {
        (self.mean - mean_ref).abs() <= k * self.se_mean && (self.variance - var_ref).abs() <= k * self.se_variance
    }
}

/// Monte Carlo estimate of an expectation with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let m = SampleMoments::from_samples(xs);
        Self { value: m.mean, se: m.se_mean, n: m.n }
    }

    pub fn within(&self, reference: f64, k: f64) -> bool {
        (self.value - reference).abs() <= k * self.se
    }
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// `N(mo.mean, mo.variance)`.
pub fn ks_distance<T: Scalar>(samples: &[f64], mo: &TauMoments<T>) -> Result<f64> {
    if samples.len() < 2 {
        return Err(invalid("KS distance needs at least two samples"));
    }
    let var = mo.variance.as_f64();
    if !(var > 0.0) {
        return Err(invalid("KS distance needs a positive reference variance"));
    }
    let (mu, sd) = (mo.mean.as_f64(), var.sqrt());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = sorted.len() as f64;
    let ks = sorted.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = special::ndtr((x - mu) / sd);
        acc.max(((i + 1) as f64 / nf - f).max(f - i as f64 / nf))
    });
    Ok(ks.min(1.0))
}

/// Random triplet in the simulation-study configuration: means from a
/// `D`-dimensional standard Gaussian, variances `|N(0, 1)|`.
pub fn random_study_triplet<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Triplet<f64> {
    let mut emb = || {
        let mean: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let v: f64 = rng.sample::<f64, _>(StandardNormal).abs();
        GaussianEmbedding::new(mean, v).expect("finite mean and positive variance")
    };
    let (a, p, n) = (emb(), emb(), emb());
    Triplet::new(a, p, n).expect("equal dimensions")
}

/// One row of the approximation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxRow {
    pub dim: usize,
    pub trial: usize,
    pub mu_analytic: f64,
    pub mu_mc: f64,
    pub se_mu: f64,
    pub var_analytic: f64,
    pub var_mc: f64,
    pub se_var: f64,
    pub ks: f64,
    pub n: usize,
}

impl ApproxRow {
    pub fn moments_agree(&self, k: f64) -> bool {
        (self.mu_mc - self.mu_analytic).abs() <= k * self.se_mu
            && (self.var_mc - self.var_analytic).abs() <= k * self.se_var
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxStudyReport {
    pub rows: Vec<ApproxRow>,
}

pub const APPROX_CSV_HEADER: &str = "dim,trial,mu_analytic,mu_mc,se_mu,var_analytic,var_mc,se_var,ks,n";

impl ApproxStudyReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(APPROX_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.dim, r.trial, r.mu_analytic, r.mu_mc, r.se_mu, r.var_analytic, r.var_mc, r.se_var, r.ks, r.n
            );
        }
        s
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.rows.iter().map(|r| r.dim).collect();
        d.dedup();
        d
    }

    /// Median KS distance per dimension, in study order.
    pub fn median_ks_by_dim(&self) -> Vec<(usize, f64)> {
        self.dims()
            .into_iter()
            .map(|d| {
                let mut ks: Vec<f64> = self.rows.iter().filter(|r| r.dim == d).map(|r| r.ks).collect();
                ks.sort_by(f64::total_cmp);
                let m = ks.len();
                let med = if m % 2 == 1 { ks[m / 2] } else { 0.5 * (ks[m / 2 - 1] + ks[m / 2]) };
                (d, med)
            })
            .collect()
    }
}

/// Dimensions used by default in the approximation study.
pub const DEFAULT_STUDY_DIMS: [usize; 9] = [1, 2, 4, 8, 16, 32, 128, 512, 2048];

/// For each dimension and trial, draws a random triplet, samples τ and
/// compares the empirical distribution with the Gaussian built from the
/// closed-form moments.
pub fn run_approximation_study(
    dims: &[usize],
    trials_per_dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ApproxStudyReport> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(invalid("study dimensions must be nonempty and positive"));
    }
    if n_samples < 2 {
        return Err(invalid("study needs at least two samples per trial"));
    }
    let config_seed = derive_seed(seed, "config");
    let sample_seed = derive_seed(seed, "oracle");
    let mut rows = Vec::with_capacity(dims.len() * trials_per_dim);
    for &dim in dims {
        for trial in 0..trials_per_dim {
            let key = ((dim as u64) << 32) | trial as u64;
            let t = random_study_triplet(dim, &mut keyed_rng(config_seed, key));
            let mo = tau_moments(&t);
            let samples = sample_tau_fast(&t, n_samples, keyed_seed(sample_seed, key));
            let sm = SampleMoments::from_samples(&samples);
            rows.push(ApproxRow {
                dim,
                trial,
                mu_analytic: mo.mean,
                mu_mc: sm.mean,
                se_mu: sm.se_mean,
                var_analytic: mo.variance,
                var_mc: sm.variance,
                se_var: sm.se_variance,
                ks: ks_distance(&samples, &mo)?,
                n: n_samples,
            });
        }
    }
    Ok(ApproxStudyReport { rows })
}

/// Fraction of τ draws below `−m`, with the binomial standard error of the
/// fraction.
pub fn mc_exceedance<T: Scalar>(t: &Triplet<T>, margin: f64, n: usize, seed: u64) -> Estimate {
    let hits = sample_tau_fast(t, n, seed).iter().filter(|&&x| x < -margin).count();
    let p = hits as f64 / n as f64;
    Estimate { value: p, se: (p * (1.0 - p) / n as f64).sqrt(), n }
}

/// Monte Carlo estimate of `E_q[ln q − ln p]` for a Gaussian embedding and
/// the `N(0, (1/D) I)` prior, using only the two log densities.
pub fn mc_kl_gaussian<T: Scalar>(e: &GaussianEmbedding<T>, n: usize, seed: u64) -> Estimate {
    let mu: Vec<f64> = e.mean().iter().map(|x| x.as_f64()).collect();
    let s = e.variance().as_f64();
    let d = mu.len() as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let log_q_norm = -0.5 * d * (ln2pi + s.ln());
    let log_p_norm = -0.5 * d * (ln2pi - d.ln());
    let sd = s.sqrt();
    let xs = fill_chunked(n, seed, |rng| {
        let (mut zz, mut xx) = (0.0, 0.0);
        for &m in &mu {
            let z: f64 = rng.sample(StandardNormal);
            let x = m + sd * z;
            zz += z * z;
            xx += x * x;
        }
        (log_q_norm - 0.5 * zz) - (log_p_norm - 0.5 * d * xx)
    });
    Estimate::from_samples(&xs)
}

/// Monte Carlo estimate of `E_q[ln q − ln p]` for a vMF embedding and the
/// uniform prior on the sphere.
pub fn mc_kl_vmf<T: Scalar>(e: &VmfEmbedding<T>, n: usize, seed: u64) -> Estimate {
    let sampler = VmfSampler::new(e);
    let kappa = e.concentration().as_f64();
    let base = vmf_log_normalizer(e.dim(), kappa) + special::ln_sphere_area(e.dim());
    let xs = fill_chunked(n, seed, |rng| base + kappa * sampler.sample_cosine(rng));
    Estimate::from_samples(&xs)
}

//! Randomised finite-difference audit of every analytic gradient: the
//! triplet NLL, the Gaussian and vMF KL terms, and full encoder
//! backpropagation.

use crate::embedding::{GaussianEmbedding, Triplet, VmfEmbedding};
use crate::encoder::model::{Activation, Encoder, HeadKind, ModelConfig};
use crate::encoder::train::batch_objective;
use crate::error::{invalid, Result};
use crate::gradients::{finite_diff_check, finite_diff_check_piecewise, kl_gradients, nll_gradients, triplet_from_params, triplet_to_params, FdReport};
use crate::likelihood::{nll, Margin};
use crate::priors::{kl_gaussian_to_prior, kl_vmf_to_uniform, kl_vmf_to_uniform_dkappa, vmf_mean_resultant_with_derivative};
use crate::rng::{derive_seed, keyed_rng};
use crate::tau::tau_moments;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub dims: Vec<usize>,
    pub seed: u64,
    /// Tolerance on the closed-form gradients.
    pub closed_form_tol: f64,
    /// Tolerance on encoder backpropagation.
    pub encoder_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { trials: 100, dims: vec![1, 2, 3, 8, 32, 128], seed: 0, closed_form_tol: 1e-5, encoder_tol: 1e-4 }
    }
}

/// Deliberate defects for exercising the harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Negates the analytic anchor-mean gradient of the NLL.
    FlipNllSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDump {
    pub case: usize,
    pub point: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub name: String,
    pub cases: usize,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
    /// Worst case, kept when the tolerance is breached.
    pub worst: Option<CaseDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub components: Vec<ComponentReport>,
    pub passed: bool,
}

struct Accumulator {
    report: ComponentReport,
    worst: Option<CaseDump>,
}

impl Accumulator {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            report: ComponentReport {
                name: name.into(),
                cases: 0,
                tolerance,
                max_rel_err: 0.0,
                max_abs_err: 0.0,
                passed: true,
                worst: None,
            },
            worst: None,
        }
    }

    fn add(&mut self, point: &[f64], r: FdReport) {
        let case = self.report.cases;
        self.report.cases += 1;
        let rel = if r.non_finite.is_empty() { r.max_rel_err } else { f64::INFINITY };
        self.report.max_abs_err = self.report.max_abs_err.max(r.max_abs_err);
        if rel > self.report.max_rel_err || self.worst.is_none() {
            self.report.max_rel_err = self.report.max_rel_err.max(rel);
            self.worst = Some(CaseDump {
                case,
                point: point.to_vec(),
                analytic: r.analytic,
                numeric: r.numeric,
                max_rel_err: rel,
            });
        }
    }

    fn finish(mut self) -> ComponentReport {
        self.report.passed = self.report.max_rel_err <= self.report.tolerance;
        if !self.report.passed {
            self.report.worst = self.worst;
        }
        self.report
    }
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

fn check_nll(cfg: &GradcheckConfig, fault: Option<Fault>) -> Result<ComponentReport> {
    let mut acc = Accumulator::new("nll", cfg.closed_form_tol);
    let seed = derive_seed(cfg.seed, "nll");
    for i in 0..cfg.trials {
        let mut rng = keyed_rng(seed, i as u64);
        let d = cfg.dims[i % cfg.dims.len()];
        let mut emb = || {
            let mean = normal_vec(&mut rng, d, 1.0);
            GaussianEmbedding::new(mean, log_uniform(&mut rng, 0.05, 2.0))
        };
        let t = Triplet::new(emb()?, emb()?, emb()?)?;
        let m = Margin::new(keyed_rng(seed ^ 1, i as u64).random::<f64>())?;
        let mut g = nll_gradients(&t, m)?;
        if fault == Some(Fault::FlipNllSign) {
            g.d_mu_a.iter_mut().for_each(|x| *x = -*x);
        }
        let point = triplet_to_params(&t);
        let f = |p: &[f64]| match triplet_from_params(p, d) {
            Ok(tt) => nll(&tau_moments(&tt), m).value(),
            Err(_) => f64::NAN,
        };
        acc.add(&point, finite_diff_check(f, &point, 1e-4, &g.to_flat()));
    }
    Ok(acc.finish())
}

fn kl_of(mean: &[f64], variance: f64) -> f64 {
    GaussianEmbedding::new(mean.to_vec(), variance)
        .and_then(|e| kl_gaussian_to_prior(&e))
        .unwrap_or(f64::NAN)
}

fn check_kl(cfg: &GradcheckConfig) -> Result<Vec<ComponentReport>> {
    let mut gauss = Accumulator::new("kl_gaussian", cfg.closed_form_tol);
    let mut vmf = Accumulator::new("kl_vmf", cfg.closed_form_tol);
    let mut resultant = Accumulator::new("vmf_mean_resultant", cfg.closed_form_tol);
    let seed = derive_seed(cfg.seed, "kl");
    for i in 0..cfg.trials {
        let mut rng = keyed_rng(seed, i as u64);
        let d = cfg.dims[i % cfg.dims.len()];
        let mean = normal_vec(&mut rng, d, (1.0 / d as f64).sqrt());
        let e = GaussianEmbedding::new(mean, log_uniform(&mut rng, 0.05, 3.0) / d as f64)?;
        let (gm, gv) = kl_gradients(&e)?;
        let v = e.variance();
        let mean_part = finite_diff_check(
            |p: &[f64]| kl_of(p, v),
            e.mean(),
            1e-4,
            &gm,
        );
        let var_part = finite_diff_check(|p: &[f64]| kl_of(e.mean(), p[0]), &[v], 1e-3 * v, &[gv]);
        let mut point = e.mean().to_vec();
        point.push(v);
        gauss.add(&point, mean_part.concat(var_part));

        let dv = d.max(2);
        let kappa = log_uniform(&mut rng, 0.05, 500.0);
        let mut dir = vec![0.0; dv];
        dir[0] = 1.0;
        let fk = |p: &[f64]| kl_vmf_to_uniform(&VmfEmbedding::new(dir.clone(), p[0]).expect("unit direction"));
        let step = 1e-3 * kappa;
        vmf.add(&[kappa], finite_diff_check(fk, &[kappa], step, &[kl_vmf_to_uniform_dkappa(dv, kappa)]));
        let fa = |p: &[f64]| vmf_mean_resultant_with_derivative(dv, p[0]).0;
        let (_, da) = vmf_mean_resultant_with_derivative(dv, kappa);
        resultant.add(&[kappa], finite_diff_check(fa, &[kappa], step, &[da]));
    }
    Ok(vec![gauss.finish(), vmf.finish(), resultant.finish()])
}

fn check_encoder(cfg: &GradcheckConfig) -> Result<ComponentReport> {
    let mut acc = Accumulator::new("encoder", cfg.encoder_tol);
    let seed = derive_seed(cfg.seed, "encoder");
    let heads = [HeadKind::Gaussian, HeadKind::Vmf, HeadKind::Point];
    for i in 0..cfg.trials {
        let mut rng = keyed_rng(seed, i as u64);
        let head = heads[i % 3];
        let input_dim = rng.random_range(2..7);
        let hidden = if rng.random::<bool>() { vec![rng.random_range(3..9)] } else { vec![6, 4] };
        let mc = ModelConfig {
            input_dim,
            hidden,
            activation: Activation::Tanh,
            embed_dim: rng.random_range(3..8),
            var_hidden: rng.random_range(2..6),
            head,
        };
        let model = Encoder::<f64>::new(mc, rng.random())?;
        let inputs: Vec<Vec<f64>> = (0..9).map(|_| normal_vec(&mut rng, input_dim, 1.0)).collect();
        let trip: Vec<[&[f64]; 3]> =
            inputs.chunks(3).map(|c| [c[0].as_slice(), c[1].as_slice(), c[2].as_slice()]).collect();
        let margin = if head == HeadKind::Point { 10.0 } else { rng.random::<f64>() };
        let kl_scale = log_uniform(&mut rng, 1e-3, 1.0);
        let obj = batch_objective(&model, &trip, margin, kl_scale, true)?;
        let f = |p: &[f64]| match Encoder::from_params(model.config().clone(), p.to_vec()) {
            Ok(m) => batch_objective(&m, &trip, margin, kl_scale, false).map_or(f64::NAN, |o| o.loss),
            Err(_) => f64::NAN,
        };
        let grad = obj.grad.expect("gradient requested");
        let r = finite_diff_check_piecewise(f, model.params(), &[1e-3, 1e-5, 1e-6], cfg.encoder_tol, &grad);
        acc.add(model.params(), r);
    }
    Ok(acc.finish())
}

pub fn run_gradcheck(cfg: &GradcheckConfig, fault: Option<Fault>) -> Result<GradcheckReport> {
    if cfg.trials == 0 || cfg.dims.is_empty() || cfg.dims.contains(&0) {
        return Err(invalid("gradcheck needs trials >= 1 and positive dimensions"));
    }
    let mut components = vec![check_nll(cfg, fault)?];
    components.extend(check_kl(cfg)?);
    components.push(check_encoder(cfg)?);
    let passed = components.iter().all(|c| c.passed);
    Ok(GradcheckReport { components, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_gradients_pass() {
        let r = run_gradcheck(&GradcheckConfig { trials: 12, ..Default::default() }, None).unwrap();
        for c in &r.components {
            assert!(c.passed, "{} {}", c.name, c.max_rel_err);
            assert_eq!(c.cases, 12);
        }
        assert!(r.passed);
    }

    #[test]
    fn sign_flip_is_caught() {
        let r = run_gradcheck(&GradcheckConfig { trials: 4, ..Default::default() }, Some(Fault::FlipNllSign)).unwrap();
        assert!(!r.passed);
        let nll = &r.components[0];
        assert!(!nll.passed && nll.worst.is_some());
        assert!(r.components[1..].iter().all(|c| c.passed));
    }
}

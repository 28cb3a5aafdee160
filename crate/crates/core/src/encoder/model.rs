//! Two-head encoder: shared trunk, mean head and a softplus variance head,
//! with hand-written backpropagation over a flat parameter vector.

use crate::embedding::{GaussianEmbedding, VmfEmbedding, MIN_VARIANCE};
use crate::error::{invalid, Error, Result};
use crate::gradients::kl_gradients;
use crate::priors::{
    kl_gaussian_to_prior, kl_vmf_to_uniform, kl_vmf_to_uniform_dkappa, vmf_mean_resultant_with_derivative,
    vmf_to_gaussian_moments, PriorKind,
};
use crate::rng::seeded_rng;
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(T::zero()),
            Self::Identity => x,
        }
    }

    /// Derivative from the pre-activation `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Self::Tanh => T::one() - y * y,
            Self::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Identity => T::one(),
        }
    }
}

/// Output parametrisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `N(s · h, softplus(v) I)` with a trainable scale `s`.
    Gaussian,
    /// `vMF(h / ‖h‖, softplus(v))`, used through its moment-matched Gaussian.
    Vmf,
    /// Deterministic `h / ‖h‖` (no variance head).
    Point,
}

impl HeadKind {
    pub fn prior(self) -> Option<PriorKind> {
        match self {
            Self::Gaussian => Some(PriorKind::GaussianUnitSphere),
            Self::Vmf => Some(PriorKind::UniformSphere),
            Self::Point => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the trunk layers (one or two).
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Total output budget `D`; stochastic heads use `D − 1` mean coordinates
    /// plus one variance.
    pub embed_dim: usize,
    pub var_hidden: usize,
    pub head: HeadKind,
}

impl ModelConfig {
    pub fn mean_dim(&self) -> usize {
        match self.head {
            HeadKind::Point => self.embed_dim,
            HeadKind::Gaussian | HeadKind::Vmf => self.embed_dim - 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.var_hidden == 0 {
            return Err(invalid("input and variance-head widths must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.len() > 2 || self.hidden.contains(&0) {
            return Err(invalid("trunk must have one or two layers of positive width"));
        }
        let min_dim = match self.head {
            HeadKind::Gaussian => 2,
            HeadKind::Vmf => 3,
            HeadKind::Point => 1,
        };
        if self.embed_dim < min_dim {
            return Err(invalid(format!("embedding dimension must be at least {min_dim} for this head")));
        }
        Ok(())
    }
}

/// Shape and offset of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSlot {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl DenseSlot {
    fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.outputs * self.inputs
    }

    fn forward<T: Scalar>(&self, p: &[T], x: &[T], out: &mut Vec<T>) {
        out.clear();
        let w = &p[self.offset..self.bias_offset()];
        let b = &p[self.bias_offset()..self.bias_offset() + self.outputs];
        for o in 0..self.outputs {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            out.push(row.iter().zip(x).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi));
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward<T: Scalar>(&self, p: &[T], x: &[T], dy: &[T], grad: &mut [T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.inputs];
        let bo = self.bias_offset();
        for o in 0..self.outputs {
            let g = dy[o];
            if g == T::zero() {
                continue;
            }
            let r = self.offset + o * self.inputs;
            for i in 0..self.inputs {
                grad[r + i] += g * x[i];
                dx[i] += g * p[r + i];
            }
            grad[bo + o] += g;
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub trunk: Vec<DenseSlot>,
    pub mean_head: DenseSlot,
    pub var_hidden: Option<DenseSlot>,
    pub var_out: Option<DenseSlot>,
    pub log_scale: Option<usize>,
    pub len: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut off = 0;
        let mut slot = |inputs, outputs| {
            let s = DenseSlot { inputs, outputs, offset: off };
            off += s.len();
            s
        };
        let mut trunk = Vec::new();
        let mut width = c.input_dim;
        for &h in &c.hidden {
            trunk.push(slot(width, h));
            width = h;
        }
        let mean_head = slot(width, c.mean_dim());
        let stochastic = c.head != HeadKind::Point;
        let var_hidden = stochastic.then(|| slot(width, c.var_hidden));
        let var_out = stochastic.then(|| slot(c.var_hidden, 1));
        let log_scale = (c.head == HeadKind::Gaussian).then(|| {
            off += 1;
            off - 1
        });
        Self { trunk, mean_head, var_hidden, var_out, log_scale, len: off }
    }

    /// Named layers in storage order.
    pub fn named_layers(&self) -> Vec<(String, DenseSlot)> {
        let mut v: Vec<(String, DenseSlot)> =
            self.trunk.iter().enumerate().map(|(i, &s)| (format!("trunk{i}"), s)).collect();
        v.push(("mean_head".into(), self.mean_head));
        if let (Some(h), Some(o)) = (self.var_hidden, self.var_out) {
            v.push(("var_hidden".into(), h));
            v.push(("var_out".into(), o));
        }
        v
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y − 1)
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    input: Vec<T>,
    trunk_pre: Vec<Vec<T>>,
    trunk_act: Vec<Vec<T>>,
    head: Vec<T>,
    var_pre: Vec<T>,
    var_act: Vec<T>,
    var_raw: T,
}

/// Output of [`Encoder::forward`]: the Gaussian used by the loss, the vMF
/// concentration for the vMF head, and the cache for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward<T: Scalar> {
    pub embedding: GaussianEmbedding<T>,
    pub concentration: Option<T>,
    cache: ForwardCache<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T: Scalar> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> Encoder<T> {
    /// Random initialisation: scaled Gaussian weights, zero biases, the
    /// variance bias set so that initial variances are moderate.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = seeded_rng(seed);
        let mut params = vec![T::zero(); layout.len];
        for (name, s) in layout.named_layers() {
            let gain = if name == "var_hidden" || config.activation == Activation::Relu { 2.0 } else { 1.0 };
            let sd = (gain / s.inputs as f64).sqrt();
            for w in &mut params[s.offset..s.bias_offset()] {
                *w = T::lit(sd * rng.sample::<f64, _>(StandardNormal));
            }
        }
        if let Some(o) = layout.var_out {
            let dm = config.mean_dim() as f64;
            let target = match config.head {
                HeadKind::Gaussian => 0.5 / dm,
                _ => dm,
            };
            for w in &mut params[o.offset..o.bias_offset()] {
                *w *= T::lit(0.1);
            }
            params[o.bias_offset()] = T::lit(softplus_inverse(target));
        }
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(Error::DimensionMismatch { expected: layout.len, found: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout.len
    }

    pub fn mean_scale(&self) -> Option<T> {
        self.layout.log_scale.map(|i| self.params[i].exp())
    }

    pub fn forward(&self, x: &[T]) -> Result<Forward<T>> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch { expected: self.config.input_dim, found: x.len() });
        }
        let p = &self.params;
        let mut trunk_pre = Vec::with_capacity(self.layout.trunk.len());
        let mut trunk_act = Vec::with_capacity(self.layout.trunk.len());
        let mut cur = x.to_vec();
        for s in &self.layout.trunk {
            let mut pre = Vec::new();
            s.forward(p, &cur, &mut pre);
            cur = pre.iter().map(|&v| self.config.activation.apply(v)).collect();
            trunk_pre.push(pre);
            trunk_act.push(cur.clone());
        }
        let mut head = Vec::new();
        self.layout.mean_head.forward(p, &cur, &mut head);
        let (mut var_pre, mut var_act, mut var_raw) = (Vec::new(), Vec::new(), T::zero());
        if let (Some(h), Some(o)) = (self.layout.var_hidden, self.layout.var_out) {
            h.forward(p, &cur, &mut var_pre);
            var_act = var_pre.iter().map(|&v| v.max(T::zero())).collect();
            let mut out = Vec::new();
            o.forward(p, &var_act, &mut out);
            var_raw = out[0];
        }
        let cache = ForwardCache { input: x.to_vec(), trunk_pre, trunk_act, head, var_pre, var_act, var_raw };
        let (embedding, concentration) = match self.config.head {
            HeadKind::Gaussian => {
                let s = self.mean_scale().expect("gaussian head has a scale");
                let mean = cache.head.iter().map(|&h| s * h).collect();
                let var = softplus(var_raw).max(T::lit(MIN_VARIANCE));
                (GaussianEmbedding::new(mean, var)?, None)
            }
            HeadKind::Vmf => {
                let kappa = softplus(var_raw);
                let v = VmfEmbedding::from_unnormalized(cache.head.clone(), kappa)?;
                (vmf_to_gaussian_moments(&v), Some(kappa))
            }
            HeadKind::Point => {
                let norm = cache.head.iter().map(|&h| h * h).sum::<T>().sqrt();
                if norm == T::zero() {
                    return Err(Error::DegenerateEmbedding);
                }
                (GaussianEmbedding::point(cache.head.iter().map(|&h| h / norm).collect())?, None)
            }
        };
        Ok(Forward { embedding, concentration, cache })
    }

    /// Embedding of one input, discarding the cache.
    pub fn embed(&self, x: &[T]) -> Result<GaussianEmbedding<T>> {
        Ok(self.forward(x)?.embedding)
    }

    /// vMF output for the vMF head.
    pub fn embed_vmf(&self, x: &[T]) -> Result<Option<VmfEmbedding<T>>> {
        let f = self.forward(x)?;
        match f.concentration {
            Some(k) => Ok(Some(VmfEmbedding::from_unnormalized(f.cache.head, k)?)),
            None => Ok(None),
        }
    }

    /// KL of one output to the head's prior (zero for point embeddings).
    pub fn kl(&self, f: &Forward<T>) -> Result<T> {
        match self.config.head {
            HeadKind::Gaussian => kl_gaussian_to_prior(&f.embedding),
            HeadKind::Vmf => {
                let k = f.concentration.expect("vmf head has a concentration");
                Ok(kl_vmf_to_uniform(&VmfEmbedding::from_unnormalized(f.cache.head.clone(), k)?))
            }
            HeadKind::Point => Ok(T::zero()),
        }
    }

    /// Backpropagates `∂L/∂mean`, `∂L/∂variance` of the emitted Gaussian plus
    /// `kl_weight · ∂KL/∂(output)` into `grad` (accumulated).
    pub fn backward(&self, f: &Forward<T>, d_mean: &[T], d_var: T, kl_weight: T, grad: &mut [T]) -> Result<()> {
        let c = &f.cache;
        let p = &self.params;
        let dm = self.config.mean_dim();
        if d_mean.len() != dm {
            return Err(Error::DimensionMismatch { expected: dm, found: d_mean.len() });
        }
        if grad.len() != self.layout.len {
            return Err(Error::DimensionMismatch { expected: self.layout.len, found: grad.len() });
        }
        let project = |g: &[T]| -> Vec<T> {
            // ∂(h/‖h‖)/∂h applied to g
            let norm = c.head.iter().map(|&h| h * h).sum::<T>().sqrt();
            let dot = c.head.iter().zip(g).map(|(&h, &gi)| h * gi).sum::<T>() / norm;
            c.head.iter().zip(g).map(|(&h, &gi)| (gi - h / norm * dot) / norm).collect()
        };
        let (dh, dv) = match self.config.head {
            HeadKind::Gaussian => {
                let li = self.layout.log_scale.expect("gaussian head has a scale");
                let s = p[li].exp();
                let (mut gm, mut gv) = (d_mean.to_vec(), d_var);
                if kl_weight != T::zero() {
                    let (km, kv) = kl_gradients(&f.embedding)?;
                    gm.iter_mut().zip(&km).for_each(|(g, &k)| *g += kl_weight * k);
                    gv += kl_weight * kv;
                }
                grad[li] += gm.iter().zip(f.embedding.mean()).map(|(&g, &m)| g * m).sum::<T>();
                (gm.iter().map(|&g| g * s).collect::<Vec<_>>(), gv * sigmoid(c.var_raw))
            }
            HeadKind::Vmf => {
                let k = f.concentration.expect("vmf head has a concentration");
                let (a, da) = vmf_mean_resultant_with_derivative(dm, k);
                let norm = c.head.iter().map(|&h| h * h).sum::<T>().sqrt();
                let dir_dot = c.head.iter().zip(d_mean).map(|(&h, &g)| h * g).sum::<T>() / norm;
                let mut dk = da * dir_dot - T::lit(2.0) * a * da / T::from_count(dm) * d_var;
                if kl_weight != T::zero() {
                    dk += kl_weight * kl_vmf_to_uniform_dkappa(dm, k);
                }
                let d_dir: Vec<T> = d_mean.iter().map(|&g| g * a).collect();
                (project(&d_dir), dk * sigmoid(c.var_raw))
            }
            HeadKind::Point => (project(d_mean), T::zero()),
        };
        let trunk_out = c.trunk_act.last().expect("nonempty trunk");
        let mut dt = self.layout.mean_head.backward(p, trunk_out, &dh, grad);
        if let (Some(h), Some(o)) = (self.layout.var_hidden, self.layout.var_out) {
            let dr = o.backward(p, &c.var_act, &[dv], grad);
            let du: Vec<T> = dr
                .iter()
                .zip(&c.var_pre)
                .map(|(&g, &u)| if u > T::zero() { g } else { T::zero() })
                .collect();
            let dt2 = h.backward(p, trunk_out, &du, grad);
            dt.iter_mut().zip(dt2).for_each(|(a, b)| *a += b);
        }
        for (l, s) in self.layout.trunk.iter().enumerate().rev() {
            let dpre: Vec<T> = dt
                .iter()
                .zip(&c.trunk_pre[l])
                .zip(&c.trunk_act[l])
                .map(|((&g, &x), &y)| g * self.config.activation.derivative(x, y))
                .collect();
            let input = if l == 0 { &c.input } else { &c.trunk_act[l - 1] };
            dt = s.backward(p, input, &dpre, grad);
        }
        Ok(())
    }
}

/// Version-tagged, human-readable model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub layers: Vec<LayerRecord>,
    pub log_mean_scale: Option<f64>,
}

/// One affine layer: `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl<T: Scalar> Encoder<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let p = |r: std::ops::Range<usize>| self.params[r].iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let layers = self
            .layout
            .named_layers()
            .into_iter()
            .map(|(name, s)| LayerRecord {
                name,
                inputs: s.inputs,
                outputs: s.outputs,
                weights: p(s.offset..s.bias_offset()),
                bias: p(s.bias_offset()..s.bias_offset() + s.outputs),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layers,
            log_mean_scale: self.layout.log_scale.map(|i| self.params[i].as_f64()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.config.validate()?;
        let layout = Layout::new(&ck.config);
        let named = layout.named_layers();
        if named.len() != ck.layers.len() {
            return Err(Error::Parse("checkpoint layer count does not match its config".into()));
        }
        let mut params = vec![T::zero(); layout.len];
        for ((name, s), rec) in named.iter().zip(&ck.layers) {
            if *name != rec.name
                || s.inputs != rec.inputs
                || s.outputs != rec.outputs
                || rec.weights.len() != s.inputs * s.outputs
                || rec.bias.len() != s.outputs
            {
                return Err(Error::Parse(format!("checkpoint layer {} has an unexpected shape", rec.name)));
            }
            for (dst, &v) in params[s.offset..].iter_mut().zip(rec.weights.iter().chain(&rec.bias)) {
                *dst = T::lit(v);
            }
        }
        match (layout.log_scale, ck.log_mean_scale) {
            (Some(i), Some(v)) => params[i] = T::lit(v),
            (None, None) => {}
            _ => return Err(Error::Parse("checkpoint mean scale does not match its head".into())),
        }
        Self::from_params(ck.config.clone(), params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::finite_diff_check;

    fn config(head: HeadKind, act: Activation, hidden: Vec<usize>) -> ModelConfig {
        ModelConfig { input_dim: 5, hidden, activation: act, embed_dim: 6, var_hidden: 4, head }
    }

    fn input(seed: u64) -> Vec<f64> {
        let mut r = seeded_rng(seed);
        (0..5).map(|_| r.sample(StandardNormal)).collect()
    }

    /// Loss `cᵀ mean + w var + λ KL` of one forward pass.
    fn check_head(head: HeadKind, act: Activation, hidden: Vec<usize>) {
        let enc = Encoder::<f64>::new(config(head, act, hidden), 3).unwrap();
        let x = input(4);
        let dm = enc.config().mean_dim();
        let cvec: Vec<f64> = (0..dm).map(|i| 0.3 - 0.1 * i as f64).collect();
        let (w, lambda) = (0.7, 0.05);
        let loss = |params: &[f64]| {
            let e = Encoder::from_params(enc.config().clone(), params.to_vec()).unwrap();
            let f = e.forward(&x).unwrap();
            let lin: f64 = f.embedding.mean().iter().zip(&cvec).map(|(a, b)| a * b).sum();
            lin + w * f.embedding.variance() + lambda * e.kl(&f).unwrap()
        };
        let f = enc.forward(&x).unwrap();
        let mut g = vec![0.0; enc.n_params()];
        enc.backward(&f, &cvec, if head == HeadKind::Point { 0.0 } else { w }, lambda, &mut g).unwrap();
        let r = finite_diff_check(loss, enc.params(), 1e-3, &g);
        let worst = r.rel_err.iter().enumerate().fold((0, 0.0f64), |m, (i, &e)| if e > m.1 { (i, e) } else { m });
        assert!(r.passes(1e-5), "{head:?} {act:?}: max rel err {} at {} a={} n={}", r.max_rel_err, worst.0, r.analytic[worst.0], r.numeric[worst.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for head in [HeadKind::Gaussian, HeadKind::Vmf, HeadKind::Point] {
            check_head(head, Activation::Tanh, vec![7]);
            check_head(head, Activation::Tanh, vec![7, 3]);
        }
        check_head(HeadKind::Gaussian, Activation::Identity, vec![4]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let enc = Encoder::<f64>::new(config(HeadKind::Gaussian, Activation::Tanh, vec![7]), 1).unwrap();
        let f = enc.forward(&input(2)).unwrap();
        let mut g = vec![0.0; enc.n_params()];
        enc.backward(&f, &[0.0; 5], 0.0, 0.0, &mut g).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_trunk_closed_form() {
        // identity trunk: mean = s (W_h (W_t x + b_t) + b_h), so ∂(cᵀmean)/∂b_t = s W_hᵀ c
        let enc = Encoder::<f64>::new(config(HeadKind::Gaussian, Activation::Identity, vec![4]), 8).unwrap();
        let f = enc.forward(&input(9)).unwrap();
        let c = [1.0, -2.0, 0.5, 0.0, 3.0];
        let mut g = vec![0.0; enc.n_params()];
        enc.backward(&f, &c, 0.0, 0.0, &mut g).unwrap();
        let (t, h) = (enc.layout().trunk[0], enc.layout().mean_head);
        let s = enc.mean_scale().unwrap();
        for j in 0..4 {
            let expect: f64 = (0..5).map(|o| s * enc.params()[h.offset + o * 4 + j] * c[o]).sum();
            let got = g[t.offset + t.outputs * t.inputs + j];
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn outputs_are_valid() {
        for head in [HeadKind::Gaussian, HeadKind::Vmf, HeadKind::Point] {
            let enc = Encoder::<f64>::new(config(head, Activation::Relu, vec![7]), 5).unwrap();
            for s in 0..20 {
                let f = enc.forward(&input(s)).unwrap();
                match head {
                    HeadKind::Point => assert!(f.embedding.is_point()),
                    _ => assert!(f.embedding.variance() > 0.0),
                }
                if head != HeadKind::Gaussian {
                    let dir = match head {
                        HeadKind::Vmf => enc.embed_vmf(&input(s)).unwrap().unwrap().direction().to_vec(),
                        _ => f.embedding.mean().to_vec(),
                    };
                    assert!((dir.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
                }
                assert_eq!(enc.forward(&input(s)).unwrap().embedding, f.embedding);
            }
        }
    }

    #[test]
    fn equal_output_budget() {
        let g = config(HeadKind::Gaussian, Activation::Tanh, vec![7]);
        let p = config(HeadKind::Point, Activation::Tanh, vec![7]);
        assert_eq!(g.mean_dim() + 1, p.mean_dim());
    }

    #[test]
    fn checkpoint_round_trip() {
        for head in [HeadKind::Gaussian, HeadKind::Vmf, HeadKind::Point] {
            let enc = Encoder::<f64>::new(config(head, Activation::Tanh, vec![7, 3]), 11).unwrap();
            let json = serde_json::to_string(&enc.to_checkpoint()).unwrap();
            let back = Encoder::<f64>::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back, enc);
        }
        let enc = Encoder::<f64>::new(config(HeadKind::Gaussian, Activation::Tanh, vec![7]), 1).unwrap();
        let mut ck = enc.to_checkpoint();
        ck.layers[0].bias.pop();
        assert!(Encoder::<f64>::from_checkpoint(&ck).is_err());
        ck = enc.to_checkpoint();
        ck.version = 99;
        assert!(Encoder::<f64>::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-800.0f64) >= 0.0);
        assert!((softplus(softplus_inverse(0.3)) - 0.3).abs() < 1e-15);
    }
}

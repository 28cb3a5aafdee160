//! Training loop: Adam with L2 weight decay and per-epoch learning-rate
//! decay, hard negatives mined from a refreshed cache.

use super::dataset::SyntheticDataset;
use super::mining::{embed_all, mine_hard_negatives, refresh_cache, MiningCache};
use super::model::{Activation, Encoder, HeadKind, ModelConfig};
use crate::embedding::Triplet;
use crate::error::{invalid, Error, Result};
use crate::gradients::nll_gradients;
use crate::likelihood::{hinge_triplet_loss, nll, Margin};
use crate::metrics::{recall_at_k, retrieve_all, Database, RetrievalMode};
use crate::rng::{derive_seed, keyed_seed, seeded_rng};
use crate::scalar::Scalar;
use crate::tau::tau_moments;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Triplet NLL with Gaussian embeddings and the Gaussian prior.
    BayesGauss,
    /// Triplet NLL with vMF embeddings and the uniform prior.
    BayesVmf,
    /// Hinge loss on l2-normalised point embeddings.
    Hinge,
}

impl LossKind {
    pub fn head(self) -> HeadKind {
        match self {
            Self::BayesGauss => HeadKind::Gaussian,
            Self::BayesVmf => HeadKind::Vmf,
            Self::Hinge => HeadKind::Point,
        }
    }

    pub fn default_margin(self) -> f64 {
        match self {
            Self::Hinge => 0.1,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub embed_dim: usize,
    pub var_hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    /// Anchors per optimisation step.
    pub batch_triplets: usize,
    /// Nearest cached negatives considered per anchor.
    pub negatives: usize,
    /// `None` picks the loss's default (0 for the NLL, 0.1 for the hinge).
    pub margin: Option<f64>,
    pub kl_scale: f64,
    pub cache_size: usize,
    /// Iterations between cache refreshes.
    pub refresh_interval: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Keep only the hardest violating negative instead of all of them.
    pub hardest_only: bool,
    /// Test queries used for the per-epoch R@1 (0 disables it).
    pub val_queries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::BayesGauss,
            hidden: vec![64],
            activation: Activation::Relu,
            embed_dim: 32,
            var_hidden: 16,
            lr: 1e-3,
            weight_decay: 1e-4,
            lr_decay: 0.99,
            batch_triplets: 25,
            negatives: 5,
            margin: None,
            kl_scale: 1e-6,
            cache_size: 5000,
            refresh_interval: 50,
            epochs: 30,
            seed: 0,
            hardest_only: false,
            val_queries: 500,
        }
    }
}

impl TrainConfig {
    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or_else(|| self.loss.default_margin())
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden.clone(),
            activation: self.activation,
            embed_dim: self.embed_dim,
            var_hidden: self.var_hidden,
            head: self.loss.head(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.lr, self.lr_decay];
        if pos.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("learning rate and decay must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.kl_scale >= 0.0 && self.margin() >= 0.0) {
            return Err(invalid("weight decay, KL scale and margin must be nonnegative"));
        }
        if self.batch_triplets == 0 || self.negatives == 0 || self.cache_size == 0 || self.refresh_interval == 0 {
            return Err(invalid("batch size, negatives, cache size and refresh interval must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub val_r1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,loss,nll,kl,val_r1,lr";

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.loss, r.nll, r.kl, r.val_r1, r.lr);
        }
        s
    }
}

/// Mean objective over a set of input triplets, optionally with its
/// gradient. `nll` is the likelihood (or hinge) part and `kl` the unscaled
/// sum of the three KL terms, both averaged over triplets.
#[derive(Debug, Clone)]
pub struct BatchObjective<T: Scalar> {
    pub loss: T,
    pub nll: T,
    pub kl: T,
    pub grad: Option<Vec<T>>,
}

pub fn batch_objective<T: Scalar>(
    model: &Encoder<T>,
    triplets: &[[&[f64]; 3]],
    margin: f64,
    kl_scale: f64,
    with_grad: bool,
) -> Result<BatchObjective<T>> {
    if triplets.is_empty() {
        return Err(invalid("empty triplet batch"));
    }
    let head = model.config().head;
    let inv = T::one() / T::from_count(triplets.len());
    let lambda = T::lit(kl_scale);
    let m = Margin::new(T::lit(margin))?;
    let mut grad = with_grad.then(|| vec![T::zero(); model.n_params()]);
    let (mut nll_sum, mut kl_sum) = (T::zero(), T::zero());
    for tr in triplets {
        let f: Vec<_> = tr
            .iter()
            .map(|x| model.forward(&x.iter().map(|&v| T::lit(v)).collect::<Vec<T>>()))
            .collect::<Result<_>>()?;
        let t = Triplet::new(f[0].embedding.clone(), f[1].embedding.clone(), f[2].embedding.clone())?;
        let upstream = match head {
            HeadKind::Point => {
                let l = hinge_triplet_loss(&t, m);
                nll_sum += l;
                let (a, p, n) = (t.anchor.mean(), t.positive.mean(), t.negative.mean());
                let active = l > T::zero();
                let two = T::lit(if active { 2.0 } else { 0.0 });
                [
                    n.iter().zip(p).map(|(&ni, &pi)| two * (ni - pi)).collect::<Vec<T>>(),
                    p.iter().zip(a).map(|(&pi, &ai)| two * (pi - ai)).collect(),
                    a.iter().zip(n).map(|(&ai, &ni)| two * (ai - ni)).collect(),
                ]
                .map(|g| (g, T::zero()))
            }
            HeadKind::Gaussian | HeadKind::Vmf => {
                nll_sum += nll(&tau_moments(&t), m).value();
                for fi in &f {
                    kl_sum += model.kl(fi)?;
                }
                if with_grad {
                    let g = nll_gradients(&t, m)?;
                    [(g.d_mu_a, g.d_var_a), (g.d_mu_p, g.d_var_p), (g.d_mu_n, g.d_var_n)]
                } else {
                    Default::default()
                }
            }
        };
        if let Some(gr) = grad.as_mut() {
            for (fi, (dm, dv)) in f.iter().zip(upstream) {
                let dm: Vec<T> = dm.into_iter().map(|x| x * inv).collect();
                model.backward(fi, &dm, dv * inv, lambda * inv, gr)?;
            }
        }
    }
    let (nll_mean, kl_mean) = (nll_sum * inv, kl_sum * inv);
    Ok(BatchObjective { loss: nll_mean + lambda * kl_mean, nll: nll_mean, kl: kl_mean, grad })
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    decay_mask: Vec<bool>,
}

impl<T: Scalar> Adam<T> {
    fn new(model: &Encoder<T>) -> Self {
        let n = model.n_params();
        let mut decay_mask = vec![false; n];
        for (_, s) in model.layout().named_layers() {
            decay_mask[s.offset..s.offset + s.inputs * s.outputs].iter_mut().for_each(|b| *b = true);
        }
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0, decay_mask }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64, weight_decay: f64) {
        let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
        self.t += 1;
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let (lr, wd) = (T::lit(lr), T::lit(weight_decay));
        for i in 0..params.len() {
            let mut g = grad[i];
            if self.decay_mask[i] {
                g += wd * params[i];
            }
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// R@1 over (a prefix of) the test split with leave-one-out retrieval on means.
fn validation_r1<T: Scalar>(model: &Encoder<T>, ds: &SyntheticDataset, n: usize) -> Result<f64> {
    let idx = ds.test_indices();
    let idx = &idx[..n.min(idx.len())];
    if idx.len() < 2 {
        return Ok(0.0);
    }
    let inputs: Vec<&[f64]> = idx.iter().map(|&i| ds.items[i].input.as_slice()).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| ds.items[i].class).collect();
    let emb = embed_all(model, &inputs)?;
    let db = Database::new(&emb, &labels)?;
    Ok(recall_at_k(&retrieve_all(&db, &emb, &labels, 1, RetrievalMode::Means, true)?, 1))
}

/// Outcome of a training run that may have stopped early.
#[derive(Debug, Clone)]
pub struct TrainRun<T: Scalar> {
    /// Last parameters with a finite loss, gradient and update.
    pub model: Encoder<T>,
    pub history: History,
    /// Set when training stopped on a non-finite value.
    pub diverged: Option<Error>,
}

/// Trains an encoder for `config.loss` on the training split.
pub fn train<T: Scalar>(config: &TrainConfig, dataset: &SyntheticDataset) -> Result<(Encoder<T>, History)> {
    let run = train_run(config, dataset)?;
    match run.diverged {
        Some(e) => Err(e),
        None => Ok((run.model, run.history)),
    }
}

/// [`train`], returning the last finite state instead of failing on
/// divergence.
pub fn train_run<T: Scalar>(config: &TrainConfig, dataset: &SyntheticDataset) -> Result<TrainRun<T>> {
    config.validate()?;
    let pool = dataset.train_indices();
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in &pool {
        by_class.entry(dataset.items[i].class).or_default().push(i);
    }
    if by_class.len() < 2 || by_class.values().any(|v| v.len() < 2) {
        return Err(invalid("training split needs two classes with at least two items each"));
    }
    let mut model = Encoder::<T>::new(config.model_config(dataset.config.input_dim), derive_seed(config.seed, "init"))?;
    let mut adam = Adam::new(&model);
    let mut rng = seeded_rng(derive_seed(config.seed, "batches"));
    let refresh_seed = derive_seed(config.seed, "cache");
    let margin = T::lit(config.margin());
    let cache_size = config.cache_size.min(pool.len());
    if cache_size < config.cache_size {
        log::info!("cache size {} capped to the {} training items", config.cache_size, pool.len());
    }
    let mut cache = MiningCache::<T>::new(cache_size);
    let mut history = History::default();
    let mut iteration = 0usize;
    let mut anchors = pool.clone();
    // Parameters before the latest update. Once an update has been taken,
    // any numerical failure counts as divergence and rolls back to these.
    let mut last_good: Option<Vec<T>> = None;
    macro_rules! stop {
        ($epoch:expr, $reason:expr) => {{
            if let Some(p) = &last_good {
                model.params_mut().copy_from_slice(p);
            }
            let reason = $reason.to_string();
            return Ok(TrainRun { model, history, diverged: Some(Error::Diverged { epoch: $epoch, iteration, reason }) });
        }};
    }
    macro_rules! guard {
        ($epoch:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) if last_good.is_some() => stop!($epoch, e),
                Err(e) => return Err(e),
            }
        };
    }
    for epoch in 1..=config.epochs {
        let lr = config.lr * config.lr_decay.powi(epoch as i32 - 1);
        anchors.shuffle(&mut rng);
        let (mut loss_sum, mut nll_sum, mut kl_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
        for batch in anchors.chunks(config.batch_triplets) {
            if iteration % config.refresh_interval == 0 {
                cache = guard!(
                    epoch,
                    refresh_cache(
                        &cache,
                        &model,
                        &dataset.items,
                        &pool,
                        cache_size,
                        keyed_seed(refresh_seed, iteration as u64),
                    )
                );
            }
            iteration += 1;
            cache.tick();
            let mut triplets: Vec<[&[f64]; 3]> = Vec::new();
            for &a in batch {
                let class = dataset.items[a].class;
                let members = &by_class[&class];
                let p = loop {
                    let c = members[rng.random_range(0..members.len())];
                    if c != a {
                        break c;
                    }
                };
                let xa: Vec<T> = dataset.items[a].input.iter().map(|&v| T::lit(v)).collect();
                let xp: Vec<T> = dataset.items[p].input.iter().map(|&v| T::lit(v)).collect();
                let (ea, ep) = (guard!(epoch, model.embed(&xa)), guard!(epoch, model.embed(&xp)));
                let mut mined = mine_hard_negatives(&cache, &ea, class, &ep, config.negatives, margin)?;
                if config.hardest_only {
                    mined.truncate(1);
                }
                for (n, _) in mined {
                    triplets.push([&dataset.items[a].input, &dataset.items[p].input, &dataset.items[n].input]);
                }
            }
            if triplets.is_empty() {
                continue;
            }
            let obj = guard!(epoch, batch_objective(&model, &triplets, config.margin(), config.kl_scale, true));
            let grad = obj.grad.expect("gradient requested");
            if !obj.loss.is_finite() {
                stop!(epoch, "non-finite loss");
            }
            if grad.iter().any(|g| !g.is_finite()) {
                stop!(epoch, "non-finite gradient");
            }
            let before = model.params().to_vec();
            adam.step(model.params_mut(), &grad, lr, config.weight_decay);
            last_good = Some(before);
            if model.params().iter().any(|p| !p.is_finite()) {
                stop!(epoch, "non-finite parameters");
            }
            let w = triplets.len() as f64;
            loss_sum += obj.loss.as_f64() * w;
            nll_sum += obj.nll.as_f64() * w;
            kl_sum += obj.kl.as_f64() * w;
            count += triplets.len();
        }
        let c = count.max(1) as f64;
        let val_r1 = if config.val_queries > 0 { guard!(epoch, validation_r1(&model, dataset, config.val_queries)) } else { 0.0 };
        log::info!("epoch {epoch}: loss {:.5} over {count} triplets, val R@1 {val_r1:.4}", loss_sum / c);
        history.rows.push(HistoryRow { epoch, loss: loss_sum / c, nll: nll_sum / c, kl: kl_sum / c, val_r1, lr });
    }
    Ok(TrainRun { model, history, diverged: None })
}

/// Point-embedding baseline trained with the hinge loss, with the same
/// output budget as the stochastic models.
pub fn train_baseline<T: Scalar>(config: &TrainConfig, dataset: &SyntheticDataset) -> Result<(Encoder<T>, History)> {
    let cfg = TrainConfig { loss: LossKind::Hinge, ..config.clone() };
    train(&cfg, dataset)
}

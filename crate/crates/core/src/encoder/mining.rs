//! Hard-negative mining from a periodically refreshed embedding cache.

use super::dataset::Item;
use super::model::Encoder;
use crate::embedding::{GaussianEmbedding, Triplet};
use crate::error::Result;
use crate::rng::seeded_rng;
use crate::scalar::{sq_dist, Scalar};
use rand::seq::index;
use rayon::prelude::*;

/// Embeddings of a random subset of the training items.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningCache<T: Scalar> {
    ids: Vec<usize>,
    labels: Vec<usize>,
    embeddings: Vec<GaussianEmbedding<T>>,
    capacity: usize,
    staleness: usize,
}

impl<T: Scalar> MiningCache<T> {
    pub fn new(capacity: usize) -> Self {
        Self { ids: Vec::new(), labels: Vec::new(), embeddings: Vec::new(), capacity, staleness: 0 }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Iterations since the last refresh.
    pub fn staleness(&self) -> usize {
        self.staleness
    }

    pub fn tick(&mut self) {
        self.staleness += 1;
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn embeddings(&self) -> &[GaussianEmbedding<T>] {
        &self.embeddings
    }
}

/// Embeds the inputs with a read-only model; order follows `inputs`.
pub fn embed_all<T: Scalar>(model: &Encoder<T>, inputs: &[&[f64]]) -> Result<Vec<GaussianEmbedding<T>>> {
    inputs
        .par_iter()
        .map(|x| {
            let xt: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
            model.embed(&xt)
        })
        .collect()
}

/// Replaces the cache with `n_new` items of `pool` drawn without replacement
/// and embedded by `model`. `n_new` larger than the pool is capped.
pub fn refresh_cache<T: Scalar>(
    cache: &MiningCache<T>,
    model: &Encoder<T>,
    items: &[Item],
    pool: &[usize],
    n_new: usize,
    seed: u64,
) -> Result<MiningCache<T>> {
    let mut n = n_new.min(cache.capacity);
    if n > pool.len() {
        log::warn!("cache refresh of {n} items exceeds the {} available; capping", pool.len());
        n = pool.len();
    }
    let mut rng = seeded_rng(seed);
    let ids: Vec<usize> = index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    let inputs: Vec<&[f64]> = ids.iter().map(|&i| items[i].input.as_slice()).collect();
    let embeddings = embed_all(model, &inputs)?;
    Ok(MiningCache {
        labels: ids.iter().map(|&i| items[i].class).collect(),
        ids,
        embeddings,
        capacity: cache.capacity,
        staleness: 0,
    })
}

/// Among the `k` cached negatives nearest to the anchor's mean, returns those
/// violating `‖μ_a − μ_p‖² < ‖μ_a − μ_n‖² − m`, nearest first, as
/// `(item id, triplet on cached negative embedding)`.
pub fn mine_hard_negatives<T: Scalar>(
    cache: &MiningCache<T>,
    anchor: &GaussianEmbedding<T>,
    anchor_class: usize,
    positive: &GaussianEmbedding<T>,
    k: usize,
    margin: T,
) -> Result<Vec<(usize, Triplet<T>)>> {
    let mut cand: Vec<(T, usize)> = cache
        .embeddings
        .iter()
        .enumerate()
        .filter(|&(i, _)| cache.labels[i] != anchor_class)
        .map(|(i, e)| (sq_dist(anchor.mean(), e.mean()), i))
        .collect();
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    cand.truncate(k);
    let dp = sq_dist(anchor.mean(), positive.mean());
    cand.into_iter()
        .filter(|&(dn, _)| dp >= dn - margin)
        .map(|(_, i)| {
            let t = Triplet::new(anchor.clone(), positive.clone(), cache.embeddings[i].clone())?;
            Ok((cache.ids[i], t))
        })
        .collect()
}

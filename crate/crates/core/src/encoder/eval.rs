//! Leave-one-out retrieval evaluation of a trained encoder on the test split.

use super::dataset::{Item, SyntheticDataset};
use super::mining::embed_all;
use super::model::{Encoder, HeadKind};
use crate::embedding::GaussianEmbedding;
use crate::error::{invalid, Error, Result};
use crate::metrics::{
    calibration_bins, ece_at_k, map_at_k, ood_separation, recall_at_k, retrieve_all, spearman, CalibrationReport,
    Database, OodSeparation, RetrievalMode, RetrievalResult,
};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub const EVAL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub bins: usize,
    pub mode: RetrievalMode,
    pub ood_hist_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10], bins: 10, mode: RetrievalMode::Means, ood_hist_bins: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub recall: f64,
    pub map: f64,
    /// Absent for point embeddings.
    pub ece: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub head: HeadKind,
    pub mode: RetrievalMode,
    pub n_queries: usize,
    pub metrics: Vec<KMetrics>,
    /// Spearman correlation between injected noise and predicted variance.
    pub spearman_noise_variance: Option<f64>,
    pub calibration: Vec<CalibrationReport>,
    pub ood: Option<OodSeparation>,
}

/// One embedded item with the labels evaluation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbedding {
    pub id: usize,
    pub class: usize,
    /// Noise level the item was generated with, when known.
    pub sigma_gen: Option<f64>,
    pub embedding: GaussianEmbedding<f64>,
}

/// Serialized embedding file. vMF embeddings are stored through their
/// moment-matched Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub version: u32,
    pub head: HeadKind,
    pub dim: usize,
    pub items: Vec<LabeledEmbedding>,
}

impl EmbeddingSet {
    pub fn new(head: HeadKind, items: Vec<LabeledEmbedding>) -> Result<Self> {
        let dim = items.first().map_or(0, |it| it.embedding.dim());
        if let Some(bad) = items.iter().find(|it| it.embedding.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.embedding.dim() });
        }
        Ok(Self { version: EVAL_FORMAT_VERSION, head, dim, items })
    }

    pub fn embeddings(&self) -> Vec<GaussianEmbedding<f64>> {
        self.items.iter().map(|it| it.embedding.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.class).collect()
    }

    /// Rows `id,var,mu_1,…,mu_D` under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,var");
        for j in 1..=self.dim {
            out.push_str(&format!(",mu_{j}"));
        }
        out.push('\n');
        for it in &self.items {
            out.push_str(&it.embedding.to_csv_row(it.id));
            out.push('\n');
        }
        out
    }
}

/// Embeds `(id, item)` pairs in parallel.
pub fn embed_items<T: Scalar>(model: &Encoder<T>, items: &[(usize, &Item)]) -> Result<EmbeddingSet> {
    let inputs: Vec<&[f64]> = items.iter().map(|(_, it)| it.input.as_slice()).collect();
    let emb = embed_all(model, &inputs)?;
    let rows = items
        .iter()
        .zip(emb)
        .map(|(&(id, it), e)| {
            let mean: Vec<f64> = e.mean().iter().map(|x| x.as_f64()).collect();
            let embedding = if e.is_point() {
                GaussianEmbedding::point(mean)
            } else {
                GaussianEmbedding::new(mean, e.variance().as_f64())
            }?;
            Ok(LabeledEmbedding { id, class: it.class, sigma_gen: Some(it.sigma_gen), embedding })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(model.config().head, rows)
}

/// Test split of `dataset`, ids being dataset indices.
pub fn embed_test_split<T: Scalar>(model: &Encoder<T>, dataset: &SyntheticDataset) -> Result<EmbeddingSet> {
    let items: Vec<(usize, &Item)> = dataset.test_indices().into_iter().map(|i| (i, &dataset.items[i])).collect();
    embed_items(model, &items)
}

/// Retrieval against `db`: leave-one-out over the database itself when
/// `queries` is `None`, plus optional OOD queries.
pub fn retrieval_results_sets(
    db: &EmbeddingSet,
    queries: Option<&EmbeddingSet>,
    ood: Option<&EmbeddingSet>,
    k: usize,
    mode: RetrievalMode,
) -> Result<(RetrievalResult, Option<RetrievalResult>)> {
    if db.items.len() < 2 {
        return Err(invalid("the database needs at least two items"));
    }
    let emb = db.embeddings();
    let labels = db.labels();
    let database = Database::new(&emb, &labels)?;
    let id = match queries {
        None => retrieve_all(&database, &emb, &labels, k, mode, true)?,
        Some(q) => retrieve_all(&database, &q.embeddings(), &q.labels(), k, mode, false)?,
    };
    let ood = match ood {
        Some(o) => Some(retrieve_all(&database, &o.embeddings(), &o.labels(), k, mode, false)?),
        None => None,
    };
    Ok((id, ood))
}

/// Test-split retrieval (leave-one-out) and, when given, OOD queries against
/// the same database.
pub fn retrieval_results<T: Scalar>(
    model: &Encoder<T>,
    dataset: &SyntheticDataset,
    ood: Option<&[Item]>,
    k: usize,
    mode: RetrievalMode,
) -> Result<(RetrievalResult, Option<RetrievalResult>)> {
    let db = embed_test_split(model, dataset)?;
    let ood = ood.map(|items| embed_items(model, &items.iter().enumerate().collect::<Vec<_>>())).transpose()?;
    retrieval_results_sets(&db, None, ood.as_ref(), k, mode)
}

pub fn evaluate<T: Scalar>(
    model: &Encoder<T>,
    dataset: &SyntheticDataset,
    ood: Option<&[Item]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let db = embed_test_split(model, dataset)?;
    let ood = ood.map(|items| embed_items(model, &items.iter().enumerate().collect::<Vec<_>>())).transpose()?;
    evaluate_sets(&db, None, ood.as_ref(), config)
}

/// Metrics from embedding files. Calibration, the noise correlation and
/// the OOD analysis need stochastic embeddings and are skipped for points.
pub fn evaluate_sets(
    db: &EmbeddingSet,
    queries: Option<&EmbeddingSet>,
    ood: Option<&EmbeddingSet>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let k_max = config.ks.iter().copied().max().ok_or_else(|| invalid("no k values"))?;
    if config.ks.contains(&0) {
        return Err(invalid("k must be at least 1"));
    }
    for other in queries.iter().chain(ood.iter()) {
        if other.dim != db.dim {
            return Err(Error::DimensionMismatch { expected: db.dim, found: other.dim });
        }
    }
    let (id, ood_res) = retrieval_results_sets(db, queries, ood, k_max, config.mode)?;
    let query_set = queries.unwrap_or(db);
    let stochastic = query_set.items.iter().chain(&db.items).all(|it| !it.embedding.is_point());
    let mut calibration = Vec::new();
    let mut metrics = Vec::new();
    for &k in &config.ks {
        let ece = if stochastic {
            let rep = calibration_bins(&id, config.bins, k)?;
            let e = ece_at_k(&rep);
            calibration.push(rep);
            Some(e)
        } else {
            None
        };
        metrics.push(KMetrics { k, recall: recall_at_k(&id, k), map: map_at_k(&id, k), ece });
    }
    let noise: Option<Vec<f64>> = query_set.items.iter().map(|it| it.sigma_gen).collect();
    let spearman_noise_variance = match (stochastic, noise) {
        (true, Some(noise)) => {
            let var: Vec<f64> = id.queries.iter().map(|q| q.query_variance).collect();
            spearman(&noise, &var)
        }
        _ => None,
    };
    let ood = match (&ood_res, stochastic) {
        (Some(o), true) => Some(ood_separation(&id, o, config.ood_hist_bins)?),
        _ => None,
    };
    Ok(EvalReport {
        version: EVAL_FORMAT_VERSION,
        head: db.head,
        mode: config.mode,
        n_queries: id.queries.len(),
        metrics,
        spearman_noise_variance,
        calibration,
        ood,
    })
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&KMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

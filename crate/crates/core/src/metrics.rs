//! Exact nearest-neighbour retrieval over Gaussian embeddings, ranking
//! metrics, variance-based calibration and OOD separation.
//!
//! Calibration confidence of a query is `1 − r`, where `r ∈ (0, 1)` is the
//! percentile rank of its variance among all queries (midranks for ties,
//! `r = (i + 0.5) / n`). A bin's confidence is the mean over its members, so
//! a model whose retrieval quality falls linearly with variance percentile
//! has zero ECE.

use crate::embedding::{expected_sq_distance, sq_distance_of_means, GaussianEmbedding};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const RETRIEVAL_FORMAT_VERSION: u32 = 1;
pub const CALIBRATION_FORMAT_VERSION: u32 = 1;
pub const CALIBRATION_CSV_HEADER: &str = "bin,count,map_at_k,conf";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Squared distance between means.
    Means,
    /// Expected squared distance, `‖μ_q − μ_x‖² + D(σ_q² + σ_x²)`.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    /// Database indices, nearest first.
    pub neighbors: Vec<usize>,
    pub relevant: Vec<bool>,
    /// Relevant items in the database (excluding the query itself).
    pub n_relevant: usize,
    pub query_variance: f64,
    /// `D (σ_q² + σ_nn²)` for the nearest neighbour.
    pub nn_covariance: f64,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub version: u32,
    pub k: usize,
    pub mode: RetrievalMode,
    pub queries: Vec<QueryResult>,
}

/// Labelled embedding database.
#[derive(Debug, Clone, Copy)]
pub struct Database<'a, T: Scalar> {
    pub items: &'a [GaussianEmbedding<T>],
    pub labels: &'a [usize],
}

impl<'a, T: Scalar> Database<'a, T> {
    pub fn new(items: &'a [GaussianEmbedding<T>], labels: &'a [usize]) -> Result<Self> {
        if items.is_empty() {
            return Err(invalid("database is empty"));
        }
        if items.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: items.len(), found: labels.len() });
        }
        Ok(Self { items, labels })
    }
}

/// Top-`k` neighbours of one query. `exclude` removes a database index (the
/// query itself in leave-one-out evaluation). Ties keep database order.
pub fn retrieve<T: Scalar>(
    db: &Database<'_, T>,
    query: &GaussianEmbedding<T>,
    query_label: usize,
    exclude: Option<usize>,
    k: usize,
    mode: RetrievalMode,
) -> Result<QueryResult> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut scored = Vec::with_capacity(db.items.len());
    for (i, x) in db.items.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d = match mode {
            RetrievalMode::Means => sq_distance_of_means(query, x)?,
            RetrievalMode::Expected => expected_sq_distance(query, x)?,
        };
        scored.push((d.as_f64(), i));
    }
    if scored.is_empty() {
        return Err(invalid("no database items left after exclusion"));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let truncated = scored.len() < k;
    if truncated {
        log::debug!("k = {k} exceeds the {} available candidates; truncating", scored.len());
    }
    scored.truncate(k);
    let neighbors: Vec<usize> = scored.iter().map(|&(_, i)| i).collect();
    let relevant = neighbors.iter().map(|&i| db.labels[i] == query_label).collect();
    let n_relevant = db
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| l == query_label && Some(i) != exclude)
        .count();
    let d = T::from_count(query.dim());
    let nn_covariance = (d * (query.variance() + db.items[neighbors[0]].variance())).as_f64();
    Ok(QueryResult {
        neighbors,
        relevant,
        n_relevant,
        query_variance: query.variance().as_f64(),
        nn_covariance,
        truncated,
    })
}

/// Retrieval for a batch of queries. With `leave_one_out`, query `i` is the
/// database item `i` and is excluded from its own ranking.
pub fn retrieve_all<T: Scalar>(
    db: &Database<'_, T>,
    queries: &[GaussianEmbedding<T>],
    query_labels: &[usize],
    k: usize,
    mode: RetrievalMode,
    leave_one_out: bool,
) -> Result<RetrievalResult> {
    if queries.len() != query_labels.len() {
        return Err(Error::DimensionMismatch { expected: queries.len(), found: query_labels.len() });
    }
    if leave_one_out && queries.len() != db.items.len() {
        return Err(invalid("leave-one-out retrieval needs the queries to be the database"));
    }
    let queries = queries
        .par_iter()
        .zip(query_labels.par_iter())
        .enumerate()
        .map(|(i, (q, &l))| retrieve(db, q, l, leave_one_out.then_some(i), k, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalResult { version: RETRIEVAL_FORMAT_VERSION, k, mode, queries })
}

/// Average precision truncated at `k`, normalised by `min(k, n_relevant)`.
pub fn average_precision_at_k(q: &QueryResult, k: usize) -> f64 {
    let denom = k.min(q.n_relevant);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in q.relevant.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

fn mean_over<F: Fn(&QueryResult) -> f64>(qs: &[QueryResult], f: F) -> f64 {
    if qs.is_empty() {
        return 0.0;
    }
    qs.iter().map(f).sum::<f64>() / qs.len() as f64
}

/// Fraction of queries with at least one relevant item among the first `k`.
pub fn recall_at_k(results: &RetrievalResult, k: usize) -> f64 {
    mean_over(&results.queries, |q| f64::from(q.relevant.iter().take(k).any(|&r| r)))
}

pub fn map_at_k(results: &RetrievalResult, k: usize) -> f64 {
    mean_over(&results.queries, |q| average_precision_at_k(q, k))
}

/// Midranks (0-based, ties share the average rank).
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of midranks). `None` when
/// either input is constant or lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (midranks(x), midranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub count: usize,
    pub map_at_k: f64,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub version: u32,
    pub k: usize,
    /// Lowest variance (highest confidence) first.
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationReport {
    pub fn n_queries(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# version {} k {}\n{CALIBRATION_CSV_HEADER}\n", self.version, self.k);
        for (i, b) in self.bins.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{}", b.count, b.map_at_k, b.conf);
        }
        s
    }
}

/// Splits queries into `m` equally sized variance bins (the first
/// `n mod m` bins get one extra query).
pub fn calibration_bins(results: &RetrievalResult, m: usize, k: usize) -> Result<CalibrationReport> {
    let n = results.queries.len();
    if m == 0 || n < m {
        return Err(invalid(format!("calibration needs 1 <= M <= query count, got M = {m}, n = {n}")));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let var: Vec<f64> = results.queries.iter().map(|q| q.query_variance).collect();
    let pct: Vec<f64> = midranks(&var).iter().map(|r| (r + 0.5) / n as f64).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| var[a].total_cmp(&var[b]));
    let (base, extra) = (n / m, n % m);
    let mut bins = Vec::with_capacity(m);
    let mut start = 0;
    for b in 0..m {
        let size = base + usize::from(b < extra);
        let members = &order[start..start + size];
        start += size;
        let map = members.iter().map(|&i| average_precision_at_k(&results.queries[i], k)).sum::<f64>() / size as f64;
        let rank = members.iter().map(|&i| pct[i]).sum::<f64>() / size as f64;
        bins.push(CalibrationBin { count: size, map_at_k: map, conf: 1.0 - rank });
    }
    Ok(CalibrationReport { version: CALIBRATION_FORMAT_VERSION, k, bins })
}

/// `Σ_m |B_m|/n · |mAP@k(B_m) − conf(B_m)|`.
pub fn ece_at_k(report: &CalibrationReport) -> f64 {
    let n = report.n_queries();
    if n == 0 {
        return 0.0;
    }
    report
        .bins
        .iter()
        .map(|b| b.count as f64 / n as f64 * (b.map_at_k - b.conf).abs())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSeparation {
    /// Shared histogram edges (`bins + 1` values).
    pub edges: Vec<f64>,
    pub id_hist: Vec<usize>,
    pub ood_hist: Vec<usize>,
    /// Probability that an OOD score exceeds an ID score (ties count half).
    pub auroc: f64,
}

/// AUROC of `ood` against `id` scores via the Mann-Whitney statistic.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    if id.is_empty() || ood.is_empty() {
        return Err(invalid("AUROC needs nonempty ID and OOD sets"));
    }
    let all: Vec<f64> = id.iter().chain(ood).copied().collect();
    let ranks = midranks(&all);
    let (n0, n1) = (id.len() as f64, ood.len() as f64);
    // 1-based rank sum of the OOD group
    let r1: f64 = ranks[id.len()..].iter().map(|r| r + 1.0).sum();
    Ok((r1 - n1 * (n1 + 1.0) / 2.0) / (n0 * n1))
}

/// Histograms of the nearest-neighbour covariance for ID and OOD queries,
/// and its AUROC as an OOD score.
pub fn ood_separation(id: &RetrievalResult, ood: &RetrievalResult, bins: usize) -> Result<OodSeparation> {
    if bins == 0 {
        return Err(invalid("histogram needs at least one bin"));
    }
    let a: Vec<f64> = id.queries.iter().map(|q| q.nn_covariance).collect();
    let b: Vec<f64> = ood.queries.iter().map(|q| q.nn_covariance).collect();
    let auroc = auroc(&a, &b)?;
    let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins && hi > lo { hi } else { lo + i as f64 * width }).collect();
    let hist = |xs: &[f64]| {
        let mut h = vec![0usize; bins];
        for &x in xs {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            h[i] += 1;
        }
        h
    };
    Ok(OodSeparation { edges, id_hist: hist(&a), ood_hist: hist(&b), auroc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(rel: &[bool], n_relevant: usize, var: f64) -> QueryResult {
        QueryResult {
            neighbors: (0..rel.len()).collect(),
            relevant: rel.to_vec(),
            n_relevant,
            query_variance: var,
            nn_covariance: var,
            truncated: false,
        }
    }

    fn res(qs: Vec<QueryResult>) -> RetrievalResult {
        RetrievalResult { version: 1, k: 10, mode: RetrievalMode::Means, queries: qs }
    }

    fn pt(x: &[f64], v: f64) -> GaussianEmbedding<f64> {
        GaussianEmbedding::new(x.to_vec(), v).unwrap()
    }

    #[test]
    fn exact_match_ranks_first_and_self_is_excluded() {
        let items = vec![pt(&[0.0, 0.0], 0.1), pt(&[1.0, 0.0], 0.1), pt(&[3.0, 0.0], 0.1)];
        let labels = [0, 1, 0];
        let db = Database::new(&items, &labels).unwrap();
        let r = retrieve(&db, &items[1], 1, None, 2, RetrievalMode::Means).unwrap();
        assert_eq!(r.neighbors, vec![1, 0]);
        let r = retrieve(&db, &items[1], 1, Some(1), 5, RetrievalMode::Means).unwrap();
        assert_eq!(r.neighbors, vec![0, 2]);
        assert!(r.truncated);
        assert_eq!(r.n_relevant, 0);
    }

    #[test]
    fn expected_mode_penalises_variance() {
        let items = vec![pt(&[1.0], 10.0), pt(&[2.0], 0.01)];
        let labels = [0, 1];
        let db = Database::new(&items, &labels).unwrap();
        let query = pt(&[0.0], 0.1);
        let m = retrieve(&db, &query, 0, None, 2, RetrievalMode::Means).unwrap();
        let e = retrieve(&db, &query, 0, None, 2, RetrievalMode::Expected).unwrap();
        assert_eq!(m.neighbors, vec![0, 1]);
        assert_eq!(e.neighbors, vec![1, 0]);
    }

    #[test]
    fn ties_keep_database_order() {
        let items = vec![pt(&[1.0], 1.0), pt(&[-1.0], 1.0), pt(&[1.0], 1.0)];
        let labels = [0, 0, 0];
        let db = Database::new(&items, &labels).unwrap();
        let r = retrieve(&db, &pt(&[0.0], 1.0), 0, None, 3, RetrievalMode::Expected).unwrap();
        assert_eq!(r.neighbors, vec![0, 1, 2]);
    }

    #[test]
    fn hand_enumerated_recall_and_map() {
        // relevant flags, total relevant
        let r = res(vec![
            q(&[true, false, true], 2, 0.1),
            q(&[false, true, false], 3, 0.2),
            q(&[false, false, false], 1, 0.3),
            q(&[true, true, true], 3, 0.4),
        ]);
        assert_eq!(recall_at_k(&r, 1), 0.5);
        assert_eq!(recall_at_k(&r, 3), 0.75);
        // AP@3: (1 + 2/3)/2, (1/2)/3, 0, 1
        let expect = ((1.0 + 2.0 / 3.0) / 2.0 + 0.5 / 3.0 + 0.0 + 1.0) / 4.0;
        assert!((map_at_k(&r, 3) - expect).abs() < 1e-15);
        assert_eq!(map_at_k(&r, 1), recall_at_k(&r, 1));
    }

    #[test]
    fn single_bin_ece() {
        let r = res(vec![q(&[true], 1, 0.1), q(&[false], 1, 0.2), q(&[true], 1, 0.3)]);
        let rep = calibration_bins(&r, 1, 1).unwrap();
        assert!((rep.bins[0].conf - 0.5).abs() < 1e-15);
        assert!((ece_at_k(&rep) - (2.0 / 3.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn two_bins_by_hand() {
        // ranks .125 .375 | .625 .875, conf .75 | .25
        let r = res(vec![q(&[false], 1, 4.0), q(&[true], 1, 1.0), q(&[true], 1, 2.0), q(&[false], 1, 3.0)]);
        let rep = calibration_bins(&r, 2, 1).unwrap();
        assert_eq!(rep.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(rep.bins[0].map_at_k, 1.0);
        assert_eq!(rep.bins[1].map_at_k, 0.0);
        assert!((rep.bins[0].conf - 0.75).abs() < 1e-15);
        assert!((ece_at_k(&rep) - 0.25).abs() < 1e-15);
        assert!(rep.to_csv().contains("bin,count,map_at_k,conf\n0,2,1,0.75"));
    }

    #[test]
    fn remainder_goes_to_first_bins() {
        let r = res((0..7).map(|i| q(&[true], 1, i as f64)).collect());
        let rep = calibration_bins(&r, 3, 1).unwrap();
        assert_eq!(rep.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![3, 2, 2]);
        assert!(calibration_bins(&r, 8, 1).is_err());
    }

    #[test]
    fn tied_variances_share_rank() {
        let r = res((0..4).map(|_| q(&[true], 1, 1.0)).collect());
        let rep = calibration_bins(&r, 2, 1).unwrap();
        assert!(rep.bins.iter().all(|b| (b.conf - 0.5).abs() < 1e-15));
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
        // 1 vs {0.5, 1, 2}: pairs (1,0.5)=0, (1,1)=.5, (1,2)=1
        assert!((auroc(&[1.0], &[0.5, 1.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn ood_histograms_share_edges() {
        let id = res(vec![q(&[true], 1, 1.0), q(&[true], 1, 2.0)]);
        let ood = res(vec![q(&[true], 1, 3.0), q(&[true], 1, 4.0)]);
        let s = ood_separation(&id, &ood, 3).unwrap();
        assert_eq!(s.edges.len(), 4);
        assert_eq!(s.id_hist, vec![1, 1, 0]);
        assert_eq!(s.ood_hist, vec![0, 0, 2]);
        assert_eq!(s.auroc, 1.0);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 40.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}

use super::serde_value;
use crate::config;
use crate::manifest::Run;
use crate::{Globals, Outcome};
use anyhow::{bail, Context, Result};
use btl_core::encoder::{evaluate_sets, EmbeddingSet, EvalConfig, EvalReport};
use btl_core::metrics::RetrievalMode;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Database embeddings (JSON from `btl embed`).
    #[arg(long)]
    db: Option<PathBuf>,
    /// Query embeddings; leave-one-out over the database when omitted.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Out-of-distribution queries for the variance separation analysis.
    #[arg(long)]
    ood_queries: Option<PathBuf>,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Calibration bins.
    #[arg(long)]
    bins: Option<usize>,
    /// means or expected.
    #[arg(long, value_parser = serde_value::<RetrievalMode>)]
    mode: Option<RetrievalMode>,
    #[arg(long)]
    ood_hist_bins: Option<usize>,
    #[arg(long, default_value = "btl-out/eval")]
    out: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCommandConfig {
    pub db: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub ood_queries: Option<PathBuf>,
    pub eval: EvalConfig,
}

#[derive(Serialize)]
struct MetricsJson {
    version: u32,
    head: btl_core::HeadKind,
    mode: RetrievalMode,
    n_queries: usize,
    /// `R@k`, `M@k` and `ECE@k` (null for point embeddings).
    #[serde(flatten)]
    table: BTreeMap<String, Option<f64>>,
    spearman_noise_variance: Option<f64>,
    auroc: Option<f64>,
}

fn metrics_json(r: &EvalReport) -> MetricsJson {
    let mut table = BTreeMap::new();
    for m in &r.metrics {
        table.insert(format!("R@{}", m.k), Some(m.recall));
        table.insert(format!("M@{}", m.k), Some(m.map));
        table.insert(format!("ECE@{}", m.k), m.ece);
    }
    MetricsJson {
        version: r.version,
        head: r.head,
        mode: r.mode,
        n_queries: r.n_queries,
        table,
        spearman_noise_variance: r.spearman_noise_variance,
        auroc: r.ood.as_ref().map(|o| o.auroc),
    }
}

fn read_set(path: &Path) -> Result<EmbeddingSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing embedding set {}", path.display()))
}

pub fn run(g: &Globals, a: Args) -> Result<Outcome> {
    let path = g.config.as_deref();
    let mut cfg: EvalCommandConfig = config::load(path, "eval")?;
    let seed = config::resolve_seed(g.seed, None)?;
    if a.db.is_some() {
        cfg.db = a.db;
    }
    if a.queries.is_some() {
        cfg.queries = a.queries;
    }
    if a.ood_queries.is_some() {
        cfg.ood_queries = a.ood_queries;
    }
    let e = &mut cfg.eval;
    if let Some(v) = a.ks {
        e.ks = v;
    }
    e.bins = a.bins.unwrap_or(e.bins);
    e.mode = a.mode.unwrap_or(e.mode);
    e.ood_hist_bins = a.ood_hist_bins.unwrap_or(e.ood_hist_bins);

    let Some(db_path) = cfg.db.as_ref() else { bail!("--db is required") };
    let db = read_set(db_path)?;
    let queries = cfg.queries.as_deref().map(read_set).transpose()?;
    let ood = cfg.ood_queries.as_deref().map(read_set).transpose()?;
    let report = evaluate_sets(&db, queries.as_ref(), ood.as_ref(), &cfg.eval)?;

    let mut run = Run::start("eval", &a.out)?;
    run.write_json("metrics.json", &metrics_json(&report))?;
    for c in &report.calibration {
        run.write(&format!("calibration_at_{}.csv", c.k), &c.to_csv())?;
    }
    if let Some(o) = &report.ood {
        run.write_json("ood.json", o)?;
    }
    run.write_json("report.json", &report)?;
    for m in &report.metrics {
        let ece = m.ece.map_or("-".to_string(), |e| format!("{e:.4}"));
        println!("k={:<3} R@k {:.4}  M@k {:.4}  ECE@k {ece}", m.k, m.recall, m.map);
    }
    if let Some(o) = &report.ood {
        println!("OOD AUROC {:.4}", o.auroc);
    }
    run.finish(seed, g.threads, &cfg)?;
    Ok(Outcome::Success)
}

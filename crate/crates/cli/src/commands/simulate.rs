use crate::config;
use crate::manifest::Run;
use crate::{Globals, Outcome};
use anyhow::Result;
use btl_core::mc::{run_approximation_study, ApproxRow, DEFAULT_STUDY_DIMS};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Comma-separated embedding dimensions.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Random triplets per dimension.
    #[arg(long)]
    trials: Option<usize>,
    /// Exact τ samples per triplet.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = "btl-out/simulate-approx")]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dims: Vec<usize>,
    pub trials: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { dims: DEFAULT_STUDY_DIMS.to_vec(), trials: 20, samples: 100_000, seed: 0 }
    }
}

#[derive(Serialize)]
struct MedianKs {
    dim: usize,
    median_ks: f64,
}

#[derive(Serialize)]
struct StudyJson<'a> {
    version: u32,
    median_ks: Vec<MedianKs>,
    rows: &'a [ApproxRow],
}

pub fn run(g: &Globals, a: Args) -> Result<Outcome> {
    let path = g.config.as_deref();
    let mut cfg: SimulateConfig = config::load(path, "simulate-approx")?;
    cfg.seed = config::resolve_seed(g.seed, config::file_seed(path, "/seed")?)?;
    if let Some(v) = a.dims {
        cfg.dims = v;
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.samples {
        cfg.samples = v;
    }
    let mut run = Run::start("simulate-approx", &a.out)?;
    let report = run_approximation_study(&cfg.dims, cfg.trials, cfg.samples, cfg.seed)?;
    run.write("approx_study.csv", &report.to_csv())?;
    let median_ks: Vec<MedianKs> =
        report.median_ks_by_dim().into_iter().map(|(dim, median_ks)| MedianKs { dim, median_ks }).collect();
    for m in &median_ks {
        println!("D={:<5} median KS {:.5}", m.dim, m.median_ks);
    }
    run.write_json("approx_study.json", &StudyJson { version: 1, median_ks, rows: &report.rows })?;
    run.finish(cfg.seed, g.threads, &cfg)?;
    Ok(Outcome::Success)
}

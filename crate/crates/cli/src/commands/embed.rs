use super::{serde_value, DatasetArgs};
use crate::config;
use crate::manifest::Run;
use crate::{Globals, Outcome};
use anyhow::{bail, Context, Result};
use btl_core::encoder::{
    embed_items, generate_ood_queries, generate_synthetic_dataset, Checkpoint, DatasetConfig, Encoder, Item,
    OodConfig,
};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    #[default]
    Test,
    All,
    /// Queries from the out-of-distribution generator.
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Checkpoint written by `btl train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// train, test, all or ood.
    #[arg(long, value_parser = serde_value::<Split>)]
    split: Option<Split>,
    /// json or csv.
    #[arg(long, value_parser = serde_value::<Format>)]
    format: Option<Format>,
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long)]
    ood_classes: Option<usize>,
    #[arg(long)]
    ood_per_class: Option<usize>,
    #[arg(long)]
    ood_shift: Option<f64>,
    #[arg(long)]
    ood_center_scale: Option<f64>,
    #[arg(long, default_value = "btl-out/embed")]
    out: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub format: Format,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub ood: OodConfig,
}

pub fn run(g: &Globals, a: Args) -> Result<Outcome> {
    let path = g.config.as_deref();
    let mut cfg: EmbedConfig = config::load(path, "embed")?;
    cfg.seed = config::resolve_seed(g.seed, config::file_seed(path, "/seed")?)?;
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint;
    }
    if let Some(v) = a.split {
        cfg.split = v;
    }
    if let Some(v) = a.format {
        cfg.format = v;
    }
    a.dataset.apply(&mut cfg.dataset);
    let o = &mut cfg.ood;
    o.n_classes = a.ood_classes.unwrap_or(o.n_classes);
    o.per_class = a.ood_per_class.unwrap_or(o.per_class);
    o.shift = a.ood_shift.unwrap_or(o.shift);
    o.center_scale = a.ood_center_scale.unwrap_or(o.center_scale);

    let Some(ck_path) = cfg.checkpoint.as_ref() else { bail!("--checkpoint is required") };
    let text = std::fs::read_to_string(ck_path).with_context(|| format!("reading {}", ck_path.display()))?;
    let ck: Checkpoint = serde_json::from_str(&text).with_context(|| format!("parsing {}", ck_path.display()))?;
    let model = Encoder::<f64>::from_checkpoint(&ck)?;
    if ck.config.input_dim != cfg.dataset.input_dim {
        bail!(
            "checkpoint expects {}-dimensional inputs but the dataset has input_dim {}",
            ck.config.input_dim,
            cfg.dataset.input_dim
        );
    }
    let dataset = generate_synthetic_dataset(&cfg.dataset, cfg.seed)?;
    let ood_items;
    let items: Vec<(usize, &Item)> = match cfg.split {
        Split::Train => dataset.train_indices().into_iter().map(|i| (i, &dataset.items[i])).collect(),
        Split::Test => dataset.test_indices().into_iter().map(|i| (i, &dataset.items[i])).collect(),
        Split::All => dataset.items.iter().enumerate().collect(),
        Split::Ood => {
            ood_items = generate_ood_queries(&cfg.dataset, &cfg.ood, cfg.seed)?;
            ood_items.iter().enumerate().collect()
        }
    };
    let set = embed_items(&model, &items)?;
    let mut run = Run::start("embed", &a.out)?;
    match cfg.format {
        Format::Json => run.write_json("embeddings.json", &set)?,
        Format::Csv => run.write("embeddings.csv", &set.to_csv())?,
    };
    println!("embedded {} items of the {:?} split (D = {})", set.items.len(), cfg.split, set.dim);
    run.finish(cfg.seed, g.threads, &cfg)?;
    Ok(Outcome::Success)
}

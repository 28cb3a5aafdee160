use super::{serde_value, DatasetArgs};
use crate::config;
use crate::manifest::Run;
use crate::{Globals, Outcome};
use anyhow::Result;
use btl_core::encoder::{generate_synthetic_dataset, train_run, Activation, DatasetConfig, LossKind, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// bayes-gauss, bayes-vmf or hinge.
    #[arg(long, value_parser = serde_value::<LossKind>)]
    loss: Option<LossKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Weight of the KL terms.
    #[arg(long)]
    kl_scale: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    batch_triplets: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    cache_size: Option<usize>,
    #[arg(long)]
    refresh_interval: Option<usize>,
    /// Comma-separated trunk widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// tanh, relu or identity.
    #[arg(long, value_parser = serde_value::<Activation>)]
    activation: Option<Activation>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    var_hidden: Option<usize>,
    #[arg(long)]
    hardest_only: bool,
    #[arg(long)]
    val_queries: Option<usize>,
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, default_value = "btl-out/train")]
    out: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
}

impl Args {
    fn apply(&self, t: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { t.$f = v; })*};
        }
        set!(
            loss, epochs, lr, lr_decay, weight_decay, kl_scale, batch_triplets, negatives, cache_size,
            refresh_interval, hidden, activation, embed_dim, var_hidden, val_queries
        );
        if self.margin.is_some() {
            t.margin = self.margin;
        }
        if self.hardest_only {
            t.hardest_only = true;
        }
    }
}

pub fn run(g: &Globals, a: Args) -> Result<Outcome> {
    let path = g.config.as_deref();
    let mut cfg: TrainCommandConfig = config::load(path, "train")?;
    cfg.train.seed = config::resolve_seed(g.seed, config::file_seed(path, "/train/seed")?)?;
    a.apply(&mut cfg.train);
    a.dataset.apply(&mut cfg.dataset);
    cfg.train.validate()?;
    let dataset = generate_synthetic_dataset(&cfg.dataset, cfg.train.seed)?;
    let mut run = Run::start("train", &a.out)?;
    let result = train_run::<f64>(&cfg.train, &dataset)?;
    run.write_json("checkpoint.json", &result.model.to_checkpoint())?;
    run.write("history.csv", &result.history.to_csv())?;
    run.finish(cfg.train.seed, g.threads, &cfg)?;
    if let Some(last) = result.history.rows.last() {
        println!("epoch {}: loss {:.6} val_r1 {:.4}", last.epoch, last.loss, last.val_r1);
    }
    match result.diverged {
        Some(e) => {
            eprintln!("error: {e}; checkpoint holds the last finite parameters");
            Ok(Outcome::Failed)
        }
        None => Ok(Outcome::Success),
    }
}

//! Trainable encoder, synthetic heteroscedastic data, hard-negative mining
//! and the training loop.

pub mod dataset;
pub mod eval;
pub mod mining;
pub mod model;
pub mod train;

pub use dataset::{generate_ood_queries, generate_synthetic_dataset, DatasetConfig, Item, NoiseProfile, OodConfig, SyntheticDataset};
pub use eval::{
    embed_items, embed_test_split, evaluate, evaluate_sets, retrieval_results, retrieval_results_sets, EmbeddingSet,
    EvalConfig, EvalReport, KMetrics, LabeledEmbedding,
};
pub use mining::{embed_all, mine_hard_negatives, refresh_cache, MiningCache};
pub use model::{Activation, Checkpoint, Encoder, Forward, HeadKind, LayerRecord, ModelConfig};
pub use train::{
    batch_objective, train, train_baseline, train_run, History, HistoryRow, LossKind, TrainConfig, TrainRun,
};

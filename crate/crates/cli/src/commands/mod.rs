pub mod embed;
pub mod eval;
pub mod gradcheck;
pub mod simulate;
pub mod train;

/// Dataset flags shared by `train` and `embed`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct DatasetArgs {
    /// Number of classes (the first half trains).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub noise_min: Option<f64>,
    #[arg(long)]
    pub noise_max: Option<f64>,
}

impl DatasetArgs {
    pub fn apply(&self, cfg: &mut btl_core::encoder::DatasetConfig) {
        if let Some(v) = self.classes {
            cfg.n_classes = v;
        }
        if let Some(v) = self.per_class {
            cfg.per_class = v;
        }
        if let Some(v) = self.input_dim {
            cfg.input_dim = v;
        }
        if let Some(v) = self.noise_min {
            cfg.noise.min = v;
        }
        if let Some(v) = self.noise_max {
            cfg.noise.max = v;
        }
    }
}

/// Parses a flag value through the type's serde name (`bayes-gauss`, `relu`, ...).
pub fn serde_value<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

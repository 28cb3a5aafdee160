//! Synthetic heteroscedastic classification data.
//!
//! Class centres are standard Gaussian in input space and every item is
//! `centre + σ_gen ε` with its own noise level `σ_gen ~ U[min, max]`, kept as
//! ground truth for the variance head. The first half of the classes forms
//! the training split, the rest the (unseen-class) test split.

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, seeded_rng};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub min: f64,
    pub max: f64,
}

impl NoiseProfile {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min >= 0.0 && max >= min && max.is_finite()) {
            return Err(invalid(format!("noise range must satisfy 0 <= min <= max, got [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.min + (self.max - self.min) * u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub noise: NoiseProfile,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_classes: 128, per_class: 40, input_dim: 32, noise: NoiseProfile { min: 0.0, max: 3.0 } }
    }
}

/// Queries from a distribution the model never saw: fresh class centres
/// displaced by `shift` along a random unit direction and drawn with
/// `center_scale` times the usual spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub shift: f64,
    pub center_scale: f64,
    pub noise: NoiseProfile,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self { n_classes: 32, per_class: 20, shift: 0.0, center_scale: 3.0, noise: NoiseProfile { min: 0.0, max: 3.0 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub input: Vec<f64>,
    pub class: usize,
    pub sigma_gen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: DatasetConfig,
    pub items: Vec<Item>,
    pub train_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
}

fn draw_classes<R: Rng + ?Sized>(
    rng: &mut R,
    n_classes: usize,
    per_class: usize,
    centre: impl Fn(&mut R) -> Vec<f64>,
    noise: &NoiseProfile,
    first_class: usize,
) -> Vec<Item> {
    let mut items = Vec::with_capacity(n_classes * per_class);
    for c in 0..n_classes {
        let mu = centre(rng);
        for _ in 0..per_class {
            let sigma_gen = noise.sample(rng);
            let input = mu.iter().map(|&m| m + sigma_gen * rng.sample::<f64, _>(StandardNormal)).collect();
            items.push(Item { input, class: first_class + c, sigma_gen });
        }
    }
    items
}

pub fn generate_synthetic_dataset(config: &DatasetConfig, seed: u64) -> Result<SyntheticDataset> {
    if config.n_classes < 4 {
        return Err(invalid("need at least four classes"));
    }
    if config.per_class < 2 || config.input_dim == 0 {
        return Err(invalid("need at least two items per class and a positive input dimension"));
    }
    NoiseProfile::new(config.noise.min, config.noise.max)?;
    let mut rng = seeded_rng(derive_seed(seed, "dataset"));
    let d = config.input_dim;
    let items = draw_classes(
        &mut rng,
        config.n_classes,
        config.per_class,
        |r| (0..d).map(|_| r.sample(StandardNormal)).collect(),
        &config.noise,
        0,
    );
    let half = config.n_classes / 2;
    Ok(SyntheticDataset {
        config: config.clone(),
        items,
        train_classes: (0..half).collect(),
        test_classes: (half..config.n_classes).collect(),
    })
}

/// Items whose classes follow the OOD configuration; class ids start after
/// the dataset's own classes.
pub fn generate_ood_queries(dataset: &DatasetConfig, ood: &OodConfig, seed: u64) -> Result<Vec<Item>> {
    if ood.n_classes == 0 || ood.per_class == 0 {
        return Err(invalid("OOD set must be nonempty"));
    }
    NoiseProfile::new(ood.noise.min, ood.noise.max)?;
    let mut rng = seeded_rng(derive_seed(seed, "ood"));
    let d = dataset.input_dim;
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|x| *x /= n);
    let (shift, scale) = (ood.shift, ood.center_scale);
    Ok(draw_classes(
        &mut rng,
        ood.n_classes,
        ood.per_class,
        |r| dir.iter().map(|&u| shift * u + scale * r.sample::<f64, _>(StandardNormal)).collect(),
        &ood.noise,
        dataset.n_classes,
    ))
}

impl SyntheticDataset {
    fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        let lo = classes.iter().copied().min().unwrap_or(0);
        let hi = classes.iter().copied().max().map_or(0, |m| m + 1);
        (0..self.items.len()).filter(|&i| (lo..hi).contains(&self.items[i].class)).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(&self.train_classes)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(&self.test_classes)
    }

    /// `id,class,sigma_gen,x0,...`
    pub fn to_csv(&self) -> String {
        items_to_csv(&self.items)
    }
}

pub fn items_to_csv(items: &[Item]) -> String {
    let mut s = String::new();
    for (i, it) in items.iter().enumerate() {
        let _ = write!(s, "{i},{},{}", it.class, it.sigma_gen);
        for x in &it.input {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

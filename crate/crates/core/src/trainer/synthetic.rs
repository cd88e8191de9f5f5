//! Planted Gaussian-cluster pools for desk-scale runs.
//!
//! Each group of samples draws its class uniformly, places the feature vector
//! around that class's mean (plus a per-group offset), and keeps the true
//! label with probability `1 - label_noise[g]`. The IFD column is either a
//! monotone function of the class-conditional loss under the planted model
//! (`ℓ / ln C`, with `ℓ = -ln p(y | x)`) or a fixed band per group.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EtaSchedule, LogisticTrainer, QuadraticTrainer, Trainer};
use crate::clustering::SampleRecord;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IfdMode {
    /// `-ln p(y|x) / ln C` under the planted model.
    Monotone,
    /// Group `g` lands in `[g w, (g+1) w)`, away from both edges.
    Bands { width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub group_sizes: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
    /// Scale of the class means.
    pub separation: f64,
    /// Within-class standard deviation.
    pub spread: f64,
    /// Scale of the per-group offsets.
    pub group_offset: f64,
    /// Per-group probability of replacing the label with a uniform draw.
    pub label_noise: Vec<f64>,
    pub ifd: IfdMode,
    /// Clean held-out rows, drawn without group offset.
    pub validation_size: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            group_sizes: vec![200; 4],
            dim: 8,
            classes: 3,
            separation: 2.0,
            spread: 1.0,
            group_offset: 0.0,
            label_noise: vec![0.0; 4],
            ifd: IfdMode::Monotone,
            validation_size: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedPool {
    pub dataset: Dataset,
    /// Planted group of each sample, aligned with `dataset.samples`.
    pub groups: Vec<usize>,
    pub validation: Vec<(Vec<f64>, usize)>,
    pub class_means: Vec<Vec<f64>>,
    pub config: PlantedConfig,
}

impl PlantedPool {
    pub fn generate(cfg: &PlantedConfig) -> Result<Self> {
        let total: usize = cfg.group_sizes.iter().sum();
        if cfg.group_sizes.is_empty() || total == 0 {
            return Err(Error::domain("group_sizes", "zero samples requested"));
        }
        if cfg.dim == 0 {
            return Err(Error::domain("dim", "must be at least 1"));
        }
        if cfg.classes < 2 {
            return Err(Error::domain("classes", "need at least two classes"));
        }
        if !(cfg.spread > 0.0) {
            return Err(Error::domain("spread", "must be positive"));
        }
        let noise = match cfg.label_noise.len() {
            1 => vec![cfg.label_noise[0]; cfg.group_sizes.len()],
            n if n == cfg.group_sizes.len() => cfg.label_noise.clone(),
            n => {
                return Err(Error::domain(
                    "label_noise",
                    format!("need 1 or {} entries, got {n}", cfg.group_sizes.len()),
                ))
            }
        };
        if noise.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("label_noise", "probabilities must lie in [0, 1]"));
        }
        if let IfdMode::Bands { width } = cfg.ifd {
            if !(width > 0.0) {
                return Err(Error::domain("ifd.width", "must be positive"));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let class_means: Vec<Vec<f64>> = (0..cfg.classes)
            .map(|_| (0..cfg.dim).map(|_| cfg.separation * normal(&mut rng)).collect())
            .collect();
        let offsets: Vec<Vec<f64>> = (0..cfg.group_sizes.len())
            .map(|_| (0..cfg.dim).map(|_| cfg.group_offset * normal(&mut rng)).collect())
            .collect();

        let mut samples = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        let mut groups = Vec::with_capacity(total);
        let ln_c = (cfg.classes as f64).ln();
        for (g, &size) in cfg.group_sizes.iter().enumerate() {
            for _ in 0..size {
                let y_true = rng.random_range(0..cfg.classes);
                let x: Vec<f64> = (0..cfg.dim)
                    .map(|j| class_means[y_true][j] + offsets[g][j] + cfg.spread * normal(&mut rng))
                    .collect();
                let y = if rng.random::<f64>() < noise[g] {
                    rng.random_range(0..cfg.classes)
                } else {
                    y_true
                };
                let ifd = match cfg.ifd {
                    IfdMode::Monotone => {
                        let centred: Vec<f64> = x.iter().zip(&offsets[g]).map(|(a, o)| a - o).collect();
                        planted_nll(&class_means, cfg.spread, &centred, y) / ln_c
                    }
                    IfdMode::Bands { width } => (g as f64 + rng.random_range(0.1..0.9)) * width,
                };
                let id = samples.len() as u64;
                samples.push(SampleRecord::new(id, ifd, x, ln_c));
                labels.push(y);
                groups.push(g);
            }
        }

        let validation = (0..cfg.validation_size)
            .map(|_| {
                let y = rng.random_range(0..cfg.classes);
                let x = (0..cfg.dim)
                    .map(|j| class_means[y][j] + cfg.spread * normal(&mut rng))
                    .collect();
                (x, y)
            })
            .collect();

        Ok(Self {
            dataset: Dataset::new(samples, Some(labels))?,
            groups,
            validation,
            class_means,
            config: cfg.clone(),
        })
    }

    pub fn logistic_trainer(&self, eta: EtaSchedule, seed: u64) -> Result<LogisticTrainer> {
        let labels = self.dataset.labels.as_ref().expect("planted pools carry labels");
        let rows = self
            .dataset
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &y)| (s.id, s.embedding.clone(), y))
            .collect();
        LogisticTrainer::new(
            self.config.classes,
            self.config.dim,
            rows,
            self.validation.clone(),
            eta,
            seed,
        )
    }

    pub fn quadratic_trainer(&self, curvature: f64, eta: EtaSchedule, seed: u64) -> Result<QuadraticTrainer> {
        quadratic_from_dataset(&self.dataset, curvature, eta, seed)
    }

    /// Overwrite the `loss0` column with the logistic trainer's initial losses.
    pub fn fill_initial_losses(&mut self, eta: EtaSchedule, trainer_seed: u64) -> Result<()> {
        let mut t = self.logistic_trainer(eta, trainer_seed)?;
        let scores = t.score_all()?;
        for s in self.dataset.samples.iter_mut() {
            s.current_loss = scores[&s.id];
            s.idu = s.current_loss;
        }
        Ok(())
    }
}

/// Quadratic learner whose per-sample targets are the dataset embeddings.
pub fn quadratic_from_dataset(ds: &Dataset, curvature: f64, eta: EtaSchedule, seed: u64) -> Result<QuadraticTrainer> {
    QuadraticTrainer::new(
        ds.samples.iter().map(|s| (s.id, s.embedding.clone())).collect(),
        vec![curvature; ds.dim],
        eta,
        seed,
    )
}

/// Logistic learner over a labelled dataset, with an optional validation set.
pub fn logistic_from_dataset(
    ds: &Dataset,
    classes: usize,
    validation: Vec<(Vec<f64>, usize)>,
    eta: EtaSchedule,
    seed: u64,
) -> Result<LogisticTrainer> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::domain("labels", "logistic trainer needs a label column"))?;
    let rows = ds
        .samples
        .iter()
        .zip(labels)
        .map(|(s, &y)| (s.id, s.embedding.clone(), y))
        .collect();
    LogisticTrainer::new(classes, ds.dim, rows, validation, eta, seed)
}

/// `-ln p(y | x)` for an equal-prior isotropic Gaussian mixture.
fn planted_nll(means: &[Vec<f64>], spread: f64, x: &[f64], y: usize) -> f64 {
    let scores: Vec<f64> = means
        .iter()
        .map(|m| -m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * spread * spread))
        .collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
    lse - scores[y]
}

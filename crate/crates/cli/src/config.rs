//! TOML run configuration. Unknown keys are rejected; omitted keys take the
//! defaults below, and out-of-range values are errors rather than clamps.

use std::path::{Path, PathBuf};

use lead_core::bandit::SelectMode;
use lead_core::engine::Scheduler;
use lead_core::planner::{DEFAULT_ALPHA, DEFAULT_GAMMA};
use lead_core::trainer::synthetic::{IfdMode, PlantedConfig};
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Logistic,
    Quadratic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    pub eta: f64,
    /// Linear learning-rate decay over this many steps.
    pub eta_decay_steps: Option<usize>,
    /// Quadratic trainer only.
    pub curvature: f64,
    /// Logistic trainer only; inferred from the labels when omitted.
    pub classes: Option<usize>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            kind: TrainerKind::Logistic,
            eta: 0.1,
            eta_decay_steps: None,
            curvature: 1.0,
            classes: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfdKind {
    Monotone,
    Bands,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub group_sizes: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub spread: f64,
    pub group_offset: f64,
    /// One entry for every group, or a single shared value.
    pub label_noise: Vec<f64>,
    pub ifd: IfdKind,
    /// Band width when `ifd = "bands"`.
    pub band_width: f64,
    pub validation_size: usize,
    /// Fill `loss0` with the initial logistic losses instead of `ln C`.
    pub score_initial_loss: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            group_sizes: vec![200; 4],
            dim: 8,
            classes: 3,
            separation: 2.0,
            spread: 1.0,
            group_offset: 0.0,
            label_noise: vec![0.0],
            ifd: IfdKind::Bands,
            band_width: 0.1,
            validation_size: 200,
            score_initial_loss: false,
        }
    }
}

impl GenConfig {
    pub fn planted(&self, seed: u64) -> PlantedConfig {
        PlantedConfig {
            group_sizes: self.group_sizes.clone(),
            dim: self.dim,
            classes: self.classes,
            separation: self.separation,
            spread: self.spread,
            group_offset: self.group_offset,
            label_noise: self.label_noise.clone(),
            ifd: match self.ifd {
                IfdKind::Monotone => IfdMode::Monotone,
                IfdKind::Bands => IfdMode::Bands { width: self.band_width },
            },
            validation_size: self.validation_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Held-out rows in the dataset format; logistic trainer only.
    pub validation: Option<PathBuf>,
    pub bin_width: f64,
    pub num_bins: usize,
    pub task_clusters: usize,
    pub kmeans_max_iters: usize,
    pub alpha: f64,
    pub budget: Option<u64>,
    /// Requested iteration count; raised to `T_min` unless `exact_steps`.
    pub steps: Option<usize>,
    pub exact_steps: bool,
    pub gamma: f64,
    /// Fixed smoothing coefficient in place of the planner's `b*`.
    pub b: Option<f64>,
    pub epsilon: f64,
    pub seed: u64,
    pub select_mode: SelectMode,
    pub scheduler: Scheduler,
    pub allow_reselect: bool,
    pub log: Option<PathBuf>,
    pub plan_out: Option<PathBuf>,
    pub partition_out: Option<PathBuf>,
    pub snapshot_every: Option<usize>,
    pub record_wall_time: bool,
    pub trainer: TrainerConfig,
    pub gen: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.csv"),
            validation: None,
            bin_width: 0.1,
            num_bins: 10,
            task_clusters: 4,
            kmeans_max_iters: 100,
            alpha: DEFAULT_ALPHA,
            budget: None,
            steps: None,
            exact_steps: false,
            gamma: DEFAULT_GAMMA,
            b: None,
            epsilon: 0.0,
            seed: 0,
            select_mode: SelectMode::Argmax,
            scheduler: Scheduler::Lead,
            allow_reselect: true,
            log: None,
            plan_out: None,
            partition_out: None,
            snapshot_every: None,
            record_wall_time: false,
            trainer: TrainerConfig::default(),
            gen: GenConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse and range-check. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve(dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.dataset);
        for p in [&mut self.validation, &mut self.log, &mut self.plan_out, &mut self.partition_out]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(bad(msg)) };
        check(self.bin_width > 0.0 && self.bin_width.is_finite(), format!("bin_width must be positive, got {}", self.bin_width))?;
        check(self.num_bins >= 1, "num_bins must be at least 1".into())?;
        check(self.task_clusters >= 1, "task_clusters must be at least 1".into())?;
        check(self.kmeans_max_iters >= 1, "kmeans_max_iters must be at least 1".into())?;
        check(self.alpha > 0.0 && self.alpha <= 1.0, format!("alpha must lie in (0, 1], got {}", self.alpha))?;
        check(self.budget != Some(0), "budget must be at least 1".into())?;
        check(self.steps != Some(0) || !self.exact_steps, "steps must be at least 1 with exact_steps".into())?;
        check(self.gamma > 0.0 && self.gamma < 1.0, format!("gamma must lie in (0, 1), got {}", self.gamma))?;
        if let Some(b) = self.b {
            check((0.0..1.0).contains(&b), format!("b must lie in [0, 1), got {b}"))?;
        }
        check(self.epsilon >= 0.0 && self.epsilon.is_finite(), format!("epsilon must be nonnegative, got {}", self.epsilon))?;
        check(self.snapshot_every != Some(0), "snapshot_every must be at least 1".into())?;
        let t = &self.trainer;
        check(t.eta >= 0.0 && t.eta.is_finite(), format!("trainer.eta must be nonnegative, got {}", t.eta))?;
        check(t.curvature > 0.0 && t.curvature.is_finite(), format!("trainer.curvature must be positive, got {}", t.curvature))?;
        check(t.classes.is_none_or(|c| c >= 2), "trainer.classes must be at least 2".into())?;
        let g = &self.gen;
        check(g.dim >= 1, "gen.dim must be at least 1".into())?;
        check(g.classes >= 2, "gen.classes must be at least 2".into())?;
        check(g.spread > 0.0, format!("gen.spread must be positive, got {}", g.spread))?;
        check(g.band_width > 0.0, format!("gen.band_width must be positive, got {}", g.band_width))?;
        check(
            g.label_noise.iter().all(|p| (0.0..=1.0).contains(p)),
            "gen.label_noise entries must lie in [0, 1]".into(),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.alpha, 0.015);
        assert_eq!(c.gamma, 0.05);
        assert_eq!(c.bin_width, 0.1);
        assert!(c.b.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("alhpa = 0.1").is_err());
        assert!(RunConfig::parse("[trainer]\nrate = 0.1").is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(RunConfig::parse("alpha = 1.5").is_err());
        assert!(RunConfig::parse("b = 1.0").is_err());
        assert!(RunConfig::parse("gamma = 0").is_err());
        assert!(RunConfig::parse("[trainer]\neta = -1").is_err());
    }

    #[test]
    fn enums_parse() {
        let c = RunConfig::parse(
            "scheduler = \"uniform_random\"\nselect_mode = \"sample\"\n[trainer]\nkind = \"quadratic\"\n[gen]\nifd = \"monotone\"",
        )
        .unwrap();
        assert_eq!(c.scheduler, Scheduler::UniformRandom);
        assert_eq!(c.select_mode, SelectMode::Sample);
        assert_eq!(c.trainer.kind, TrainerKind::Quadratic);
        assert_eq!(c.gen.ifd, IfdKind::Monotone);
    }
}

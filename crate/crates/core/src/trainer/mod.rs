//! Trainer contract and the gradient bookkeeping built on its telemetry.

mod logistic;
mod quadratic;
pub mod synthetic;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idu::GradientStats;

pub use logistic::LogisticTrainer;
pub use quadratic::QuadraticTrainer;

/// Update vectors longer than this are stored as random-projection sketches.
pub const SKETCH_THRESHOLD: usize = 100_000;
pub const SKETCH_DIM: usize = 256;

/// What one `train_on` call hands back.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Loss of each batch member under the parameters before the step.
    pub per_sample_loss_before: BTreeMap<u64, f64>,
    pub eta: f64,
    /// `θ_t - θ_{t-1}`.
    pub update: Vec<f64>,
}

/// A learner the engine can drive.
///
/// `score_all` is called once per run, before any `train_on`; `train_on`
/// never sees an empty batch.
pub trait Trainer {
    /// Loss of every sample under the initial parameters.
    fn score_all(&mut self) -> Result<BTreeMap<u64, f64>>;

    fn train_on(&mut self, batch: &[u64]) -> Result<StepOutcome>;

    fn eval_validation(&self) -> Option<f64> {
        None
    }

    fn parameter_count(&self) -> usize;
}

impl<T: Trainer + ?Sized> Trainer for Box<T> {
    fn score_all(&mut self) -> Result<BTreeMap<u64, f64>> {
        (**self).score_all()
    }
    fn train_on(&mut self, batch: &[u64]) -> Result<StepOutcome> {
        (**self).train_on(batch)
    }
    fn eval_validation(&self) -> Option<f64> {
        (**self).eval_validation()
    }
    fn parameter_count(&self) -> usize {
        (**self).parameter_count()
    }
}

/// Step telemetry in the form the engine consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub per_sample_loss_before: BTreeMap<u64, f64>,
    pub eta: f64,
    /// `‖Δθ_t‖²` (or of its sketch).
    pub update_energy: f64,
    /// `⟨Δθ_t, Δθ_{t-1}⟩`.
    pub update_dot_prev: f64,
    /// `⟨Δθ_t, stored direction of the trained cluster⟩`.
    pub update_dot_cluster: f64,
    /// Stored form of `Δθ_t`; sketched for large models.
    #[serde(skip)]
    pub direction: Vec<f64>,
}

impl TrainStepReport {
    /// Cauchy–Schwarz against the previous step's energy, with sketching slack.
    pub fn satisfies_cauchy_schwarz(&self, prev_energy: f64) -> bool {
        self.update_dot_prev.abs() <= (self.update_energy * prev_energy).sqrt() * (1.0 + 1e-9) + 1e-300
    }
}

/// Fixed-seed Gaussian random projection to [`SKETCH_DIM`] coordinates.
///
/// Column `j` of the projection is regenerated on demand from stream `j` of
/// the seeded generator, so no `SKETCH_DIM × n` matrix is held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sketch {
    pub seed: u64,
    pub dim: usize,
}

impl Sketch {
    pub fn new(seed: u64) -> Self {
        Self { seed, dim: SKETCH_DIM }
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut out = vec![0.0; self.dim];
        for (j, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(j as u64);
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *o += z * scale * x;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StoredUpdate {
    direction: Vec<f64>,
    eta: f64,
    iteration: usize,
}

impl StoredUpdate {
    /// Gradient energy `‖Δθ‖² / η²`.
    fn gradient_energy(&self) -> f64 {
        if self.eta > 0.0 {
            dot(&self.direction, &self.direction) / (self.eta * self.eta)
        } else {
            0.0
        }
    }
}

/// Per-cluster and previous-step update directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientHistory {
    prev: Option<StoredUpdate>,
    clusters: Vec<Option<StoredUpdate>>,
    sketch: Option<Sketch>,
}

impl GradientHistory {
    pub fn new(num_clusters: usize, parameter_count: usize, sketch_seed: u64) -> Self {
        Self {
            prev: None,
            clusters: vec![None; num_clusters],
            sketch: (parameter_count > SKETCH_THRESHOLD).then(|| Sketch::new(sketch_seed)),
        }
    }

    pub fn sketch(&self) -> Option<Sketch> {
        self.sketch
    }

    /// Gradient energy of the previous step, zero before the first.
    pub fn prev_energy(&self) -> f64 {
        self.prev.as_ref().map_or(0.0, StoredUpdate::gradient_energy)
    }

    /// Scalars for predicting a step on `cluster` at learning rate `eta`.
    ///
    /// A cluster with no history refers to itself: `g_k = g_prev`,
    /// `cos φ = 1`. Zero energies give `cos φ = 0`.
    pub fn stats_for(&self, cluster: usize, eta: f64) -> GradientStats {
        let Some(prev) = &self.prev else {
            return GradientStats { last_selected_iter: None, g_k: 0.0, g_prev: 0.0, cos_phi: 0.0, eta };
        };
        let g_prev = prev.gradient_energy();
        match self.clusters.get(cluster).and_then(Option::as_ref) {
            None => GradientStats {
                last_selected_iter: None,
                g_k: g_prev,
                g_prev,
                cos_phi: if g_prev > 0.0 { 1.0 } else { 0.0 },
                eta,
            },
            Some(stored) => GradientStats {
                last_selected_iter: Some(stored.iteration),
                g_k: stored.gradient_energy(),
                g_prev,
                cos_phi: cosine(&stored.direction, &prev.direction),
                eta,
            },
        }
    }

    /// Attach energies and inner products to a raw step outcome.
    pub fn report(&self, outcome: StepOutcome, cluster: usize) -> TrainStepReport {
        let direction = match &self.sketch {
            Some(s) => s.project(&outcome.update),
            None => outcome.update,
        };
        let update_dot_prev = self.prev.as_ref().map_or(0.0, |p| dot(&direction, &p.direction));
        let update_dot_cluster = self
            .clusters
            .get(cluster)
            .and_then(Option::as_ref)
            .map_or(0.0, |c| dot(&direction, &c.direction));
        TrainStepReport {
            per_sample_loss_before: outcome.per_sample_loss_before,
            eta: outcome.eta,
            update_energy: dot(&direction, &direction),
            update_dot_prev,
            update_dot_cluster,
            direction,
        }
    }

    /// Record a finished step on `cluster`.
    pub fn record(&mut self, report: &TrainStepReport, cluster: usize, iteration: usize) -> Result<()> {
        if cluster >= self.clusters.len() {
            return Err(Error::domain("cluster", format!("{cluster} out of range")));
        }
        let stored = StoredUpdate {
            direction: report.direction.clone(),
            eta: report.eta,
            iteration,
        };
        self.clusters[cluster] = Some(stored.clone());
        self.prev = Some(stored);
        Ok(())
    }
}

/// Functional form of [`GradientHistory::record`].
pub fn extract_gradient_stats(
    report: &TrainStepReport,
    prev: &GradientHistory,
    cluster: usize,
    iteration: usize,
) -> Result<GradientHistory> {
    let mut next = prev.clone();
    next.record(report, cluster, iteration)?;
    Ok(next)
}

/// `dot / √(e1 e2)` clamped into `[-1, 1]`; zero when either energy vanishes.
pub fn cosine_from_parts(dot: f64, e1: f64, e2: f64) -> f64 {
    let norm = (e1 * e2).sqrt();
    if norm > 0.0 {
        (dot / norm).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_from_parts(dot(a, b), dot(a, a), dot(b, b))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = NeumaierSum::default();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Learning-rate schedule shared by the synthetic trainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSchedule {
    pub base: f64,
    /// Linear decay to `base / decay_steps` over this many steps.
    pub decay_steps: Option<usize>,
}

impl EtaSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, decay_steps: None }
    }

    /// Rate for the `step`-th update (1-based).
    pub fn at(&self, step: usize) -> f64 {
        match self.decay_steps {
            Some(n) if n > 0 => {
                let frac = (step.saturating_sub(1) as f64 / n as f64).min(1.0 - 1.0 / n as f64);
                self.base * (1.0 - frac)
            }
            _ => self.base,
        }
    }
}

pub(crate) fn validate_batch(batch: &[u64], known: impl Fn(u64) -> bool) -> Result<Vec<u64>> {
    if batch.is_empty() {
        return Err(Error::Trainer("train_on called with an empty batch".into()));
    }
    let mut ids = batch.to_vec();
    ids.sort_unstable();
    if let Some(id) = ids.iter().find(|&&id| !known(id)) {
        return Err(Error::Trainer(format!("unknown sample id {id}")));
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(update: Vec<f64>, eta: f64) -> StepOutcome {
        StepOutcome { per_sample_loss_before: BTreeMap::new(), eta, update }
    }

    #[test]
    fn first_selection_is_self_referential() {
        let mut h = GradientHistory::new(2, 2, 0);
        let r = h.report(outcome(vec![0.3, 0.4], 0.1), 0);
        h.record(&r, 0, 1).unwrap();
        let s = h.stats_for(1, 0.1);
        assert_eq!(s.g_k, s.g_prev);
        assert_eq!(s.cos_phi, 1.0);
        assert_eq!(crate::idu::optimal_beta(s.g_k, s.g_prev, s.cos_phi), 0.5);
        assert!((s.g_prev - 25.0).abs() < 1e-12); // (0.09 + 0.16) / 0.01
    }

    #[test]
    fn orthogonal_updates_give_zero_cosine() {
        let mut h = GradientHistory::new(2, 2, 0);
        let r = h.report(outcome(vec![1.0, 0.0], 0.1), 0);
        h.record(&r, 0, 1).unwrap();
        let r = h.report(outcome(vec![0.0, 2.0], 0.1), 1);
        assert_eq!(r.update_dot_prev, 0.0);
        h.record(&r, 1, 2).unwrap();
        assert_eq!(h.stats_for(0, 0.1).cos_phi, 0.0);
    }

    #[test]
    fn parallel_updates_give_unit_cosine() {
        assert_eq!(cosine_from_parts((2.0f64 * 8.0).sqrt(), 2.0, 8.0), 1.0);
        assert_eq!(cosine_from_parts(0.0, 0.0, 3.0), 0.0);
        let mut h = GradientHistory::new(1, 2, 0);
        let r = h.report(outcome(vec![1.0, 1.0], 0.1), 0);
        h.record(&r, 0, 1).unwrap();
        let r = h.report(outcome(vec![2.0, 2.0], 0.1), 0);
        assert!((r.update_dot_cluster - (r.update_energy * 2.0).sqrt()).abs() < 1e-12);
        assert!(r.satisfies_cauchy_schwarz(2.0));
    }

    #[test]
    fn functional_extract_matches_record() {
        let h = GradientHistory::new(3, 4, 0);
        let r = h.report(outcome(vec![1.0, -2.0, 0.5, 0.0], 0.05), 2);
        let next = extract_gradient_stats(&r, &h, 2, 1).unwrap();
        let mut manual = h.clone();
        manual.record(&r, 2, 1).unwrap();
        assert_eq!(next, manual);
        assert!(extract_gradient_stats(&r, &h, 3, 1).is_err());
    }

    #[test]
    fn sketch_roughly_preserves_geometry() {
        let s = Sketch::new(5);
        let n = 2_000;
        let a: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 5) % 11) as f64 - 5.0).collect();
        let (pa, pb) = (s.project(&a), s.project(&b));
        assert_eq!(pa.len(), SKETCH_DIM);
        let rel = (dot(&pa, &pa) - dot(&a, &a)).abs() / dot(&a, &a);
        assert!(rel < 0.3, "energy distortion {rel}");
        assert_eq!(s.project(&a), pa);
        let _ = pb;
    }

    #[test]
    fn large_models_use_sketch() {
        assert!(GradientHistory::new(1, SKETCH_THRESHOLD + 1, 0).sketch().is_some());
        assert!(GradientHistory::new(1, SKETCH_THRESHOLD, 0).sketch().is_none());
    }

    #[test]
    fn eta_schedule() {
        let s = EtaSchedule { base: 1.0, decay_steps: Some(4) };
        assert_eq!(s.at(1), 1.0);
        assert_eq!(s.at(3), 0.5);
        assert_eq!(s.at(100), 0.25);
        assert_eq!(EtaSchedule::constant(0.3).at(50), 0.3);
    }

    #[test]
    fn neumaier_beats_naive() {
        let mut acc = NeumaierSum::default();
        for x in [1e16, 1.0, -1e16] {
            acc.add(x);
        }
        assert_eq!(acc.value(), 1.0);
    }
}

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{validate_batch, EtaSchedule, NeumaierSum, StepOutcome, Trainer};
use crate::error::{Error, Result};

/// Least-squares toy model: `L(θ, x) = ½ Σ_j λ_j (θ_j - x*_j)²`, one target
/// `x*` per sample. Every quantity has a closed form, which makes it the
/// reference learner for loss-change checks.
#[derive(Debug, Clone)]
pub struct QuadraticTrainer {
    theta: Vec<f64>,
    curvature: Vec<f64>,
    targets: HashMap<u64, Vec<f64>>,
    order: Vec<u64>,
    eta: EtaSchedule,
    steps_taken: usize,
    scored: bool,
}

impl QuadraticTrainer {
    /// Initial parameters are drawn `N(0, 1)` from `seed`.
    pub fn new(targets: Vec<(u64, Vec<f64>)>, curvature: Vec<f64>, eta: EtaSchedule, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..curvature.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self::with_start(targets, curvature, eta, theta)
    }

    pub fn with_start(
        targets: Vec<(u64, Vec<f64>)>,
        curvature: Vec<f64>,
        eta: EtaSchedule,
        theta: Vec<f64>,
    ) -> Result<Self> {
        if curvature.is_empty() {
            return Err(Error::domain("curvature", "dimension must be at least 1"));
        }
        if curvature.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::domain("curvature", "every λ must be positive"));
        }
        if !(eta.base >= 0.0 && eta.base.is_finite()) {
            return Err(Error::domain("eta", format!("must be nonnegative, got {}", eta.base)));
        }
        if theta.len() != curvature.len() {
            return Err(Error::domain("theta", "length must match curvature"));
        }
        let d = curvature.len();
        let mut order = Vec::with_capacity(targets.len());
        let mut map = HashMap::with_capacity(targets.len());
        for (id, t) in targets {
            if t.len() != d {
                return Err(Error::domain("targets", format!("sample {id} has dimension {}", t.len())));
            }
            if map.insert(id, t).is_some() {
                return Err(Error::domain("targets", format!("duplicate id {id}")));
            }
            order.push(id);
        }
        order.sort_unstable();
        Ok(Self {
            theta,
            curvature,
            targets: map,
            order,
            eta,
            steps_taken: 0,
            scored: false,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn loss_at(&self, theta: &[f64], id: u64) -> Result<f64> {
        let t = self
            .targets
            .get(&id)
            .ok_or_else(|| Error::Trainer(format!("unknown sample id {id}")))?;
        let mut acc = NeumaierSum::default();
        for ((th, x), l) in theta.iter().zip(t).zip(&self.curvature) {
            acc.add(0.5 * l * (th - x) * (th - x));
        }
        Ok(acc.value())
    }

    /// Loss of `id` under the current parameters.
    pub fn loss(&self, id: u64) -> Result<f64> {
        self.loss_at(&self.theta, id)
    }

    /// Batch-mean gradient at the current parameters.
    pub fn batch_gradient(&self, batch: &[u64]) -> Result<Vec<f64>> {
        let ids = validate_batch(batch, |id| self.targets.contains_key(&id))?;
        let mut acc = vec![NeumaierSum::default(); self.theta.len()];
        for id in &ids {
            let t = &self.targets[id];
            for j in 0..self.theta.len() {
                acc[j].add(self.curvature[j] * (self.theta[j] - t[j]));
            }
        }
        let n = ids.len() as f64;
        Ok(acc.iter().map(|a| a.value() / n).collect())
    }

    /// Exact change of the batch-mean loss for one step at rate `eta`,
    /// without taking the step.
    pub fn exact_batch_loss_change(&self, batch: &[u64], eta: f64) -> Result<f64> {
        let g = self.batch_gradient(batch)?;
        let next: Vec<f64> = self.theta.iter().zip(&g).map(|(t, gi)| t - eta * gi).collect();
        let mut acc = NeumaierSum::default();
        for &id in batch {
            acc.add(self.loss_at(&next, id)? - self.loss_at(&self.theta, id)?);
        }
        Ok(acc.value() / batch.len() as f64)
    }

    /// Learning rate the next `train_on` will use.
    pub fn next_eta(&self) -> f64 {
        self.eta.at(self.steps_taken + 1)
    }
}

impl Trainer for QuadraticTrainer {
    fn score_all(&mut self) -> Result<BTreeMap<u64, f64>> {
        if self.scored {
            return Err(Error::Trainer("score_all called twice".into()));
        }
        self.scored = true;
        self.order.iter().map(|&id| Ok((id, self.loss(id)?))).collect()
    }

    fn train_on(&mut self, batch: &[u64]) -> Result<StepOutcome> {
        let ids = validate_batch(batch, |id| self.targets.contains_key(&id))?;
        let per_sample_loss_before = ids
            .iter()
            .map(|&id| Ok((id, self.loss(id)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let g = self.batch_gradient(&ids)?;
        let eta = self.next_eta();
        let update: Vec<f64> = g.iter().map(|gi| -eta * gi).collect();
        for (t, u) in self.theta.iter_mut().zip(&update) {
            *t += u;
        }
        self.steps_taken += 1;
        Ok(StepOutcome { per_sample_loss_before, eta, update })
    }

    fn parameter_count(&self) -> usize {
        self.theta.len()
    }
}

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{validate_batch, EtaSchedule, NeumaierSum, StepOutcome, Trainer};
use crate::error::{Error, Result};

/// Multinomial logistic regression trained by plain gradient descent on the
/// batch-mean cross-entropy. Parameters are a `classes × (dim + 1)` matrix,
/// the last column being the bias.
#[derive(Debug, Clone)]
pub struct LogisticTrainer {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
    samples: HashMap<u64, (Vec<f64>, usize)>,
    order: Vec<u64>,
    validation: Vec<(Vec<f64>, usize)>,
    eta: EtaSchedule,
    steps_taken: usize,
    scored: bool,
}

impl LogisticTrainer {
    /// Weights start as `N(0, 0.01²)` draws from `seed`.
    pub fn new(
        classes: usize,
        dim: usize,
        samples: Vec<(u64, Vec<f64>, usize)>,
        validation: Vec<(Vec<f64>, usize)>,
        eta: EtaSchedule,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::domain("classes", "need at least two classes"));
        }
        if !(eta.base >= 0.0 && eta.base.is_finite()) {
            return Err(Error::domain("eta", format!("must be nonnegative, got {}", eta.base)));
        }
        let check = |x: &[f64], y: usize, what: &str| -> Result<()> {
            if x.len() != dim {
                return Err(Error::domain("samples", format!("{what} has dimension {}", x.len())));
            }
            if y >= classes {
                return Err(Error::domain("samples", format!("{what} has label {y} >= {classes}")));
            }
            Ok(())
        };
        let mut map = HashMap::with_capacity(samples.len());
        let mut order = Vec::with_capacity(samples.len());
        for (id, x, y) in samples {
            check(&x, y, &format!("sample {id}"))?;
            if map.insert(id, (x, y)).is_some() {
                return Err(Error::domain("samples", format!("duplicate id {id}")));
            }
            order.push(id);
        }
        order.sort_unstable();
        for (i, (x, y)) in validation.iter().enumerate() {
            check(x, *y, &format!("validation row {i}"))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Normal::new(0.0, 0.01).expect("valid normal");
        let weights = (0..classes * (dim + 1)).map(|_| init.sample(&mut rng)).collect();
        Ok(Self {
            classes,
            dim,
            weights,
            samples: map,
            order,
            validation,
            eta,
            steps_taken: 0,
            scored: false,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.dim + 1;
        (0..self.classes)
            .map(|c| {
                let row = &w[c * stride..(c + 1) * stride];
                row[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[self.dim]
            })
            .collect()
    }

    /// Softmax probabilities and the cross-entropy of label `y`.
    fn forward(&self, w: &[f64], x: &[f64], y: usize) -> (Vec<f64>, f64) {
        let z = self.logits(w, x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() - (z[y] - m);
        (exps.into_iter().map(|e| e / total).collect(), loss)
    }

    pub fn loss_with(&self, w: &[f64], id: u64) -> Result<f64> {
        let (x, y) = self
            .samples
            .get(&id)
            .ok_or_else(|| Error::Trainer(format!("unknown sample id {id}")))?;
        Ok(self.forward(w, x, *y).1)
    }

    pub fn loss(&self, id: u64) -> Result<f64> {
        self.loss_with(&self.weights, id)
    }

    pub fn validation_loss_with(&self, w: &[f64]) -> Option<f64> {
        if self.validation.is_empty() {
            return None;
        }
        let mut acc = NeumaierSum::default();
        for (x, y) in &self.validation {
            acc.add(self.forward(w, x, *y).1);
        }
        Some(acc.value() / self.validation.len() as f64)
    }
}

impl Trainer for LogisticTrainer {
    fn score_all(&mut self) -> Result<BTreeMap<u64, f64>> {
        if self.scored {
            return Err(Error::Trainer("score_all called twice".into()));
        }
        self.scored = true;
        self.order.iter().map(|&id| Ok((id, self.loss(id)?))).collect()
    }

    fn train_on(&mut self, batch: &[u64]) -> Result<StepOutcome> {
        let ids = validate_batch(batch, |id| self.samples.contains_key(&id))?;
        let stride = self.dim + 1;
        let mut grad = vec![NeumaierSum::default(); self.weights.len()];
        let mut per_sample_loss_before = BTreeMap::new();
        for &id in &ids {
            let (x, y) = &self.samples[&id];
            let (p, loss) = self.forward(&self.weights, x, *y);
            if !loss.is_finite() {
                return Err(Error::Trainer(format!("non-finite loss for sample {id}")));
            }
            per_sample_loss_before.insert(id, loss);
            for c in 0..self.classes {
                let r = p[c] - if c == *y { 1.0 } else { 0.0 };
                for j in 0..self.dim {
                    grad[c * stride + j].add(r * x[j]);
                }
                grad[c * stride + self.dim].add(r);
            }
        }
        let eta = self.eta.at(self.steps_taken + 1);
        let n = ids.len() as f64;
        let update: Vec<f64> = grad.iter().map(|g| -eta * g.value() / n).collect();
        for (w, u) in self.weights.iter_mut().zip(&update) {
            *w += u;
        }
        self.steps_taken += 1;
        Ok(StepOutcome { per_sample_loss_before, eta, update })
    }

    fn eval_validation(&self) -> Option<f64> {
        self.validation_loss_with(&self.weights)
    }

    fn parameter_count(&self) -> usize {
        self.weights.len()
    }
}

//! The selection loop: pick an arm, pick that arm's highest-utility samples,
//! train on them, then refresh utilities, reward the arm, and record the
//! step's gradient for later predictions.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{info_gain_reward, BanditState, SelectMode};
use crate::clustering::{DifficultyCluster, Partition, SampleRecord};
use crate::error::{Error, Result};
use crate::eventlog::EventRecord;
use crate::idu::{predict_with_optimal_beta, IduState};
use crate::planner::BudgetPlan;
use crate::trainer::{GradientHistory, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// EXP3 over difficulty clusters.
    Lead,
    /// Uniformly random cluster each round (baseline).
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub alpha: f64,
    pub budget: u64,
    /// Iteration cap `T`.
    pub steps: usize,
    /// Smoothing coefficient in `[0, 1)`.
    pub b: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub select_mode: SelectMode,
    pub scheduler: Scheduler,
    pub seed: u64,
    /// Samples trained earlier stay eligible.
    pub allow_reselect: bool,
    /// Attach a full IDU snapshot every this many iterations.
    pub snapshot_every: Option<usize>,
    /// Fill `wall_time_ms`; off keeps logs byte-reproducible.
    pub record_wall_time: bool,
}

impl EngineConfig {
    pub fn from_plan(plan: &BudgetPlan) -> Self {
        Self {
            alpha: plan.alpha,
            budget: plan.budget,
            steps: plan.steps,
            b: plan.b_star,
            gamma: plan.gamma,
            epsilon: 0.0,
            select_mode: SelectMode::Argmax,
            scheduler: Scheduler::Lead,
            seed: 0,
            allow_reselect: true,
            snapshot_every: None,
            record_wall_time: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::domain("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.b) {
            return Err(Error::domain("b", format!("must lie in [0, 1), got {}", self.b)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::domain("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::domain("snapshot_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// `min(⌊α |C|⌋, remaining budget, eligible members)`.
pub fn batch_quota(cluster_size: usize, alpha: f64, remaining: u64, eligible: usize) -> usize {
    // the nudge keeps products like 0.29 * 100 from flooring to 28
    let base = (alpha * cluster_size as f64 + 1e-9).floor() as usize;
    base.min(remaining.min(usize::MAX as u64) as usize).min(eligible)
}

/// Spread `quota` over task clusters: `⌊n/M⌋` each, the remainder one at a
/// time in descending size order. Shares beyond a task cluster's eligible
/// count flow to the others in the same order.
pub fn split_quota(sizes: &[usize], available: &[usize], quota: usize) -> Vec<usize> {
    let m = sizes.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));

    let mut share = vec![quota / m; m];
    for &i in order.iter().take(quota % m) {
        share[i] += 1;
    }
    let mut spill = 0;
    for i in 0..m {
        if share[i] > available[i] {
            spill += share[i] - available[i];
            share[i] = available[i];
        }
    }
    while spill > 0 {
        let mut moved = false;
        for &i in &order {
            if spill == 0 {
                break;
            }
            if share[i] < available[i] {
                share[i] += 1;
                spill -= 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    share
}

/// Highest-IDU eligible members of each task cluster, ties by ascending id,
/// concatenated in task-cluster order.
pub fn select_samples(
    cluster: &DifficultyCluster,
    quota: usize,
    idu: impl Fn(u64) -> f64,
    eligible: impl Fn(u64) -> bool,
) -> Vec<u64> {
    if quota == 0 {
        return Vec::new();
    }
    let pools: Vec<Vec<u64>> = cluster
        .task_clusters
        .iter()
        .map(|tc| tc.member_ids.iter().copied().filter(|&id| eligible(id)).collect())
        .collect();
    let sizes: Vec<usize> = cluster.task_clusters.iter().map(|tc| tc.len()).collect();
    let available: Vec<usize> = pools.iter().map(Vec::len).collect();
    let shares = split_quota(&sizes, &available, quota);

    let mut out = Vec::with_capacity(quota);
    for (mut pool, n) in pools.into_iter().zip(shares) {
        if n == 0 {
            continue;
        }
        let mut keyed: Vec<(f64, u64)> = pool.drain(..).map(|id| (idu(id), id)).collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.extend(keyed.into_iter().take(n).map(|(_, id)| id));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub noop_iterations: usize,
    pub total_spent: u64,
    pub budget: u64,
    pub steps: usize,
    pub pulls: Vec<usize>,
    /// Σ over trained batches of `IDU_after - IDU_before`.
    pub cumulative_delta_idu: f64,
    pub initial_validation_loss: Option<f64>,
    pub final_validation_loss: Option<f64>,
}

pub struct Engine<T: Trainer> {
    samples: Vec<SampleRecord>,
    index_of: HashMap<u64, usize>,
    partition: Partition,
    trainer: T,
    config: EngineConfig,
    bandit: BanditState,
    idu: IduState,
    history: GradientHistory,
    rng: ChaCha8Rng,
    t: usize,
    spent: u64,
    pulls: Vec<usize>,
    noops: usize,
    cumulative_delta_idu: f64,
    trained: HashSet<u64>,
    initial_validation_loss: Option<f64>,
    sink: Option<Box<dyn Write>>,
    records: Vec<EventRecord>,
}

impl<T: Trainer> Engine<T> {
    /// Takes ownership of the partitioned pool and scores it once.
    pub fn new(samples: Vec<SampleRecord>, partition: Partition, mut trainer: T, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let k = partition.num_arms();
        if k == 0 {
            return Err(Error::domain("partition", "no clusters"));
        }
        let index_of: HashMap<u64, usize> = samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        for c in &partition.clusters {
            if let Some(id) = c.member_ids().find(|id| !index_of.contains_key(id)) {
                return Err(Error::domain("partition", format!("cluster {} references unknown id {id}", c.index)));
            }
        }
        let mut samples = samples;
        let scores = trainer.score_all()?;
        for s in samples.iter_mut() {
            let l = *scores
                .get(&s.id)
                .ok_or_else(|| Error::Trainer(format!("score_all omitted sample {}", s.id)))?;
            s.current_loss = l;
            s.idu = l;
            s.last_selected_iter = None;
        }
        let bandit = BanditState::with_epsilon(k, config.gamma, config.epsilon, config.seed)?;
        let history = GradientHistory::new(k, trainer.parameter_count(), config.seed ^ 0x5EED_5EED);
        let initial_validation_loss = trainer.eval_validation();
        Ok(Self {
            samples,
            index_of,
            partition,
            trainer,
            idu: IduState::new(config.b)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0xBA5E_11E5),
            config,
            bandit,
            history,
            t: 0,
            spent: 0,
            pulls: vec![0; k],
            noops: 0,
            cumulative_delta_idu: 0.0,
            trained: HashSet::new(),
            initial_validation_loss,
            sink: None,
            records: Vec::new(),
        })
    }

    /// Stream each record as a line to `sink` as it is produced.
    pub fn with_sink(mut self, sink: Box<dyn Write>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn sample(&self, id: u64) -> Option<&SampleRecord> {
        self.index_of.get(&id).map(|&i| &self.samples[i])
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn bandit(&self) -> &BanditState {
        &self.bandit
    }

    pub fn trainer(&self) -> &T {
        &self.trainer
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn spent(&self) -> u64 {
        self.spent
    }

    pub fn budget_left(&self) -> u64 {
        self.config.budget - self.spent
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.config.steps || self.spent >= self.config.budget
    }

    fn choose_arm(&mut self) -> Result<usize> {
        match self.config.scheduler {
            Scheduler::Lead => self.bandit.select_arm(self.config.select_mode),
            Scheduler::UniformRandom => Ok(self.rng.random_range(0..self.partition.num_arms())),
        }
    }

    fn eligible(&self, id: u64) -> bool {
        self.config.allow_reselect || !self.trained.contains(&id)
    }

    pub fn run_iteration(&mut self) -> Result<EventRecord> {
        if self.is_finished() {
            return Err(Error::domain("state", "budget exhausted or step cap reached"));
        }
        let started = Instant::now();
        let t = self.t + 1;
        let probabilities = self.bandit.arm_probabilities()?;
        let arm = self.choose_arm()?;

        let cluster = &self.partition.clusters[arm];
        let eligible = cluster.member_ids().filter(|&id| self.eligible(id)).count();
        let quota = batch_quota(cluster.size, self.config.alpha, self.budget_left(), eligible);
        let batch = select_samples(
            cluster,
            quota,
            |id| self.samples[self.index_of[&id]].idu,
            |id| self.eligible(id),
        );

        let mut rec = EventRecord::noop(t, arm, self.budget_left(), self.config.b, &probabilities);
        if batch.is_empty() {
            self.noops += 1;
        } else {
            let outcome = match self.trainer.train_on(&batch) {
                Ok(o) => o,
                Err(e) => {
                    self.flush()?;
                    return Err(e);
                }
            };
            let report = self.history.report(outcome, arm);
            let stats = self.history.stats_for(arm, report.eta);
            let (beta, delta) = predict_with_optimal_beta(&stats)?;

            let mut before = Vec::with_capacity(batch.len());
            let mut after = Vec::with_capacity(batch.len());
            let mut shift = 0.0;
            for &id in &batch {
                let loss = *report
                    .per_sample_loss_before
                    .get(&id)
                    .ok_or_else(|| Error::Trainer(format!("no loss reported for sample {id}")))?;
                let s = &mut self.samples[self.index_of[&id]];
                let prev = s.idu;
                s.idu = self.idu.step(prev, loss, delta);
                s.current_loss = loss;
                s.last_selected_iter = Some(t);
                before.push(prev);
                after.push(s.idu);
                shift += (1.0 - self.idu.b) * delta;
            }
            let raw = info_gain_reward(&before, &after)?;
            let norm = self.bandit.normalize_reward(raw);
            self.bandit.update_weight(arm, norm, probabilities[arm])?;
            self.history.record(&report, arm, t)?;

            let n = batch.len() as f64;
            let before_mean = before.iter().sum::<f64>() / n;
            let after_mean = after.iter().sum::<f64>() / n;
            let delta_idu: f64 = after.iter().zip(&before).map(|(a, b)| a - b).sum();
            self.cumulative_delta_idu += delta_idu;
            self.spent += batch.len() as u64;
            self.pulls[arm] += 1;
            if !self.config.allow_reselect {
                self.trained.extend(batch.iter().copied());
            }

            rec.batch_size = batch.len();
            rec.budget_left = self.budget_left();
            rec.beta_star = Some(beta);
            rec.predicted_delta = Some(delta);
            rec.raw_reward = Some(raw);
            rec.norm_reward = Some(norm);
            rec.eta = Some(report.eta);
            rec.g_k = Some(stats.g_k);
            rec.g_prev = Some(stats.g_prev);
            rec.cos_phi = Some(stats.cos_phi);
            rec.last_selected_iter = stats.last_selected_iter;
            rec.idu_before_mean = Some(before_mean);
            rec.idu_after_mean = Some(after_mean);
            rec.batch_shift = Some(shift);
            rec.delta_idu = Some(delta_idu);
            rec.update_energy = Some(report.update_energy);
            rec.update_dot_prev = Some(report.update_dot_prev);
            rec.update_dot_cluster = Some(report.update_dot_cluster);
            rec.batch_ids = batch;
        }
        rec.weights = self.bandit.weights().to_vec();
        self.t = t;
        if let Some(every) = self.config.snapshot_every {
            if t.is_multiple_of(every) {
                rec.idu_snapshot = Some(self.samples.iter().map(|s| (s.id, s.idu)).collect());
            }
        }
        if self.config.record_wall_time {
            rec.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        }
        if let Some(sink) = self.sink.as_mut() {
            rec.write_line(sink)?;
        }
        self.records.push(rec.clone());
        Ok(rec)
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(sink) = self.sink.as_mut() {
            sink.flush()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<RunSummary> {
        while !self.is_finished() {
            self.run_iteration()?;
        }
        self.flush()?;
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            iterations: self.t,
            noop_iterations: self.noops,
            total_spent: self.spent,
            budget: self.config.budget,
            steps: self.config.steps,
            pulls: self.pulls.clone(),
            cumulative_delta_idu: self.cumulative_delta_idu,
            initial_validation_loss: self.initial_validation_loss,
            final_validation_loss: self.trainer.eval_validation(),
        }
    }
}

/// Re-derive every arm choice of an EXP3-scheduled run from its log.
/// Returns the first iteration whose logged arm disagrees.
pub fn replay_arm_choices(
    records: &[EventRecord],
    num_arms: usize,
    gamma: f64,
    epsilon: f64,
    mode: SelectMode,
    seed: u64,
) -> Result<Option<usize>> {
    let mut bandit = BanditState::with_epsilon(num_arms, gamma, epsilon, seed)?;
    for rec in records {
        let probs = bandit.arm_probabilities()?;
        let arm = bandit.select_arm(mode)?;
        if arm != rec.arm {
            return Ok(Some(rec.t));
        }
        if let Some(norm) = rec.norm_reward {
            bandit.update_weight(arm, norm, probs[arm])?;
        }
    }
    Ok(None)
}

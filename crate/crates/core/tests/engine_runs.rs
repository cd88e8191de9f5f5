use std::collections::HashMap;
use std::fs;

use lead_core::bandit::SelectMode;
use lead_core::engine::replay_arm_choices;
use lead_core::eventlog::read_log;
use lead_core::trainer::synthetic::{IfdMode, PlantedConfig, PlantedPool};
use lead_core::*;

fn pool(sizes: Vec<usize>, seed: u64) -> PlantedPool {
    PlantedPool::generate(&PlantedConfig {
        group_sizes: sizes,
        dim: 3,
        label_noise: vec![0.1],
        ifd: IfdMode::Bands { width: 0.1 },
        validation_size: 30,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn quad_engine(sizes: Vec<usize>, cfg: impl FnOnce(&mut EngineConfig), budget: u64, alpha: f64) -> Engine<QuadraticTrainer> {
    let p = pool(sizes, 1);
    let trainer = p.quadratic_trainer(1.0, EtaSchedule::constant(0.1), 2).unwrap();
    let mut samples = p.dataset.samples;
    let part = Partition::build(&mut samples, &PartitionConfig { task_clusters: 2, seed: 1, ..Default::default() }).unwrap();
    let plan = make_plan(budget, alpha, &part.sizes(), Some(25), 0.05).unwrap();
    let mut c = EngineConfig::from_plan(&plan);
    cfg(&mut c);
    Engine::new(samples, part, trainer, c).unwrap()
}

#[test]
fn zero_steps_is_an_empty_run() {
    let mut e = quad_engine(vec![50, 50], |c| c.steps = 0, 100, 0.1);
    let s = e.run().unwrap();
    assert_eq!(s.iterations, 0);
    assert_eq!(s.total_spent, 0);
    assert_eq!(s.pulls, vec![0, 0]);
    assert!(e.records().is_empty());
    assert!(e.run_iteration().is_err());
}

#[test]
fn budget_below_first_quota() {
    let mut e = quad_engine(vec![200, 200], |_| {}, 3, 0.1);
    let s = e.run().unwrap();
    assert_eq!(s.iterations, 1);
    assert_eq!(s.total_spent, 3);
    assert_eq!(e.records()[0].batch_size, 3);
    assert_eq!(e.records()[0].budget_left, 0);
}

#[test]
fn reward_is_recomputable_from_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let sink = Box::new(fs::File::create(&path).unwrap());
    let mut e = quad_engine(vec![80, 60, 90], |c| c.b = 0.3, 300, 0.1).with_sink(sink);
    e.run().unwrap();
    let recs = read_log(std::io::BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(recs, e.records());
    for r in recs.iter().filter(|r| !r.is_noop()) {
        let raw = r.raw_reward.unwrap();
        let from_means = r.idu_before_mean.unwrap() - r.idu_after_mean.unwrap();
        assert!((raw - from_means).abs() <= 1e-12, "t={} {raw} {from_means}", r.t);
        let from_sum = -r.delta_idu.unwrap() / r.batch_size as f64;
        assert!((raw - from_sum).abs() <= 1e-12);
        assert_eq!(r.batch_ids.len(), r.batch_size);
        let p: f64 = r.probabilities.iter().sum();
        assert!((p - 1.0).abs() < 1e-12);
    }
}

#[test]
fn replay_reproduces_arm_choices() {
    for mode in [SelectMode::Argmax, SelectMode::Sample] {
        let mut e = quad_engine(vec![80, 60, 90, 40], |c| {
            c.select_mode = mode;
            c.seed = 17;
        }, 500, 0.1);
        e.run().unwrap();
        let recs = e.records().to_vec();
        assert_eq!(replay_arm_choices(&recs, 4, 0.05, 0.0, mode, 17).unwrap(), None);
        let mut tampered = recs.clone();
        tampered[3].arm = (tampered[3].arm + 1) % 4;
        assert_eq!(replay_arm_choices(&tampered, 4, 0.05, 0.0, mode, 17).unwrap(), Some(4));
    }
}

#[test]
fn single_arm_without_smoothing_selects_top_loss_plus_shift() {
    // one difficulty bin, one task cluster, b = 0: IDU is loss + predicted change
    let p = pool(vec![60], 5);
    let trainer = p.quadratic_trainer(1.0, EtaSchedule::constant(0.2), 6).unwrap();
    let mut mirror = trainer.clone();
    let mut samples = p.dataset.samples;
    let part = Partition::build(&mut samples, &PartitionConfig { task_clusters: 1, seed: 1, ..Default::default() }).unwrap();
    let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    let plan = make_plan(120, 0.1, &part.sizes(), Some(20), 0.05).unwrap();
    let mut cfg = EngineConfig::from_plan(&plan);
    cfg.b = 0.0;
    let mut e = Engine::new(samples, part, trainer, cfg).unwrap();
    e.run().unwrap();

    let mut idu: HashMap<u64, f64> = ids.iter().map(|&id| (id, mirror.loss(id).unwrap())).collect();
    for r in e.records() {
        let mut order: Vec<u64> = ids.clone();
        order.sort_by(|a, b| idu[b].total_cmp(&idu[a]).then(a.cmp(b)));
        order.truncate(6);
        assert_eq!(r.batch_ids, order, "t={}", r.t);
        let delta = r.predicted_delta.unwrap();
        for &id in &order {
            idu.insert(id, mirror.loss(id).unwrap() + delta);
        }
        mirror.train_on(&order).unwrap();
    }
    assert_eq!(e.records().len(), 20);
}

#[test]
fn exhausted_clusters_shrink_batches() {
    let mut e = quad_engine(vec![30, 30], |c| {
        c.allow_reselect = false;
        c.steps = 200;
    }, 100, 0.5);
    let s = e.run().unwrap();
    assert!(s.total_spent <= 60);
    let mut seen = std::collections::HashSet::new();
    for r in e.records() {
        for id in &r.batch_ids {
            assert!(seen.insert(*id), "sample {id} trained twice");
        }
    }
    assert!(s.noop_iterations > 0);
}

#[test]
fn baseline_summary_matches_shape() {
    let mut a = quad_engine(vec![40, 50, 60], |_| {}, 200, 0.1);
    let mut b = quad_engine(vec![40, 50, 60], |c| c.scheduler = Scheduler::UniformRandom, 200, 0.1);
    let (sa, sb) = (a.run().unwrap(), b.run().unwrap());
    assert_eq!(sa.pulls.len(), sb.pulls.len());
    assert_eq!(sa.budget, sb.budget);
    assert!(sa.total_spent <= 200 && sb.total_spent <= 200);
}

#[test]
fn logistic_run_reports_validation_loss() {
    let p = pool(vec![100, 100], 3);
    let trainer = p.logistic_trainer(EtaSchedule::constant(0.3), 3).unwrap();
    let mut samples = p.dataset.samples.clone();
    let part = Partition::build(&mut samples, &PartitionConfig::default()).unwrap();
    let plan = make_plan(150, 0.1, &part.sizes(), None, 0.05).unwrap();
    let mut e = Engine::new(samples, part, trainer, EngineConfig::from_plan(&plan)).unwrap();
    let s = e.run().unwrap();
    assert!(s.final_validation_loss.unwrap() < s.initial_validation_loss.unwrap());
    assert!(s.cumulative_delta_idu.is_finite());
}

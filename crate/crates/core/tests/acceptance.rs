//! Acceptance criteria, run by a plain `main` so that every criterion prints
//! its `criterion N: PASS|FAIL ...` line. Exits nonzero if any fails.

use std::fs;
use std::time::Instant;

use lead_core::bandit::{BanditState, SelectMode};
use lead_core::oracle::{self, REFERENCE_SIZES};
use lead_core::trainer::synthetic::{IfdMode, PlantedConfig, PlantedPool};
use lead_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: &str, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn criterion_1_worked_example() -> bool {
    let start = Instant::now();
    let plan = make_plan(15000, 0.015, &REFERENCE_SIZES, None, 0.05).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (plan.mean_cluster_size - 74289.14).abs() <= 0.01
        && (plan.cv_squared - 0.0586).abs() <= 0.0005
        && (plan.n0 - 1114.3).abs() <= 0.1
        && plan.min_steps == 14
        && plan.steps == 14
        && (plan.b_star - 0.092).abs() <= 0.001
        && elapsed < 1.0;
    report(
        "1",
        pass,
        format!(
            "mean={:.4} cv2={:.5} n0={:.3} T_min={} b*={:.5} ({elapsed:.3}s)",
            plan.mean_cluster_size, plan.cv_squared, plan.n0, plan.min_steps, plan.b_star
        ),
    );
    pass
}

fn criterion_2_beta_grid() -> bool {
    let start = Instant::now();
    let r = oracle::check_beta_grid(1000, 2024);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = r.pass && r.trials == 1000 && elapsed < 10.0;
    report("2", pass, format!("{r} ({elapsed:.2}s)"));
    pass
}

fn criterion_3_taylor() -> bool {
    let r = oracle::check_taylor(&[0.01, 0.005, 0.0025], 3).unwrap();
    let mut pass = r.pass;
    for eta in [0.01, 0.005, 0.0025] {
        let p = oracle::taylor_point(eta, 4, 8, 3).unwrap();
        pass &= (p.rel_error - eta / 2.0).abs() <= 1e-6;
    }
    report("3", pass, r.to_string());
    pass
}

fn criterion_4_idu_recursion() -> bool {
    let reports: Vec<_> = [0.0, 0.1, 0.5, 0.9]
        .iter()
        .map(|&b| oracle::check_idu_expansion(50, b, 4))
        .collect();
    let pass = reports.iter().all(|r| r.pass && r.max_abs_dev <= 1e-10);
    let worst = reports.iter().map(|r| r.max_abs_dev).fold(0.0, f64::max);
    report("4", pass, format!("b in {{0,0.1,0.5,0.9}}, T=50, max |dev| {worst:e}"));
    pass
}

/// Feed a bandit 10⁴ rounds of fuzzed raw rewards; return the weight
/// trajectory and whether every invariant held.
fn fuzz_bandit(seed: u64) -> (Vec<Vec<u64>>, bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF022);
    let k = 7;
    let gamma = 0.05;
    let mut bandit = BanditState::new(k, gamma, seed).unwrap();
    let mut trajectory = Vec::with_capacity(10_000);
    let mut worst_sum: f64 = 0.0;
    let mut min_p = f64::INFINITY;
    let mut ok = true;
    for _ in 0..10_000 {
        let p = bandit.arm_probabilities().unwrap();
        let sum: f64 = p.iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        min_p = p.iter().copied().fold(min_p, f64::min);
        ok &= (sum - 1.0).abs() <= 1e-12 && p.iter().all(|&x| x >= gamma / k as f64 * (1.0 - 1e-12));
        let arm = bandit.select_arm(SelectMode::Sample).unwrap();
        let raw = match rng.random_range(0..4) {
            0 => rng.random_range(-1e6..1e6),
            1 => rng.random_range(-1e-9..1e-9),
            _ => rng.random_range(-3.0..3.0),
        };
        let norm = bandit.normalize_reward(raw);
        ok &= (-1.0..=1.0).contains(&norm);
        bandit.update_weight(arm, norm, p[arm]).unwrap();
        trajectory.push(bandit.weights().iter().map(|w| w.to_bits()).collect());
    }
    (trajectory, ok, format!("max |Σp-1|={worst_sum:e} min p={min_p:.6} (γ/K={:.6})", gamma / k as f64))
}

fn criterion_5_exp3_invariants() -> bool {
    let (a, ok, detail) = fuzz_bandit(55);
    let (b, _, _) = fuzz_bandit(55);
    let pass = ok && a == b;
    report("5", pass, format!("10000 rounds, {detail}, replay bit-identical: {}", a == b));
    pass
}

fn bands_pool(sizes: Vec<usize>, noise: Vec<f64>, dim: usize, validation: usize, seed: u64) -> PlantedPool {
    PlantedPool::generate(&PlantedConfig {
        group_sizes: sizes,
        dim,
        classes: 3,
        separation: 1.0,
        spread: 1.0,
        group_offset: 0.0,
        label_noise: noise,
        ifd: IfdMode::Bands { width: 0.1 },
        validation_size: validation,
        seed,
    })
    .unwrap()
}

fn criterion_6_budget_tightness_and_safety() -> bool {
    let plans = oracle::random_feasible_plans(1000, 6).unwrap();
    let tight = oracle::check_budget_tightness(&plans);

    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst = (0u64, 0u64);
    let mut safe = true;
    for run in 0..12 {
        let sizes: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(5..120)).collect();
        let n = sizes.len();
        let pool = bands_pool(sizes, vec![0.3], 3, 0, run);
        let mut samples = pool.dataset.samples.clone();
        let part = Partition::build(&mut samples, &PartitionConfig { task_clusters: 3, seed: run, ..Default::default() }).unwrap();
        let budget = rng.random_range(1..400);
        let alpha = rng.random_range(0.02..0.6);
        let plan = make_plan(budget, alpha, &part.sizes(), Some(rng.random_range(1..30)), 0.05).unwrap();
        let mut cfg = EngineConfig::from_plan(&plan);
        cfg.seed = run;
        cfg.allow_reselect = run % 2 == 0;
        cfg.select_mode = if run % 3 == 0 { SelectMode::Sample } else { SelectMode::Argmax };
        cfg.scheduler = if run % 4 == 1 { Scheduler::UniformRandom } else { Scheduler::Lead };
        let trainer = pool.logistic_trainer(EtaSchedule::constant(0.2), run).unwrap();
        let mut e = Engine::new(samples, part, trainer, cfg).unwrap();
        let s = e.run().unwrap();
        let logged: u64 = e.records().iter().map(|r| r.batch_size as u64).sum();
        safe &= s.total_spent <= budget && logged == s.total_spent && s.iterations <= plan.steps;
        assert!(n > 0);
        if s.total_spent * worst.1 >= worst.0 * budget {
            worst = (s.total_spent, budget);
        }
    }

    // the reference plan on a pool with the reference cluster sizes
    let pool = bands_pool(REFERENCE_SIZES.to_vec(), vec![0.0], 2, 0, 6);
    let mut samples = pool.dataset.samples.clone();
    let part = Partition::build(
        &mut samples,
        &PartitionConfig { task_clusters: 2, kmeans_max_iters: 5, seed: 6, ..Default::default() },
    )
    .unwrap();
    assert_eq!(part.sizes(), REFERENCE_SIZES.to_vec());
    let plan = make_plan(15000, 0.015, &part.sizes(), None, 0.05).unwrap();
    let trainer = pool.quadratic_trainer(1.0, EtaSchedule::constant(0.05), 6).unwrap();
    let mut e = Engine::new(samples, part, trainer, EngineConfig::from_plan(&plan)).unwrap();
    let s = e.run().unwrap();
    safe &= s.total_spent <= 15000 && s.iterations <= 14;

    let pass = tight.pass && safe;
    report(
        "6",
        pass,
        format!(
            "{tight}; 13 end-to-end runs within budget: {safe} (reference run spent {} of 15000 in {} steps)",
            s.total_spent, s.iterations
        ),
    );
    pass
}

fn criterion_7_steady_state_proportionality() -> bool {
    let equal = oracle::check_exp3_steady_state(&[1000, 1000, 1000, 1000], 0.05, 100_000, 7);
    let reference = oracle::check_exp3_steady_state(&REFERENCE_SIZES, 0.05, 100_000, 7);
    let ordering = reference.note.ends_with("most pulled: true");
    let pass = reference.pass && equal.pass && ordering;
    report(
        "7",
        pass,
        format!("reference sizes: {reference}; equal sizes: {equal}; largest most pulled: {ordering}"),
    );
    pass
}

/// Final validation loss of one run on the planted pool where only the third
/// difficulty cluster carries clean labels.
fn planted_run(scheduler: Scheduler, selection_seed: u64) -> (f64, f64) {
    let pool = bands_pool(vec![400; 4], vec![1.0, 1.0, 0.0, 1.0], 8, 400, 11);
    let trainer = pool.logistic_trainer(EtaSchedule::constant(0.1), 5).unwrap();
    let mut samples = pool.dataset.samples.clone();
    let part = Partition::build(&mut samples, &PartitionConfig { task_clusters: 2, seed: 3, ..Default::default() }).unwrap();
    let plan = make_plan(1200, 0.05, &part.sizes(), None, 0.05).unwrap();
    let mut cfg = EngineConfig::from_plan(&plan);
    cfg.scheduler = scheduler;
    cfg.seed = selection_seed;
    let mut e = Engine::new(samples, part, trainer, cfg).unwrap();
    let s = e.run().unwrap();
    assert!(s.total_spent <= 1200);
    (s.final_validation_loss.unwrap(), s.initial_validation_loss.unwrap())
}

fn criterion_8_end_to_end_benefit() -> bool {
    let start = Instant::now();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let (lead, _) = planted_run(Scheduler::Lead, seed);
        let (uniform, _) = planted_run(Scheduler::UniformRandom, seed);
        if lead < uniform {
            wins += 1;
        }
        pairs.push(format!("{lead:.3}/{uniform:.3}"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = wins >= 8 && elapsed < 120.0;
    report("8", pass, format!("LEAD better in {wins}/10 seeds (lead/uniform: {}) ({elapsed:.1}s)", pairs.join(" ")));
    pass
}

fn logged_run(path: &std::path::Path) {
    let pool = bands_pool(vec![120, 80, 150], vec![0.2], 4, 50, 9);
    let trainer = pool.logistic_trainer(EtaSchedule::constant(0.3), 9).unwrap();
    let mut samples = pool.dataset.samples.clone();
    let part = Partition::build(&mut samples, &PartitionConfig { task_clusters: 3, seed: 9, ..Default::default() }).unwrap();
    let plan = make_plan(400, 0.1, &part.sizes(), Some(30), 0.05).unwrap();
    let mut cfg = EngineConfig::from_plan(&plan);
    cfg.select_mode = SelectMode::Sample;
    cfg.snapshot_every = Some(5);
    let sink = Box::new(std::io::BufWriter::new(fs::File::create(path).unwrap()));
    let mut e = Engine::new(samples, part, trainer, cfg).unwrap().with_sink(sink);
    e.run().unwrap();
}

fn criterion_9_determinism() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    logged_run(&a);
    logged_run(&b);
    let (a, b) = (fs::read(a).unwrap(), fs::read(b).unwrap());
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    let pass = !a.is_empty() && a == b;
    report("9", pass, format!("{lines} log lines, byte-identical: {}", a == b));
    pass
}

fn main() -> std::process::ExitCode {
    let criteria: [fn() -> bool; 9] = [
        criterion_1_worked_example,
        criterion_2_beta_grid,
        criterion_3_taylor,
        criterion_4_idu_recursion,
        criterion_5_exp3_invariants,
        criterion_6_budget_tightness_and_safety,
        criterion_7_steady_state_proportionality,
        criterion_8_end_to_end_benefit,
        criterion_9_determinism,
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(c) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(_) => {
                println!("criterion {}: FAIL (panicked)", i + 1);
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        std::process::ExitCode::SUCCESS
    } else {
        std::process::ExitCode::FAILURE
    }
}

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lead_core::clustering::{Partition, PartitionConfig};
use lead_core::engine::{Engine, EngineConfig};
use lead_core::eventlog::{read_log, report_table};
use lead_core::planner::{make_plan, make_plan_exact, BudgetPlan};
use lead_core::trainer::synthetic::{logistic_from_dataset, quadratic_from_dataset, PlantedPool};
use lead_core::trainer::{EtaSchedule, Trainer};
use lead_core::{Dataset, SampleRecord};
use log::info;

use config::{ConfigError, RunConfig, TrainerKind};

#[derive(Parser)]
#[command(name = "lead", version, about = "Budget-constrained iterative data selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic planted-cluster dataset (and validation rows).
    Gen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the difficulty/task partition and print cluster sizes.
    Cluster {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute T_min and b* for a budget.
    Plan {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cluster sizes; otherwise the configured dataset is clustered.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Use `--steps` as given instead of raising it to T_min.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the selection loop and write the event log.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every oracle check.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn an event log into a tab-separated metric table.
    Report {
        log: PathBuf,
        /// Total budget, for the `spent` column.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Domain(String),
    Verify(usize),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<lead_core::Error> for Failure {
    fn from(e: lead_core::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LEAD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config } => cmd_gen(&config),
        Command::Cluster { config } => cmd_cluster(&config),
        Command::Plan { config, sizes, budget, alpha, gamma, steps, exact, out } => {
            cmd_plan(config.as_deref(), sizes, budget, alpha, gamma, steps, exact, out)
        }
        Command::Run { config } => cmd_run(&config),
        Command::Verify { seed } => cmd_verify(seed),
        Command::Report { log, budget, out } => cmd_report(&log, budget, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(3)
        }
    }
}

fn cmd_gen(path: &Path) -> Outcome {
    let cfg = RunConfig::load(path)?;
    let mut pool = PlantedPool::generate(&cfg.gen.planted(cfg.seed))?;
    if cfg.gen.score_initial_loss {
        pool.fill_initial_losses(EtaSchedule::constant(cfg.trainer.eta), cfg.trainer.seed)?;
    }
    pool.dataset.save(&cfg.dataset)?;
    info!("wrote {} rows to {}", pool.dataset.len(), cfg.dataset.display());
    if let Some(vpath) = &cfg.validation {
        let rows: Vec<SampleRecord> = pool
            .validation
            .iter()
            .enumerate()
            .map(|(i, (x, _))| SampleRecord::new(i as u64, 0.0, x.clone(), 0.0))
            .collect();
        let labels = pool.validation.iter().map(|(_, y)| *y).collect();
        Dataset::new(rows, Some(labels))?.save(vpath)?;
    }
    println!("rows = {}", pool.dataset.len());
    println!("dataset = {}", cfg.dataset.display());
    Ok(())
}

fn partition_config(cfg: &RunConfig) -> PartitionConfig {
    PartitionConfig {
        bin_width: cfg.bin_width,
        num_bins: cfg.num_bins,
        task_clusters: cfg.task_clusters,
        kmeans_max_iters: cfg.kmeans_max_iters,
        seed: cfg.seed,
    }
}

fn load_partition(cfg: &RunConfig) -> Result<(Dataset, Partition), Failure> {
    let mut ds = Dataset::load(&cfg.dataset)?;
    let partition = Partition::build(&mut ds.samples, &partition_config(cfg))?;
    if let Some(p) = &cfg.partition_out {
        let f = BufWriter::new(File::create(p)?);
        serde_json::to_writer_pretty(f, &partition).map_err(|e| Failure::Domain(e.to_string()))?;
    }
    Ok((ds, partition))
}

fn cmd_cluster(path: &Path) -> Outcome {
    let cfg = RunConfig::load(path)?;
    let (_, partition) = load_partition(&cfg)?;
    let stats = partition.stats()?;
    println!("arms = {}", partition.num_arms());
    for c in &partition.clusters {
        let tasks: Vec<String> = c.task_clusters.iter().map(|t| t.len().to_string()).collect();
        println!(
            "cluster {} ifd [{}, {}) size {} tasks [{}]",
            c.index,
            c.ifd_range.0,
            c.ifd_range.1,
            c.size,
            tasks.join(", ")
        );
    }
    println!("mean_size = {}", stats.mean_size);
    println!("cv_squared = {}", stats.cv_squared);
    Ok(())
}

fn build_plan(cfg: &RunConfig, sizes: &[usize]) -> Result<BudgetPlan, Failure> {
    let budget = cfg.budget.ok_or_else(|| Failure::Config("budget is required".into()))?;
    let plan = match (cfg.steps, cfg.exact_steps) {
        (Some(t), true) => make_plan_exact(budget, cfg.alpha, sizes, t, cfg.gamma)?,
        (steps, _) => make_plan(budget, cfg.alpha, sizes, steps, cfg.gamma)?,
    };
    Ok(plan)
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    config: Option<&Path>,
    sizes: Option<Vec<usize>>,
    budget: Option<u64>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    steps: Option<usize>,
    exact: bool,
    out: Option<PathBuf>,
) -> Outcome {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.budget = budget.or(cfg.budget);
    cfg.alpha = alpha.unwrap_or(cfg.alpha);
    cfg.gamma = gamma.unwrap_or(cfg.gamma);
    cfg.steps = steps.or(cfg.steps);
    cfg.exact_steps |= exact;
    cfg.plan_out = out.or(cfg.plan_out);
    if cfg.exact_steps && cfg.steps.is_none() {
        return Err(Failure::Config("--exact needs --steps".into()));
    }
    cfg.validate()?;

    let sizes = match sizes {
        Some(s) => s,
        None if config.is_some() => load_partition(&cfg)?.1.sizes(),
        None => return Err(Failure::Config("give --sizes or --config".into())),
    };
    let plan = build_plan(&cfg, &sizes)?;
    if let Some(p) = &cfg.plan_out {
        std::fs::write(p, plan.to_text())?;
    }
    println!("budget B        = {}", plan.budget);
    println!("alpha           = {}", plan.alpha);
    println!("mean size       = {:.2}", plan.mean_cluster_size);
    println!("CV^2            = {:.4}", plan.cv_squared);
    println!("n0              = {:.1}", plan.n0);
    println!("T_min           = {}", plan.min_steps);
    println!("T               = {}", plan.steps);
    println!("b*              = {:.4}", plan.b_star);
    println!("expected spend  = {:.1}", plan.expected_spend());
    Ok(())
}

fn load_validation(cfg: &RunConfig) -> Result<Vec<(Vec<f64>, usize)>, Failure> {
    let Some(path) = &cfg.validation else {
        return Ok(Vec::new());
    };
    let ds = Dataset::load(path)?;
    let labels = ds
        .labels
        .ok_or_else(|| Failure::Domain(format!("{} has no label column", path.display())))?;
    Ok(ds.samples.into_iter().map(|s| s.embedding).zip(labels).collect())
}

fn cmd_run(path: &Path) -> Outcome {
    let cfg = RunConfig::load(path)?;
    let (ds, partition) = load_partition(&cfg)?;
    let plan = build_plan(&cfg, &partition.sizes())?;
    if let Some(p) = &cfg.plan_out {
        std::fs::write(p, plan.to_text())?;
    }
    info!("plan: T = {}, b* = {}", plan.steps, plan.b_star);

    let eta = EtaSchedule { base: cfg.trainer.eta, decay_steps: cfg.trainer.eta_decay_steps };
    let trainer: Box<dyn Trainer> = match cfg.trainer.kind {
        TrainerKind::Quadratic => Box::new(quadratic_from_dataset(&ds, cfg.trainer.curvature, eta, cfg.trainer.seed)?),
        TrainerKind::Logistic => {
            let classes = match cfg.trainer.classes {
                Some(c) => c,
                None => ds.labels.as_ref().and_then(|l| l.iter().max()).map_or(2, |m| (m + 1).max(2)),
            };
            Box::new(logistic_from_dataset(&ds, classes, load_validation(&cfg)?, eta, cfg.trainer.seed)?)
        }
    };

    let mut ec = EngineConfig::from_plan(&plan);
    if let Some(b) = cfg.b {
        ec.b = b;
    }
    ec.epsilon = cfg.epsilon;
    ec.select_mode = cfg.select_mode;
    ec.scheduler = cfg.scheduler;
    ec.seed = cfg.seed;
    ec.allow_reselect = cfg.allow_reselect;
    ec.snapshot_every = cfg.snapshot_every;
    ec.record_wall_time = cfg.record_wall_time;

    let mut engine = Engine::new(ds.samples, partition, trainer, ec)?;
    if let Some(log_path) = &cfg.log {
        engine = engine.with_sink(Box::new(BufWriter::new(File::create(log_path)?)));
    }
    let summary = engine.run()?;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &summary).map_err(|e| Failure::Domain(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn cmd_verify(seed: u64) -> Outcome {
    let reports = lead_core::oracle::run_all(seed)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    for r in &reports {
        println!("{r}");
    }
    if failed > 0 {
        return Err(Failure::Verify(failed));
    }
    Ok(())
}

fn cmd_report(log: &Path, budget: Option<u64>, out: Option<&Path>) -> Outcome {
    let records = read_log(BufReader::new(File::open(log)?))?;
    let table = report_table(&records, budget);
    match out {
        Some(p) => std::fs::write(p, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

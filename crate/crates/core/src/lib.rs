//! Budget-constrained iterative data selection.
//!
//! Samples are binned by difficulty into clusters; an EXP3 bandit picks a
//! cluster each round, and the cluster's highest-utility samples are trained
//! on. Utility is a smoothed training loss plus a predicted loss change built
//! from recent update directions, so no extra inference pass is needed.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod clustering;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eventlog;
pub mod idu;
pub mod oracle;
pub mod planner;
pub mod trainer;

pub use bandit::{BanditState, SelectMode};
pub use clustering::{DifficultyCluster, Partition, PartitionConfig, SampleRecord, TaskCluster};
pub use dataset::Dataset;
pub use engine::{Engine, EngineConfig, RunSummary, Scheduler};
pub use error::{Error, Result};
pub use eventlog::EventRecord;
pub use idu::{GradientStats, IduState};
pub use planner::{make_plan, BudgetPlan};
pub use trainer::{EtaSchedule, LogisticTrainer, QuadraticTrainer, Trainer, TrainStepReport};

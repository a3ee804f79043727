//! Map-reduce over input files: partition files into tasks, fill one
//! aggregator per task on a worker pool, merge in task order, and report
//! per-task timings.
//!
//! Timing follows the executor/CPU split: a task's wall time covers
//! everything from its start to its end, its CPU time only the decompress,
//! decode, predicate and fill code paths, and read time is the difference.

mod report;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{
    percentile, throughput, RunReport, StragglerReport, StragglerStats, TaskMetrics, ThroughputStats, TimelineRow,
    Totals,
};
pub use run::{list_schedule, open_input, run, simulate, CostModel, RunOptions, RunOutput, SimulatedCost};

use crate::aggregate::{AggregateError, AggregatorSpec};
use crate::pipeline::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Round-robin in input order.
    EqualCount,
    /// Largest file first onto the least-loaded task.
    #[serde(rename = "lpt")]
    SizeBalancedLpt,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "equal-count" => Ok(Strategy::EqualCount),
            "lpt" => Ok(Strategy::SizeBalancedLpt),
            other => Err(format!("unknown strategy `{other}` (expected equal-count or lpt)")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::EqualCount => "equal-count",
            Strategy::SizeBalancedLpt => "lpt",
        })
    }
}

/// A local path or `ntx://` URL with its size in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub location: String,
    pub size: u64,
}

impl InputFile {
    pub fn new(location: impl Into<String>, size: u64) -> Self {
        Self {
            location: location.into(),
            size,
        }
    }
}

/// What every task computes.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub aggregator: AggregatorSpec,
    pub predicate: Option<Expr>,
    /// Branches to read besides those the aggregator references.
    pub extra_branches: Vec<String>,
}

impl Analysis {
    pub fn new(aggregator: AggregatorSpec) -> Self {
        Self {
            aggregator,
            predicate: None,
            extra_branches: Vec::new(),
        }
    }

    pub fn with_predicate(mut self, predicate: Expr) -> Self {
        self.predicate = Some(predicate);
        self
    }

    /// Aggregator fields, then extra branches, without repeats.
    pub fn selection(&self) -> Vec<String> {
        let mut out = self.aggregator.fields();
        for b in &self.extra_branches {
            if !out.contains(b) {
                out.push(b.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    pub files: Vec<InputFile>,
    pub branches: Vec<String>,
    pub predicate: Option<Expr>,
    pub aggregator: AggregatorSpec,
}

impl TaskSpec {
    pub fn input_bytes(&self) -> u64 {
        self.files.iter().map(|f| f.size).sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("the number of tasks must be at least 1")]
    NoTasks,
    #[error("the number of workers must be at least 1")]
    NoWorkers,
    #[error("no input files")]
    NoFiles,
    #[error("invalid aggregator: {0}")]
    InvalidAggregator(#[from] AggregateError),
    #[error("task {task_id} does not share the aggregator of task 0: {detail}")]
    SpecMismatch { task_id: usize, detail: String },
    #[error("task {task_id} failed on {file}: {source}")]
    TaskFailed {
        task_id: usize,
        file: String,
        #[source]
        source: Box<crate::Error>,
        /// Metrics of the tasks that completed before the failure.
        partial: Box<RunReport>,
    },
}

/// Assign every file to exactly one of `n_tasks` groups.
///
/// `EqualCount` deals files round-robin in input order. `SizeBalancedLpt`
/// takes files largest first (ties in input order) and gives each to the
/// group with the smallest total so far (ties to the lowest index). Groups
/// may be empty when there are fewer files than tasks.
pub fn partition(files: &[InputFile], n_tasks: usize, strategy: Strategy) -> Result<Vec<Vec<InputFile>>, ExecError> {
    if n_tasks == 0 {
        return Err(ExecError::NoTasks);
    }
    if files.is_empty() {
        return Err(ExecError::NoFiles);
    }
    let mut groups = vec![Vec::new(); n_tasks];
    match strategy {
        Strategy::EqualCount => {
            for (i, f) in files.iter().enumerate() {
                groups[i % n_tasks].push(f.clone());
            }
        }
        Strategy::SizeBalancedLpt => {
            let mut order: Vec<&InputFile> = files.iter().collect();
            order.sort_by_key(|f| std::cmp::Reverse(f.size));
            let mut loads = vec![0u64; n_tasks];
            for f in order {
                let (target, _) = loads
                    .iter()
                    .enumerate()
                    .min_by_key(|&(i, &load)| (load, i))
                    .expect("n_tasks >= 1");
                loads[target] += f.size;
                groups[target].push(f.clone());
            }
        }
    }
    Ok(groups)
}

/// Total input bytes of each group.
pub fn loads(groups: &[Vec<InputFile>]) -> Vec<u64> {
    groups.iter().map(|g| g.iter().map(|f| f.size).sum()).collect()
}

/// Largest group load; the run time when every task has its own worker
/// and cost is proportional to bytes.
pub fn makespan(groups: &[Vec<InputFile>]) -> u64 {
    loads(groups).into_iter().max().unwrap_or(0)
}

/// Partition `files` and attach `analysis` to every group.
pub fn plan(
    files: &[InputFile],
    n_tasks: usize,
    strategy: Strategy,
    analysis: &Analysis,
) -> Result<Vec<TaskSpec>, ExecError> {
    let branches = analysis.selection();
    Ok(partition(files, n_tasks, strategy)?
        .into_iter()
        .enumerate()
        .map(|(task_id, files)| TaskSpec {
            task_id,
            files,
            branches: branches.clone(),
            predicate: analysis.predicate.clone(),
            aggregator: analysis.aggregator.clone(),
        })
        .collect())
}

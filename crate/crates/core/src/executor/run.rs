use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::debug;

use super::{ExecError, InputFile, RunReport, TaskMetrics, TaskSpec};
use crate::aggregate::Aggregator;
use crate::eventfmt::{ByteCounter, ByteSource, CountingSource, CpuClock, FileSource, FormatError, NtfReader};
use crate::remotefs::{RemoteOptions, RemoteSource, RemoteUrl};

const BATCH_ROWS: usize = 8192;

/// Per-byte and per-read costs standing in for measured time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedCost {
    pub cpu_seconds_per_byte: f64,
    pub read_seconds_per_byte: f64,
    /// Added once per read call.
    pub latency_per_read: f64,
}

impl Default for SimulatedCost {
    /// 1 GB/s of compute, 70 MB/s of reading, no latency.
    fn default() -> Self {
        Self {
            cpu_seconds_per_byte: 1e-9,
            read_seconds_per_byte: 1.0 / 70e6,
            latency_per_read: 0.0,
        }
    }
}

impl SimulatedCost {
    /// `(wall, cpu)` seconds for a task.
    fn task_cost(&self, bytes: u64, reads: u64) -> (f64, f64) {
        let cpu = bytes as f64 * self.cpu_seconds_per_byte;
        let read = bytes as f64 * self.read_seconds_per_byte + reads as f64 * self.latency_per_read;
        (cpu + read, cpu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CostModel {
    /// Wall and CPU time from the clock.
    #[default]
    Measured,
    /// Times derived from bytes and read calls; task start and end come
    /// from [`list_schedule`] rather than the real interleaving.
    Simulated(SimulatedCost),
}

impl CostModel {
    fn name(&self) -> &'static str {
        match self {
            CostModel::Measured => "measured",
            CostModel::Simulated(_) => "simulated",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    pub cost: CostModel,
    pub remote: RemoteOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            cost: CostModel::Measured,
            remote: RemoteOptions::default(),
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub aggregator: Aggregator,
    pub report: RunReport,
}

/// Open a local path or `ntx://` URL.
pub fn open_input(location: &str, remote: RemoteOptions) -> crate::Result<Box<dyn ByteSource>> {
    if RemoteUrl::is_remote(location) {
        Ok(Box::new(RemoteSource::open_url(location, remote)?))
    } else {
        let file = FileSource::open(location).map_err(|e| FormatError::io(location, e))?;
        Ok(Box::new(file))
    }
}

/// Start and end of each job when jobs are handed out in order to whichever
/// of `workers` workers frees up first (lowest index on ties).
pub fn list_schedule(durations: &[f64], workers: usize) -> Vec<(f64, f64)> {
    let mut free_at = vec![0.0f64; workers.max(1)];
    durations
        .iter()
        .map(|&d| {
            let (w, _) = free_at
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .expect("at least one worker");
            let start = free_at[w];
            free_at[w] = start + d;
            (start, start + d)
        })
        .collect()
}

/// Report for file groups under a cost model without reading anything:
/// each task is charged its input size in bytes and one read per file.
pub fn simulate(groups: &[Vec<InputFile>], cost: &SimulatedCost, workers: usize) -> RunReport {
    let costs: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| cost.task_cost(g.iter().map(|f| f.size).sum(), g.len() as u64))
        .collect();
    let walls: Vec<f64> = costs.iter().map(|c| c.0).collect();
    let schedule = list_schedule(&walls, workers);
    let tasks = groups
        .iter()
        .enumerate()
        .map(|(id, g)| {
            let mut m = TaskMetrics::new(id, schedule[id].0, costs[id].0, costs[id].1);
            m.files = g.len();
            m.bytes_read = g.iter().map(|f| f.size).sum();
            m.read_calls = g.len() as u64;
            m
        })
        .collect();
    let run_time = schedule.iter().map(|s| s.1).fold(0.0, f64::max);
    RunReport::build(tasks, run_time, "simulated", workers)
}

struct TaskResult {
    aggregator: Aggregator,
    metrics: TaskMetrics,
}

struct TaskFailure {
    file: String,
    error: crate::Error,
}

fn run_task(task: &TaskSpec, remote: RemoteOptions, run_start: Instant) -> Result<TaskResult, TaskFailure> {
    let start = Instant::now();
    let clock = CpuClock::new();
    let counter = ByteCounter::new();
    let mut aggregator = Aggregator::zero(&task.aggregator).expect("spec validated before the run");
    let mut events_processed = 0;
    let mut events_selected = 0;
    for file in &task.files {
        let fail = |error: crate::Error| TaskFailure {
            file: file.location.clone(),
            error,
        };
        let source = open_input(&file.location, remote).map_err(fail)?;
        let reader = NtfReader::open(CountingSource::with_counter(source, counter.clone()))
            .map_err(|e| fail(e.into()))?
            .with_cpu_clock(clock.clone());
        let schema = reader.schema();
        task.aggregator
            .check(|name| schema.branch_type(name))
            .map_err(|e| fail(e.into()))?;
        events_processed += schema.event_count;
        let batches = reader
            .read_events(&task.branches, task.predicate.as_ref(), BATCH_ROWS)
            .map_err(|e| fail(e.into()))?;
        for batch in batches {
            let batch = batch.map_err(|e| fail(e.into()))?;
            events_selected += batch.row_count() as u64;
            clock
                .time(|| batch.rows().try_for_each(|row| aggregator.fill(&row, 1.0)))
                .map_err(|e| fail(e.into()))?;
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let cpu = clock.elapsed().as_secs_f64().min(wall);
    let mut metrics = TaskMetrics::new(
        task.task_id,
        start.duration_since(run_start).as_secs_f64(),
        wall,
        cpu,
    );
    metrics.files = task.files.len();
    metrics.bytes_read = counter.bytes();
    metrics.read_calls = counter.reads();
    metrics.events_processed = events_processed;
    metrics.events_selected = events_selected;
    Ok(TaskResult { aggregator, metrics })
}

/// Run every task on `options.workers` threads and merge the results.
///
/// Tasks are picked in ascending `task_id`; results are merged as a left
/// fold in the same order, so the output does not depend on scheduling.
/// The first failure stops workers from starting new tasks and is returned
/// with the metrics of the tasks that finished.
pub fn run(plan: &[TaskSpec], options: &RunOptions) -> Result<RunOutput, ExecError> {
    if options.workers == 0 {
        return Err(ExecError::NoWorkers);
    }
    let first = plan.first().ok_or(ExecError::NoTasks)?;
    for task in plan {
        if let Some(detail) = first.aggregator.difference(&task.aggregator) {
            return Err(ExecError::SpecMismatch {
                task_id: task.task_id,
                detail,
            });
        }
    }
    let zero = Aggregator::zero(&first.aggregator)?;
    let mut order: Vec<&TaskSpec> = plan.iter().collect();
    order.sort_by_key(|t| t.task_id);

    let run_start = Instant::now();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<TaskResult>>> = Mutex::new((0..order.len()).map(|_| None).collect());
    let failure: Mutex<Option<(usize, TaskFailure)>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..options.workers.min(order.len()) {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = order.get(i) else { break };
                debug!("task {} starting ({} files)", task.task_id, task.files.len());
                match run_task(task, options.remote, run_start) {
                    Ok(r) => results.lock().expect("results")[i] = Some(r),
                    Err(f) => {
                        abort.store(true, Ordering::SeqCst);
                        let mut slot = failure.lock().expect("failure");
                        if slot.as_ref().is_none_or(|(id, _)| task.task_id < *id) {
                            *slot = Some((task.task_id, f));
                        }
                    }
                }
            });
        }
    });
    let run_time = run_start.elapsed().as_secs_f64();
    let results: Vec<TaskResult> = results.into_inner().expect("results").into_iter().flatten().collect();

    let mut metrics: Vec<TaskMetrics> = results.iter().map(|r| r.metrics.clone()).collect();
    let mut run_time = run_time;
    if let CostModel::Simulated(cost) = &options.cost {
        let costs: Vec<(f64, f64)> = metrics.iter().map(|m| cost.task_cost(m.bytes_read, m.read_calls)).collect();
        let walls: Vec<f64> = costs.iter().map(|c| c.0).collect();
        let schedule = list_schedule(&walls, options.workers);
        for ((m, (wall, cpu)), (start, _)) in metrics.iter_mut().zip(costs).zip(schedule.iter().copied()) {
            let sim = TaskMetrics::new(m.task_id, start, wall, cpu);
            m.start_s = sim.start_s;
            m.end_s = sim.end_s;
            m.wall_time = sim.wall_time;
            m.cpu_time = sim.cpu_time;
            m.read_time = sim.read_time;
        }
        run_time = schedule.iter().map(|s| s.1).fold(0.0, f64::max);
    }
    let report = RunReport::build(metrics, run_time, options.cost.name(), options.workers);

    if let Some((task_id, f)) = failure.into_inner().expect("failure") {
        return Err(ExecError::TaskFailed {
            task_id,
            file: f.file,
            source: Box::new(f.error),
            partial: Box::new(report),
        });
    }
    let mut aggregator = zero;
    for r in &results {
        aggregator
            .merge_in(&r.aggregator)
            .expect("every task shares the aggregator spec");
    }
    Ok(RunOutput { aggregator, report })
}

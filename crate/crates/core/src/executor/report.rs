use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Timings of one task, in seconds from the start of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: usize,
    pub files: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub wall_time: f64,
    pub cpu_time: f64,
    /// `wall_time - cpu_time`, floored at zero.
    pub read_time: f64,
    pub bytes_read: u64,
    pub read_calls: u64,
    /// Events in the task's input files.
    pub events_processed: u64,
    /// Events that passed the predicate and were filled.
    pub events_selected: u64,
}

impl TaskMetrics {
    /// Metrics with `read_time` derived from wall and CPU time.
    pub fn new(task_id: usize, start_s: f64, wall_time: f64, cpu_time: f64) -> Self {
        Self {
            task_id,
            files: 0,
            start_s,
            end_s: start_s + wall_time,
            wall_time,
            cpu_time,
            read_time: (wall_time - cpu_time).max(0.0),
            bytes_read: 0,
            read_calls: 0,
            events_processed: 0,
            events_selected: 0,
        }
    }

    pub fn throughput(&self) -> Option<f64> {
        throughput(self.bytes_read, self.read_time)
    }
}

/// Bytes per second of read time: zero when nothing was read, absent when
/// bytes were read in no measurable read time.
pub fn throughput(bytes: u64, read_time: f64) -> Option<f64> {
    if bytes == 0 {
        Some(0.0)
    } else if read_time > 0.0 {
        Some(bytes as f64 / read_time)
    } else {
        None
    }
}

/// The `p`-th percentile (0..=100) with linear interpolation between
/// closest ranks. `None` for an empty slice.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p.clamp(0.0, 100.0) / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    /// Sum of task wall times.
    pub executor_time: f64,
    /// Sum of task CPU times.
    pub cpu_time: f64,
    /// `executor_time - cpu_time`.
    pub read_time: f64,
    pub bytes_read: u64,
    pub read_calls: u64,
    pub events_processed: u64,
    pub events_selected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputStats {
    /// Total bytes over total read time.
    pub total_based: Option<f64>,
    /// Mean of the per-task figures that are defined.
    pub per_task_mean: Option<f64>,
    pub per_task_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StragglerStats {
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
    /// `max / p50`; absent when the median is zero.
    pub tail_ratio: Option<f64>,
}

impl StragglerStats {
    /// Statistics over task wall times. Tasks without input files are left
    /// out unless no task has any.
    pub fn from_tasks(tasks: &[TaskMetrics]) -> Option<StragglerStats> {
        let busy: Vec<f64> = tasks.iter().filter(|t| t.files > 0).map(|t| t.wall_time).collect();
        let walls = if busy.is_empty() {
            tasks.iter().map(|t| t.wall_time).collect()
        } else {
            busy
        };
        let p50 = percentile(&walls, 50.0)?;
        let max = walls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(StragglerStats {
            p50,
            p95: percentile(&walls, 95.0)?,
            max,
            tail_ratio: (p50 > 0.0).then(|| max / p50),
        })
    }
}

/// Everything measured in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Completed tasks in ascending `task_id`.
    pub tasks: Vec<TaskMetrics>,
    pub totals: Totals,
    /// Wall-clock time of the whole run.
    pub run_time: f64,
    pub throughput: ThroughputStats,
    pub stragglers: Option<StragglerStats>,
    /// `measured` or `simulated`.
    pub cost_model: String,
    pub workers: usize,
}

impl RunReport {
    pub fn build(mut tasks: Vec<TaskMetrics>, run_time: f64, cost_model: &str, workers: usize) -> RunReport {
        tasks.sort_by_key(|t| t.task_id);
        let executor_time: f64 = tasks.iter().map(|t| t.wall_time).sum();
        let cpu_time: f64 = tasks.iter().map(|t| t.cpu_time).sum();
        let totals = Totals {
            executor_time,
            cpu_time,
            read_time: executor_time - cpu_time,
            bytes_read: tasks.iter().map(|t| t.bytes_read).sum(),
            read_calls: tasks.iter().map(|t| t.read_calls).sum(),
            events_processed: tasks.iter().map(|t| t.events_processed).sum(),
            events_selected: tasks.iter().map(|t| t.events_selected).sum(),
        };
        let per_task: Vec<f64> = tasks.iter().filter_map(TaskMetrics::throughput).collect();
        let throughput = ThroughputStats {
            total_based: throughput(totals.bytes_read, totals.read_time),
            per_task_mean: (!per_task.is_empty()).then(|| per_task.iter().sum::<f64>() / per_task.len() as f64),
            per_task_median: percentile(&per_task, 50.0),
        };
        let stragglers = StragglerStats::from_tasks(&tasks);
        RunReport {
            tasks,
            totals,
            run_time,
            throughput,
            stragglers,
            cost_model: cost_model.to_string(),
            workers,
        }
    }

    /// Latest task end; equals the run time under simulated costs.
    pub fn makespan(&self) -> f64 {
        self.tasks.iter().map(|t| t.end_s).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per task, then a blank line and a `metric,value` totals block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task_id,files,start_s,end_s,wall_s,cpu_s,read_s,bytes_read,read_calls,events_processed,events_selected,throughput_bps\n",
        );
        for t in &self.tasks {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                t.task_id,
                t.files,
                t.start_s,
                t.end_s,
                t.wall_time,
                t.cpu_time,
                t.read_time,
                t.bytes_read,
                t.read_calls,
                t.events_processed,
                t.events_selected,
                opt(t.throughput())
            )
            .expect("write to String");
        }
        let s = self.stragglers.as_ref();
        let rows: [(&str, String); 12] = [
            ("total_executor_time_s", self.totals.executor_time.to_string()),
            ("total_cpu_time_s", self.totals.cpu_time.to_string()),
            ("total_read_time_s", self.totals.read_time.to_string()),
            ("run_time_s", self.run_time.to_string()),
            ("bytes_read", self.totals.bytes_read.to_string()),
            ("throughput_total_bps", opt(self.throughput.total_based)),
            ("throughput_task_mean_bps", opt(self.throughput.per_task_mean)),
            ("throughput_task_median_bps", opt(self.throughput.per_task_median)),
            ("wall_p50_s", opt(s.map(|s| s.p50))),
            ("wall_p95_s", opt(s.map(|s| s.p95))),
            ("wall_max_s", opt(s.map(|s| s.max))),
            ("tail_ratio", opt(s.and_then(|s| s.tail_ratio))),
        ];
        out.push_str("\nmetric,value\n");
        for (k, v) in rows {
            writeln!(out, "{k},{v}").expect("write to String");
        }
        out
    }

    pub fn straggler_report(&self) -> StragglerReport {
        StragglerReport {
            stats: self.stragglers.clone(),
            timeline: self
                .tasks
                .iter()
                .map(|t| TimelineRow {
                    task_id: t.task_id,
                    start_s: t.start_s,
                    end_s: t.end_s,
                    wall_s: t.wall_time,
                    bytes: t.bytes_read,
                })
                .collect(),
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub task_id: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub wall_s: f64,
    pub bytes: u64,
}

/// Tail statistics and one Gantt row per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StragglerReport {
    pub stats: Option<StragglerStats>,
    pub timeline: Vec<TimelineRow>,
}

impl StragglerReport {
    /// `task_id,start_s,end_s,wall_s,bytes`
    pub fn timeline_csv(&self) -> String {
        let mut out = String::from("task_id,start_s,end_s,wall_s,bytes\n");
        for r in &self.timeline {
            writeln!(out, "{},{},{},{},{}", r.task_id, r.start_s, r.end_s, r.wall_s, r.bytes).expect("write to String");
        }
        out
    }
}

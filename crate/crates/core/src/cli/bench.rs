//! Local versus remote reads under both partition strategies.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use super::config::ResolvedConfig;
use crate::aggregate::Aggregator;
use crate::executor::{self, CostModel, InputFile, RunOptions, RunReport, SimulatedCost, Strategy};
use crate::remotefs::{self, RemoteUrl, ServerOptions};
use crate::{Error, Result};

pub const BENCH_SUMMARY_CSV: &str = "bench_summary.csv";

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// Directory the test server exports; defaults to the first input's directory.
    pub serve_root: Option<PathBuf>,
    /// Per-READ delay. Measured runs get it from the server, simulated runs
    /// from the cost model.
    pub remote_latency: Option<Duration>,
    pub simulate: bool,
}

/// One run of one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct BenchEntry {
    pub repetition: usize,
    /// `local` or `remote`.
    pub source: &'static str,
    pub strategy: Strategy,
    pub report: RunReport,
}

impl BenchEntry {
    fn label(&self) -> String {
        format!("{}/{}", self.source, self.strategy)
    }
}

const CSV_HEADER: &str = "repetition,source,strategy,run_time_s,makespan_s,executor_time_s,cpu_time_s,read_time_s,\
bytes_read,read_calls,throughput_total_Bps,throughput_task_mean_Bps,p50_s,p95_s,max_s,tail_ratio";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_row(e: &BenchEntry) -> String {
    let r = &e.report;
    let t = &r.totals;
    let s = r.stragglers.as_ref();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        e.repetition,
        e.source,
        e.strategy,
        r.run_time,
        r.makespan(),
        t.executor_time,
        t.cpu_time,
        t.read_time,
        t.bytes_read,
        t.read_calls,
        opt(r.throughput.total_based),
        opt(r.throughput.per_task_mean),
        opt(s.map(|s| s.p50)),
        opt(s.map(|s| s.p95)),
        opt(s.map(|s| s.max)),
        opt(s.and_then(|s| s.tail_ratio)),
    )
}

pub fn summary_csv(entries: &[BenchEntry]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&csv_row(e));
        out.push('\n');
    }
    out
}

/// The same files as `ntx://` URLs relative to `root`.
fn remote_inputs(files: &[InputFile], root: &Path, addr: &str) -> Result<Vec<InputFile>> {
    let root = root
        .canonicalize()
        .map_err(|e| Error::io(format!("cannot resolve {}", root.display()), e))?;
    files
        .iter()
        .map(|f| {
            if RemoteUrl::is_remote(&f.location) {
                return Err(Error::Usage(format!("bench needs local inputs, got {}", f.location)));
            }
            let path = Path::new(&f.location)
                .canonicalize()
                .map_err(|e| Error::io(format!("cannot resolve {}", f.location), e))?;
            let rel = path
                .strip_prefix(&root)
                .map_err(|_| Error::Usage(format!("{} is outside the served directory {}", f.location, root.display())))?;
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            let url = RemoteUrl {
                addr: addr.to_string(),
                path: rel.join("/"),
            };
            Ok(InputFile::new(url.to_string(), f.size))
        })
        .collect()
}

fn default_root(files: &[InputFile]) -> Result<PathBuf> {
    let first = files.first().ok_or(Error::Usage("no inputs given".into()))?;
    let parent = Path::new(&first.location).parent().unwrap_or(Path::new(""));
    Ok(if parent.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        parent.to_path_buf()
    })
}

/// Run every configuration `repetitions` times, write `bench_rep<r>.json`
/// per repetition and `bench_summary.csv` into the output directory, and
/// print mean figures per configuration.
pub fn bench(cfg: &ResolvedConfig, options: &BenchOptions, out: &mut dyn Write) -> Result<()> {
    if options.repetitions == 0 {
        return Err(Error::Usage("repetitions must be at least 1".into()));
    }
    let root = match &options.serve_root {
        Some(r) => r.clone(),
        None => default_root(&cfg.files)?,
    };
    if !root.is_dir() {
        return Err(Error::Usage(format!("{} is not a directory", root.display())));
    }
    let server_options = ServerOptions {
        read_latency: if options.simulate { None } else { options.remote_latency },
    };
    let server = remotefs::serve(&root, "127.0.0.1:0", server_options)
        .map_err(|e| Error::io("cannot start the test server", e))?;
    let remote_files = remote_inputs(&cfg.files, &root, &server.local_addr().to_string())?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(format!("cannot create {}", cfg.output_dir.display()), e))?;

    let cost = |remote: bool| {
        if !options.simulate {
            return CostModel::Measured;
        }
        let mut c = SimulatedCost::default();
        if remote {
            c.latency_per_read = options.remote_latency.map_or(0.0, |d| d.as_secs_f64());
        }
        CostModel::Simulated(c)
    };

    let mut entries = Vec::new();
    let mut reference: Option<(String, Aggregator)> = None;
    for rep in 0..options.repetitions {
        let mut this_rep = Vec::new();
        for (source, files) in [("local", &cfg.files), ("remote", &remote_files)] {
            for strategy in [Strategy::EqualCount, Strategy::SizeBalancedLpt] {
                let plan = executor::plan(files, cfg.n_tasks, strategy, &cfg.analysis)?;
                let run_options = RunOptions {
                    workers: cfg.workers,
                    cost: cost(source == "remote"),
                    remote: cfg.remote,
                };
                let result = executor::run(&plan, &run_options)?;
                let entry = BenchEntry {
                    repetition: rep,
                    source,
                    strategy,
                    report: result.report,
                };
                log::info!("rep {rep} {}: {:.3} s", entry.label(), entry.report.run_time);
                match &reference {
                    None => reference = Some((entry.label(), result.aggregator)),
                    Some((label, agg)) => {
                        if !same_result(agg, &result.aggregator) {
                            return Err(Error::Usage(format!(
                                "{} and {} produced different aggregators",
                                label,
                                entry.label()
                            )));
                        }
                    }
                }
                this_rep.push(entry);
            }
        }
        let path = cfg.output_dir.join(format!("bench_rep{rep}.json"));
        let json = serde_json::to_string_pretty(&this_rep).expect("reports serialize");
        super::write_file(&path, &(json + "\n"))?;
        entries.extend(this_rep);
    }
    server.shutdown();
    super::write_file(&cfg.output_dir.join(BENCH_SUMMARY_CSV), &summary_csv(&entries))?;
    print_table(&entries, out).map_err(|e| Error::io("cannot write to stdout", e))
}

/// Equal up to the rounding that a different merge order can introduce.
fn same_result(a: &Aggregator, b: &Aggregator) -> bool {
    if a.bit_eq(b) {
        return true;
    }
    let (x, y) = (a.to_json(), b.to_json());
    let (x, y): (serde_json::Value, serde_json::Value) =
        (serde_json::from_str(&x).expect("valid json"), serde_json::from_str(&y).expect("valid json"));
    close(&x, &y)
}

fn close(a: &serde_json::Value, b: &serde_json::Value) -> bool {
    use serde_json::Value as J;
    match (a, b) {
        (J::Number(x), J::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            x == y || (x - y).abs() <= 1e-9 * x.abs().max(y.abs())
        }
        (J::Array(x), J::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(x, y)| close(x, y)),
        (J::Object(x), J::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| close(v, w)))
        }
        _ => a == b,
    }
}

fn print_table(entries: &[BenchEntry], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<22} {:>10} {:>10} {:>10} {:>12} {:>10} {:>8}",
        "config", "run_s", "exec_s", "read_s", "MB/s", "read_calls", "tail"
    )?;
    let mut labels: Vec<String> = Vec::new();
    for e in entries {
        if !labels.contains(&e.label()) {
            labels.push(e.label());
        }
    }
    for label in labels {
        let group: Vec<&BenchEntry> = entries.iter().filter(|e| e.label() == label).collect();
        let mean = |f: &dyn Fn(&BenchEntry) -> Option<f64>| {
            let v: Vec<f64> = group.iter().filter_map(|e| f(e)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let fmt = |x: Option<f64>, scale: f64, prec: usize| match x {
            Some(v) => format!("{:.prec$}", v / scale),
            None => "-".into(),
        };
        writeln!(
            out,
            "{:<22} {:>10} {:>10} {:>10} {:>12} {:>10} {:>8}",
            label,
            fmt(mean(&|e| Some(e.report.run_time)), 1.0, 3),
            fmt(mean(&|e| Some(e.report.totals.executor_time)), 1.0, 3),
            fmt(mean(&|e| Some(e.report.totals.read_time)), 1.0, 3),
            fmt(mean(&|e| e.report.throughput.total_based), 1e6, 1),
            fmt(mean(&|e| Some(e.report.totals.read_calls as f64)), 1.0, 0),
            fmt(mean(&|e| e.report.stragglers.as_ref().and_then(|s| s.tail_ratio)), 1.0, 2),
        )?;
    }
    Ok(())
}

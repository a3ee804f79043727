//! The `ntuplex` command line.
//!
//! Exit codes: 0 success, 1 I/O, 2 user input, 3 corrupt data,
//! 4 remote or protocol failure. Errors are printed to stderr as
//! `error[<category>]: <message>`. Set `NTUPLEX_LOG` (e.g. `info`,
//! `ntuplex=debug`) for logging.

mod bench;
mod config;
mod gen;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

pub use bench::{bench, BenchEntry, BenchOptions};
pub use config::{parse_aggregator_arg, resolve_inputs, AnalysisConfig, ResolvedConfig};
pub use gen::{generate, parse_schema, GenSpec, GeneratedFile, DEFAULT_SCHEMA};

use crate::aggregate::{plot_table_csv, Aggregator, AggregatorSpec};
use crate::eventfmt::{read_schema, Compression, WriteOptions, DEFAULT_BASKET_TARGET_BYTES};
use crate::executor::{self, CostModel, RunOptions, RunOutput, SimulatedCost, Strategy};
use crate::pipeline::{self, parse_expr};
use crate::remotefs::{self, ServerOptions};
use crate::{Error, Result};

pub const LOG_ENV: &str = "NTUPLEX_LOG";

#[derive(Debug, Parser)]
#[command(name = "ntuplex", version, about = "Columnar event files: generate, inspect, skim, slim, analyze, serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset.
    Gen(GenArgs),
    /// Print the schema and basket index of a file.
    Inspect(InspectArgs),
    /// Copy the events that pass a predicate.
    Skim(SkimArgs),
    /// Copy a subset of branches.
    Slim(SlimArgs),
    /// Fill an aggregator over many files in parallel.
    Analyze(AnalyzeArgs),
    /// Compare local and remote reads under both partition strategies.
    Bench(BenchArgs),
    /// Export a directory over the byte-range protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct WriteArgs {
    /// none or deflate
    #[arg(long, default_value = "deflate")]
    pub compression: Compression,
    /// Uncompressed bytes per basket
    #[arg(long, default_value_t = DEFAULT_BASKET_TARGET_BYTES)]
    pub basket_bytes: usize,
}

impl WriteArgs {
    fn options(&self) -> Result<WriteOptions> {
        if self.basket_bytes == 0 {
            return Err(Error::Usage("--basket-bytes must be at least 1".into()));
        }
        Ok(WriteOptions {
            compression: self.compression,
            basket_target_bytes: self.basket_bytes,
        })
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub files: usize,
    /// Events per file before skew
    #[arg(long, default_value_t = 10_000)]
    pub events: u64,
    /// 0 for equal files; larger values give a heavier tail of big files
    #[arg(long, default_value_t = 0.0)]
    pub skew: f64,
    /// Cap on a file's events as a multiple of --events
    #[arg(long, default_value_t = 50.0)]
    pub max_scale: f64,
    /// Comma-separated name:type list (types f32, f64, i32, i64, varf32)
    #[arg(long, default_value = DEFAULT_SCHEMA)]
    pub schema: String,
    #[arg(long, default_value = "part")]
    pub prefix: String,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Path or ntx://host:port/path
    pub input: String,
    /// List every basket
    #[arg(long)]
    pub baskets: bool,
    /// Print the schema as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SkimArgs {
    pub input: String,
    pub output: PathBuf,
    /// Predicate, e.g. "pt > 20 && len(hits) > 0"
    #[arg(long = "where")]
    pub predicate: String,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Args)]
pub struct SlimArgs {
    pub input: String,
    pub output: PathBuf,
    /// Branches to keep, comma-separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub keep: Vec<String>,
    #[command(flatten)]
    pub write: WriteArgs,
}

#[derive(Debug, Args, Clone)]
pub struct AnalyzeArgs {
    /// Input paths, URLs or glob patterns
    pub inputs: Vec<String>,
    /// JSON config file; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Aggregator JSON, or @file
    #[arg(long)]
    pub aggregator: Option<String>,
    #[arg(long = "where")]
    pub predicate: Option<String>,
    /// Extra branches to read, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub branches: Vec<String>,
    #[arg(long = "tasks")]
    pub n_tasks: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// equal-count or lpt
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Output directory
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,
    /// Remote readahead in bytes (0 = off)
    #[arg(long)]
    pub readahead: Option<usize>,
    /// Report simulated times (cost proportional to bytes) instead of measured ones
    #[arg(long)]
    pub simulate: bool,
}

impl AnalyzeArgs {
    pub fn config(&self) -> Result<AnalysisConfig> {
        let base = match &self.config {
            Some(path) => AnalysisConfig::from_file(path)?,
            None => AnalysisConfig::default(),
        };
        let flags = AnalysisConfig {
            inputs: self.inputs.clone(),
            branches: self.branches.clone(),
            predicate: self.predicate.clone(),
            aggregator: self.aggregator.as_deref().map(parse_aggregator_arg).transpose()?,
            n_tasks: self.n_tasks,
            workers: self.workers,
            strategy: self.strategy,
            output_dir: self.output_dir.clone(),
            readahead: self.readahead,
        };
        Ok(base.overlay(flags))
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub analyze: AnalyzeArgs,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    /// Directory exported to the remote runs (default: the first input's directory)
    #[arg(long)]
    pub serve_root: Option<PathBuf>,
    /// Delay the test server adds to every READ, in milliseconds
    #[arg(long, default_value_t = 0.0)]
    pub remote_latency_ms: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory to export
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:9040")]
    pub listen: String,
    /// Delay added to every READ, in milliseconds
    #[arg(long, default_value_t = 0.0)]
    pub read_latency_ms: f64,
}

fn latency(ms: f64) -> Result<Option<Duration>> {
    if !(ms.is_finite() && ms >= 0.0) {
        return Err(Error::Usage(format!("latency must be a non-negative number of milliseconds, got {ms}")));
    }
    Ok((ms > 0.0).then(|| Duration::from_secs_f64(ms / 1000.0)))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
}

/// Parse `args` (including the program name) and run the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    execute(cli.command, out)
}

/// Run `main`-style: log setup, error printing, exit code.
pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(()) => 0,
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let _ = out.flush();
            let category = e.category();
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(": ");
                    msg.push_str(&text);
                }
                source = s.source();
            }
            eprintln!("error[{}]: {msg}", category.name());
            category.exit_code()
        }
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("cannot write to stdout", e)
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
        Command::Skim(a) => cmd_skim(&a, out),
        Command::Slim(a) => cmd_slim(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out).map(drop),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::Serve(a) => cmd_serve(&a, out),
    }
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let spec = GenSpec {
        branches: parse_schema(&a.schema)?,
        files: a.files,
        events_per_file: a.events,
        skew: a.skew,
        max_scale: a.max_scale,
        seed: a.seed,
        write: a.write.options()?,
        prefix: a.prefix.clone(),
    };
    for f in generate(&spec, &a.out)? {
        writeln!(out, "{}\t{} events\t{} bytes", f.path.display(), f.events, f.bytes).map_err(io_out)?;
    }
    Ok(())
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let source = executor::open_input(&a.input, Default::default())?;
    let schema = read_schema(&source)?;
    let size = source.size().map_err(|e| Error::io(source.describe(), e))?;
    if a.json {
        let text = serde_json::to_string_pretty(&schema).expect("schema serializes");
        return writeln!(out, "{text}").map_err(io_out);
    }
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_out);
    w(out, format!("bytes:    {size}"))?;
    w(out, format!("events:   {}", schema.event_count))?;
    w(out, format!("branches: {}", schema.branches.len()))?;
    w(out, format!("baskets:  {} per branch", schema.basket_count()))?;
    let width = schema.branches.iter().map(|b| b.name.len()).max().unwrap_or(0).max(6);
    w(out, format!("{:width$}  {:7}  {:>12}  {:>12}", "branch", "type", "stored", "uncompressed"))?;
    for b in &schema.branches {
        let raw: u64 = b.baskets.iter().map(|k| u64::from(k.uncompressed_size)).sum();
        w(out, format!("{:width$}  {:7}  {:>12}  {:>12}", b.name, b.branch_type.name(), b.stored_bytes(), raw))?;
    }
    if a.baskets {
        w(out, "branch\tbasket\toffset\tcsize\tusize\tevents\tcrc32".into())?;
        for b in &schema.branches {
            for (i, k) in b.baskets.iter().enumerate() {
                w(
                    out,
                    format!(
                        "{}\t{i}\t{}\t{}\t{}\t{}\t{:08x}",
                        b.name, k.file_offset, k.compressed_size, k.uncompressed_size, k.event_count, k.crc32
                    ),
                )?;
            }
        }
    }
    Ok(())
}

fn cmd_skim(a: &SkimArgs, out: &mut dyn Write) -> Result<()> {
    let predicate = parse_expr(&a.predicate)?;
    let options = a.write.options()?;
    let source = executor::open_input(&a.input, Default::default())?;
    let counts = pipeline::skim(source, &predicate, &a.output, options)?;
    writeln!(out, "events in:  {}\nevents out: {}", counts.events_in, counts.events_out).map_err(io_out)
}

fn cmd_slim(a: &SlimArgs, out: &mut dyn Write) -> Result<()> {
    let options = a.write.options()?;
    let source = executor::open_input(&a.input, Default::default())?;
    let schema = pipeline::slim(source, &a.keep, &a.output, options)?;
    let names: Vec<&str> = schema.names().collect();
    writeln!(out, "events:   {}\nbranches: {}", schema.event_count, names.join(",")).map_err(io_out)
}

/// Files written by `analyze` into its output directory.
pub const AGGREGATOR_JSON: &str = "aggregator.json";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TIMELINE_CSV: &str = "timeline.csv";

fn run_options(cfg: &ResolvedConfig, simulate: bool) -> RunOptions {
    RunOptions {
        workers: cfg.workers,
        cost: if simulate {
            CostModel::Simulated(SimulatedCost::default())
        } else {
            CostModel::Measured
        },
        remote: cfg.remote,
    }
}

pub fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<RunOutput> {
    let cfg = a.config()?.resolve()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(format!("cannot create {}", cfg.output_dir.display()), e))?;
    let plan = executor::plan(&cfg.files, cfg.n_tasks, cfg.strategy, &cfg.analysis)?;
    let result = executor::run(&plan, &run_options(&cfg, a.simulate))?;
    let dir = &cfg.output_dir;
    write_file(&dir.join(AGGREGATOR_JSON), &(result.aggregator.to_json_pretty() + "\n"))?;
    if let AggregatorSpec::Bin { .. } = result.aggregator.spec() {
        write_file(&dir.join(HISTOGRAM_CSV), &histogram_csv(&result.aggregator))?;
    }
    write_file(&dir.join(REPORT_JSON), &(result.report.to_json() + "\n"))?;
    write_file(&dir.join(REPORT_CSV), &result.report.to_csv())?;
    write_file(&dir.join(TIMELINE_CSV), &result.report.straggler_report().timeline_csv())?;
    let t = &result.report.totals;
    writeln!(
        out,
        "{} files, {} tasks on {} workers: {} events read, {} selected, {} bytes in {:.3} s",
        cfg.files.len(),
        plan.len(),
        cfg.workers,
        t.events_processed,
        t.events_selected,
        t.bytes_read,
        result.report.run_time
    )
    .map_err(io_out)?;
    writeln!(out, "outputs in {}", dir.display()).map_err(io_out)?;
    Ok(result)
}

/// Plot table of a root `Bin` aggregator.
pub fn histogram_csv(aggregator: &Aggregator) -> String {
    plot_table_csv(&aggregator.to_plot_table().expect("root is a Bin"))
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.analyze.config()?.resolve()?;
    let options = BenchOptions {
        repetitions: a.repetitions,
        serve_root: a.serve_root.clone(),
        remote_latency: latency(a.remote_latency_ms)?,
        simulate: a.analyze.simulate,
    };
    bench(&cfg, &options, out)
}

fn cmd_serve(a: &ServeArgs, out: &mut dyn Write) -> Result<()> {
    let options = ServerOptions {
        read_latency: latency(a.read_latency_ms)?,
    };
    if !a.root.is_dir() {
        return Err(Error::Usage(format!("{} is not a directory", a.root.display())));
    }
    let server = remotefs::serve(&a.root, a.listen.as_str(), options)
        .map_err(|e| Error::io(format!("cannot listen on {}", a.listen), e))?;
    writeln!(out, "serving {} on ntx://{}/", server.root().display(), server.local_addr()).map_err(io_out)?;
    out.flush().map_err(io_out)?;
    server.wait();
    Ok(())
}

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::aggregate::AggregatorSpec;
use crate::executor::{Analysis, InputFile, Strategy};
use crate::pipeline::parse_expr;
use crate::remotefs::{Client, RemoteOptions, RemoteUrl};
use crate::{Error, Result};

/// Settings of an analysis run, from a JSON file, flags, or both.
///
/// ```json
/// {
///   "inputs": ["data/*.ntf"],
///   "predicate": "pt > 20 && len(hits) > 0",
///   "aggregator": {"type": "Bin", "num": 50, "low": 0, "high": 200,
///                  "quantity": "pt", "value": {"type": "Count"}},
///   "n_tasks": 8,
///   "workers": 4,
///   "strategy": "lpt",
///   "output_dir": "out"
/// }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Paths, `ntx://` URLs or glob patterns of either.
    pub inputs: Vec<String>,
    /// Branches to read besides the ones the aggregator uses.
    pub branches: Vec<String>,
    pub predicate: Option<String>,
    pub aggregator: Option<AggregatorSpec>,
    pub n_tasks: Option<usize>,
    pub workers: Option<usize>,
    pub strategy: Option<Strategy>,
    pub output_dir: Option<PathBuf>,
    /// Remote readahead in bytes; 0 turns it off.
    pub readahead: Option<usize>,
}

impl AnalysisConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))
    }

    /// `self` with every field that `flags` sets replaced.
    pub fn overlay(mut self, flags: AnalysisConfig) -> Self {
        if !flags.inputs.is_empty() {
            self.inputs = flags.inputs;
        }
        if !flags.branches.is_empty() {
            self.branches = flags.branches;
        }
        self.predicate = flags.predicate.or(self.predicate);
        self.aggregator = flags.aggregator.or(self.aggregator);
        self.n_tasks = flags.n_tasks.or(self.n_tasks);
        self.workers = flags.workers.or(self.workers);
        self.strategy = flags.strategy.or(self.strategy);
        self.output_dir = flags.output_dir.or(self.output_dir);
        self.readahead = flags.readahead.or(self.readahead);
        self
    }

    /// Check everything and look up input sizes.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let aggregator = self
            .aggregator
            .clone()
            .ok_or_else(|| Error::Usage("no aggregator given (--aggregator or \"aggregator\" in the config)".into()))?;
        aggregator.validate()?;
        let predicate = self.predicate.as_deref().map(parse_expr).transpose()?;
        let workers = self.workers.unwrap_or(1);
        let n_tasks = self.n_tasks.unwrap_or(workers);
        if workers == 0 || n_tasks == 0 {
            return Err(Error::Usage("workers and n_tasks must be at least 1".into()));
        }
        if self.inputs.is_empty() {
            return Err(Error::Usage("no inputs given".into()));
        }
        let files = resolve_inputs(&self.inputs)?;
        let mut analysis = Analysis::new(aggregator);
        analysis.predicate = predicate;
        analysis.extra_branches = self.branches.clone();
        Ok(ResolvedConfig {
            files,
            analysis,
            n_tasks,
            workers,
            strategy: self.strategy.unwrap_or(Strategy::EqualCount),
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("ntuplex-out")),
            remote: RemoteOptions {
                readahead: self.readahead.unwrap_or(0),
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub files: Vec<InputFile>,
    pub analysis: Analysis,
    pub n_tasks: usize,
    pub workers: usize,
    pub strategy: Strategy,
    pub output_dir: PathBuf,
    pub remote: RemoteOptions,
}

/// Aggregator JSON given inline or as `@path`.
pub fn parse_aggregator_arg(text: &str) -> Result<AggregatorSpec> {
    let json = match text.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(format!("cannot read {path}"), e))?,
        None => text.to_string(),
    };
    let spec: AggregatorSpec =
        serde_json::from_str(&json).map_err(|e| Error::Usage(format!("invalid aggregator: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn has_glob(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

/// Expand patterns in order and attach file sizes.
pub fn resolve_inputs(patterns: &[String]) -> Result<Vec<InputFile>> {
    let mut out = Vec::new();
    for pattern in patterns {
        if RemoteUrl::is_remote(pattern) {
            out.extend(resolve_remote(pattern)?);
        } else if has_glob(pattern) {
            let paths = glob::glob(pattern).map_err(|e| Error::Usage(format!("bad pattern `{pattern}`: {e}")))?;
            let mut matched: Vec<PathBuf> = Vec::new();
            for p in paths {
                let p = p.map_err(|e| Error::io(format!("expanding `{pattern}`"), e.into()))?;
                if p.is_file() {
                    matched.push(p);
                }
            }
            if matched.is_empty() {
                return Err(Error::Usage(format!("no files match `{pattern}`")));
            }
            matched.sort();
            for p in matched {
                out.push(local_input(&p)?);
            }
        } else {
            out.push(local_input(Path::new(pattern))?);
        }
    }
    Ok(out)
}

fn local_input(path: &Path) -> Result<InputFile> {
    let meta = std::fs::metadata(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Usage(format!("no such input file: {}", path.display())),
        _ => Error::io(path.display().to_string(), e),
    })?;
    if !meta.is_file() {
        return Err(Error::Usage(format!("{} is not a file", path.display())));
    }
    Ok(InputFile::new(path.to_string_lossy(), meta.len()))
}

fn resolve_remote(text: &str) -> Result<Vec<InputFile>> {
    let url: RemoteUrl = text.parse()?;
    let mut client = Client::connect(&url.addr)?;
    if !has_glob(&url.path) {
        let size = client.stat(&url.path)?;
        return Ok(vec![InputFile::new(url.to_string(), size)]);
    }
    let (dir, name_pattern) = match url.path.rsplit_once('/') {
        Some((dir, name)) => (dir, name),
        None => ("", url.path.as_str()),
    };
    if has_glob(dir) {
        return Err(Error::Usage(format!("`{text}`: patterns are only supported in the file name")));
    }
    let pattern = glob::Pattern::new(name_pattern).map_err(|e| Error::Usage(format!("bad pattern `{text}`: {e}")))?;
    let files: Vec<InputFile> = client
        .list(dir)?
        .into_iter()
        .filter(|e| !e.is_dir && pattern.matches(&e.name))
        .map(|e| {
            let path = if dir.is_empty() { e.name } else { format!("{dir}/{}", e.name) };
            let url = RemoteUrl {
                addr: url.addr.clone(),
                path,
            };
            InputFile::new(url.to_string(), e.size)
        })
        .collect();
    if files.is_empty() {
        return Err(Error::Usage(format!("no files match `{text}`")));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<AnalysisConfig>(r#"{"inputs":[],"n_task":3}"#).unwrap_err();
        assert!(err.to_string().contains("n_task"), "{err}");
    }

    #[test]
    fn flags_win() {
        let file: AnalysisConfig =
            serde_json::from_str(r#"{"inputs":["a.ntf"],"workers":2,"n_tasks":4,"predicate":"pt > 1"}"#).unwrap();
        let flags = AnalysisConfig {
            workers: Some(8),
            predicate: Some("pt > 2".into()),
            ..AnalysisConfig::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.workers, Some(8));
        assert_eq!(merged.n_tasks, Some(4));
        assert_eq!(merged.inputs, ["a.ntf"]);
        assert_eq!(merged.predicate.as_deref(), Some("pt > 2"));
    }

    #[test]
    fn resolve_checks_before_touching_inputs() {
        let cfg = AnalysisConfig {
            inputs: vec!["/definitely/missing.ntf".into()],
            aggregator: Some(AggregatorSpec::Count),
            predicate: Some("pt >".into()),
            ..AnalysisConfig::default()
        };
        assert!(matches!(cfg.resolve(), Err(Error::Expr(_))));
        let cfg = AnalysisConfig {
            predicate: None,
            ..cfg
        };
        assert!(matches!(cfg.resolve(), Err(Error::Usage(m)) if m.contains("missing.ntf")));
    }

    #[test]
    fn aggregator_argument() {
        assert_eq!(parse_aggregator_arg(r#"{"type":"Count"}"#).unwrap(), AggregatorSpec::Count);
        assert!(parse_aggregator_arg(r#"{"type":"Count","x":1}"#).is_err());
        assert!(parse_aggregator_arg(r#"{"type":"Bin","num":0,"low":0,"high":1,"quantity":"x","value":{"type":"Count"}}"#).is_err());
    }
}

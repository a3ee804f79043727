//! Seeded synthetic datasets.
//!
//! File `k` holds `round(E * x_k)` events where `x_k` is drawn from a
//! Pareto law with scale 1 and shape `1 / skew`, capped at `max_scale`
//! (`x_k = 1` for every file when `skew` is 0). Larger skew means a heavier
//! tail of large files.
//!
//! Floating-point values are multiples of 1/1024 well inside the `f32`
//! mantissa, so sums of them are exact whatever the summation order.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto};

use crate::eventfmt::{BranchDecl, BranchType, NtfWriter, Value, WriteOptions};
use crate::{Error, Result};

pub const DEFAULT_SCHEMA: &str = "pt:f64,eta:f32,nhits:i32,event:i64,hits:varf32";

const QUANTUM: f64 = 1024.0;

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub branches: Vec<BranchDecl>,
    pub files: usize,
    pub events_per_file: u64,
    pub skew: f64,
    pub max_scale: f64,
    pub seed: u64,
    pub write: WriteOptions,
    pub prefix: String,
}

impl GenSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            branches: parse_schema(DEFAULT_SCHEMA).expect("default schema parses"),
            files: 4,
            events_per_file: 10_000,
            skew: 0.0,
            max_scale: 50.0,
            seed,
            write: WriteOptions::default(),
            prefix: "part".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.branches.is_empty() {
            return bad("the schema needs at least one branch".into());
        }
        crate::eventfmt::check_unique_names(self.branches.iter().map(|b| b.name.as_str()))?;
        if self.files == 0 {
            return bad("--files must be at least 1".into());
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return bad(format!("skew must be a finite number >= 0, got {}", self.skew));
        }
        if !(self.max_scale.is_finite() && self.max_scale >= 1.0) {
            return bad(format!("max scale must be >= 1, got {}", self.max_scale));
        }
        if self.prefix.is_empty() || self.prefix.contains(['/', '\\']) {
            return bad(format!("invalid file prefix `{}`", self.prefix));
        }
        Ok(())
    }

    /// Events in each file, in file order.
    pub fn event_counts(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        if self.skew == 0.0 {
            return vec![self.events_per_file; self.files];
        }
        let pareto = Pareto::new(1.0, 1.0 / self.skew).expect("positive shape");
        (0..self.files)
            .map(|_| {
                let x: f64 = pareto.sample(&mut rng);
                (self.events_per_file as f64 * x.min(self.max_scale)).round() as u64
            })
            .collect()
    }

    pub fn file_name(&self, index: usize) -> String {
        format!("{}{index:04}.ntf", self.prefix)
    }
}

/// `name:type` pairs separated by commas, e.g. `pt:f64,hits:varf32`.
pub fn parse_schema(text: &str) -> Result<Vec<BranchDecl>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, ty) = item
                .split_once(':')
                .ok_or_else(|| Error::Usage(format!("schema entry `{item}` is not name:type")))?;
            let ty: BranchType = ty.trim().parse().map_err(Error::Usage)?;
            Ok(BranchDecl::new(name.trim(), ty))
        })
        .collect()
}

fn quantize(x: f64) -> f64 {
    (x * QUANTUM).round() / QUANTUM
}

struct RowGen {
    rng: ChaCha8Rng,
    exp_pt: Exp<f64>,
    exp_hit: Exp<f64>,
    file_index: u64,
}

impl RowGen {
    fn new(seed: u64, file_index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(file_index as u64 + 1);
        Self {
            rng,
            exp_pt: Exp::new(1.0 / 25.0).expect("positive rate"),
            exp_hit: Exp::new(1.0 / 10.0).expect("positive rate"),
            file_index: file_index as u64,
        }
    }

    fn value(&mut self, ty: BranchType, row: u64) -> Value {
        match ty {
            BranchType::F64 => Value::F64(quantize(self.exp_pt.sample(&mut self.rng)).min(8000.0)),
            BranchType::F32 => Value::F32(quantize(self.rng.gen_range(-5.0..5.0)) as f32),
            BranchType::I32 => Value::I32(self.rng.gen_range(0..100)),
            BranchType::I64 => Value::I64(((self.file_index << 32) | row) as i64),
            BranchType::VarF32 => {
                let n = self.rng.gen_range(0..8);
                Value::VarF32(
                    (0..n)
                        .map(|_| quantize(self.exp_hit.sample(&mut self.rng)).min(8000.0) as f32)
                        .collect(),
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFile {
    pub path: PathBuf,
    pub events: u64,
    pub bytes: u64,
}

/// Write every file of `spec` into `out_dir`, creating it if needed.
pub fn generate(spec: &GenSpec, out_dir: &Path) -> Result<Vec<GeneratedFile>> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("cannot create {}", out_dir.display()), e))?;
    let mut out = Vec::with_capacity(spec.files);
    let mut row = Vec::with_capacity(spec.branches.len());
    for (k, &events) in spec.event_counts().iter().enumerate() {
        let path = out_dir.join(spec.file_name(k));
        let mut gen = RowGen::new(spec.seed, k);
        let mut writer = NtfWriter::create(&path, spec.branches.clone(), spec.write)?;
        for i in 0..events {
            row.clear();
            for decl in &spec.branches {
                row.push(gen.value(decl.branch_type, i));
            }
            writer.write_row(&row)?;
        }
        writer.finish()?;
        let bytes = std::fs::metadata(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .len();
        log::info!("wrote {} ({events} events, {bytes} bytes)", path.display());
        out.push(GeneratedFile { path, events, bytes });
    }
    Ok(out)
}

#![allow(dead_code)]

use std::io::Cursor;
use std::path::{Path, PathBuf};

use ntuplex::aggregate::{Aggregator, AggregatorSpec};
use ntuplex::cli::{generate, GenSpec};
use ntuplex::eventfmt::{
    BranchDecl, BranchType, Compression, EventBatch, MemorySource, NtfReader, NtfWriter, Value, WriteOptions,
};
use ntuplex::pipeline::{Expr, MapEvent};
use rand::seq::SliceRandom;
use rand::Rng;

pub const TYPES: [BranchType; 5] = [
    BranchType::F32,
    BranchType::F64,
    BranchType::I32,
    BranchType::I64,
    BranchType::VarF32,
];

fn random_f64<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..6) {
        0 => f64::from_bits(rng.gen()),
        // quiet and signalling NaNs with payloads
        1 => f64::from_bits(0x7ff0_0000_0000_0001 | rng.gen::<u64>() & 0x000f_ffff_ffff_ffff | rng.gen::<u64>() << 63),
        2 => [0.0, -0.0, f64::INFINITY, f64::NEG_INFINITY, f64::MIN_POSITIVE, f64::MAX][rng.gen_range(0..6)],
        _ => rng.gen_range(-1e6..1e6),
    }
}

fn random_f32<R: Rng>(rng: &mut R) -> f32 {
    match rng.gen_range(0..6) {
        0 => f32::from_bits(rng.gen()),
        1 => f32::from_bits(0x7f80_0001 | rng.gen::<u32>() & 0x007f_ffff | rng.gen::<u32>() << 31),
        2 => [0.0, -0.0, f32::INFINITY, f32::NEG_INFINITY, f32::MIN_POSITIVE][rng.gen_range(0..5)],
        _ => rng.gen_range(-1e3..1e3),
    }
}

pub fn random_value<R: Rng>(rng: &mut R, ty: BranchType) -> Value {
    match ty {
        BranchType::F32 => Value::F32(random_f32(rng)),
        BranchType::F64 => Value::F64(random_f64(rng)),
        BranchType::I32 => Value::I32(rng.gen()),
        BranchType::I64 => Value::I64(rng.gen()),
        BranchType::VarF32 => {
            let n = if rng.gen_bool(0.3) { 0 } else { rng.gen_range(1..12) };
            Value::VarF32((0..n).map(|_| random_f32(rng)).collect())
        }
    }
}

pub fn random_decls<R: Rng>(rng: &mut R) -> Vec<BranchDecl> {
    let n = rng.gen_range(1..=6);
    (0..n)
        .map(|i| BranchDecl::new(format!("b{i}"), *TYPES.choose(rng).unwrap()))
        .collect()
}

pub fn random_rows<R: Rng>(rng: &mut R, decls: &[BranchDecl], n: usize) -> Vec<Vec<Value>> {
    (0..n)
        .map(|_| decls.iter().map(|d| random_value(rng, d.branch_type)).collect())
        .collect()
}

pub fn random_options<R: Rng>(rng: &mut R) -> WriteOptions {
    WriteOptions {
        compression: if rng.gen() { Compression::Deflate } else { Compression::None },
        basket_target_bytes: *[1, 16, 100, 1000, 65536].choose(rng).unwrap(),
    }
}

pub fn write_mem(decls: &[BranchDecl], rows: &[Vec<Value>], options: WriteOptions) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    let mut w = NtfWriter::new(&mut buf, decls.to_vec(), options).unwrap();
    for r in rows {
        w.write_row(r).unwrap();
    }
    w.finish().unwrap();
    buf.into_inner()
}

pub fn read_mem(bytes: Vec<u8>) -> EventBatch {
    NtfReader::open(MemorySource::new("mem", bytes)).unwrap().read_all().unwrap()
}

/// Write random rows and read them back; `Err` describes the first mismatch.
pub fn roundtrip_case<R: Rng>(rng: &mut R) -> Result<(), String> {
    let decls = random_decls(rng);
    let n = match rng.gen_range(0..10) {
        0 => 0,
        1 => rng.gen_range(1000..3000),
        _ => rng.gen_range(1..200),
    };
    let rows = random_rows(rng, &decls, n);
    let options = random_options(rng);
    let batch = read_mem(write_mem(&decls, &rows, options));
    if batch.decls() != decls {
        return Err(format!("schema {:?} read back as {:?}", decls, batch.decls()));
    }
    if batch.row_count() != n {
        return Err(format!("{n} rows read back as {}", batch.row_count()));
    }
    for (i, row) in rows.iter().enumerate() {
        let got = batch.row_values(i);
        if !row.iter().zip(&got).all(|(a, b)| a.bit_eq(b)) {
            return Err(format!("row {i} of {n} ({options:?}): wrote {row:?}, read {got:?}"));
        }
    }
    Ok(())
}

/// A value that is a multiple of 1/1024, so sums are exact.
pub fn grid<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo..hi) * 1024.0).round() / 1024.0
}

/// Events with scalars `x`, `y` and array `h`; a few `x` are NaN.
pub fn random_events<R: Rng>(rng: &mut R, n: usize) -> Vec<MapEvent> {
    (0..n)
        .map(|_| {
            let x = if rng.gen_bool(0.03) { f64::NAN } else { grid(rng, -20.0, 120.0) };
            let len = rng.gen_range(0..4);
            MapEvent::new()
                .scalar("x", x)
                .scalar("y", grid(rng, -5.0, 5.0))
                .array("h", (0..len).map(|_| grid(rng, 0.0, 10.0) as f32).collect())
        })
        .collect()
}

pub fn random_quantity<R: Rng>(rng: &mut R) -> Expr {
    let text = *["x", "y", "x + y", "x * 2 - y", "len(h)", "sum(h)"].choose(rng).unwrap();
    ntuplex::pipeline::parse_expr(text).unwrap()
}

/// Random aggregator tree of at most `depth` nested `Bin`s.
pub fn random_spec<R: Rng>(rng: &mut R, depth: usize) -> AggregatorSpec {
    let pick = if depth == 0 { rng.gen_range(0..4) } else { rng.gen_range(0..6) };
    match pick {
        0 => AggregatorSpec::Count,
        1 => AggregatorSpec::sum(random_quantity(rng)),
        2 => AggregatorSpec::average(random_quantity(rng)),
        3 => AggregatorSpec::deviate(random_quantity(rng)),
        _ => {
            let low = grid(rng, -10.0, 50.0);
            let high = low + grid(rng, 1.0, 80.0);
            AggregatorSpec::bin(rng.gen_range(1..7), low, high, random_quantity(rng), random_spec(rng, depth - 1))
        }
    }
}

pub fn random_weight<R: Rng>(rng: &mut R) -> f64 {
    *[1.0, 1.0, 1.0, 0.5, 2.0, 0.0].choose(rng).unwrap()
}

pub fn fill_all(spec: &AggregatorSpec, events: &[MapEvent], weights: &[f64]) -> Aggregator {
    let mut agg = Aggregator::zero(spec).unwrap();
    for (e, &w) in events.iter().zip(weights) {
        agg.fill(e, w).unwrap();
    }
    agg
}

/// Compare two aggregators through their JSON: counts and sums exactly,
/// `mean` and `m2` within `rel` relative error.
pub fn agg_close(a: &Aggregator, b: &Aggregator, rel: f64) -> Result<(), String> {
    let x: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    let y: serde_json::Value = serde_json::from_str(&b.to_json()).unwrap();
    json_close(&x, &y, rel, "$")
}

fn num(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => match s.as_str() {
            "nan" => Some(f64::NAN),
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

fn json_close(a: &serde_json::Value, b: &serde_json::Value, rel: f64, at: &str) -> Result<(), String> {
    use serde_json::Value as J;
    match (a, b) {
        (J::Object(x), J::Object(y)) => {
            if x.len() != y.len() {
                return Err(format!("{at}: keys differ"));
            }
            for (k, v) in x {
                let w = y.get(k).ok_or(format!("{at}.{k} missing"))?;
                let path = format!("{at}.{k}");
                let tolerant = k == "mean" || k == "m2";
                match (num(v), num(w)) {
                    (Some(p), Some(q)) if k != "quantity" && k != "type" => {
                        let ok = (p.is_nan() && q.is_nan())
                            || p == q
                            || (tolerant && (p - q).abs() <= rel * p.abs().max(q.abs()));
                        if !ok {
                            return Err(format!("{path}: {p} vs {q}"));
                        }
                    }
                    _ => json_close(v, w, rel, &path)?,
                }
            }
            Ok(())
        }
        (J::Array(x), J::Array(y)) => {
            if x.len() != y.len() {
                return Err(format!("{at}: lengths differ"));
            }
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                json_close(v, w, rel, &format!("{at}[{i}]"))?;
            }
            Ok(())
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{at}: {a} vs {b}")),
    }
}

/// Generate a dataset with the default schema into `dir/data`.
pub fn dataset(dir: &Path, seed: u64, files: usize, events: u64, skew: f64) -> Vec<PathBuf> {
    let mut spec = GenSpec::new(seed);
    spec.files = files;
    spec.events_per_file = events;
    spec.skew = skew;
    generate(&spec, &dir.join("data")).unwrap().into_iter().map(|f| f.path).collect()
}

pub fn path_strings(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.to_string_lossy().into_owned()).collect()
}

//! Expression language and the disk-to-disk workflow transforms.
//!
//! Skimming drops events and slimming drops branches; both stream from an
//! input source into a fresh NTF file and never hold the whole dataset.
//! Filtering and pruning (the in-memory counterparts) are
//! [`NtfReader::read_events`](crate::eventfmt::NtfReader::read_events) with a
//! predicate and a branch selection.

mod expr;

use std::path::Path;

pub use expr::{
    check_predicate, check_quantity, eval, eval_number, eval_predicate, parse_expr, BinaryOp,
    EventView, Expr, ExprError, ExprType, FieldValue, MapEvent, OwnedField, Scalar, UnaryOp,
};

use crate::eventfmt::{ByteSource, FormatError, NtfReader, NtfWriter, Schema, WriteOptions};

/// Rows per batch when streaming between files.
const COPY_BATCH_ROWS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkimCounts {
    pub events_in: u64,
    pub events_out: u64,
}

/// Copy the events of `input` that pass `predicate` to a new file at `output`.
///
/// The output keeps every branch of the input. The predicate is checked
/// against the input schema before the output file is created.
pub fn skim<S: ByteSource>(
    input: S,
    predicate: &Expr,
    output: &Path,
    options: WriteOptions,
) -> Result<SkimCounts, FormatError> {
    let reader = NtfReader::open(input)?;
    let schema = reader.schema();
    check_predicate(predicate, |name| schema.branch_type(name))?;
    let names: Vec<&str> = schema.names().collect();
    let mut writer = NtfWriter::create(output, schema.decls(), options)?;
    for batch in reader.read_events(&names, Some(predicate), COPY_BATCH_ROWS)? {
        writer.write_batch(&batch?)?;
    }
    let events_in = reader.schema().event_count;
    let written = writer.finish()?;
    Ok(SkimCounts {
        events_in,
        events_out: written.event_count,
    })
}

/// Copy only the `keep` branches of `input` to a new file at `output`.
///
/// Baskets of dropped branches are never read.
pub fn slim<S: ByteSource, N: AsRef<str>>(
    input: S,
    keep: &[N],
    output: &Path,
    options: WriteOptions,
) -> Result<Schema, FormatError> {
    let reader = NtfReader::open(input)?;
    if keep.is_empty() {
        return Err(FormatError::EmptyKeepList);
    }
    let mut decls = Vec::with_capacity(keep.len());
    for name in keep {
        let branch = reader
            .schema()
            .branch(name.as_ref())
            .ok_or_else(|| FormatError::UnknownBranch(name.as_ref().to_string()))?;
        if decls.iter().any(|d: &crate::eventfmt::BranchDecl| d.name == branch.name) {
            return Err(FormatError::DuplicateBranch(branch.name.clone()));
        }
        decls.push(branch.decl());
    }
    let mut writer = NtfWriter::create(output, decls, options)?;
    for batch in reader.read_events(keep, None, COPY_BATCH_ROWS)? {
        writer.write_batch(&batch?)?;
    }
    writer.finish()
}

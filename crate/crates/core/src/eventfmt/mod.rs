//! The NTF ("ntuple file") columnar format.
//!
//! A file is a 24-byte header, a run of basket records and a JSON footer:
//!
//! ```text
//! header  : "NTF1" | version u16 = 1 | flags u16 = 0 | footer_offset u64 | footer_length u64
//! basket  : codec u8 | uncompressed_size u32 | compressed_size u32 | crc32 u32 | payload
//! footer  : JSON {version, event_count, branches: [{name, type, baskets: [...]}]} | crc32 u32
//! ```
//!
//! All integers are little-endian. Each branch (column) is cut into baskets
//! covering the same row ranges for every branch, so a reader can fetch one
//! row range of any subset of branches without touching the rest. The footer
//! is written last and the header patched with its location, which keeps
//! writes single-pass.

mod batch;
mod layout;
mod reader;
mod source;
mod writer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{BatchRow, ColumnData, EventBatch, Value};
pub use layout::{BASKET_HEADER_LEN, FORMAT_VERSION, HEADER_LEN, MAGIC};
pub use reader::{read_schema, CpuClock, EventReader, NtfReader};
pub use source::{ByteCounter, ByteSource, CountingSource, FileSource, MemorySource};
pub use writer::{write_dataset, Compression, NtfWriter, WriteOptions, DEFAULT_BASKET_TARGET_BYTES};

use crate::pipeline::ExprError;

/// Storage type of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchType {
    F32,
    F64,
    I32,
    I64,
    /// Variable-length array of `f32` per event, stored as offsets + values.
    VarF32,
}

impl BranchType {
    pub const ALL: [BranchType; 5] = [
        BranchType::F32,
        BranchType::F64,
        BranchType::I32,
        BranchType::I64,
        BranchType::VarF32,
    ];

    /// Bytes per event for fixed-width types, `None` for `VarF32`.
    pub fn fixed_width(self) -> Option<usize> {
        match self {
            BranchType::F32 | BranchType::I32 => Some(4),
            BranchType::F64 | BranchType::I64 => Some(8),
            BranchType::VarF32 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BranchType::F32 => "F32",
            BranchType::F64 => "F64",
            BranchType::I32 => "I32",
            BranchType::I64 => "I64",
            BranchType::VarF32 => "VarF32",
        }
    }

    pub fn is_array(self) -> bool {
        self == BranchType::VarF32
    }
}

impl std::fmt::Display for BranchType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BranchType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BranchType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown branch type `{s}`"))
    }
}

/// Location and size of one basket record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasketRef {
    /// Offset of the basket record (its codec byte) from the start of the file.
    #[serde(rename = "offset")]
    pub file_offset: u64,
    /// Payload bytes as stored.
    #[serde(rename = "csize")]
    pub compressed_size: u32,
    #[serde(rename = "usize")]
    pub uncompressed_size: u32,
    #[serde(rename = "events")]
    pub event_count: u64,
    /// CRC-32 (IEEE) of the uncompressed payload.
    pub crc32: u32,
}

impl BasketRef {
    /// Size of the whole record including its 13-byte header.
    pub fn record_len(&self) -> u64 {
        BASKET_HEADER_LEN as u64 + u64::from(self.compressed_size)
    }
}

/// Name and type of a branch, without any storage information.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub branch_type: BranchType,
}

impl BranchDecl {
    pub fn new(name: impl Into<String>, branch_type: BranchType) -> Self {
        Self {
            name: name.into(),
            branch_type,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub branch_type: BranchType,
    pub baskets: Vec<BasketRef>,
}

impl BranchDescriptor {
    pub fn decl(&self) -> BranchDecl {
        BranchDecl::new(self.name.clone(), self.branch_type)
    }

    /// Bytes occupied by all basket records of this branch.
    pub fn stored_bytes(&self) -> u64 {
        self.baskets.iter().map(BasketRef::record_len).sum()
    }
}

/// Branch list and basket index of a file, as recovered from its footer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schema {
    pub branches: Vec<BranchDescriptor>,
    pub event_count: u64,
}

impl Schema {
    pub fn branch(&self, name: &str) -> Option<&BranchDescriptor> {
        self.branches.iter().find(|b| b.name == name)
    }

    pub fn branch_type(&self, name: &str) -> Option<BranchType> {
        self.branch(name).map(|b| b.branch_type)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.branches.iter().map(|b| b.name.as_str())
    }

    pub fn decls(&self) -> Vec<BranchDecl> {
        self.branches.iter().map(BranchDescriptor::decl).collect()
    }

    /// Number of row-aligned baskets (the same for every branch).
    pub fn basket_count(&self) -> usize {
        self.branches.first().map_or(0, |b| b.baskets.len())
    }

    /// Event counts of the row-aligned baskets.
    pub fn basket_events(&self) -> Vec<u64> {
        self.branches
            .first()
            .map(|b| b.baskets.iter().map(|k| k.event_count).collect())
            .unwrap_or_default()
    }

    /// Check the invariants a footer must satisfy; `data_end` bounds basket records.
    pub(crate) fn validate(&self, data_end: u64) -> Result<(), FormatError> {
        check_unique_names(self.branches.iter().map(|b| b.name.as_str()))?;
        let reference = self.basket_events();
        for branch in &self.branches {
            let events: Vec<u64> = branch.baskets.iter().map(|k| k.event_count).collect();
            if events != reference {
                return Err(FormatError::InvalidLayout(format!(
                    "branch `{}` baskets are not row-aligned with `{}`",
                    branch.name, self.branches[0].name
                )));
            }
            for (i, basket) in branch.baskets.iter().enumerate() {
                let end = basket.file_offset.checked_add(basket.record_len());
                if basket.file_offset < HEADER_LEN as u64 || end.is_none_or(|e| e > data_end) {
                    return Err(FormatError::InvalidLayout(format!(
                        "basket {i} of branch `{}` lies outside the data region",
                        branch.name
                    )));
                }
            }
        }
        let total: u64 = reference.iter().sum();
        if !self.branches.is_empty() && total != self.event_count {
            return Err(FormatError::InvalidLayout(format!(
                "baskets hold {total} events but footer declares {}",
                self.event_count
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_unique_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<(), FormatError> {
    let mut seen = std::collections::HashSet::new();
    for name in names {
        if name.is_empty() {
            return Err(FormatError::EmptyBranchName);
        }
        if !seen.insert(name) {
            return Err(FormatError::DuplicateBranch(name.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error on {source_name}: {error}")]
    Io {
        source_name: String,
        #[source]
        error: std::io::Error,
    },
    #[error("not an NTF file: bad magic")]
    BadMagic,
    #[error("unsupported NTF format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("footer checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    FooterChecksum { stored: u32, computed: u32 },
    #[error("malformed footer: {0}")]
    Footer(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("checksum mismatch in basket {index} of branch `{branch}`")]
    BasketChecksum { branch: String, index: usize },
    #[error("cannot decompress basket {index} of branch `{branch}`: {reason}")]
    Decompress {
        branch: String,
        index: usize,
        reason: String,
    },
    #[error("corrupt basket {index} of branch `{branch}`: {reason}")]
    CorruptBasket {
        branch: String,
        index: usize,
        reason: String,
    },
    #[error("basket index {index} out of range for branch `{branch}` ({count} baskets)")]
    BasketOutOfRange {
        branch: String,
        index: usize,
        count: usize,
    },
    #[error("branch names must be non-empty")]
    EmptyBranchName,
    #[error("duplicate branch name `{0}`")]
    DuplicateBranch(String),
    #[error("unknown branch `{0}`")]
    UnknownBranch(String),
    #[error("nothing to keep: the branch list is empty")]
    EmptyKeepList,
    #[error("row has {got} values, schema has {expected} branches")]
    RowArity { expected: usize, got: usize },
    #[error("branch `{branch}` expects {expected} but got {got}")]
    RowType {
        branch: String,
        expected: BranchType,
        got: BranchType,
    },
    #[error("basket of branch `{0}` exceeds the 4 GiB record limit")]
    BasketTooLarge(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

impl FormatError {
    pub(crate) fn io(source_name: impl Into<String>, error: std::io::Error) -> Self {
        FormatError::Io {
            source_name: source_name.into(),
            error,
        }
    }

    /// True when the error means stored data failed an integrity check.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            FormatError::BadMagic
                | FormatError::UnsupportedVersion(_)
                | FormatError::Truncated(_)
                | FormatError::FooterChecksum { .. }
                | FormatError::Footer(_)
                | FormatError::InvalidLayout(_)
                | FormatError::BasketChecksum { .. }
                | FormatError::Decompress { .. }
                | FormatError::CorruptBasket { .. }
        )
    }
}

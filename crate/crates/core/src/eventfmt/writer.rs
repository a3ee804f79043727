use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use super::layout::{encode_footer, encode_payload, payload_len, EncodedBasket, Header, HEADER_LEN};
use super::{
    check_unique_names, BasketRef, BranchDecl, BranchDescriptor, ColumnData, EventBatch,
    FormatError, Schema, Value,
};

pub const DEFAULT_BASKET_TARGET_BYTES: usize = 65536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compression {
    None,
    #[default]
    Deflate,
}

impl std::str::FromStr for Compression {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Compression::None),
            "deflate" => Ok(Compression::Deflate),
            other => Err(format!("unknown compression `{other}` (expected none or deflate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub compression: Compression,
    /// Uncompressed payload budget per basket.
    pub basket_target_bytes: usize,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            compression: Compression::Deflate,
            basket_target_bytes: DEFAULT_BASKET_TARGET_BYTES,
        }
    }
}

impl WriteOptions {
    pub fn uncompressed() -> Self {
        Self {
            compression: Compression::None,
            ..Self::default()
        }
    }
}

/// Streaming NTF writer.
///
/// Rows are buffered into one open basket per branch. A basket boundary is
/// placed before a row when any fixed-width branch would exceed the target,
/// and after a row when any `VarF32` branch has exceeded it, so array events
/// are never split. All branches are cut at the same rows.
pub struct NtfWriter<W: Write + Seek> {
    out: W,
    decls: Vec<BranchDecl>,
    options: WriteOptions,
    open: Vec<ColumnData>,
    open_rows: usize,
    baskets: Vec<Vec<BasketRef>>,
    position: u64,
    event_count: u64,
}

impl NtfWriter<BufWriter<File>> {
    pub fn create(
        path: impl AsRef<Path>,
        decls: Vec<BranchDecl>,
        options: WriteOptions,
    ) -> Result<Self, FormatError> {
        let path = path.as_ref();
        // validate before touching the filesystem
        check_unique_names(decls.iter().map(|d| d.name.as_str()))?;
        let file = File::create(path).map_err(|error| FormatError::Io {
            source_name: path.display().to_string(),
            error,
        })?;
        Self::new(BufWriter::new(file), decls, options)
    }
}

impl<W: Write + Seek> NtfWriter<W> {
    pub fn new(mut out: W, decls: Vec<BranchDecl>, options: WriteOptions) -> Result<Self, FormatError> {
        check_unique_names(decls.iter().map(|d| d.name.as_str()))?;
        let placeholder = Header {
            footer_offset: 0,
            footer_length: 0,
        };
        out.write_all(&placeholder.encode()).map_err(io_err)?;
        Ok(Self {
            out,
            open: decls.iter().map(|d| ColumnData::empty(d.branch_type)).collect(),
            baskets: vec![Vec::new(); decls.len()],
            decls,
            options,
            open_rows: 0,
            position: HEADER_LEN as u64,
            event_count: 0,
        })
    }

    pub fn decls(&self) -> &[BranchDecl] {
        &self.decls
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// Append one event; `row` holds one value per branch in schema order.
    pub fn write_row(&mut self, row: &[Value]) -> Result<(), FormatError> {
        if row.len() != self.decls.len() {
            return Err(FormatError::RowArity {
                expected: self.decls.len(),
                got: row.len(),
            });
        }
        for (decl, value) in self.decls.iter().zip(row) {
            if value.branch_type() != decl.branch_type {
                return Err(FormatError::RowType {
                    branch: decl.name.clone(),
                    expected: decl.branch_type,
                    got: value.branch_type(),
                });
            }
        }
        self.cut_before_row()?;
        for (col, value) in self.open.iter_mut().zip(row) {
            col.push(value).expect("type checked above");
        }
        self.finish_row()
    }

    /// Append every row of `batch`, whose columns must match the writer's branches.
    pub fn write_batch(&mut self, batch: &EventBatch) -> Result<(), FormatError> {
        let decls = batch.decls();
        if decls.len() != self.decls.len() {
            return Err(FormatError::RowArity {
                expected: self.decls.len(),
                got: decls.len(),
            });
        }
        for (want, got) in self.decls.iter().zip(&decls) {
            if want.name != got.name {
                return Err(FormatError::UnknownBranch(got.name.clone()));
            }
            if want.branch_type != got.branch_type {
                return Err(FormatError::RowType {
                    branch: want.name.clone(),
                    expected: want.branch_type,
                    got: got.branch_type,
                });
            }
        }
        for row in 0..batch.row_count() {
            self.cut_before_row()?;
            for (col, src) in self.open.iter_mut().zip(batch.columns()) {
                col.extend_range(src, row, row + 1);
            }
            self.finish_row()?;
        }
        Ok(())
    }

    fn cut_before_row(&mut self) -> Result<(), FormatError> {
        if self.open_rows == 0 {
            return Ok(());
        }
        let target = self.options.basket_target_bytes;
        let would_overflow = self.open.iter().any(|col| match col.branch_type().fixed_width() {
            Some(w) => (self.open_rows + 1) * w > target,
            None => false,
        });
        if would_overflow {
            self.flush_basket()?;
        }
        Ok(())
    }

    fn finish_row(&mut self) -> Result<(), FormatError> {
        self.open_rows += 1;
        self.event_count += 1;
        let target = self.options.basket_target_bytes;
        let crossed = self.open.iter().any(|col| {
            col.branch_type().is_array()
                && payload_len(col.branch_type(), col.rows(), col.value_count()) > target
        });
        if crossed {
            self.flush_basket()?;
        }
        Ok(())
    }

    fn flush_basket(&mut self) -> Result<(), FormatError> {
        if self.open_rows == 0 {
            return Ok(());
        }
        let deflate = self.options.compression == Compression::Deflate;
        for (i, col) in self.open.iter_mut().enumerate() {
            let payload = encode_payload(col);
            let encoded = EncodedBasket::new(payload, deflate)
                .map_err(|_| FormatError::BasketTooLarge(self.decls[i].name.clone()))?;
            self.out.write_all(&encoded.header()).map_err(io_err)?;
            self.out.write_all(&encoded.stored).map_err(io_err)?;
            self.baskets[i].push(BasketRef {
                file_offset: self.position,
                compressed_size: encoded.compressed_size,
                uncompressed_size: encoded.uncompressed_size,
                event_count: self.open_rows as u64,
                crc32: encoded.crc32,
            });
            self.position += (encoded.header().len() + encoded.stored.len()) as u64;
            *col = ColumnData::empty(col.branch_type());
        }
        self.open_rows = 0;
        Ok(())
    }

    /// Flush the last basket, write the footer and patch the header.
    pub fn finish(mut self) -> Result<Schema, FormatError> {
        self.flush_basket()?;
        let schema = Schema {
            branches: self
                .decls
                .iter()
                .zip(std::mem::take(&mut self.baskets))
                .map(|(d, baskets)| BranchDescriptor {
                    name: d.name.clone(),
                    branch_type: d.branch_type,
                    baskets,
                })
                .collect(),
            event_count: self.event_count,
        };
        let footer = encode_footer(&schema);
        self.out.write_all(&footer).map_err(io_err)?;
        let header = Header {
            footer_offset: self.position,
            footer_length: footer.len() as u64,
        };
        self.out.seek(SeekFrom::Start(0)).map_err(io_err)?;
        self.out.write_all(&header.encode()).map_err(io_err)?;
        self.out.flush().map_err(io_err)?;
        Ok(schema)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn io_err(error: std::io::Error) -> FormatError {
    FormatError::Io {
        source_name: "output".into(),
        error,
    }
}

/// Write `rows` to a new file at `path` and return the resulting schema.
pub fn write_dataset<I>(
    path: impl AsRef<Path>,
    decls: Vec<BranchDecl>,
    rows: I,
    options: WriteOptions,
) -> Result<Schema, FormatError>
where
    I: IntoIterator,
    I::Item: AsRef<[Value]>,
{
    let mut writer = NtfWriter::create(path, decls, options)?;
    for row in rows {
        writer.write_row(row.as_ref())?;
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventfmt::BranchType;
    use std::io::Cursor;

    fn finish_mem(decls: Vec<BranchDecl>, rows: Vec<Vec<Value>>, options: WriteOptions) -> (Vec<u8>, Schema) {
        let mut buf = Cursor::new(Vec::new());
        let schema = {
            let mut w = NtfWriter::new(&mut buf, decls, options).unwrap();
            for r in &rows {
                w.write_row(r).unwrap();
            }
            w.finish().unwrap()
        };
        (buf.into_inner(), schema)
    }

    #[test]
    fn f64_cut_rule_fills_baskets_to_target() {
        let rows = (0..10_000).map(|i| vec![Value::F64(i as f64)]).collect();
        let (_, schema) = finish_mem(
            vec![BranchDecl::new("x", BranchType::F64)],
            rows,
            WriteOptions::uncompressed(),
        );
        assert_eq!(schema.basket_events(), vec![8192, 1808]);
        assert_eq!(schema.branches[0].baskets[0].uncompressed_size, 65536);
    }

    #[test]
    fn var_event_crossing_target_stays_in_basket() {
        // payload = 4 + 4*(rows+1) + 4*values; target 40 bytes
        let rows = vec![
            vec![Value::VarF32(vec![1.0, 2.0])], // 4+8+8 = 20
            vec![Value::VarF32(vec![3.0, 4.0, 5.0])], // 4+12+20 = 36
            vec![Value::VarF32(vec![6.0])], // 4+16+24 = 44 > 40: cut after
            vec![Value::VarF32(vec![])],
        ];
        let options = WriteOptions {
            compression: Compression::None,
            basket_target_bytes: 40,
        };
        let (_, schema) = finish_mem(vec![BranchDecl::new("h", BranchType::VarF32)], rows, options);
        assert_eq!(schema.basket_events(), vec![3, 1]);
        assert_eq!(schema.branches[0].baskets[0].uncompressed_size, 44);
    }

    #[test]
    fn branches_are_cut_at_the_same_rows() {
        let rows = (0..100)
            .map(|i| vec![Value::I32(i), Value::F64(f64::from(i))])
            .collect();
        let options = WriteOptions {
            compression: Compression::None,
            basket_target_bytes: 64,
        };
        let (_, schema) = finish_mem(
            vec![BranchDecl::new("a", BranchType::I32), BranchDecl::new("b", BranchType::F64)],
            rows,
            options,
        );
        // the F64 branch binds: 8 events per basket
        assert!(schema.basket_events().iter().all(|&n| n == 8 || n == 4));
        assert_eq!(schema.branches[0].baskets.len(), schema.branches[1].baskets.len());
        assert_eq!(schema.basket_events().iter().sum::<u64>(), 100);
    }

    #[test]
    fn oversized_single_event_gets_own_basket() {
        let rows = vec![vec![Value::F64(1.0)], vec![Value::F64(2.0)]];
        let options = WriteOptions {
            compression: Compression::None,
            basket_target_bytes: 4,
        };
        let (_, schema) = finish_mem(vec![BranchDecl::new("x", BranchType::F64)], rows, options);
        assert_eq!(schema.basket_events(), vec![1, 1]);
    }

    #[test]
    fn rejects_duplicate_names_and_bad_rows() {
        let dup = NtfWriter::new(
            Cursor::new(Vec::new()),
            vec![BranchDecl::new("a", BranchType::F32), BranchDecl::new("a", BranchType::F64)],
            WriteOptions::default(),
        );
        assert!(matches!(dup, Err(FormatError::DuplicateBranch(n)) if n == "a"));

        let mut w = NtfWriter::new(
            Cursor::new(Vec::new()),
            vec![BranchDecl::new("a", BranchType::F32)],
            WriteOptions::default(),
        )
        .unwrap();
        assert!(matches!(w.write_row(&[]), Err(FormatError::RowArity { expected: 1, got: 0 })));
        assert!(matches!(
            w.write_row(&[Value::F32(1.0), Value::F32(2.0)]),
            Err(FormatError::RowArity { expected: 1, got: 2 })
        ));
        assert!(matches!(w.write_row(&[Value::I32(1)]), Err(FormatError::RowType { .. })));
    }

    #[test]
    fn empty_file_has_header_and_footer_only() {
        let (bytes, schema) = finish_mem(
            vec![BranchDecl::new("a", BranchType::F32)],
            vec![],
            WriteOptions::default(),
        );
        assert_eq!(schema.event_count, 0);
        assert!(schema.branches[0].baskets.is_empty());
        let footer_offset = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let footer_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        assert_eq!(footer_offset, HEADER_LEN as u64);
        assert_eq!(footer_offset + footer_len, bytes.len() as u64);
    }
}

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::layout::{decode_footer, decode_payload, decompress, BasketHeader, Header, BASKET_HEADER_LEN, HEADER_LEN};
use super::{BranchDescriptor, ByteSource, ColumnData, EventBatch, FormatError, Schema};
use crate::pipeline::{self, Expr};

/// Accumulates time spent in compute paths (decompress, decode, predicate
/// evaluation, and whatever else a caller wraps with [`CpuClock::time`]).
#[derive(Debug, Clone, Default)]
pub struct CpuClock {
    nanos: Arc<AtomicU64>,
}

impl CpuClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time<R>(&self, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.add(start.elapsed());
        out
    }

    pub fn add(&self, elapsed: Duration) {
        self.nanos
            .fetch_add(elapsed.as_nanos().min(u128::from(u64::MAX)) as u64, Ordering::Relaxed);
    }

    pub fn elapsed(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::Relaxed))
    }

    pub fn reset(&self) {
        self.nanos.store(0, Ordering::Relaxed);
    }
}

/// Read the schema and basket index of an NTF file.
///
/// Touches exactly two byte ranges: the 24-byte header and the footer.
pub fn read_schema<S: ByteSource + ?Sized>(source: &S) -> Result<Schema, FormatError> {
    let size = source.size().map_err(|e| FormatError::io(source.describe(), e))?;
    if size < HEADER_LEN as u64 {
        return Err(FormatError::Truncated(format!(
            "{size} bytes is shorter than the header"
        )));
    }
    let mut header = [0u8; HEADER_LEN];
    source
        .read_exact_at(0, &mut header)
        .map_err(|e| FormatError::io(source.describe(), e))?;
    let header = Header::decode(&header)?;
    let footer_end = header.footer_offset.checked_add(header.footer_length);
    if header.footer_offset < HEADER_LEN as u64
        || header.footer_length < 4
        || footer_end.is_none_or(|end| end > size)
    {
        return Err(FormatError::Truncated(format!(
            "footer at {}+{} does not fit in {size} bytes",
            header.footer_offset, header.footer_length
        )));
    }
    let mut footer = vec![0u8; header.footer_length as usize];
    source
        .read_exact_at(header.footer_offset, &mut footer)
        .map_err(|e| FormatError::io(source.describe(), e))?;
    let schema = decode_footer(&footer)?;
    schema.validate(header.footer_offset)?;
    Ok(schema)
}

/// An open NTF file. The schema is read once at open time.
#[derive(Debug)]
pub struct NtfReader<S> {
    source: S,
    schema: Schema,
    cpu: CpuClock,
}

impl<S: ByteSource> NtfReader<S> {
    pub fn open(source: S) -> Result<Self, FormatError> {
        let schema = read_schema(&source)?;
        Ok(Self {
            source,
            schema,
            cpu: CpuClock::new(),
        })
    }

    /// Charge decode and evaluation time to `cpu` instead of a private clock.
    pub fn with_cpu_clock(mut self, cpu: CpuClock) -> Self {
        self.cpu = cpu;
        self
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn cpu_clock(&self) -> &CpuClock {
        &self.cpu
    }

    pub fn into_source(self) -> S {
        self.source
    }

    fn branch_by_name(&self, name: &str) -> Result<&BranchDescriptor, FormatError> {
        self.schema
            .branch(name)
            .ok_or_else(|| FormatError::UnknownBranch(name.to_string()))
    }

    /// Read, verify and decode one basket of `branch`.
    pub fn read_basket(&self, branch: &BranchDescriptor, index: usize) -> Result<ColumnData, FormatError> {
        let basket = branch.baskets.get(index).ok_or_else(|| FormatError::BasketOutOfRange {
            branch: branch.name.clone(),
            index,
            count: branch.baskets.len(),
        })?;
        let corrupt = |reason: String| FormatError::CorruptBasket {
            branch: branch.name.clone(),
            index,
            reason,
        };
        let mut record = vec![0u8; basket.record_len() as usize];
        self.source
            .read_exact_at(basket.file_offset, &mut record)
            .map_err(|e| FormatError::io(self.source.describe(), e))?;

        self.cpu.time(|| {
            let header = BasketHeader::decode(&record[..BASKET_HEADER_LEN]);
            if header.compressed_size != basket.compressed_size
                || header.uncompressed_size != basket.uncompressed_size
            {
                return Err(corrupt("record header disagrees with the footer index".into()));
            }
            if header.crc32 != basket.crc32 {
                return Err(FormatError::BasketChecksum {
                    branch: branch.name.clone(),
                    index,
                });
            }
            let payload = decompress(
                header.codec,
                &record[BASKET_HEADER_LEN..],
                header.uncompressed_size as usize,
            )
            .map_err(|reason| FormatError::Decompress {
                branch: branch.name.clone(),
                index,
                reason,
            })?;
            if crc32fast::hash(&payload) != basket.crc32 {
                return Err(FormatError::BasketChecksum {
                    branch: branch.name.clone(),
                    index,
                });
            }
            decode_payload(branch.branch_type, &payload, basket.event_count as usize).map_err(corrupt)
        })
    }

    /// The full column of one branch.
    pub fn read_column(&self, name: &str) -> Result<ColumnData, FormatError> {
        let branch = self.branch_by_name(name)?;
        let mut out = ColumnData::empty(branch.branch_type);
        for index in 0..branch.baskets.len() {
            let part = self.read_basket(branch, index)?;
            out.extend_range(&part, 0, part.rows());
        }
        Ok(out)
    }

    /// Every branch and every event in one batch.
    pub fn read_all(&self) -> Result<EventBatch, FormatError> {
        let names: Vec<String> = self.schema.names().map(str::to_string).collect();
        let columns = names
            .iter()
            .map(|n| self.read_column(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EventBatch::new(names, columns).expect("aligned baskets"))
    }

    /// Stream the selected branches of the events passing `predicate`.
    ///
    /// For each row-aligned basket, the branches the predicate references are
    /// read first and the row mask computed. Selected branches are then read
    /// only if at least one row passes. Branches that are neither selected
    /// nor referenced are never read.
    pub fn read_events<N: AsRef<str>>(
        &self,
        selection: &[N],
        predicate: Option<&Expr>,
        batch_rows: usize,
    ) -> Result<EventReader<'_, S>, FormatError> {
        let mut selected = Vec::new();
        for name in selection {
            let name = name.as_ref();
            let index = self
                .schema
                .branches
                .iter()
                .position(|b| b.name == name)
                .ok_or_else(|| FormatError::UnknownBranch(name.to_string()))?;
            if !selected.contains(&index) {
                selected.push(index);
            }
        }
        let predicate = match predicate {
            Some(expr) => {
                pipeline::check_predicate(expr, |name| self.schema.branch_type(name))?;
                let fields = expr
                    .fields()
                    .into_iter()
                    .map(|f| {
                        self.schema
                            .branches
                            .iter()
                            .position(|b| b.name == f)
                            .expect("type check resolved every field")
                    })
                    .collect();
                Some((expr.clone(), fields))
            }
            None => None,
        };
        let names = selected
            .iter()
            .map(|&i| self.schema.branches[i].name.clone())
            .collect();
        Ok(EventReader {
            reader: self,
            selected,
            names,
            predicate,
            batch_rows: batch_rows.max(1),
            next_basket: 0,
            current: None,
            cursor: 0,
            failed: false,
        })
    }

    /// Selected branches of basket `index`, filtered by the predicate.
    fn load_basket(
        &self,
        index: usize,
        selected: &[usize],
        names: &[String],
        predicate: Option<&(Expr, Vec<usize>)>,
    ) -> Result<EventBatch, FormatError> {
        let branches = &self.schema.branches;
        let mut cache: Vec<(usize, ColumnData)> = Vec::new();
        let mut mask = None;
        if let Some((expr, fields)) = predicate {
            for &b in fields {
                cache.push((b, self.read_basket(&branches[b], index)?));
            }
            let view = EventBatch::new(
                fields.iter().map(|&b| branches[b].name.clone()).collect(),
                cache.iter().map(|(_, c)| c.clone()).collect(),
            )
            .expect("aligned baskets");
            let bits = self.cpu.time(|| {
                view.rows()
                    .map(|row| pipeline::eval_predicate(expr, &row))
                    .collect::<Result<Vec<bool>, _>>()
            })?;
            if !bits.iter().any(|&b| b) {
                return Ok(EventBatch::empty(
                    &selected.iter().map(|&b| branches[b].decl()).collect::<Vec<_>>(),
                ));
            }
            mask = Some(bits);
        }
        let mut columns = Vec::with_capacity(selected.len());
        for &b in selected {
            let column = match cache.iter().position(|(c, _)| *c == b) {
                Some(pos) => cache[pos].1.clone(),
                None => self.read_basket(&branches[b], index)?,
            };
            columns.push(match &mask {
                Some(mask) => self.cpu.time(|| column.filter(mask)),
                None => column,
            });
        }
        if selected.is_empty() {
            let rows = match &mask {
                Some(mask) => mask.iter().filter(|&&m| m).count(),
                None => self.schema.basket_events()[index] as usize,
            };
            return Ok(EventBatch::rows_only(rows));
        }
        Ok(EventBatch::new(names.to_vec(), columns).expect("aligned baskets"))
    }
}

/// Iterator over [`EventBatch`]es produced by [`NtfReader::read_events`].
pub struct EventReader<'r, S> {
    reader: &'r NtfReader<S>,
    selected: Vec<usize>,
    names: Vec<String>,
    predicate: Option<(Expr, Vec<usize>)>,
    batch_rows: usize,
    next_basket: usize,
    current: Option<EventBatch>,
    cursor: usize,
    failed: bool,
}

impl<S: ByteSource> EventReader<'_, S> {
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl<S: ByteSource> Iterator for EventReader<'_, S> {
    type Item = Result<EventBatch, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let decls: Vec<_> = self
            .selected
            .iter()
            .map(|&b| self.reader.schema.branches[b].decl())
            .collect();
        let mut out = EventBatch::empty(&decls);
        while out.row_count() < self.batch_rows {
            let exhausted = self
                .current
                .as_ref()
                .is_none_or(|c| self.cursor >= c.row_count());
            if exhausted {
                if self.next_basket >= self.reader.schema.basket_count() {
                    break;
                }
                let index = self.next_basket;
                self.next_basket += 1;
                match self.reader.load_basket(
                    index,
                    &self.selected,
                    &self.names,
                    self.predicate.as_ref(),
                ) {
                    Ok(batch) => {
                        self.current = Some(batch);
                        self.cursor = 0;
                    }
                    Err(e) => {
                        self.failed = true;
                        return Some(Err(e));
                    }
                }
                continue;
            }
            let current = self.current.as_ref().expect("checked above");
            let take = (self.batch_rows - out.row_count()).min(current.row_count() - self.cursor);
            out.extend_range(current, self.cursor, self.cursor + take);
            self.cursor += take;
        }
        (out.row_count() > 0).then_some(Ok(out))
    }
}

use super::{BranchDecl, BranchType};
use crate::pipeline::{EventView, FieldValue};

/// One branch value of one event.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F32(f32),
    F64(f64),
    I32(i32),
    I64(i64),
    VarF32(Vec<f32>),
}

impl Value {
    pub fn branch_type(&self) -> BranchType {
        match self {
            Value::F32(_) => BranchType::F32,
            Value::F64(_) => BranchType::F64,
            Value::I32(_) => BranchType::I32,
            Value::I64(_) => BranchType::I64,
            Value::VarF32(_) => BranchType::VarF32,
        }
    }

    /// Equality on bit patterns, so NaN payloads and signed zeros count.
    pub fn bit_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::F32(a), Value::F32(b)) => a.to_bits() == b.to_bits(),
            (Value::F64(a), Value::F64(b)) => a.to_bits() == b.to_bits(),
            (Value::I32(a), Value::I32(b)) => a == b,
            (Value::I64(a), Value::I64(b)) => a == b,
            (Value::VarF32(a), Value::VarF32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// Values of one branch over a run of events.
///
/// `VarF32` columns keep `offsets` with one more entry than there are rows;
/// row `i` owns `values[offsets[i]..offsets[i + 1]]` and `offsets[0] == 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    VarF32 { offsets: Vec<u32>, values: Vec<f32> },
}

impl ColumnData {
    pub fn empty(branch_type: BranchType) -> Self {
        match branch_type {
            BranchType::F32 => ColumnData::F32(Vec::new()),
            BranchType::F64 => ColumnData::F64(Vec::new()),
            BranchType::I32 => ColumnData::I32(Vec::new()),
            BranchType::I64 => ColumnData::I64(Vec::new()),
            BranchType::VarF32 => ColumnData::VarF32 {
                offsets: vec![0],
                values: Vec::new(),
            },
        }
    }

    pub fn branch_type(&self) -> BranchType {
        match self {
            ColumnData::F32(_) => BranchType::F32,
            ColumnData::F64(_) => BranchType::F64,
            ColumnData::I32(_) => BranchType::I32,
            ColumnData::I64(_) => BranchType::I64,
            ColumnData::VarF32 { .. } => BranchType::VarF32,
        }
    }

    /// Number of events.
    pub fn rows(&self) -> usize {
        match self {
            ColumnData::F32(v) => v.len(),
            ColumnData::F64(v) => v.len(),
            ColumnData::I32(v) => v.len(),
            ColumnData::I64(v) => v.len(),
            ColumnData::VarF32 { offsets, .. } => offsets.len() - 1,
        }
    }

    /// Number of stored values; differs from `rows` only for `VarF32`.
    pub fn value_count(&self) -> usize {
        match self {
            ColumnData::VarF32 { values, .. } => values.len(),
            other => other.rows(),
        }
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            ColumnData::F32(v) => Value::F32(v[row]),
            ColumnData::F64(v) => Value::F64(v[row]),
            ColumnData::I32(v) => Value::I32(v[row]),
            ColumnData::I64(v) => Value::I64(v[row]),
            ColumnData::VarF32 { .. } => Value::VarF32(self.array(row).to_vec()),
        }
    }

    /// Row `row` of a `VarF32` column. Panics on other types.
    pub fn array(&self, row: usize) -> &[f32] {
        match self {
            ColumnData::VarF32 { offsets, values } => {
                &values[offsets[row] as usize..offsets[row + 1] as usize]
            }
            other => panic!("array access on {} column", other.branch_type()),
        }
    }

    /// Numeric view of a scalar row; `None` for arrays.
    pub fn scalar(&self, row: usize) -> Option<f64> {
        match self {
            ColumnData::F32(v) => Some(f64::from(v[row])),
            ColumnData::F64(v) => Some(v[row]),
            ColumnData::I32(v) => Some(f64::from(v[row])),
            // i64 beyond 2^53 loses precision in expressions
            ColumnData::I64(v) => Some(v[row] as f64),
            ColumnData::VarF32 { .. } => None,
        }
    }

    /// Append one value; returns the offending type on mismatch.
    pub fn push(&mut self, value: &Value) -> Result<(), BranchType> {
        match (self, value) {
            (ColumnData::F32(v), Value::F32(x)) => v.push(*x),
            (ColumnData::F64(v), Value::F64(x)) => v.push(*x),
            (ColumnData::I32(v), Value::I32(x)) => v.push(*x),
            (ColumnData::I64(v), Value::I64(x)) => v.push(*x),
            (ColumnData::VarF32 { offsets, values }, Value::VarF32(xs)) => {
                values.extend_from_slice(xs);
                offsets.push(values.len() as u32);
            }
            (_, other) => return Err(other.branch_type()),
        }
        Ok(())
    }

    /// Append rows `start..end` of `other`, which must have the same type.
    pub fn extend_range(&mut self, other: &ColumnData, start: usize, end: usize) {
        match (self, other) {
            (ColumnData::F32(a), ColumnData::F32(b)) => a.extend_from_slice(&b[start..end]),
            (ColumnData::F64(a), ColumnData::F64(b)) => a.extend_from_slice(&b[start..end]),
            (ColumnData::I32(a), ColumnData::I32(b)) => a.extend_from_slice(&b[start..end]),
            (ColumnData::I64(a), ColumnData::I64(b)) => a.extend_from_slice(&b[start..end]),
            (
                ColumnData::VarF32 { offsets, values },
                ColumnData::VarF32 {
                    offsets: src_off,
                    values: src_val,
                },
            ) => {
                let lo = src_off[start] as usize;
                let hi = src_off[end] as usize;
                let base = values.len() as u32;
                values.extend_from_slice(&src_val[lo..hi]);
                offsets.extend(src_off[start + 1..=end].iter().map(|o| o - lo as u32 + base));
            }
            (a, b) => panic!(
                "extend_range across column types {} and {}",
                a.branch_type(),
                b.branch_type()
            ),
        }
    }

    /// Rows whose mask entry is true, in order.
    pub fn filter(&self, mask: &[bool]) -> ColumnData {
        debug_assert_eq!(mask.len(), self.rows());
        fn keep<T: Copy>(v: &[T], mask: &[bool]) -> Vec<T> {
            v.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| *x).collect()
        }
        match self {
            ColumnData::F32(v) => ColumnData::F32(keep(v, mask)),
            ColumnData::F64(v) => ColumnData::F64(keep(v, mask)),
            ColumnData::I32(v) => ColumnData::I32(keep(v, mask)),
            ColumnData::I64(v) => ColumnData::I64(keep(v, mask)),
            ColumnData::VarF32 { .. } => {
                let mut out = ColumnData::empty(BranchType::VarF32);
                for (row, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    out.extend_range(self, row, row + 1);
                }
                out
            }
        }
    }

    /// Equality on bit patterns of every stored value.
    pub fn bit_eq(&self, other: &ColumnData) -> bool {
        fn bits32(v: &[f32]) -> impl Iterator<Item = u32> + '_ {
            v.iter().map(|x| x.to_bits())
        }
        match (self, other) {
            (ColumnData::F32(a), ColumnData::F32(b)) => bits32(a).eq(bits32(b)),
            (ColumnData::F64(a), ColumnData::F64(b)) => {
                a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
            }
            (ColumnData::I32(a), ColumnData::I32(b)) => a == b,
            (ColumnData::I64(a), ColumnData::I64(b)) => a == b,
            (
                ColumnData::VarF32 { offsets: oa, values: va },
                ColumnData::VarF32 { offsets: ob, values: vb },
            ) => oa == ob && bits32(va).eq(bits32(vb)),
            _ => false,
        }
    }
}

/// A columnar slice of events holding a subset of a file's branches.
#[derive(Debug, Clone, PartialEq)]
pub struct EventBatch {
    names: Vec<String>,
    columns: Vec<ColumnData>,
    row_count: usize,
}

impl EventBatch {
    /// Build a batch; every column must have the same number of rows.
    pub fn new(names: Vec<String>, columns: Vec<ColumnData>) -> Result<Self, String> {
        if names.len() != columns.len() {
            return Err(format!("{} names for {} columns", names.len(), columns.len()));
        }
        let row_count = columns.first().map_or(0, ColumnData::rows);
        if let Some((name, col)) = names.iter().zip(&columns).find(|(_, c)| c.rows() != row_count) {
            return Err(format!(
                "column `{name}` has {} rows, expected {row_count}",
                col.rows()
            ));
        }
        Ok(Self {
            names,
            columns,
            row_count,
        })
    }

    /// Zero-row batch with the given branches.
    pub fn empty(decls: &[BranchDecl]) -> Self {
        Self {
            names: decls.iter().map(|d| d.name.clone()).collect(),
            columns: decls.iter().map(|d| ColumnData::empty(d.branch_type)).collect(),
            row_count: 0,
        }
    }

    /// A batch without columns that still counts events, for selections
    /// that need no branch values.
    pub fn rows_only(row_count: usize) -> Self {
        Self {
            names: Vec::new(),
            columns: Vec::new(),
            row_count,
        }
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn is_empty(&self) -> bool {
        self.row_count == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn decls(&self) -> Vec<BranchDecl> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| BranchDecl::new(n.clone(), c.branch_type()))
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.index_of(name).map(|i| &self.columns[i])
    }

    pub fn row(&self, row: usize) -> BatchRow<'_> {
        debug_assert!(row < self.row_count);
        BatchRow { batch: self, row }
    }

    pub fn rows(&self) -> impl Iterator<Item = BatchRow<'_>> {
        (0..self.row_count).map(move |row| BatchRow { batch: self, row })
    }

    /// Values of one row in column order.
    pub fn row_values(&self, row: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.value(row)).collect()
    }

    /// Append rows `start..end` of `other`, which must have identical columns.
    pub fn extend_range(&mut self, other: &EventBatch, start: usize, end: usize) {
        debug_assert_eq!(self.names, other.names);
        for (dst, src) in self.columns.iter_mut().zip(&other.columns) {
            dst.extend_range(src, start, end);
        }
        self.row_count += end - start;
    }

    pub fn filter(&self, mask: &[bool]) -> EventBatch {
        let columns: Vec<ColumnData> = self.columns.iter().map(|c| c.filter(mask)).collect();
        let row_count = mask.iter().filter(|&&m| m).count();
        EventBatch {
            names: self.names.clone(),
            columns,
            row_count,
        }
    }

    /// Keep only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Option<EventBatch> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            columns.push(self.column(name)?.clone());
        }
        Some(EventBatch {
            names: names.to_vec(),
            columns,
            row_count: self.row_count,
        })
    }

    pub fn bit_eq(&self, other: &EventBatch) -> bool {
        self.names == other.names
            && self.row_count == other.row_count
            && self.columns.iter().zip(&other.columns).all(|(a, b)| a.bit_eq(b))
    }
}

/// One event of an [`EventBatch`], viewed by branch name.
#[derive(Debug, Clone, Copy)]
pub struct BatchRow<'a> {
    batch: &'a EventBatch,
    row: usize,
}

impl<'a> BatchRow<'a> {
    pub fn index(&self) -> usize {
        self.row
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.batch.column(name).map(|c| c.value(self.row))
    }
}

impl EventView for BatchRow<'_> {
    fn field(&self, name: &str) -> Option<FieldValue<'_>> {
        let column = self.batch.column(name)?;
        Some(match column {
            ColumnData::VarF32 { .. } => FieldValue::Array(column.array(self.row)),
            scalar => FieldValue::Scalar(scalar.scalar(self.row).expect("scalar column")),
        })
    }
}

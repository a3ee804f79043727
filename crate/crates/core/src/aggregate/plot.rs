use std::fmt::Write;

use super::{bin_edge, AggregateError, Aggregator, AggregatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Bin,
    Underflow,
    Overflow,
    Nanflow,
}

/// One row of a plot table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotRow {
    pub kind: RowKind,
    pub bin_low: f64,
    pub bin_high: f64,
    pub value: f64,
    pub entries: f64,
}

impl Aggregator {
    /// Rows `(bin_low, bin_high, value, entries)` of a root `Bin`.
    ///
    /// The `num` in-range rows come first, followed by underflow
    /// `[-inf, low)`, overflow `[high, inf)` and nanflow `[nan, nan)`
    /// trailer rows. `value` is the bin's headline figure (see
    /// [`AggregatorView::summary`](super::AggregatorView::summary)).
    pub fn to_plot_table(&self) -> Result<Vec<PlotRow>, AggregateError> {
        let AggregatorSpec::Bin { num, low, high, .. } = *self.spec() else {
            return Err(AggregateError::NotABin(self.spec().kind()));
        };
        let view = self.view();
        let mut rows: Vec<PlotRow> = (0..num)
            .map(|i| {
                let bin = view.bin(i).expect("bin in range");
                PlotRow {
                    kind: RowKind::Bin,
                    bin_low: bin_edge(num, low, high, i),
                    bin_high: bin_edge(num, low, high, i + 1),
                    value: bin.summary(),
                    entries: bin.entries(),
                }
            })
            .collect();
        let (under, over, nan) = view.flows().expect("root is a Bin");
        let trailer = |kind, bin_low, bin_high, w| PlotRow {
            kind,
            bin_low,
            bin_high,
            value: w,
            entries: w,
        };
        rows.push(trailer(RowKind::Underflow, f64::NEG_INFINITY, low, under));
        rows.push(trailer(RowKind::Overflow, high, f64::INFINITY, over));
        rows.push(trailer(RowKind::Nanflow, f64::NAN, f64::NAN, nan));
        Ok(rows)
    }
}

/// CSV with header `bin_low,bin_high,value,entries`.
///
/// Numbers use the shortest round-trip form; the out-of-range trailer rows
/// are recognisable by their `-inf`, `inf` and `NaN` edges.
pub fn plot_table_csv(rows: &[PlotRow]) -> String {
    let mut out = String::from("bin_low,bin_high,value,entries\n");
    for row in rows {
        writeln!(out, "{},{},{},{}", row.bin_low, row.bin_high, row.value, row.entries)
            .expect("write to String");
    }
    out
}

//! Mergeable aggregators.
//!
//! An [`Aggregator`] is a tree of statistics described by an
//! [`AggregatorSpec`]. Each worker fills its own aggregator event by event
//! and the partial results are combined with [`Aggregator::merge`], which
//! forms a monoid with [`Aggregator::zero`] as identity. Binned histograms
//! are a `Bin` whose sub-aggregators are `Count`s; nesting `Bin` in `Bin`
//! gives two-dimensional histograms.

mod json;
mod plot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plot::{plot_table_csv, PlotRow, RowKind};

use crate::eventfmt::BranchType;
pub use crate::pipeline::EventView;
use crate::pipeline::{check_quantity, eval_number, Expr, ExprError};

/// Shape of an aggregator tree. Quantities are numeric expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields, from = "SpecRepr")]
pub enum AggregatorSpec {
    Count,
    Sum {
        quantity: Expr,
    },
    Average {
        quantity: Expr,
    },
    Deviate {
        quantity: Expr,
    },
    /// `num` equal-width bins over `[low, high)`, each holding a `value`
    /// aggregator, plus underflow, overflow and NaN counters.
    Bin {
        num: usize,
        low: f64,
        high: f64,
        quantity: Expr,
        value: Box<AggregatorSpec>,
    },
}

// Serde does not reject unknown keys on unit variants of a tagged enum,
// so `Count` is read as an empty struct.
#[derive(Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum SpecRepr {
    Count {},
    Sum {
        quantity: Expr,
    },
    Average {
        quantity: Expr,
    },
    Deviate {
        quantity: Expr,
    },
    Bin {
        num: usize,
        low: f64,
        high: f64,
        quantity: Expr,
        value: Box<AggregatorSpec>,
    },
}

impl From<SpecRepr> for AggregatorSpec {
    fn from(r: SpecRepr) -> Self {
        match r {
            SpecRepr::Count {} => AggregatorSpec::Count,
            SpecRepr::Sum { quantity } => AggregatorSpec::Sum { quantity },
            SpecRepr::Average { quantity } => AggregatorSpec::Average { quantity },
            SpecRepr::Deviate { quantity } => AggregatorSpec::Deviate { quantity },
            SpecRepr::Bin {
                num,
                low,
                high,
                quantity,
                value,
            } => AggregatorSpec::Bin {
                num,
                low,
                high,
                quantity,
                value,
            },
        }
    }
}

impl AggregatorSpec {
    pub fn sum(quantity: Expr) -> Self {
        AggregatorSpec::Sum { quantity }
    }

    pub fn average(quantity: Expr) -> Self {
        AggregatorSpec::Average { quantity }
    }

    pub fn deviate(quantity: Expr) -> Self {
        AggregatorSpec::Deviate { quantity }
    }

    pub fn bin(num: usize, low: f64, high: f64, quantity: Expr, value: AggregatorSpec) -> Self {
        AggregatorSpec::Bin {
            num,
            low,
            high,
            quantity,
            value: Box::new(value),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AggregatorSpec::Count => "Count",
            AggregatorSpec::Sum { .. } => "Sum",
            AggregatorSpec::Average { .. } => "Average",
            AggregatorSpec::Deviate { .. } => "Deviate",
            AggregatorSpec::Bin { .. } => "Bin",
        }
    }

    pub fn validate(&self) -> Result<(), AggregateError> {
        if let AggregatorSpec::Bin {
            num,
            low,
            high,
            value,
            ..
        } = self
        {
            if *num == 0 {
                return Err(AggregateError::InvalidSpec("Bin needs num >= 1".into()));
            }
            if !low.is_finite() || !high.is_finite() {
                return Err(AggregateError::InvalidSpec(format!(
                    "Bin bounds must be finite, got [{low}, {high})"
                )));
            }
            if low >= high {
                return Err(AggregateError::InvalidSpec(format!(
                    "Bin needs low < high, got [{low}, {high})"
                )));
            }
            value.validate()?;
        }
        Ok(())
    }

    fn quantity(&self) -> Option<&Expr> {
        match self {
            AggregatorSpec::Count => None,
            AggregatorSpec::Sum { quantity }
            | AggregatorSpec::Average { quantity }
            | AggregatorSpec::Deviate { quantity }
            | AggregatorSpec::Bin { quantity, .. } => Some(quantity),
        }
    }

    /// Every field referenced by a quantity anywhere in the tree.
    pub fn fields(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut node = Some(self);
        while let Some(spec) = node {
            if let Some(q) = spec.quantity() {
                for f in q.fields() {
                    if !out.iter().any(|o| o == f) {
                        out.push(f.to_string());
                    }
                }
            }
            node = match spec {
                AggregatorSpec::Bin { value, .. } => Some(value),
                _ => None,
            };
        }
        out
    }

    /// Type-check every quantity against branch types.
    pub fn check<F>(&self, lookup: F) -> Result<(), AggregateError>
    where
        F: Fn(&str) -> Option<BranchType>,
    {
        self.validate()?;
        let mut node = Some(self);
        while let Some(spec) = node {
            if let Some(q) = spec.quantity() {
                check_quantity(q, &lookup)?;
            }
            node = match spec {
                AggregatorSpec::Bin { value, .. } => Some(value),
                _ => None,
            };
        }
        Ok(())
    }

    /// Describe the first structural difference, if any.
    pub fn difference(&self, other: &AggregatorSpec) -> Option<String> {
        use AggregatorSpec::*;
        match (self, other) {
            (Count, Count) => None,
            (Sum { quantity: a }, Sum { quantity: b })
            | (Average { quantity: a }, Average { quantity: b })
            | (Deviate { quantity: a }, Deviate { quantity: b }) => {
                (a != b).then(|| format!("quantity `{a}` vs `{b}`"))
            }
            (
                Bin {
                    num: n1,
                    low: l1,
                    high: h1,
                    quantity: q1,
                    value: v1,
                },
                Bin {
                    num: n2,
                    low: l2,
                    high: h2,
                    quantity: q2,
                    value: v2,
                },
            ) => {
                if n1 != n2 {
                    Some(format!("Bin num {n1} vs {n2}"))
                } else if l1.to_bits() != l2.to_bits() || h1.to_bits() != h2.to_bits() {
                    Some(format!("Bin bounds [{l1}, {h1}) vs [{l2}, {h2})"))
                } else if q1 != q2 {
                    Some(format!("Bin quantity `{q1}` vs `{q2}`"))
                } else {
                    v1.difference(v2).map(|d| format!("inside Bin: {d}"))
                }
            }
            (a, b) => Some(format!("{} vs {}", a.kind(), b.kind())),
        }
    }
}

/// Where a value falls in a binning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinIndex {
    Under,
    Over,
    Nan,
    Index(usize),
}

/// Bin of `x` in `num` equal bins over the half-open range `[low, high)`.
pub fn bin_index(num: usize, low: f64, high: f64, x: f64) -> BinIndex {
    if x.is_nan() {
        BinIndex::Nan
    } else if x < low {
        BinIndex::Under
    } else if x >= high {
        BinIndex::Over
    } else {
        let raw = (num as f64 * (x - low) / (high - low)).floor();
        // roundoff can land exactly on num just below `high`
        BinIndex::Index((raw as usize).min(num - 1))
    }
}

/// Lower edge of bin `i`.
pub fn bin_edge(num: usize, low: f64, high: f64, i: usize) -> f64 {
    low + (high - low) * i as f64 / num as f64
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum State {
    Count {
        entries: f64,
    },
    Sum {
        entries: f64,
        sum: f64,
    },
    Average {
        entries: f64,
        mean: f64,
    },
    Deviate {
        entries: f64,
        mean: f64,
        m2: f64,
    },
    Bin {
        entries: f64,
        values: Vec<State>,
        underflow: f64,
        overflow: f64,
        nanflow: f64,
    },
}

impl State {
    fn zero(spec: &AggregatorSpec) -> State {
        match spec {
            AggregatorSpec::Count => State::Count { entries: 0.0 },
            AggregatorSpec::Sum { .. } => State::Sum {
                entries: 0.0,
                sum: 0.0,
            },
            AggregatorSpec::Average { .. } => State::Average {
                entries: 0.0,
                mean: 0.0,
            },
            AggregatorSpec::Deviate { .. } => State::Deviate {
                entries: 0.0,
                mean: 0.0,
                m2: 0.0,
            },
            AggregatorSpec::Bin { num, value, .. } => State::Bin {
                entries: 0.0,
                values: vec![State::zero(value); *num],
                underflow: 0.0,
                overflow: 0.0,
                nanflow: 0.0,
            },
        }
    }

    fn entries(&self) -> f64 {
        match self {
            State::Count { entries }
            | State::Sum { entries, .. }
            | State::Average { entries, .. }
            | State::Deviate { entries, .. }
            | State::Bin { entries, .. } => *entries,
        }
    }

    fn fill<V: EventView + ?Sized>(
        &mut self,
        spec: &AggregatorSpec,
        event: &V,
        weight: f64,
    ) -> Result<(), ExprError> {
        match (self, spec) {
            (State::Count { entries }, _) => *entries += weight,
            (State::Sum { entries, sum }, AggregatorSpec::Sum { quantity }) => {
                let q = eval_number(quantity, event)?;
                *entries += weight;
                *sum += weight * q;
            }
            (State::Average { entries, mean }, AggregatorSpec::Average { quantity }) => {
                let q = eval_number(quantity, event)?;
                *entries += weight;
                *mean += (q - *mean) * weight / *entries;
            }
            (State::Deviate { entries, mean, m2 }, AggregatorSpec::Deviate { quantity }) => {
                let q = eval_number(quantity, event)?;
                *entries += weight;
                let delta = q - *mean;
                *mean += delta * weight / *entries;
                *m2 += weight * delta * (q - *mean);
            }
            (
                State::Bin {
                    entries,
                    values,
                    underflow,
                    overflow,
                    nanflow,
                },
                AggregatorSpec::Bin {
                    num,
                    low,
                    high,
                    quantity,
                    value,
                },
            ) => {
                let q = eval_number(quantity, event)?;
                match bin_index(*num, *low, *high, q) {
                    BinIndex::Index(i) => values[i].fill(value, event, weight)?,
                    BinIndex::Under => *underflow += weight,
                    BinIndex::Over => *overflow += weight,
                    BinIndex::Nan => *nanflow += weight,
                }
                *entries += weight;
            }
            (state, spec) => unreachable!("state {state:?} does not match spec {}", spec.kind()),
        }
        Ok(())
    }

    /// Fold `other` into `self`; both share one spec.
    fn merge(&mut self, other: &State) {
        match (self, other) {
            (State::Count { entries }, State::Count { entries: b }) => *entries += b,
            (State::Sum { entries, sum }, State::Sum { entries: nb, sum: sb }) => {
                *entries += nb;
                *sum += sb;
            }
            (State::Average { entries, mean }, State::Average { entries: nb, mean: mb }) => {
                (*entries, *mean) = combine_means(*entries, *mean, *nb, *mb);
            }
            (
                State::Deviate { entries, mean, m2 },
                State::Deviate {
                    entries: nb,
                    mean: mb,
                    m2: m2b,
                },
            ) => {
                let (na, ma) = (*entries, *mean);
                if *nb == 0.0 {
                    return;
                }
                if na == 0.0 {
                    (*entries, *mean, *m2) = (*nb, *mb, *m2b);
                    return;
                }
                let n = na + nb;
                let delta = mb - ma;
                (*entries, *mean) = combine_means(na, ma, *nb, *mb);
                *m2 += m2b + delta * delta * (na * nb / n);
            }
            (
                State::Bin {
                    entries,
                    values,
                    underflow,
                    overflow,
                    nanflow,
                },
                State::Bin {
                    entries: e2,
                    values: v2,
                    underflow: u2,
                    overflow: o2,
                    nanflow: n2,
                },
            ) => {
                *entries += e2;
                for (a, b) in values.iter_mut().zip(v2) {
                    a.merge(b);
                }
                *underflow += u2;
                *overflow += o2;
                *nanflow += n2;
            }
            (a, b) => unreachable!("merging mismatched states {a:?} and {b:?}"),
        }
    }
}

fn combine_means(na: f64, ma: f64, nb: f64, mb: f64) -> (f64, f64) {
    if nb == 0.0 {
        return (na, ma);
    }
    if na == 0.0 {
        return (nb, mb);
    }
    let n = na + nb;
    (n, ma + (mb - ma) * (nb / n))
}

/// A filled (or empty) aggregator tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregator {
    spec: AggregatorSpec,
    state: State,
}

impl Aggregator {
    /// The empty aggregator for `spec`, identity of [`merge`](Self::merge).
    pub fn zero(spec: &AggregatorSpec) -> Result<Self, AggregateError> {
        spec.validate()?;
        Ok(Self {
            state: State::zero(spec),
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &AggregatorSpec {
        &self.spec
    }

    /// Total weight filled so far.
    pub fn entries(&self) -> f64 {
        self.state.entries()
    }

    /// Add one event with `weight` (1.0 for plain counting).
    ///
    /// A zero weight leaves the state untouched. On error nothing is
    /// modified at the failing level or above it.
    pub fn fill<V: EventView + ?Sized>(&mut self, event: &V, weight: f64) -> Result<(), AggregateError> {
        if !weight.is_finite() {
            return Err(AggregateError::NonFiniteWeight(weight));
        }
        if weight < 0.0 {
            return Err(AggregateError::NegativeWeight(weight));
        }
        if weight == 0.0 {
            return Ok(());
        }
        self.state.fill(&self.spec, event, weight)?;
        Ok(())
    }

    /// Combine two aggregators with identical specs.
    pub fn merge(&self, other: &Aggregator) -> Result<Aggregator, AggregateError> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    /// In-place form of [`merge`](Self::merge).
    pub fn merge_in(&mut self, other: &Aggregator) -> Result<(), AggregateError> {
        if let Some(diff) = self.spec.difference(&other.spec) {
            return Err(AggregateError::SpecMismatch(diff));
        }
        self.state.merge(&other.state);
        Ok(())
    }

    /// A read-only view of the root, for inspecting filled values.
    pub fn view(&self) -> AggregatorView<'_> {
        AggregatorView {
            spec: &self.spec,
            state: &self.state,
        }
    }

    pub(crate) fn from_parts(spec: AggregatorSpec, state: State) -> Self {
        Self { spec, state }
    }

    pub(crate) fn state(&self) -> &State {
        &self.state
    }

    /// Equality including bit patterns of every float.
    pub fn bit_eq(&self, other: &Aggregator) -> bool {
        self.spec.difference(&other.spec).is_none() && state_bits(&self.state) == state_bits(&other.state)
    }
}

fn state_bits(state: &State) -> Vec<u64> {
    let mut out = Vec::new();
    fn walk(s: &State, out: &mut Vec<u64>) {
        match s {
            State::Count { entries } => out.push(entries.to_bits()),
            State::Sum { entries, sum } => out.extend([entries.to_bits(), sum.to_bits()]),
            State::Average { entries, mean } => out.extend([entries.to_bits(), mean.to_bits()]),
            State::Deviate { entries, mean, m2 } => {
                out.extend([entries.to_bits(), mean.to_bits(), m2.to_bits()])
            }
            State::Bin {
                entries,
                values,
                underflow,
                overflow,
                nanflow,
            } => {
                out.push(entries.to_bits());
                values.iter().for_each(|v| walk(v, out));
                out.extend([underflow.to_bits(), overflow.to_bits(), nanflow.to_bits()]);
            }
        }
    }
    walk(state, &mut out);
    out
}

/// Borrowed node of an aggregator tree.
#[derive(Debug, Clone, Copy)]
pub struct AggregatorView<'a> {
    spec: &'a AggregatorSpec,
    state: &'a State,
}

impl<'a> AggregatorView<'a> {
    pub fn spec(&self) -> &'a AggregatorSpec {
        self.spec
    }

    pub fn entries(&self) -> f64 {
        self.state.entries()
    }

    pub fn sum(&self) -> Option<f64> {
        match self.state {
            State::Sum { sum, .. } => Some(*sum),
            _ => None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self.state {
            State::Average { mean, .. } | State::Deviate { mean, .. } => Some(*mean),
            _ => None,
        }
    }

    /// Sum of squared residuals of a `Deviate`.
    pub fn m2(&self) -> Option<f64> {
        match self.state {
            State::Deviate { m2, .. } => Some(*m2),
            _ => None,
        }
    }

    /// Population variance `m2 / entries` of a `Deviate`.
    pub fn variance(&self) -> Option<f64> {
        match self.state {
            State::Deviate { m2, entries, .. } if *entries > 0.0 => Some(m2 / entries),
            _ => None,
        }
    }

    /// Sub-aggregator `i` of a `Bin`.
    pub fn bin(&self, i: usize) -> Option<AggregatorView<'a>> {
        match (self.spec, self.state) {
            (AggregatorSpec::Bin { value, .. }, State::Bin { values, .. }) => {
                values.get(i).map(|state| AggregatorView { spec: value, state })
            }
            _ => None,
        }
    }

    /// (underflow, overflow, nanflow) weights of a `Bin`.
    pub fn flows(&self) -> Option<(f64, f64, f64)> {
        match self.state {
            State::Bin {
                underflow,
                overflow,
                nanflow,
                ..
            } => Some((*underflow, *overflow, *nanflow)),
            _ => None,
        }
    }

    /// Headline number of this node: entries of a count or bin, the sum of
    /// a `Sum`, the mean of an `Average` or `Deviate`.
    pub fn summary(&self) -> f64 {
        match self.state {
            State::Count { entries } | State::Bin { entries, .. } => *entries,
            State::Sum { sum, .. } => *sum,
            State::Average { mean, .. } | State::Deviate { mean, .. } => *mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("invalid aggregator spec: {0}")]
    InvalidSpec(String),
    #[error("weight must not be negative, got {0}")]
    NegativeWeight(f64),
    #[error("weight must be finite, got {0}")]
    NonFiniteWeight(f64),
    #[error("aggregator specs differ: {0}")]
    SpecMismatch(String),
    #[error("malformed aggregator JSON: {0}")]
    Json(String),
    #[error("unknown aggregator kind `{0}`")]
    UnknownKind(String),
    #[error("plot tables need a Bin at the root, got {0}")]
    NotABin(&'static str),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[cfg(test)]
mod tests;

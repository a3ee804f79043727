//! JSON form of filled aggregators.
//!
//! ```json
//! {"type":"Count","entries":5.0}
//! {"type":"Sum","quantity":"pt","entries":2.0,"sum":7.5}
//! {"type":"Bin","num":2,"low":0.0,"high":2.0,"quantity":"x","entries":3.0,
//!  "values":[{"type":"Count","entries":1.0},{"type":"Count","entries":2.0}],
//!  "underflow":{"type":"Count","entries":0.0},
//!  "overflow":{"type":"Count","entries":0.0},
//!  "nanflow":{"type":"Count","entries":0.0}}
//! ```
//!
//! Finite numbers are written in shortest round-trip form; non-finite ones
//! as the strings `"nan"`, `"inf"` and `"-inf"`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AggregateError, Aggregator, AggregatorSpec, State};
use crate::pipeline::Expr;

const KINDS: [&str; 5] = ["Count", "Sum", "Average", "Deviate", "Bin"];

mod float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrText {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match NumOrText::deserialize(d)? {
            NumOrText::Num(x) => Ok(x),
            NumOrText::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("`{other}` is not a number"))),
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum Repr {
    Count {
        #[serde(with = "float")]
        entries: f64,
    },
    Sum {
        quantity: Expr,
        #[serde(with = "float")]
        entries: f64,
        #[serde(with = "float")]
        sum: f64,
    },
    Average {
        quantity: Expr,
        #[serde(with = "float")]
        entries: f64,
        #[serde(with = "float")]
        mean: f64,
    },
    Deviate {
        quantity: Expr,
        #[serde(with = "float")]
        entries: f64,
        #[serde(with = "float")]
        mean: f64,
        #[serde(with = "float")]
        m2: f64,
    },
    Bin {
        num: usize,
        #[serde(with = "float")]
        low: f64,
        #[serde(with = "float")]
        high: f64,
        quantity: Expr,
        #[serde(with = "float")]
        entries: f64,
        values: Vec<Repr>,
        underflow: Box<Repr>,
        overflow: Box<Repr>,
        nanflow: Box<Repr>,
    },
}

fn count(entries: f64) -> Box<Repr> {
    Box::new(Repr::Count { entries })
}

fn to_repr(spec: &AggregatorSpec, state: &State) -> Repr {
    match (spec, state) {
        (AggregatorSpec::Count, State::Count { entries }) => Repr::Count { entries: *entries },
        (AggregatorSpec::Sum { quantity }, State::Sum { entries, sum }) => Repr::Sum {
            quantity: quantity.clone(),
            entries: *entries,
            sum: *sum,
        },
        (AggregatorSpec::Average { quantity }, State::Average { entries, mean }) => Repr::Average {
            quantity: quantity.clone(),
            entries: *entries,
            mean: *mean,
        },
        (AggregatorSpec::Deviate { quantity }, State::Deviate { entries, mean, m2 }) => Repr::Deviate {
            quantity: quantity.clone(),
            entries: *entries,
            mean: *mean,
            m2: *m2,
        },
        (
            AggregatorSpec::Bin {
                num,
                low,
                high,
                quantity,
                value,
            },
            State::Bin {
                entries,
                values,
                underflow,
                overflow,
                nanflow,
            },
        ) => Repr::Bin {
            num: *num,
            low: *low,
            high: *high,
            quantity: quantity.clone(),
            entries: *entries,
            values: values.iter().map(|v| to_repr(value, v)).collect(),
            underflow: count(*underflow),
            overflow: count(*overflow),
            nanflow: count(*nanflow),
        },
        (spec, state) => unreachable!("state {state:?} does not match spec {}", spec.kind()),
    }
}

fn flow(repr: Repr, name: &str) -> Result<f64, AggregateError> {
    match repr {
        Repr::Count { entries } => Ok(entries),
        _ => Err(AggregateError::Json(format!("Bin {name} must be a Count"))),
    }
}

fn from_repr(repr: Repr) -> Result<(AggregatorSpec, State), AggregateError> {
    Ok(match repr {
        Repr::Count { entries } => (AggregatorSpec::Count, State::Count { entries }),
        Repr::Sum { quantity, entries, sum } => (AggregatorSpec::Sum { quantity }, State::Sum { entries, sum }),
        Repr::Average {
            quantity,
            entries,
            mean,
        } => (
            AggregatorSpec::Average { quantity },
            State::Average { entries, mean },
        ),
        Repr::Deviate {
            quantity,
            entries,
            mean,
            m2,
        } => (
            AggregatorSpec::Deviate { quantity },
            State::Deviate { entries, mean, m2 },
        ),
        Repr::Bin {
            num,
            low,
            high,
            quantity,
            entries,
            values,
            underflow,
            overflow,
            nanflow,
        } => {
            if values.len() != num {
                return Err(AggregateError::Json(format!(
                    "Bin declares num {num} but holds {} values",
                    values.len()
                )));
            }
            let mut value_spec: Option<AggregatorSpec> = None;
            let mut states = Vec::with_capacity(num);
            for v in values {
                let (spec, state) = from_repr(v)?;
                match &value_spec {
                    None => value_spec = Some(spec),
                    Some(first) => {
                        if let Some(diff) = first.difference(&spec) {
                            return Err(AggregateError::SpecMismatch(format!(
                                "Bin values disagree: {diff}"
                            )));
                        }
                    }
                }
                states.push(state);
            }
            let value = value_spec.ok_or_else(|| AggregateError::InvalidSpec("Bin needs num >= 1".into()))?;
            let spec = AggregatorSpec::bin(num, low, high, quantity, value);
            spec.validate()?;
            let state = State::Bin {
                entries,
                values: states,
                underflow: flow(*underflow, "underflow")?,
                overflow: flow(*overflow, "overflow")?,
                nanflow: flow(*nanflow, "nanflow")?,
            };
            (spec, state)
        }
    })
}

fn find_unknown_kind(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::Object(map) => {
            if let Some(serde_json::Value::String(kind)) = map.get("type") {
                if !KINDS.contains(&kind.as_str()) {
                    return Some(kind.clone());
                }
            }
            map.values().find_map(find_unknown_kind)
        }
        serde_json::Value::Array(items) => items.iter().find_map(find_unknown_kind),
        _ => None,
    }
}

impl Aggregator {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("aggregator serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregator serializes")
    }

    pub fn from_json(text: &str) -> Result<Aggregator, AggregateError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| AggregateError::Json(e.to_string()))?;
        if let Some(kind) = find_unknown_kind(&value) {
            return Err(AggregateError::UnknownKind(kind));
        }
        let repr: Repr = serde_json::from_value(value).map_err(|e| AggregateError::Json(e.to_string()))?;
        let (spec, state) = from_repr(repr)?;
        Ok(Aggregator::from_parts(spec, state))
    }
}

impl Serialize for Aggregator {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        to_repr(self.spec(), self.state()).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Aggregator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = Repr::deserialize(deserializer)?;
        let (spec, state) = from_repr(repr).map_err(serde::de::Error::custom)?;
        Ok(Aggregator::from_parts(spec, state))
    }
}

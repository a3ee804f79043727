use proptest::prelude::*;

use super::*;
use crate::pipeline::{parse_expr, MapEvent};

fn x() -> Expr {
    parse_expr("x").unwrap()
}

fn ev(v: f64) -> MapEvent {
    MapEvent::new().scalar("x", v)
}

fn filled(spec: &AggregatorSpec, values: &[f64]) -> Aggregator {
    let mut agg = Aggregator::zero(spec).unwrap();
    for &v in values {
        agg.fill(&ev(v), 1.0).unwrap();
    }
    agg
}

#[test]
fn zero_states() {
    let count = Aggregator::zero(&AggregatorSpec::Count).unwrap();
    assert_eq!(count.entries(), 0.0);

    let bin = Aggregator::zero(&AggregatorSpec::bin(3, 0.0, 3.0, x(), AggregatorSpec::Count)).unwrap();
    let view = bin.view();
    assert!((0..3).all(|i| view.bin(i).unwrap().entries() == 0.0));
    assert!(view.bin(3).is_none());
    assert_eq!(view.flows(), Some((0.0, 0.0, 0.0)));
}

#[test]
fn invalid_specs_rejected() {
    for spec in [
        AggregatorSpec::bin(0, 0.0, 1.0, x(), AggregatorSpec::Count),
        AggregatorSpec::bin(2, 1.0, 1.0, x(), AggregatorSpec::Count),
        AggregatorSpec::bin(2, 2.0, 1.0, x(), AggregatorSpec::Count),
        AggregatorSpec::bin(2, f64::NEG_INFINITY, 1.0, x(), AggregatorSpec::Count),
        AggregatorSpec::bin(2, 0.0, f64::NAN, x(), AggregatorSpec::Count),
        AggregatorSpec::bin(2, 0.0, 1.0, x(), AggregatorSpec::bin(0, 0.0, 1.0, x(), AggregatorSpec::Count)),
    ] {
        assert!(matches!(Aggregator::zero(&spec), Err(AggregateError::InvalidSpec(_))), "{spec:?}");
    }
}

#[test]
fn average_of_two_and_four() {
    let agg = filled(&AggregatorSpec::average(x()), &[2.0, 4.0]);
    assert_eq!(agg.entries(), 2.0);
    assert_eq!(agg.view().mean(), Some(3.0));
}

#[test]
fn bin_routing() {
    let spec = AggregatorSpec::bin(4, 0.0, 4.0, x(), AggregatorSpec::Count);
    let agg = filled(&spec, &[2.5]);
    let counts: Vec<f64> = (0..4).map(|i| agg.view().bin(i).unwrap().entries()).collect();
    assert_eq!(counts, [0.0, 0.0, 1.0, 0.0]);

    let agg = filled(&spec, &[f64::NAN]);
    assert_eq!(agg.view().flows(), Some((0.0, 0.0, 1.0)));
    assert!((0..4).all(|i| agg.view().bin(i).unwrap().entries() == 0.0));
    assert_eq!(agg.entries(), 1.0);
}

#[test]
fn bin_index_examples() {
    assert_eq!(bin_index(10, 0.0, 1.0, 0.35), BinIndex::Index(3));
    assert_eq!(bin_index(4, 0.0, 4.0, 4.0), BinIndex::Over);
    assert_eq!(bin_index(4, 0.0, 4.0, -0.0001), BinIndex::Under);
    assert_eq!(bin_index(4, 0.0, 4.0, 0.0), BinIndex::Index(0));
    assert_eq!(bin_index(4, 0.0, 4.0, f64::NAN), BinIndex::Nan);
    assert_eq!(bin_index(4, 0.0, 4.0, f64::INFINITY), BinIndex::Over);
    assert_eq!(bin_index(4, 0.0, 4.0, f64::NEG_INFINITY), BinIndex::Under);
    // just below `high`: the quotient rounds up to `num` and is clamped
    let below = 1.0f64 - f64::EPSILON / 2.0;
    assert_eq!(bin_index(3, 0.0, 1.0, below), BinIndex::Index(2));
}

/// Sum of squared residuals computed directly with two passes.
fn two_pass(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, values.iter().map(|v| (v - mean).powi(2)).sum())
}

#[test]
fn deviate_of_one_two_three() {
    let agg = filled(&AggregatorSpec::deviate(x()), &[1.0, 2.0, 3.0]);
    let (mean, m2) = two_pass(&[1.0, 2.0, 3.0]);
    assert_eq!((mean, m2), (2.0, 2.0));
    assert_eq!(agg.view().mean(), Some(2.0));
    assert_eq!(agg.view().m2(), Some(2.0));
    assert!((agg.view().variance().unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn merged_deviate_matches_sequential_fill() {
    let spec = AggregatorSpec::deviate(x());
    let merged = filled(&spec, &[1.0, 2.0]).merge(&filled(&spec, &[3.0])).unwrap();
    let sequential = filled(&spec, &[1.0, 2.0, 3.0]);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    assert_eq!(merged.entries(), 3.0);
    assert!(rel(merged.view().mean().unwrap(), sequential.view().mean().unwrap()) <= 1e-12);
    assert!(rel(merged.view().m2().unwrap(), sequential.view().m2().unwrap()) <= 1e-12);
}

#[test]
fn zero_weight_is_a_no_op() {
    let spec = AggregatorSpec::bin(2, 0.0, 2.0, x(), AggregatorSpec::average(x()));
    let mut agg = filled(&spec, &[0.5]);
    let before = agg.clone();
    agg.fill(&ev(1.5), 0.0).unwrap();
    assert!(agg.bit_eq(&before));
}

#[test]
fn weight_validation() {
    let mut agg = Aggregator::zero(&AggregatorSpec::Count).unwrap();
    assert_eq!(agg.fill(&ev(1.0), -1.0), Err(AggregateError::NegativeWeight(-1.0)));
    assert!(matches!(agg.fill(&ev(1.0), f64::NAN), Err(AggregateError::NonFiniteWeight(_))));
    assert!(matches!(
        agg.fill(&ev(1.0), f64::INFINITY),
        Err(AggregateError::NonFiniteWeight(_))
    ));
    assert_eq!(agg.entries(), 0.0);
}

#[test]
fn missing_field_leaves_state_untouched() {
    let spec = AggregatorSpec::bin(2, 0.0, 2.0, x(), AggregatorSpec::sum(parse_expr("y").unwrap()));
    let mut agg = Aggregator::zero(&spec).unwrap();
    let err = agg.fill(&ev(0.5), 1.0).unwrap_err();
    assert_eq!(err, AggregateError::Expr(ExprError::MissingField("y".into())));
    assert!(agg.bit_eq(&Aggregator::zero(&spec).unwrap()));
}

#[test]
fn array_where_scalar_needed() {
    let mut agg = Aggregator::zero(&AggregatorSpec::sum(x())).unwrap();
    let event = MapEvent::new().array("x", vec![1.0]);
    assert!(matches!(agg.fill(&event, 1.0), Err(AggregateError::Expr(ExprError::Type(_)))));
}

#[test]
fn spec_mismatch_names_the_difference() {
    let a = Aggregator::zero(&AggregatorSpec::bin(4, 0.0, 1.0, x(), AggregatorSpec::Count)).unwrap();
    let b = Aggregator::zero(&AggregatorSpec::bin(5, 0.0, 1.0, x(), AggregatorSpec::Count)).unwrap();
    match a.merge(&b) {
        Err(AggregateError::SpecMismatch(msg)) => assert!(msg.contains("num 4 vs 5"), "{msg}"),
        other => panic!("expected mismatch, got {other:?}"),
    }
    let c = Aggregator::zero(&AggregatorSpec::Count).unwrap();
    assert!(matches!(a.merge(&c), Err(AggregateError::SpecMismatch(_))));
}

#[test]
fn count_json_literal() {
    let mut agg = Aggregator::zero(&AggregatorSpec::Count).unwrap();
    for _ in 0..5 {
        agg.fill(&ev(0.0), 1.0).unwrap();
    }
    let json = agg.to_json();
    assert_eq!(json, r#"{"type":"Count","entries":5.0}"#);
    assert!(Aggregator::from_json(&json).unwrap().bit_eq(&agg));
}

#[test]
fn bin_json_keeps_nanflow() {
    let spec = AggregatorSpec::bin(3, -1.0, 1.0, x(), AggregatorSpec::deviate(x()));
    let agg = filled(&spec, &[f64::NAN, 0.25, -3.0, 7.0, 0.5]);
    let back = Aggregator::from_json(&agg.to_json()).unwrap();
    assert_eq!(back.view().flows(), Some((1.0, 1.0, 1.0)));
    assert!(back.bit_eq(&agg));
}

#[test]
fn json_non_finite_values() {
    let agg = filled(&AggregatorSpec::sum(x()), &[f64::INFINITY]);
    let json = agg.to_json();
    assert!(json.contains(r#""sum":"inf""#), "{json}");
    assert!(Aggregator::from_json(&json).unwrap().bit_eq(&agg));
}

#[test]
fn json_errors() {
    assert!(matches!(Aggregator::from_json("{"), Err(AggregateError::Json(_))));
    assert_eq!(
        Aggregator::from_json(r#"{"type":"Fraction","entries":1.0}"#).unwrap_err(),
        AggregateError::UnknownKind("Fraction".into())
    );
    assert!(matches!(
        Aggregator::from_json(r#"{"type":"Count","entries":1.0,"extra":2}"#),
        Err(AggregateError::Json(_))
    ));
    let two_bins = r#"{"type":"Bin","num":2,"low":0.0,"high":1.0,"quantity":"x","entries":0.0,
        "values":[{"type":"Count","entries":0.0}],
        "underflow":{"type":"Count","entries":0.0},"overflow":{"type":"Count","entries":0.0},
        "nanflow":{"type":"Count","entries":0.0}}"#;
    assert!(matches!(Aggregator::from_json(two_bins), Err(AggregateError::Json(_))));
    let mixed = r#"{"type":"Bin","num":2,"low":0.0,"high":1.0,"quantity":"x","entries":0.0,
        "values":[{"type":"Count","entries":0.0},{"type":"Sum","quantity":"x","entries":0.0,"sum":0.0}],
        "underflow":{"type":"Count","entries":0.0},"overflow":{"type":"Count","entries":0.0},
        "nanflow":{"type":"Count","entries":0.0}}"#;
    assert!(matches!(Aggregator::from_json(mixed), Err(AggregateError::SpecMismatch(_))));
}

#[test]
fn spec_json_shape() {
    let spec: AggregatorSpec = serde_json::from_str(
        r#"{"type":"Bin","num":10,"low":0,"high":100,"quantity":"pt","value":{"type":"Count"}}"#,
    )
    .unwrap();
    assert_eq!(spec, AggregatorSpec::bin(10, 0.0, 100.0, parse_expr("pt").unwrap(), AggregatorSpec::Count));
    assert!(serde_json::from_str::<AggregatorSpec>(r#"{"type":"Sum","quantity":"pt >"}"#).is_err());
}

#[test]
fn plot_table_rows() {
    let spec = AggregatorSpec::bin(2, 0.0, 2.0, x(), AggregatorSpec::Count);
    let rows = filled(&spec, &[0.5, 1.5, 1.5]).to_plot_table().unwrap();
    let triples: Vec<(f64, f64, f64)> = rows[..2].iter().map(|r| (r.bin_low, r.bin_high, r.value)).collect();
    assert_eq!(triples, [(0.0, 1.0, 1.0), (1.0, 2.0, 2.0)]);
    assert_eq!(rows.len(), 5);
    assert_eq!(
        plot_table_csv(&rows),
        "bin_low,bin_high,value,entries\n0,1,1,1\n1,2,2,2\n-inf,0,0,0\n2,inf,0,0\nNaN,NaN,0,0\n"
    );

    let empty = Aggregator::zero(&AggregatorSpec::bin(3, 0.0, 1.0, x(), AggregatorSpec::Count))
        .unwrap()
        .to_plot_table()
        .unwrap();
    assert!(empty[..3].iter().all(|r| r.value == 0.0 && r.entries == 0.0 && r.kind == RowKind::Bin));

    let nan_only = filled(&AggregatorSpec::bin(3, 0.0, 1.0, x(), AggregatorSpec::Count), &[f64::NAN; 4])
        .to_plot_table()
        .unwrap();
    assert!(nan_only[..3].iter().all(|r| r.entries == 0.0));
    assert_eq!(nan_only[5].kind, RowKind::Nanflow);
    assert_eq!(nan_only[5].entries, 4.0);

    assert_eq!(
        Aggregator::zero(&AggregatorSpec::Count).unwrap().to_plot_table(),
        Err(AggregateError::NotABin("Count"))
    );
}

#[test]
fn plot_value_uses_sub_summary() {
    let spec = AggregatorSpec::bin(1, 0.0, 10.0, x(), AggregatorSpec::average(x()));
    let rows = filled(&spec, &[2.0, 4.0]).to_plot_table().unwrap();
    assert_eq!((rows[0].value, rows[0].entries), (3.0, 2.0));
}

fn brute_force_bin(num: usize, low: f64, high: f64, x: f64) -> BinIndex {
    if x.is_nan() {
        return BinIndex::Nan;
    }
    if x < low {
        return BinIndex::Under;
    }
    if x >= high {
        return BinIndex::Over;
    }
    let mut found = 0;
    for i in 0..num {
        if low + (high - low) * i as f64 / num as f64 <= x {
            found = i;
        }
    }
    BinIndex::Index(found)
}

proptest! {
    #[test]
    fn bin_index_matches_edge_scan(
        num in 1usize..50,
        low in -100.0f64..100.0,
        width in 0.01f64..100.0,
        t in -0.2f64..1.2,
    ) {
        let high = low + width;
        let x = low + t * width;
        prop_assert_eq!(bin_index(num, low, high, x), brute_force_bin(num, low, high, x));
    }

    #[test]
    fn weight_linearity(w in 1u32..20, v in -50.0f64..50.0) {
        let spec = AggregatorSpec::sum(x());
        let mut weighted = Aggregator::zero(&spec).unwrap();
        weighted.fill(&ev(v), f64::from(w)).unwrap();
        let repeated = filled(&spec, &vec![v; w as usize]);
        prop_assert_eq!(weighted.entries(), repeated.entries());
        // v·w vs w-fold v: exact when v is a multiple of 1/1024
        let q = (v * 1024.0).round() / 1024.0;
        let mut wq = Aggregator::zero(&spec).unwrap();
        wq.fill(&ev(q), f64::from(w)).unwrap();
        prop_assert_eq!(wq.view().sum(), filled(&spec, &vec![q; w as usize]).view().sum());
    }
}

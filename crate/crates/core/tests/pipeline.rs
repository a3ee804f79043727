mod common;

use common::*;
use ntuplex::eventfmt::{BranchDecl, BranchType, EventBatch, FileSource, NtfReader, WriteOptions};
use ntuplex::pipeline::{eval_predicate, parse_expr, skim, slim, EventView, FieldValue};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn read(path: &std::path::Path) -> EventBatch {
    NtfReader::open(FileSource::open(path).unwrap()).unwrap().read_all().unwrap()
}

struct Row<'a>(&'a EventBatch, usize);

impl EventView for Row<'_> {
    fn field(&self, name: &str) -> Option<FieldValue<'_>> {
        let col = self.0.column(name)?;
        Some(match col.scalar(self.1) {
            Some(x) => FieldValue::Scalar(x),
            None => FieldValue::Array(col.array(self.1)),
        })
    }
}

fn fixture(dir: &std::path::Path) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let decls = vec![
        BranchDecl::new("x", BranchType::F64),
        BranchDecl::new("n", BranchType::I32),
        BranchDecl::new("h", BranchType::VarF32),
        BranchDecl::new("e", BranchType::F32),
    ];
    let rows = random_rows(&mut rng, &decls, 4000);
    let path = dir.join("in.ntf");
    let options = WriteOptions {
        basket_target_bytes: 4096,
        ..WriteOptions::default()
    };
    ntuplex::eventfmt::write_dataset(&path, decls, &rows, options).unwrap();
    path
}

#[test]
fn skim_keeps_exactly_the_passing_events_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let all = read(&input);
    for text in ["x > 0", "n < -1000000 || len(h) == 0", "!(e < 1) && sum(h) >= 0", "x != x"] {
        let predicate = parse_expr(text).unwrap();
        let out = dir.path().join("skim.ntf");
        let counts = skim(FileSource::open(&input).unwrap(), &predicate, &out, WriteOptions::default()).unwrap();
        let keep: Vec<bool> = (0..all.row_count())
            .map(|i| eval_predicate(&predicate, &Row(&all, i)).unwrap())
            .collect();
        let expected = all.filter(&keep);
        let got = read(&out);
        assert_eq!(counts.events_in, all.row_count() as u64);
        assert_eq!(counts.events_out, expected.row_count() as u64, "{text}");
        assert!(got.bit_eq(&expected), "{text}");
    }
}

#[test]
fn slim_keeps_columns_bit_exact_in_the_given_order() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let all = read(&input);
    for keep in [vec!["h"], vec!["e", "x"], vec!["n", "h", "x", "e"]] {
        let keep: Vec<String> = keep.into_iter().map(String::from).collect();
        let out = dir.path().join("slim.ntf");
        slim(FileSource::open(&input).unwrap(), &keep, &out, WriteOptions::default()).unwrap();
        assert!(read(&out).bit_eq(&all.project(&keep).unwrap()), "{keep:?}");
    }
}

#[test]
fn skim_and_slim_commute() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let predicate = parse_expr("x > 0 && n > 0").unwrap();
    let keep = vec!["x".to_string(), "n".to_string()];
    let opts = WriteOptions::default();
    let (a1, a2, b1, b2) = (
        dir.path().join("a1"),
        dir.path().join("a2"),
        dir.path().join("b1"),
        dir.path().join("b2"),
    );
    skim(FileSource::open(&input).unwrap(), &predicate, &a1, opts).unwrap();
    slim(FileSource::open(&a1).unwrap(), &keep, &a2, opts).unwrap();
    slim(FileSource::open(&input).unwrap(), &keep, &b1, opts).unwrap();
    skim(FileSource::open(&b1).unwrap(), &predicate, &b2, opts).unwrap();
    assert!(read(&a2).bit_eq(&read(&b2)));
}

#[test]
fn skim_rejects_bad_predicates_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("never.ntf");
    for text in ["missing > 1", "h > 1", "x + 1"] {
        let predicate = parse_expr(text).unwrap();
        assert!(skim(FileSource::open(&input).unwrap(), &predicate, &out, WriteOptions::default()).is_err());
        assert!(!out.exists(), "{text}");
    }
}

#[test]
fn slim_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let out = dir.path().join("never.ntf");
    let cases: [&[&str]; 3] = [&[], &["x", "x"], &["nope"]];
    for keep in cases {
        assert!(slim(FileSource::open(&input).unwrap(), keep, &out, WriteOptions::default()).is_err());
        assert!(!out.exists());
    }
}

mod common;

use common::*;
use ntuplex::eventfmt::{
    read_schema, BranchDecl, BranchType, CountingSource, MemorySource, NtfReader, Value, WriteOptions, HEADER_LEN,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn random_files_roundtrip_bit_exact(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Err(e) = roundtrip_case(&mut rng) {
            prop_assert!(false, "{}", e);
        }
    }
}

fn footer_length(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes[16..24].try_into().unwrap())
}

#[test]
fn zero_event_file() {
    let decls = vec![BranchDecl::new("a", BranchType::F64), BranchDecl::new("h", BranchType::VarF32)];
    let bytes = write_mem(&decls, &[], WriteOptions::default());
    let reader = NtfReader::open(MemorySource::new("m", bytes)).unwrap();
    assert_eq!(reader.schema().event_count, 0);
    assert_eq!(reader.schema().basket_count(), 0);
    let batch = reader.read_all().unwrap();
    assert_eq!(batch.row_count(), 0);
    assert_eq!(batch.decls(), decls);
}

#[test]
fn arrays_that_are_all_empty() {
    let decls = vec![BranchDecl::new("h", BranchType::VarF32)];
    let rows: Vec<Vec<Value>> = (0..500).map(|_| vec![Value::VarF32(vec![])]).collect();
    for basket in [1, 64, 65536] {
        let options = WriteOptions {
            basket_target_bytes: basket,
            ..WriteOptions::default()
        };
        let batch = read_mem(write_mem(&decls, &rows, options));
        assert_eq!(batch.row_count(), 500);
        assert!((0..500).all(|i| batch.columns()[0].array(i).is_empty()));
    }
}

#[test]
fn schema_read_touches_only_header_and_footer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let decls = random_decls(&mut rng);
        let rows = random_rows(&mut rng, &decls, 300);
        let bytes = write_mem(&decls, &rows, random_options(&mut rng));
        let expected = HEADER_LEN as u64 + footer_length(&bytes);
        let src = CountingSource::new(MemorySource::new("m", bytes));
        read_schema(&src).unwrap();
        assert_eq!(src.counter().bytes(), expected);
        assert_eq!(src.counter().reads(), 2);
    }
}

#[test]
fn reading_some_branches_reads_only_their_baskets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let decls: Vec<BranchDecl> = ["a", "b", "c", "d"]
        .iter()
        .zip([BranchType::F64, BranchType::VarF32, BranchType::I32, BranchType::F32])
        .map(|(n, t)| BranchDecl::new(*n, t))
        .collect();
    let rows = random_rows(&mut rng, &decls, 5000);
    let options = WriteOptions {
        basket_target_bytes: 2048,
        ..WriteOptions::default()
    };
    let bytes = write_mem(&decls, &rows, options);
    let overhead = HEADER_LEN as u64 + footer_length(&bytes);
    for selection in [vec!["a"], vec!["b", "c"], vec!["d", "a", "c"]] {
        let src = CountingSource::new(MemorySource::new("m", bytes.clone()));
        let counter = src.counter();
        let reader = NtfReader::open(src).unwrap();
        let stored: u64 = selection.iter().map(|n| reader.schema().branch(n).unwrap().stored_bytes()).sum();
        let mut rows_seen = 0;
        for batch in reader.read_events(&selection, None, 777).unwrap() {
            let batch = batch.unwrap();
            assert_eq!(batch.names(), selection.iter().map(|s| s.to_string()).collect::<Vec<_>>());
            rows_seen += batch.row_count();
        }
        assert_eq!(rows_seen, 5000);
        assert_eq!(counter.bytes(), overhead + stored, "{selection:?}");
    }
}

#[test]
fn corruption_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let decls = vec![BranchDecl::new("a", BranchType::F64), BranchDecl::new("h", BranchType::VarF32)];
    let rows = random_rows(&mut rng, &decls, 2000);
    for options in [WriteOptions::default(), WriteOptions::uncompressed()] {
        let good = write_mem(&decls, &rows, options);
        let schema = read_schema(&MemorySource::new("m", good.clone())).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        let err = NtfReader::open(MemorySource::new("m", bad)).unwrap_err();
        assert!(err.is_corruption(), "{err}");

        let footer_at = good.len() - footer_length(&good) as usize;
        let mut bad = good.clone();
        bad[footer_at + 3] ^= 0x20;
        let err = NtfReader::open(MemorySource::new("m", bad)).unwrap_err();
        assert!(err.is_corruption(), "{err}");

        let err = NtfReader::open(MemorySource::new("m", good[..good.len() - 1].to_vec())).unwrap_err();
        assert!(err.is_corruption(), "{err}");

        // every payload byte of every basket is covered by a check
        for branch in &schema.branches {
            for (i, basket) in branch.baskets.iter().enumerate().step_by(3) {
                let at = basket.file_offset as usize + ntuplex::eventfmt::BASKET_HEADER_LEN + basket.compressed_size as usize / 2;
                let mut bad = good.clone();
                bad[at] ^= 0x01;
                let reader = NtfReader::open(MemorySource::new("m", bad)).unwrap();
                let err = reader.read_basket(reader.schema().branch(&branch.name).unwrap(), i).unwrap_err();
                assert!(err.is_corruption(), "{err}");
            }
        }
    }
}

#[test]
fn file_and_memory_sources_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let decls = random_decls(&mut rng);
    let rows = random_rows(&mut rng, &decls, 1000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.ntf");
    ntuplex::eventfmt::write_dataset(&path, decls.clone(), &rows, WriteOptions::default()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let from_file = NtfReader::open(ntuplex::eventfmt::FileSource::open(&path).unwrap())
        .unwrap()
        .read_all()
        .unwrap();
    assert!(from_file.bit_eq(&read_mem(bytes)));
}

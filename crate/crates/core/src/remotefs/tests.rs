use std::path::Path;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use super::*;
use crate::eventfmt::{read_schema, write_dataset, BranchDecl, BranchType, ByteSource, NtfReader, Value, WriteOptions};

struct Fixture {
    dir: TempDir,
    server: ServerHandle,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = TempDir::new().unwrap();
        std::fs::create_dir(dir.path().join("data")).unwrap();
        std::fs::write(dir.path().join("data/blob.bin"), (0..=255u8).cycle().take(1000).collect::<Vec<_>>()).unwrap();
        write_dataset(
            dir.path().join("data/empty.ntf"),
            vec![BranchDecl::new("x", BranchType::F64)],
            Vec::<Vec<Value>>::new(),
            WriteOptions::default(),
        )
        .unwrap();
        write_dataset(
            dir.path().join("data/events.ntf"),
            vec![
                BranchDecl::new("pt", BranchType::F64),
                BranchDecl::new("hits", BranchType::VarF32),
            ],
            (0..5000).map(|i| vec![Value::F64(i as f64 * 0.5), Value::VarF32(vec![i as f32; i % 4])]),
            WriteOptions::default(),
        )
        .unwrap();
        let server = serve(dir.path(), "127.0.0.1:0", ServerOptions::default()).unwrap();
        Fixture { dir, server }
    }

    fn addr(&self) -> String {
        self.server.local_addr().to_string()
    }

    fn client(&self) -> Client {
        Client::connect(&self.addr()).unwrap()
    }

    fn url(&self, path: &str) -> RemoteUrl {
        format!("ntx://{}/{path}", self.addr()).parse().unwrap()
    }

    fn local(&self, path: &str) -> std::path::PathBuf {
        self.dir.path().join(path)
    }
}

fn status_of<T: std::fmt::Debug>(r: Result<T, RemoteError>) -> Status {
    r.unwrap_err().status().expect("a status error")
}

#[test]
fn open_read_stat_close() {
    let fx = Fixture::new();
    let mut c = fx.client();
    let h = c.open("data/blob.bin").unwrap();
    assert_eq!(h.file_size, 1000);
    assert_eq!(c.read_at(h.handle_id, 10, 3).unwrap(), [10, 11, 12]);
    assert_eq!(c.stat("data/blob.bin").unwrap(), 1000);
    c.close(h.handle_id).unwrap();
    assert_eq!(status_of(c.read_at(h.handle_id, 0, 1)), Status::BadHandle);
    assert_eq!(status_of(c.close(h.handle_id)), Status::BadHandle);
}

#[test]
fn ntf_magic_and_header_only_size() {
    let fx = Fixture::new();
    let mut c = fx.client();
    let h = c.open("data/events.ntf").unwrap();
    assert_eq!(c.read_at(h.handle_id, 0, 4).unwrap(), b"NTF1");
    let empty_size = std::fs::metadata(fx.local("data/empty.ntf")).unwrap().len();
    assert_eq!(c.stat("data/empty.ntf").unwrap(), empty_size);

    std::fs::write(fx.local("data/header.bin"), [0u8; 24]).unwrap();
    assert_eq!(c.stat("data/header.bin").unwrap(), 24);
}

#[test]
fn short_reads_at_end_of_file() {
    let fx = Fixture::new();
    let mut c = fx.client();
    let h = c.open("data/blob.bin").unwrap();
    let tail = c.read_at(h.handle_id, 996, 100).unwrap();
    assert_eq!(tail, [228, 229, 230, 231]);
    assert!(c.read_at(h.handle_id, 1000, 10).unwrap().is_empty());
    assert!(c.read_at(h.handle_id, 5000, 10).unwrap().is_empty());
}

#[test]
fn confinement() {
    let fx = Fixture::new();
    let mut c = fx.client();
    assert_eq!(status_of(c.open("../etc/secret")), Status::AccessDenied);
    assert_eq!(status_of(c.open("data/../../x")), Status::AccessDenied);
    assert_eq!(status_of(c.open("/etc/passwd")), Status::AccessDenied);
    assert_eq!(status_of(c.stat("../")), Status::AccessDenied);
    assert_eq!(status_of(c.open("data/missing.ntf")), Status::NotFound);
    assert_eq!(status_of(c.open("data")), Status::NotFound);
    #[cfg(unix)]
    {
        let outside = TempDir::new().unwrap();
        std::fs::write(outside.path().join("secret"), b"x").unwrap();
        std::os::unix::fs::symlink(outside.path().join("secret"), fx.local("data/link")).unwrap();
        assert_eq!(status_of(c.open("data/link")), Status::AccessDenied);
    }
    // the connection survives every refusal
    assert_eq!(c.stat("data/blob.bin").unwrap(), 1000);
}

#[test]
fn bad_handle_9999() {
    let fx = Fixture::new();
    let mut c = fx.client();
    assert_eq!(status_of(c.read_at(9999, 0, 4)), Status::BadHandle);
}

#[test]
fn handles_are_per_connection() {
    let fx = Fixture::new();
    let mut a = fx.client();
    let mut b = fx.client();
    let h = a.open("data/blob.bin").unwrap();
    assert_eq!(status_of(b.read_at(h.handle_id, 0, 1)), Status::BadHandle);
}

#[test]
fn malformed_requests_get_protocol_errors() {
    let fx = Fixture::new();
    let mut c = fx.client();
    let f = c.request(42, vec![]).unwrap();
    assert_eq!(f.code, Status::ProtocolError as u8);
    let f = c.request(Opcode::Read as u8, vec![1, 2, 3]).unwrap();
    assert_eq!(f.code, Status::ProtocolError as u8);
    let f = c.request(Opcode::Open as u8, vec![10, 0, b'a']).unwrap();
    assert_eq!(f.code, Status::ProtocolError as u8);
    let f = c.request(Opcode::Open as u8, vec![2, 0, 0xff, 0xfe]).unwrap();
    assert_eq!(f.code, Status::ProtocolError as u8);
    let h = c.open("data/blob.bin").unwrap();
    assert_eq!(status_of(c.read_at(h.handle_id, 0, MAX_PAYLOAD as u32 + 1)), Status::ProtocolError);
    assert_eq!(c.read_at(h.handle_id, 0, 2).unwrap(), [0, 1]);
}

#[test]
fn list_directory() {
    let fx = Fixture::new();
    let mut c = fx.client();
    let root = c.list("").unwrap();
    assert_eq!(
        root,
        [ListEntry {
            name: "data".into(),
            is_dir: true,
            size: 0
        }]
    );
    let names: Vec<String> = c.list("data").unwrap().into_iter().map(|e| e.name).collect();
    assert_eq!(names, ["blob.bin", "empty.ntf", "events.ntf"]);
    assert_eq!(status_of(c.list("..")), Status::AccessDenied);
}

#[test]
fn url_parsing() {
    let url: RemoteUrl = "ntx://localhost:9000/data/a.ntf".parse().unwrap();
    assert_eq!(url.addr, "localhost:9000");
    assert_eq!(url.path, "data/a.ntf");
    assert_eq!(url.to_string(), "ntx://localhost:9000/data/a.ntf");
    for bad in ["ntx://host/a", "ntx://host:x/a", "ntx://host:1/", "http://h:1/a", "ntx://:1/a"] {
        assert!(bad.parse::<RemoteUrl>().is_err(), "{bad}");
    }
}

#[test]
fn schema_costs_two_round_trips() {
    let fx = Fixture::new();
    let src = RemoteSource::open(&fx.url("data/events.ntf"), RemoteOptions::default()).unwrap();
    let remote = read_schema(&src).unwrap();
    assert_eq!(src.read_round_trips(), 2);
    let local = read_schema(&crate::eventfmt::FileSource::open(fx.local("data/events.ntf")).unwrap()).unwrap();
    assert_eq!(remote, local);
}

#[test]
fn remote_reads_match_local() {
    let fx = Fixture::new();
    let path = "data/events.ntf";
    let local = NtfReader::open(crate::eventfmt::FileSource::open(fx.local(path)).unwrap()).unwrap();
    for readahead in [0, 4096, 1 << 20] {
        let src = RemoteSource::open(&fx.url(path), RemoteOptions { readahead }).unwrap();
        let remote = NtfReader::open(src).unwrap();
        assert!(remote.read_all().unwrap().bit_eq(&local.read_all().unwrap()), "readahead {readahead}");
    }
}

#[test]
fn readahead_saves_round_trips() {
    let fx = Fixture::new();
    let plain = RemoteSource::open(&fx.url("data/blob.bin"), RemoteOptions::default()).unwrap();
    let ahead = RemoteSource::open(&fx.url("data/blob.bin"), RemoteOptions { readahead: 512 }).unwrap();
    let expected: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
    for src in [&plain, &ahead] {
        for off in (0..400).step_by(40) {
            let mut buf = [0u8; 40];
            src.read_exact_at(off, &mut buf).unwrap();
            assert_eq!(&buf[..], &expected[off as usize..off as usize + 40]);
        }
        let mut buf = [0u8; 8];
        let err = src.read_exact_at(996, &mut buf).unwrap_err();
        assert_eq!(err.kind(), std::io::ErrorKind::UnexpectedEof);
    }
    assert_eq!(plain.read_round_trips(), 10);
    assert_eq!(ahead.read_round_trips(), 1);
}

#[test]
fn server_shutdown_fails_reads_naming_the_file() {
    let fx = Fixture::new();
    let src = RemoteSource::open(&fx.url("data/events.ntf"), RemoteOptions::default()).unwrap();
    let reader = NtfReader::open(src).unwrap();
    let Fixture { dir: _dir, server } = fx;
    server.shutdown();
    let err = reader.read_column("pt").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("data/events.ntf"), "{msg}");
    let io = match &err {
        crate::eventfmt::FormatError::Io { error, .. } => error,
        other => panic!("expected an I/O error, got {other:?}"),
    };
    let inner = io.get_ref().and_then(|e| e.downcast_ref::<RemoteError>());
    assert!(matches!(inner, Some(RemoteError::Connection { .. })), "{io:?}");
}

#[test]
fn concurrent_clients_see_only_their_files() {
    let fx = Fixture::new();
    let contents: Vec<Vec<u8>> = (0..6u8)
        .map(|k| (0..20_000u32).map(|i| (i as u8).wrapping_mul(k + 1).wrapping_add(k)).collect())
        .collect();
    for (k, bytes) in contents.iter().enumerate() {
        std::fs::write(fx.local(&format!("data/f{k}.bin")), bytes).unwrap();
    }
    let addr = fx.addr();
    thread::scope(|s| {
        for (k, expected) in contents.iter().enumerate() {
            let addr = addr.clone();
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
                let mut c = Client::connect(&addr).unwrap();
                let h = c.open(&format!("data/f{k}.bin")).unwrap();
                for _ in 0..200 {
                    let off = rng.gen_range(0..expected.len() as u64 + 10);
                    let len = rng.gen_range(0..3000u32);
                    let got = c.read_at(h.handle_id, off, len).unwrap();
                    let lo = (off as usize).min(expected.len());
                    let hi = (lo + len as usize).min(expected.len());
                    assert_eq!(got, &expected[lo..hi], "file {k} at {off}+{len}");
                    if rng.gen_bool(0.1) {
                        thread::yield_now();
                    }
                }
            });
        }
    });
}

#[test]
fn read_latency_is_applied() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("f"), b"abc").unwrap();
    let latency = std::time::Duration::from_millis(20);
    let server = serve(
        dir.path(),
        "127.0.0.1:0",
        ServerOptions {
            read_latency: Some(latency),
        },
    )
    .unwrap();
    let mut c = Client::connect(&server.local_addr().to_string()).unwrap();
    let h = c.open("f").unwrap();
    let t = std::time::Instant::now();
    c.read_at(h.handle_id, 0, 3).unwrap();
    c.read_at(h.handle_id, 0, 3).unwrap();
    assert!(t.elapsed() >= latency * 2);
}

#[test]
fn serve_needs_a_directory() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("f");
    std::fs::write(&file, b"").unwrap();
    assert!(serve(&file, "127.0.0.1:0", ServerOptions::default()).is_err());
    assert!(serve(Path::new("/nonexistent/dir"), "127.0.0.1:0", ServerOptions::default()).is_err());
}

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::frame::{put_string, read_frame, Frame, Opcode, PayloadReader, ReadOutcome, Status, MAX_PAYLOAD};

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Artificial delay before answering each READ.
    pub read_latency: Option<Duration>,
}

/// A running server. Dropping it shuts the server down.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept_thread: Option<JoinHandle<()>>,
}

#[derive(Debug)]
struct Shared {
    root: PathBuf,
    options: ServerOptions,
    stopping: AtomicBool,
    next_conn: AtomicU64,
    connections: Mutex<HashMap<u64, TcpStream>>,
}

/// Export `root` on `addr` (use port 0 for an ephemeral port).
pub fn serve(root: impl AsRef<Path>, addr: impl ToSocketAddrs, options: ServerOptions) -> io::Result<ServerHandle> {
    let root = root.as_ref().canonicalize()?;
    if !root.is_dir() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} is not a directory", root.display()),
        ));
    }
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    info!("serving {} on {addr}", root.display());
    let shared = Arc::new(Shared {
        root,
        options,
        stopping: AtomicBool::new(false),
        next_conn: AtomicU64::new(0),
        connections: Mutex::new(HashMap::new()),
    });
    let accept_shared = Arc::clone(&shared);
    let accept_thread = thread::Builder::new()
        .name("remotefs-accept".into())
        .spawn(move || accept_loop(listener, accept_shared))?;
    Ok(ServerHandle {
        addr,
        shared,
        accept_thread: Some(accept_thread),
    })
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn root(&self) -> &Path {
        &self.shared.root
    }

    /// Block until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Stop accepting and cut every open connection.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // unblock accept()
        let mut wake = self.addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(match wake {
                SocketAddr::V4(_) => std::net::Ipv4Addr::LOCALHOST.into(),
                SocketAddr::V6(_) => std::net::Ipv6Addr::LOCALHOST.into(),
            });
        }
        let _ = TcpStream::connect_timeout(&wake, Duration::from_secs(1));
        for (_, stream) in self.shared.connections.lock().expect("connection table").drain() {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
        match stream.try_clone() {
            Ok(clone) => {
                shared.connections.lock().expect("connection table").insert(id, clone);
            }
            Err(e) => {
                warn!("cannot track connection: {e}");
                continue;
            }
        }
        let conn_shared = Arc::clone(&shared);
        let spawned = thread::Builder::new()
            .name(format!("remotefs-conn-{id}"))
            .spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = Connection::new(&conn_shared).run(stream) {
                    debug!("connection {peer:?} ended: {e}");
                }
                conn_shared.connections.lock().expect("connection table").remove(&id);
            });
        if let Err(e) = spawned {
            warn!("cannot spawn connection thread: {e}");
            shared.connections.lock().expect("connection table").remove(&id);
        }
    }
}

struct OpenFile {
    file: File,
    size: u64,
}

type Reply = Result<Vec<u8>, (Status, String)>;

fn protocol(msg: impl Into<String>) -> (Status, String) {
    (Status::ProtocolError, msg.into())
}

struct Connection<'a> {
    shared: &'a Shared,
    handles: HashMap<u32, OpenFile>,
    next_handle: u32,
}

impl<'a> Connection<'a> {
    fn new(shared: &'a Shared) -> Self {
        Self {
            shared,
            handles: HashMap::new(),
            next_handle: 1,
        }
    }

    fn run(&mut self, stream: TcpStream) -> io::Result<()> {
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        loop {
            let (request_id, reply) = match read_frame(&mut reader)? {
                ReadOutcome::Closed => return Ok(()),
                ReadOutcome::Malformed { request_id, reason } => (request_id, Err(protocol(reason))),
                ReadOutcome::Frame(frame) => (frame.request_id, self.handle(&frame)),
            };
            let response = match reply {
                Ok(payload) => Frame::new(Status::Ok as u8, request_id, payload),
                Err((status, message)) => {
                    debug!("request {request_id}: {status} {message}");
                    Frame::new(status as u8, request_id, message.into_bytes())
                }
            };
            response.write_to(&mut writer)?;
        }
    }

    fn handle(&mut self, frame: &Frame) -> Reply {
        let op = Opcode::from_u8(frame.code).ok_or_else(|| protocol(format!("unknown opcode {}", frame.code)))?;
        let mut p = PayloadReader::new(&frame.payload);
        match op {
            Opcode::Open => {
                let path = p.string().map_err(protocol)?;
                p.finish().map_err(protocol)?;
                self.open(&path)
            }
            Opcode::Read => {
                let handle = p.u32().map_err(protocol)?;
                let offset = p.u64().map_err(protocol)?;
                let len = p.u32().map_err(protocol)?;
                p.finish().map_err(protocol)?;
                if let Some(latency) = self.shared.options.read_latency {
                    thread::sleep(latency);
                }
                self.read(handle, offset, len)
            }
            Opcode::Stat => {
                let path = p.string().map_err(protocol)?;
                p.finish().map_err(protocol)?;
                let (_, size) = self.resolve_file(&path)?;
                Ok(size.to_le_bytes().to_vec())
            }
            Opcode::Close => {
                let handle = p.u32().map_err(protocol)?;
                p.finish().map_err(protocol)?;
                match self.handles.remove(&handle) {
                    Some(_) => Ok(Vec::new()),
                    None => Err((Status::BadHandle, format!("unknown handle {handle}"))),
                }
            }
            Opcode::List => {
                let path = p.string().map_err(protocol)?;
                p.finish().map_err(protocol)?;
                self.list(&path)
            }
        }
    }

    /// Map a client path to a file under the root.
    fn resolve(&self, path: &str) -> Result<PathBuf, (Status, String)> {
        let rel = Path::new(path);
        for c in rel.components() {
            match c {
                Component::Normal(_) | Component::CurDir => {}
                _ => return Err((Status::AccessDenied, format!("{path}: path escapes the export root"))),
            }
        }
        let full = self
            .shared
            .root
            .join(rel)
            .canonicalize()
            .map_err(|e| io_status(path, e))?;
        // symlinks may still point outside
        if !full.starts_with(&self.shared.root) {
            return Err((Status::AccessDenied, format!("{path}: path escapes the export root")));
        }
        Ok(full)
    }

    fn resolve_file(&self, path: &str) -> Result<(PathBuf, u64), (Status, String)> {
        let full = self.resolve(path)?;
        let meta = full.metadata().map_err(|e| io_status(path, e))?;
        if !meta.is_file() {
            return Err((Status::NotFound, format!("{path}: not a regular file")));
        }
        Ok((full, meta.len()))
    }

    fn open(&mut self, path: &str) -> Reply {
        let (full, size) = self.resolve_file(path)?;
        let file = File::open(full).map_err(|e| io_status(path, e))?;
        let handle = self.next_handle;
        self.next_handle = self.next_handle.checked_add(1).ok_or_else(|| protocol("handle space exhausted"))?;
        self.handles.insert(handle, OpenFile { file, size });
        let mut out = handle.to_le_bytes().to_vec();
        out.extend_from_slice(&size.to_le_bytes());
        Ok(out)
    }

    fn read(&mut self, handle: u32, offset: u64, len: u32) -> Reply {
        let open = self
            .handles
            .get(&handle)
            .ok_or_else(|| (Status::BadHandle, format!("unknown handle {handle}")))?;
        if len as usize > MAX_PAYLOAD {
            return Err(protocol(format!("read of {len} bytes exceeds the {MAX_PAYLOAD}-byte limit")));
        }
        let n = open.size.saturating_sub(offset).min(u64::from(len)) as usize;
        let mut buf = vec![0u8; n];
        read_at(&open.file, offset, &mut buf).map_err(|e| (Status::IoError, e.to_string()))?;
        Ok(buf)
    }

    fn list(&self, path: &str) -> Reply {
        let dir = self.resolve(path)?;
        let mut entries = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| io_status(path, e))? {
            let entry = entry.map_err(|e| io_status(path, e))?;
            let Ok(name) = entry.file_name().into_string() else { continue };
            let Ok(meta) = entry.metadata() else { continue };
            let is_dir = meta.is_dir();
            if is_dir || meta.is_file() {
                entries.push((name, is_dir, if is_dir { 0 } else { meta.len() }));
            }
        }
        entries.sort();
        let mut out = (entries.len() as u32).to_le_bytes().to_vec();
        for (name, is_dir, size) in entries {
            out.push(u8::from(is_dir));
            put_string(&mut out, &name);
            out.extend_from_slice(&size.to_le_bytes());
        }
        Ok(out)
    }
}

fn io_status(path: &str, e: io::Error) -> (Status, String) {
    let status = match e.kind() {
        io::ErrorKind::NotFound => Status::NotFound,
        io::ErrorKind::PermissionDenied => Status::AccessDenied,
        _ => Status::IoError,
    };
    (status, format!("{path}: {e}"))
}

#[cfg(unix)]
fn read_at(file: &File, offset: u64, buf: &mut [u8]) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(not(unix))]
fn read_at(mut file: &File, offset: u64, buf: &mut [u8]) -> io::Result<()> {
    use std::io::{Read, Seek};
    file.seek(io::SeekFrom::Start(offset))?;
    file.read_exact(buf)
}

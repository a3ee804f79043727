use std::fmt;
use std::io::{self, BufReader, BufWriter};
use std::net::TcpStream;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::frame::{put_string, read_frame, Frame, Opcode, PayloadReader, ReadOutcome, Status, MAX_PAYLOAD};
use crate::eventfmt::ByteSource;

pub const URL_SCHEME: &str = "ntx://";

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("invalid remote URL `{0}` (expected ntx://host:port/path)")]
    InvalidUrl(String),
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("connection to {addr} lost: {source}")]
    Connection { addr: String, source: io::Error },
    #[error("{status}: {message}")]
    Status { status: Status, message: String },
    #[error("protocol violation from {addr}: {message}")]
    Protocol { addr: String, message: String },
}

impl RemoteError {
    /// Status code of a server-side refusal, if that is what this is.
    pub fn status(&self) -> Option<Status> {
        match self {
            RemoteError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn into_io(self) -> io::Error {
        let kind = match &self {
            RemoteError::Status {
                status: Status::NotFound,
                ..
            } => io::ErrorKind::NotFound,
            RemoteError::Status {
                status: Status::AccessDenied,
                ..
            } => io::ErrorKind::PermissionDenied,
            RemoteError::Connect { .. } | RemoteError::Connection { .. } => io::ErrorKind::ConnectionAborted,
            _ => io::ErrorKind::Other,
        };
        io::Error::new(kind, self)
    }
}

/// `ntx://host:port/relative/path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteUrl {
    pub addr: String,
    pub path: String,
}

impl RemoteUrl {
    pub fn is_remote(text: &str) -> bool {
        text.starts_with(URL_SCHEME)
    }
}

impl FromStr for RemoteUrl {
    type Err = RemoteError;

    fn from_str(text: &str) -> Result<Self, RemoteError> {
        let bad = || RemoteError::InvalidUrl(text.to_string());
        let rest = text.strip_prefix(URL_SCHEME).ok_or_else(bad)?;
        let (addr, path) = rest.split_once('/').ok_or_else(bad)?;
        let (host, port) = addr.rsplit_once(':').ok_or_else(bad)?;
        if host.is_empty() || port.parse::<u16>().is_err() || path.is_empty() {
            return Err(bad());
        }
        Ok(RemoteUrl {
            addr: addr.to_string(),
            path: path.to_string(),
        })
    }
}

impl fmt::Display for RemoteUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{URL_SCHEME}{}/{}", self.addr, self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteHandle {
    pub handle_id: u32,
    pub file_size: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListEntry {
    pub name: String,
    pub is_dir: bool,
    pub size: u64,
}

/// One connection; issues one request at a time.
#[derive(Debug)]
pub struct Client {
    addr: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u32,
    broken: bool,
    read_round_trips: Arc<AtomicU64>,
}

impl Client {
    pub fn connect(addr: &str) -> Result<Client, RemoteError> {
        let connect_err = |source| RemoteError::Connect {
            addr: addr.to_string(),
            source,
        };
        let stream = TcpStream::connect(addr).map_err(connect_err)?;
        stream.set_nodelay(true).map_err(connect_err)?;
        let reader = BufReader::new(stream.try_clone().map_err(connect_err)?);
        Ok(Client {
            addr: addr.to_string(),
            reader,
            writer: BufWriter::new(stream),
            next_id: 1,
            broken: false,
            read_round_trips: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    /// READ requests answered so far on this connection.
    pub fn read_round_trips(&self) -> u64 {
        self.read_round_trips.load(Ordering::Relaxed)
    }

    fn round_trip_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.read_round_trips)
    }

    /// Send a raw request and return the response frame, whatever its status.
    pub fn request(&mut self, code: u8, payload: Vec<u8>) -> Result<Frame, RemoteError> {
        let lost = |addr: &str, source| RemoteError::Connection {
            addr: addr.to_string(),
            source,
        };
        if self.broken {
            return Err(lost(
                &self.addr,
                io::Error::new(io::ErrorKind::NotConnected, "connection closed after an earlier failure"),
            ));
        }
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        let result = Frame::new(code, id, payload)
            .write_to(&mut self.writer)
            .and_then(|()| read_frame(&mut self.reader));
        let outcome = result.map_err(|e| {
            self.broken = true;
            lost(&self.addr, e)
        })?;
        let frame = match outcome {
            ReadOutcome::Frame(f) => f,
            ReadOutcome::Closed => {
                self.broken = true;
                return Err(lost(
                    &self.addr,
                    io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the connection"),
                ));
            }
            ReadOutcome::Malformed { reason, .. } => {
                self.broken = true;
                return Err(self.protocol(reason));
            }
        };
        if frame.request_id != id {
            self.broken = true;
            return Err(self.protocol(format!("response id {} for request {id}", frame.request_id)));
        }
        Ok(frame)
    }

    fn protocol(&self, message: impl Into<String>) -> RemoteError {
        RemoteError::Protocol {
            addr: self.addr.clone(),
            message: message.into(),
        }
    }

    fn call(&mut self, op: Opcode, payload: Vec<u8>) -> Result<Vec<u8>, RemoteError> {
        let frame = self.request(op as u8, payload)?;
        match Status::from_u8(frame.code) {
            Some(Status::Ok) => Ok(frame.payload),
            Some(status) => Err(RemoteError::Status {
                status,
                message: String::from_utf8_lossy(&frame.payload).into_owned(),
            }),
            None => Err(self.protocol(format!("unknown status {}", frame.code))),
        }
    }

    fn path_payload(path: &str) -> Result<Vec<u8>, RemoteError> {
        if path.len() > u16::MAX as usize {
            return Err(RemoteError::InvalidUrl(path.to_string()));
        }
        let mut out = Vec::with_capacity(2 + path.len());
        put_string(&mut out, path);
        Ok(out)
    }

    pub fn open(&mut self, path: &str) -> Result<RemoteHandle, RemoteError> {
        let reply = self.call(Opcode::Open, Self::path_payload(path)?)?;
        let mut p = PayloadReader::new(&reply);
        let parsed = (|| {
            let handle_id = p.u32()?;
            let file_size = p.u64()?;
            Ok::<_, String>((handle_id, file_size))
        })();
        let (handle_id, file_size) = parsed.map_err(|m| self.protocol(m))?;
        Ok(RemoteHandle {
            handle_id,
            file_size,
            path: path.to_string(),
        })
    }

    /// Up to `len` bytes from `offset`; fewer at end of file.
    pub fn read_at(&mut self, handle: u32, offset: u64, len: u32) -> Result<Vec<u8>, RemoteError> {
        let mut payload = Vec::with_capacity(16);
        payload.extend_from_slice(&handle.to_le_bytes());
        payload.extend_from_slice(&offset.to_le_bytes());
        payload.extend_from_slice(&len.to_le_bytes());
        let data = self.call(Opcode::Read, payload)?;
        self.read_round_trips.fetch_add(1, Ordering::Relaxed);
        if data.len() > len as usize {
            return Err(self.protocol(format!("asked for {len} bytes, got {}", data.len())));
        }
        Ok(data)
    }

    pub fn stat(&mut self, path: &str) -> Result<u64, RemoteError> {
        let reply = self.call(Opcode::Stat, Self::path_payload(path)?)?;
        PayloadReader::new(&reply).u64().map_err(|m| self.protocol(m))
    }

    pub fn close(&mut self, handle: u32) -> Result<(), RemoteError> {
        self.call(Opcode::Close, handle.to_le_bytes().to_vec()).map(drop)
    }

    /// Files and directories directly under `path` (`""` for the root), by name.
    pub fn list(&mut self, path: &str) -> Result<Vec<ListEntry>, RemoteError> {
        let reply = self.call(Opcode::List, Self::path_payload(path)?)?;
        let mut p = PayloadReader::new(&reply);
        let parsed = (|| {
            let n = p.u32()?;
            let mut entries = Vec::new();
            for _ in 0..n {
                let is_dir = p.u8()? != 0;
                let name = p.string()?;
                let size = p.u64()?;
                entries.push(ListEntry { name, is_dir, size });
            }
            Ok::<_, String>(entries)
        })();
        parsed.map_err(|m| self.protocol(m))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RemoteOptions {
    /// Minimum bytes fetched per READ; 0 disables readahead.
    pub readahead: usize,
}

#[derive(Debug)]
struct SourceState {
    client: Client,
    cache_offset: u64,
    cache: Vec<u8>,
}

/// A remote file as a [`ByteSource`]. Owns its own connection.
#[derive(Debug)]
pub struct RemoteSource {
    url: RemoteUrl,
    handle: RemoteHandle,
    options: RemoteOptions,
    round_trips: Arc<AtomicU64>,
    state: Mutex<SourceState>,
}

impl RemoteSource {
    pub fn open(url: &RemoteUrl, options: RemoteOptions) -> Result<RemoteSource, RemoteError> {
        let mut client = Client::connect(&url.addr)?;
        let handle = client.open(&url.path)?;
        Ok(RemoteSource {
            url: url.clone(),
            handle,
            options,
            round_trips: client.round_trip_counter(),
            state: Mutex::new(SourceState {
                client,
                cache_offset: 0,
                cache: Vec::new(),
            }),
        })
    }

    pub fn open_url(text: &str, options: RemoteOptions) -> Result<RemoteSource, RemoteError> {
        Self::open(&text.parse()?, options)
    }

    pub fn url(&self) -> &RemoteUrl {
        &self.url
    }

    pub fn handle(&self) -> &RemoteHandle {
        &self.handle
    }

    /// READ round-trips issued by this source.
    pub fn read_round_trips(&self) -> u64 {
        self.round_trips.load(Ordering::Relaxed)
    }

    /// Read into `buf` until it is full or the file ends; returns bytes read.
    fn fill(&self, state: &mut SourceState, offset: u64, buf: &mut [u8]) -> Result<usize, RemoteError> {
        let mut done = 0;
        while done < buf.len() {
            let want = (buf.len() - done).min(MAX_PAYLOAD);
            let data = state
                .client
                .read_at(self.handle.handle_id, offset + done as u64, want as u32)?;
            if data.is_empty() {
                break;
            }
            buf[done..done + data.len()].copy_from_slice(&data);
            done += data.len();
        }
        Ok(done)
    }
}

fn eof() -> io::Error {
    io::Error::new(io::ErrorKind::UnexpectedEof, "read past end of remote file")
}

impl ByteSource for RemoteSource {
    fn size(&self) -> io::Result<u64> {
        Ok(self.handle.file_size)
    }

    fn read_exact_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let end = offset.checked_add(buf.len() as u64).ok_or_else(eof)?;
        if end > self.handle.file_size {
            return Err(eof());
        }
        if buf.is_empty() {
            return Ok(());
        }
        let mut state = self.state.lock().expect("remote source state");
        let cached_end = state.cache_offset + state.cache.len() as u64;
        if offset >= state.cache_offset && end <= cached_end {
            let start = (offset - state.cache_offset) as usize;
            buf.copy_from_slice(&state.cache[start..start + buf.len()]);
            return Ok(());
        }
        let ahead = self.options.readahead;
        if ahead > buf.len() && ahead <= MAX_PAYLOAD {
            let len = (ahead as u64).min(self.handle.file_size - offset) as usize;
            let mut block = vec![0u8; len];
            let got = self.fill(&mut state, offset, &mut block).map_err(RemoteError::into_io)?;
            // the file may have shrunk since OPEN
            if got < buf.len() {
                return Err(eof());
            }
            block.truncate(got);
            buf.copy_from_slice(&block[..buf.len()]);
            state.cache_offset = offset;
            state.cache = block;
        } else if self.fill(&mut state, offset, buf).map_err(RemoteError::into_io)? < buf.len() {
            return Err(eof());
        }
        Ok(())
    }

    fn describe(&self) -> String {
        self.url.to_string()
    }
}

impl Drop for RemoteSource {
    fn drop(&mut self) {
        if let Ok(state) = self.state.get_mut() {
            let _ = state.client.close(self.handle.handle_id);
        }
    }
}

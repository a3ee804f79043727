use std::io::{self, Read, Write};

/// Largest payload a frame may carry.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

/// Bytes counted by the length prefix besides the payload: code + request id.
pub const FRAME_OVERHEAD: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Open = 1,
    Read = 2,
    Stat = 3,
    Close = 4,
    List = 5,
}

impl Opcode {
    pub fn from_u8(code: u8) -> Option<Opcode> {
        Some(match code {
            1 => Opcode::Open,
            2 => Opcode::Read,
            3 => Opcode::Stat,
            4 => Opcode::Close,
            5 => Opcode::List,
            _ => return None,
        })
    }
}

/// Response status. Anything but `Ok` carries a UTF-8 message as payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    AccessDenied = 2,
    BadHandle = 3,
    ProtocolError = 4,
    IoError = 5,
}

impl Status {
    pub fn from_u8(code: u8) -> Option<Status> {
        Some(match code {
            0 => Status::Ok,
            1 => Status::NotFound,
            2 => Status::AccessDenied,
            3 => Status::BadHandle,
            4 => Status::ProtocolError,
            5 => Status::IoError,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::NotFound => "NOT_FOUND",
            Status::AccessDenied => "ACCESS_DENIED",
            Status::BadHandle => "BAD_HANDLE",
            Status::ProtocolError => "PROTOCOL_ERROR",
            Status::IoError => "IO_ERROR",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One request or response.
///
/// Wire layout, little-endian:
/// `len u32 | code u8 | request_id u32 | payload`, where `len` counts every
/// byte after itself (`5 + payload.len()`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    /// Opcode for requests, status for responses.
    pub code: u8,
    pub request_id: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(code: u8, request_id: u32, payload: Vec<u8>) -> Frame {
        Frame {
            code,
            request_id,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        assert!(self.payload.len() <= MAX_PAYLOAD, "frame payload over limit");
        let mut out = Vec::with_capacity(9 + self.payload.len());
        out.extend_from_slice(&(FRAME_OVERHEAD + self.payload.len() as u32).to_le_bytes());
        out.push(self.code);
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }
}

/// What came off the wire.
#[derive(Debug, PartialEq, Eq)]
pub enum ReadOutcome {
    Frame(Frame),
    /// The peer closed the connection cleanly between frames.
    Closed,
    /// A length prefix that cannot be honoured; its bytes were consumed so
    /// the stream stays in sync.
    Malformed { request_id: u32, reason: String },
}

/// Read one frame. I/O errors mean the connection is unusable.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<ReadOutcome> {
    let mut len_bytes = [0u8; 4];
    match r.read(&mut len_bytes[..1])? {
        0 => return Ok(ReadOutcome::Closed),
        _ => r.read_exact(&mut len_bytes[1..])?,
    }
    let len = u32::from_le_bytes(len_bytes);
    if len < FRAME_OVERHEAD {
        let mut junk = vec![0u8; len as usize];
        r.read_exact(&mut junk)?;
        return Ok(ReadOutcome::Malformed {
            request_id: 0,
            reason: format!("frame length {len} is shorter than the 5-byte frame header"),
        });
    }
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let code = head[0];
    let request_id = u32::from_le_bytes(head[1..5].try_into().expect("4 bytes"));
    let payload_len = (len - FRAME_OVERHEAD) as usize;
    if payload_len > MAX_PAYLOAD {
        let skipped = io::copy(&mut r.take(payload_len as u64), &mut io::sink())?;
        if skipped != payload_len as u64 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        return Ok(ReadOutcome::Malformed {
            request_id,
            reason: format!("payload of {payload_len} bytes exceeds the {MAX_PAYLOAD}-byte limit"),
        });
    }
    let mut payload = vec![0u8; payload_len];
    r.read_exact(&mut payload)?;
    Ok(ReadOutcome::Frame(Frame {
        code,
        request_id,
        payload,
    }))
}

/// Cursor over a payload with bounds-checked little-endian reads.
pub(crate) struct PayloadReader<'a> {
    buf: &'a [u8],
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() < n {
            return Err(format!("payload truncated: needed {n} more bytes, have {}", self.buf.len()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn string(&mut self) -> Result<String, String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| "string is not valid UTF-8".to_string())
    }

    pub fn finish(self) -> Result<(), String> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(format!("{} trailing payload bytes", self.buf.len()))
        }
    }
}

/// Append `u16 length | UTF-8 bytes`.
pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("string fits a u16 length");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

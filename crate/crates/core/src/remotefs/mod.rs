//! Byte-range file access over TCP.
//!
//! A [`serve`]d directory tree is read through [`Client`] or, for the event
//! readers, through [`RemoteSource`], which implements
//! [`ByteSource`](crate::eventfmt::ByteSource) like a local file does.
//!
//! Requests and responses share one frame layout (little-endian):
//!
//! ```text
//! len u32 | code u8 | request_id u32 | payload
//! ```
//!
//! `len` counts the bytes after itself, so it is `5 + payload.len()`. The
//! code is an opcode in requests and a status in responses; a non-OK
//! response carries a UTF-8 message.
//!
//! | op | request payload | OK payload |
//! |----|-----------------|------------|
//! | 1 OPEN  | `u16 len, path` | `handle u32, size u64` |
//! | 2 READ  | `handle u32, offset u64, len u32` | bytes, short at end of file |
//! | 3 STAT  | `u16 len, path` | `size u64` |
//! | 4 CLOSE | `handle u32` | empty |
//! | 5 LIST  | `u16 len, dir` | `count u32`, then per entry `is_dir u8, u16 len, name, size u64` |
//!
//! Paths are relative to the export root; absolute paths, `..` components
//! and symlinks leading outside the root are refused with `ACCESS_DENIED`.

mod client;
mod frame;
mod server;

pub use client::{Client, ListEntry, RemoteError, RemoteHandle, RemoteOptions, RemoteSource, RemoteUrl, URL_SCHEME};
pub use frame::{read_frame, Frame, Opcode, ReadOutcome, Status, FRAME_OVERHEAD, MAX_PAYLOAD};
pub use server::{serve, ServerHandle, ServerOptions};

#[cfg(test)]
mod tests;

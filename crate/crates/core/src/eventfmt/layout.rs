//! Byte-level encoding of headers, basket records and footers.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use serde::{Deserialize, Serialize};

use super::{BranchDescriptor, BranchType, ColumnData, FormatError, Schema};

pub const MAGIC: [u8; 4] = *b"NTF1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
/// codec u8 + uncompressed_size u32 + compressed_size u32 + crc32 u32
pub const BASKET_HEADER_LEN: usize = 13;

pub(crate) const CODEC_NONE: u8 = 0;
pub(crate) const CODEC_DEFLATE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub footer_offset: u64,
    pub footer_length: u64,
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[6..8].copy_from_slice(&0u16.to_le_bytes());
        out[8..16].copy_from_slice(&self.footer_offset.to_le_bytes());
        out[16..24].copy_from_slice(&self.footer_length.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN]) -> Result<Self, FormatError> {
        if bytes[0..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        Ok(Self {
            footer_offset: u64_at(bytes, 8),
            footer_length: u64_at(bytes, 16),
        })
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

/// Serialized footer document. Field order is part of the format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FooterDoc {
    version: u16,
    event_count: u64,
    branches: Vec<BranchDescriptor>,
}

/// Footer bytes: JSON document followed by its CRC-32.
pub(crate) fn encode_footer(schema: &Schema) -> Vec<u8> {
    let doc = FooterDoc {
        version: FORMAT_VERSION,
        event_count: schema.event_count,
        branches: schema.branches.clone(),
    };
    let mut out = serde_json::to_vec(&doc).expect("footer serializes");
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn decode_footer(bytes: &[u8]) -> Result<Schema, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated("footer shorter than its checksum".into()));
    }
    let (json, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32_at(crc, 0);
    let computed = crc32fast::hash(json);
    if stored != computed {
        return Err(FormatError::FooterChecksum { stored, computed });
    }
    let doc: FooterDoc =
        serde_json::from_slice(json).map_err(|e| FormatError::Footer(e.to_string()))?;
    if doc.version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(doc.version));
    }
    Ok(Schema {
        branches: doc.branches,
        event_count: doc.event_count,
    })
}

/// Uncompressed payload size of `rows` events holding `values` array values.
pub(crate) fn payload_len(branch_type: BranchType, rows: usize, values: usize) -> usize {
    match branch_type.fixed_width() {
        Some(w) => rows * w,
        None => 4 + 4 * (rows + 1) + 4 * values,
    }
}

/// Little-endian payload of a column.
pub(crate) fn encode_payload(column: &ColumnData) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload_len(
        column.branch_type(),
        column.rows(),
        column.value_count(),
    ));
    match column {
        ColumnData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ColumnData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ColumnData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ColumnData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ColumnData::VarF32 { offsets, values } => {
            out.extend_from_slice(&(values.len() as u32).to_le_bytes());
            offsets.iter().for_each(|o| out.extend_from_slice(&o.to_le_bytes()));
            values.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
    }
    out
}

/// Decode a payload holding `events` events. Errors describe the inconsistency.
pub(crate) fn decode_payload(
    branch_type: BranchType,
    payload: &[u8],
    events: usize,
) -> Result<ColumnData, String> {
    fn chunks<const N: usize>(payload: &[u8]) -> impl Iterator<Item = [u8; N]> + '_ {
        payload
            .chunks_exact(N)
            .map(|c| c.try_into().expect("chunk of N bytes"))
    }
    if let Some(width) = branch_type.fixed_width() {
        if payload.len() != events * width {
            return Err(format!(
                "payload has {} bytes, expected {} for {events} events",
                payload.len(),
                events * width
            ));
        }
    }
    Ok(match branch_type {
        BranchType::F32 => ColumnData::F32(chunks::<4>(payload).map(f32::from_le_bytes).collect()),
        BranchType::F64 => ColumnData::F64(chunks::<8>(payload).map(f64::from_le_bytes).collect()),
        BranchType::I32 => ColumnData::I32(chunks::<4>(payload).map(i32::from_le_bytes).collect()),
        BranchType::I64 => ColumnData::I64(chunks::<8>(payload).map(i64::from_le_bytes).collect()),
        BranchType::VarF32 => {
            if payload.len() < 4 + 4 * (events + 1) {
                return Err("payload too short for offsets".into());
            }
            let value_count = u32_at(payload, 0) as usize;
            if payload.len() != payload_len(BranchType::VarF32, events, value_count) {
                return Err(format!(
                    "payload has {} bytes, inconsistent with {value_count} values",
                    payload.len()
                ));
            }
            let offsets_end = 4 + 4 * (events + 1);
            let offsets: Vec<u32> = chunks::<4>(&payload[4..offsets_end])
                .map(u32::from_le_bytes)
                .collect();
            if offsets[0] != 0
                || offsets[events] as usize != value_count
                || offsets.windows(2).any(|w| w[0] > w[1])
            {
                return Err("offsets are not a monotone cover of the values".into());
            }
            let values = chunks::<4>(&payload[offsets_end..])
                .map(f32::from_le_bytes)
                .collect();
            ColumnData::VarF32 { offsets, values }
        }
    })
}

/// An encoded basket record ready to be written.
pub(crate) struct EncodedBasket {
    pub codec: u8,
    pub uncompressed_size: u32,
    pub compressed_size: u32,
    pub crc32: u32,
    pub stored: Vec<u8>,
}

impl EncodedBasket {
    /// Compress `payload` when asked and when that makes it smaller.
    pub fn new(payload: Vec<u8>, deflate: bool) -> std::io::Result<Self> {
        let crc32 = crc32fast::hash(&payload);
        let uncompressed_size = u32::try_from(payload.len())
            .map_err(|_| std::io::Error::other("basket payload exceeds 4 GiB"))?;
        let (codec, stored) = if deflate && !payload.is_empty() {
            let mut enc = DeflateEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(&payload)?;
            let compressed = enc.finish()?;
            if compressed.len() < payload.len() {
                (CODEC_DEFLATE, compressed)
            } else {
                (CODEC_NONE, payload)
            }
        } else {
            (CODEC_NONE, payload)
        };
        Ok(Self {
            codec,
            uncompressed_size,
            compressed_size: stored.len() as u32,
            crc32,
            stored,
        })
    }

    pub fn header(&self) -> [u8; BASKET_HEADER_LEN] {
        let mut out = [0u8; BASKET_HEADER_LEN];
        out[0] = self.codec;
        out[1..5].copy_from_slice(&self.uncompressed_size.to_le_bytes());
        out[5..9].copy_from_slice(&self.compressed_size.to_le_bytes());
        out[9..13].copy_from_slice(&self.crc32.to_le_bytes());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BasketHeader {
    pub codec: u8,
    pub uncompressed_size: u32,
    pub compressed_size: u32,
    pub crc32: u32,
}

impl BasketHeader {
    pub fn decode(bytes: &[u8]) -> Self {
        Self {
            codec: bytes[0],
            uncompressed_size: u32_at(bytes, 1),
            compressed_size: u32_at(bytes, 5),
            crc32: u32_at(bytes, 9),
        }
    }
}

/// Undo the codec of a stored payload.
pub(crate) fn decompress(codec: u8, stored: &[u8], expected_len: usize) -> Result<Vec<u8>, String> {
    match codec {
        CODEC_NONE => Ok(stored.to_vec()),
        CODEC_DEFLATE => {
            let mut out = Vec::with_capacity(expected_len);
            DeflateDecoder::new(stored)
                .take(expected_len as u64 + 1)
                .read_to_end(&mut out)
                .map_err(|e| e.to_string())?;
            if out.len() != expected_len {
                return Err(format!(
                    "inflated to {} bytes, expected {expected_len}",
                    out.len()
                ));
            }
            Ok(out)
        }
        other => Err(format!("unknown codec {other}")),
    }
}

//! Binary framing for [`MediaPacket`].
//!
//! Layout, all fields big-endian:
//!
//! ```text
//! offset  size  field
//!      0     2  magic "VR" (0x56 0x52)
//!      2     1  version (0x03)
//!      3     1  message type (0x01 = media)
//!      4     4  room id
//!      8     4  source client id
//!     12     4  sequence number
//!     16     4  timestamp (ms)
//!     20     1  payload type
//!     21     1  flags
//!     22     2  payload length
//!     24     n  payload
//! ```

use thiserror::Error;

use crate::model::{ClientId, MediaPacket, PayloadType, RoomId};

pub const MAGIC: [u8; 2] = [0x56, 0x52];
pub const VERSION: u8 = 0x03;
pub const KIND_MEDIA: u8 = 0x01;
pub const HEADER_LEN: usize = 24;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the 65535 byte limit")]
    PayloadTooLarge(usize),
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unsupported message type {0:#04x}")]
    BadKind(u8),
    #[error("unknown payload type {0}")]
    BadPayloadType(u8),
    #[error("truncated packet: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after packet")]
    TrailingGarbage(usize),
}

pub fn encode_media_packet(p: &MediaPacket) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(HEADER_LEN + p.payload.len());
    encode_into(p, &mut out)?;
    Ok(out)
}

/// Appends the encoded packet to `out`. On error `out` is left untouched.
pub fn encode_into(p: &MediaPacket, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let len = p.payload.len();
    if len > MAX_PAYLOAD {
        return Err(CodecError::PayloadTooLarge(len));
    }
    out.reserve(HEADER_LEN + len);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(KIND_MEDIA);
    out.extend_from_slice(&p.room.0.to_be_bytes());
    out.extend_from_slice(&p.src.0.to_be_bytes());
    out.extend_from_slice(&p.seq.to_be_bytes());
    out.extend_from_slice(&p.timestamp_ms.to_be_bytes());
    out.push(p.payload_type as u8);
    out.push(p.flags);
    out.extend_from_slice(&(len as u16).to_be_bytes());
    out.extend_from_slice(&p.payload);
    Ok(())
}

/// Strict decode: the buffer must hold exactly one packet.
pub fn decode_media_packet(b: &[u8]) -> Result<MediaPacket, CodecError> {
    let (packet, used) = decode_prefix(b)?;
    if used != b.len() {
        return Err(CodecError::TrailingGarbage(b.len() - used));
    }
    Ok(packet)
}

/// Decodes one packet from the front of `b`, returning it with the number of
/// bytes consumed (always `24 + payload_len`).
pub fn decode_prefix(b: &[u8]) -> Result<(MediaPacket, usize), CodecError> {
    if b.len() < HEADER_LEN {
        // Report magic/version problems before length so garbage is classified as such.
        check_preamble(b)?;
        return Err(CodecError::Truncated {
            needed: HEADER_LEN,
            have: b.len(),
        });
    }
    check_preamble(b)?;
    let u32_at = |i: usize| u32::from_be_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    let payload_type = PayloadType::from_u8(b[20]).ok_or(CodecError::BadPayloadType(b[20]))?;
    let len = u16::from_be_bytes([b[22], b[23]]) as usize;
    let end = HEADER_LEN + len;
    if b.len() < end {
        return Err(CodecError::Truncated {
            needed: end,
            have: b.len(),
        });
    }
    let packet = MediaPacket {
        room: RoomId(u32_at(4)),
        src: ClientId(u32_at(8)),
        seq: u32_at(12),
        timestamp_ms: u32_at(16),
        payload_type,
        flags: b[21],
        payload: b[HEADER_LEN..end].to_vec(),
    };
    Ok((packet, end))
}

fn check_preamble(b: &[u8]) -> Result<(), CodecError> {
    if let Some(magic) = b.get(0..2) {
        if magic != MAGIC {
            return Err(CodecError::BadMagic([magic[0], magic[1]]));
        }
    } else if let Some(&first) = b.first() {
        if first != MAGIC[0] {
            return Err(CodecError::BadMagic([first, 0]));
        }
    }
    if let Some(&v) = b.get(2) {
        if v != VERSION {
            return Err(CodecError::BadVersion(v));
        }
    }
    if let Some(&k) = b.get(3) {
        if k != KIND_MEDIA {
            return Err(CodecError::BadKind(k));
        }
    }
    Ok(())
}

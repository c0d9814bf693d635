//! Little-endian framing for device-cloud messages.
//!
//! Every frame starts with a 12-byte header: magic `PEDT`, version `u16`,
//! message type `u16`, payload length `u32`.
//!
//! * upload payload: `device_id u32`, then one `(slot u32, item u32)` pair
//!   per window entry, slots counting up from 0. A window of `n` items is
//!   `8n + 16` bytes on the wire.
//! * download payload: `group u16`, `layer count u16`, then each layer's
//!   weights as row-major `f32`. Shapes are agreed out of band, so layers of
//!   16x8 and 8x4 make a 656-byte frame.
//! * error payload: UTF-8 message.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: [u8; 4] = *b"PEDT";
pub const WIRE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum MessageType {
    Upload = 1,
    Download = 2,
    Error = 3,
}

impl MessageType {
    fn from_u16(v: u16) -> Result<Self> {
        match v {
            1 => Ok(Self::Upload),
            2 => Ok(Self::Download),
            3 => Ok(Self::Error),
            other => Err(Error::Protocol(format!("unknown message type {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UploadMessage {
    pub device_id: u32,
    pub window: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownloadMessage {
    pub group: u16,
    pub layers: Vec<Matrix>,
}

fn frame(kind: MessageType, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u16).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Splits a frame into its type and payload after checking the header.
pub fn parse_frame(bytes: &[u8]) -> Result<(MessageType, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Protocol(format!("frame of {} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Protocol("bad magic".into()));
    }
    let version = u16_at(bytes, 4);
    if version != WIRE_VERSION {
        return Err(Error::Protocol(format!("unsupported wire version {version}")));
    }
    let kind = MessageType::from_u16(u16_at(bytes, 6))?;
    let len = u32_at(bytes, 8) as usize;
    if bytes.len() - HEADER_LEN != len {
        return Err(Error::Protocol(format!("payload length {} does not match header {len}", bytes.len() - HEADER_LEN)));
    }
    Ok((kind, &bytes[HEADER_LEN..]))
}

pub fn upload_len(window: usize) -> usize {
    HEADER_LEN + 4 + 8 * window
}

pub fn download_len(shapes: &[(usize, usize)]) -> usize {
    HEADER_LEN + 4 + 4 * shapes.iter().map(|(r, c)| r * c).sum::<usize>()
}

pub fn encode_upload(msg: &UploadMessage) -> Vec<u8> {
    let mut p = Vec::with_capacity(4 + 8 * msg.window.len());
    p.extend_from_slice(&msg.device_id.to_le_bytes());
    for (slot, item) in msg.window.iter().enumerate() {
        p.extend_from_slice(&(slot as u32).to_le_bytes());
        p.extend_from_slice(&item.to_le_bytes());
    }
    frame(MessageType::Upload, &p)
}

pub fn decode_upload(bytes: &[u8]) -> Result<UploadMessage> {
    let (kind, p) = parse_frame(bytes)?;
    if kind != MessageType::Upload {
        return Err(Error::Protocol(format!("expected upload, got {kind:?}")));
    }
    if p.len() < 4 || (p.len() - 4) % 8 != 0 {
        return Err(Error::Protocol(format!("upload payload of {} bytes is malformed", p.len())));
    }
    let device_id = u32_at(p, 0);
    let n = (p.len() - 4) / 8;
    let mut window = Vec::with_capacity(n);
    for i in 0..n {
        let slot = u32_at(p, 4 + 8 * i);
        if slot as usize != i {
            return Err(Error::Protocol(format!("slot {slot} out of order at position {i}")));
        }
        window.push(u32_at(p, 8 + 8 * i));
    }
    Ok(UploadMessage { device_id, window })
}

pub fn encode_download(msg: &DownloadMessage) -> Result<Vec<u8>> {
    let count = u16::try_from(msg.layers.len()).map_err(|_| Error::Protocol("too many layers".into()))?;
    let mut p = Vec::with_capacity(4 + 4 * msg.layers.iter().map(Matrix::len).sum::<usize>());
    p.extend_from_slice(&msg.group.to_le_bytes());
    p.extend_from_slice(&count.to_le_bytes());
    for l in &msg.layers {
        for &v in l.data() {
            p.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(frame(MessageType::Download, &p))
}

/// Decodes a download for layers of the given shapes. An error frame
/// decodes to a protocol error carrying the cloud's message.
pub fn decode_download(bytes: &[u8], shapes: &[(usize, usize)]) -> Result<DownloadMessage> {
    let (kind, p) = parse_frame(bytes)?;
    match kind {
        MessageType::Download => {}
        MessageType::Error => {
            return Err(Error::Protocol(format!("cloud error: {}", String::from_utf8_lossy(p))));
        }
        MessageType::Upload => return Err(Error::Protocol("expected download, got upload".into())),
    }
    if p.len() < 4 {
        return Err(Error::Protocol("download payload too short".into()));
    }
    let group = u16_at(p, 0);
    let count = u16_at(p, 2) as usize;
    if count != shapes.len() {
        return Err(Error::Protocol(format!("download has {count} layers, expected {}", shapes.len())));
    }
    let expected = download_len(shapes) - HEADER_LEN;
    if p.len() != expected {
        return Err(Error::Protocol(format!("download payload {} bytes, expected {expected}", p.len())));
    }
    let mut at = 4;
    let mut layers = Vec::with_capacity(count);
    for &(r, c) in shapes {
        let data: Vec<f64> = (0..r * c)
            .map(|i| f32::from_le_bytes(p[at + 4 * i..at + 4 * i + 4].try_into().expect("4 bytes")) as f64)
            .collect();
        at += 4 * r * c;
        layers.push(Matrix::from_vec(r, c, data).map_err(|e| Error::Protocol(format!("bad layer values: {e}")))?);
    }
    Ok(DownloadMessage { group, layers })
}

pub fn encode_error(msg: &str) -> Vec<u8> {
    frame(MessageType::Error, msg.as_bytes())
}

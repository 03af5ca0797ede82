//! Message-passing fabric abstraction.
//!
//! Two implementations share one bit-exact framing format: a deterministic
//! in-process fabric ([`inproc`]) for simulation and testing, and a TCP
//! transport ([`tcp`]) for real multi-process runs.
//!
//! Framing (little-endian), fixed 27-byte header:
//!
//! ```text
//! magic: u32 = 0x32445452 | version: u8 = 1 | collective_id: u32 | phase: u8
//! | step: u32 | src: u32 | dtype: u8 | payload_len: u64 | payload bytes
//! ```
//!
//! Messages are matched on the exact key `(src, collective_id, phase, step)`;
//! out-of-order arrivals for other keys are retained, never dropped.

mod mailbox;

pub mod inproc;
pub mod tcp;

use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::element::{Dtype, DtypeError};

pub const FRAME_MAGIC: u32 = 0x3244_5452;
pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 27;

/// Upper bound on a single payload; guards against reading a corrupt length
/// field as an allocation size.
pub const MAX_PAYLOAD_LEN: u64 = 1 << 30;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated frame: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("payload length {len} exceeds the {MAX_PAYLOAD_LEN}-byte limit")]
    OversizedPayload { len: u64 },
    #[error(transparent)]
    Dtype(#[from] DtypeError),
    #[error("payload of {len} bytes is not a multiple of the {dtype} element size")]
    MisalignedPayload { len: u64, dtype: Dtype },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("destination rank {dst} out of range for {n_ranks} ranks")]
    InvalidDestination { dst: u32, n_ranks: u32 },
    #[error("self-send rejected on rank {rank}")]
    SelfSend { rank: u32 },
    #[error("fabric closed")]
    Closed,
    #[error("timed out after {0:?} waiting for {1}")]
    Timeout(Duration, MessageKey),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("peer table error: {0}")]
    PeerTable(String),
}

/// Exact-match key for `recv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MessageKey {
    pub src: u32,
    pub collective_id: u32,
    pub phase: u8,
    pub step: u32,
}

impl std::fmt::Display for MessageKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "message(src={}, collective={}, phase={}, step={})",
            self.src, self.collective_id, self.phase, self.step
        )
    }
}

/// A framed transport message.
#[derive(Clone, Debug, PartialEq)]
pub struct WireMessage {
    pub collective_id: u32,
    pub phase: u8,
    pub step: u32,
    pub src: u32,
    pub dtype: Dtype,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn key(&self) -> MessageKey {
        MessageKey {
            src: self.src,
            collective_id: self.collective_id,
            phase: self.phase,
            step: self.step,
        }
    }

    pub fn payload_len(&self) -> u64 {
        self.payload.len() as u64
    }
}

/// Serialize a message into a framed byte buffer.
pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>, FrameError> {
    let len = msg.payload.len() as u64;
    if !len.is_multiple_of(msg.dtype.size_bytes() as u64) {
        return Err(FrameError::MisalignedPayload {
            len,
            dtype: msg.dtype,
        });
    }
    if len > MAX_PAYLOAD_LEN {
        return Err(FrameError::OversizedPayload { len });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len());
    out.extend_from_slice(&FRAME_MAGIC.to_le_bytes());
    out.push(FRAME_VERSION);
    out.extend_from_slice(&msg.collective_id.to_le_bytes());
    out.push(msg.phase);
    out.extend_from_slice(&msg.step.to_le_bytes());
    out.extend_from_slice(&msg.src.to_le_bytes());
    out.push(msg.dtype.code());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(WireMessage, u64), FrameError> {
    let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let version = header[4];
    if version != FRAME_VERSION {
        return Err(FrameError::UnsupportedVersion(version));
    }
    let collective_id = u32::from_le_bytes(header[5..9].try_into().unwrap());
    let phase = header[9];
    let step = u32::from_le_bytes(header[10..14].try_into().unwrap());
    let src = u32::from_le_bytes(header[14..18].try_into().unwrap());
    let dtype = Dtype::from_code(header[18])?;
    let payload_len = u64::from_le_bytes(header[19..27].try_into().unwrap());
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(FrameError::OversizedPayload { len: payload_len });
    }
    if !payload_len.is_multiple_of(dtype.size_bytes() as u64) {
        return Err(FrameError::MisalignedPayload {
            len: payload_len,
            dtype,
        });
    }
    let msg = WireMessage {
        collective_id,
        phase,
        step,
        src,
        dtype,
        payload: Vec::new(),
    };
    Ok((msg, payload_len))
}

/// Deserialize a framed byte buffer. Inverse of [`encode_frame`], bit-exact.
pub fn decode_frame(bytes: &[u8]) -> Result<WireMessage, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let header: [u8; HEADER_LEN] = bytes[..HEADER_LEN].try_into().unwrap();
    let (mut msg, payload_len) = parse_header(&header)?;
    let expected = HEADER_LEN + payload_len as usize;
    if bytes.len() != expected {
        return Err(FrameError::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    msg.payload = bytes[HEADER_LEN..].to_vec();
    Ok(msg)
}

/// Read one frame from a byte stream (used by the TCP transport).
pub fn read_frame<R: Read>(reader: &mut R) -> Result<WireMessage, TransportError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header)?;
    let (mut msg, payload_len) = parse_header(&header)?;
    let mut payload = vec![0u8; payload_len as usize];
    reader.read_exact(&mut payload)?;
    msg.payload = payload;
    Ok(msg)
}

/// A per-rank endpoint of a message fabric.
///
/// Sends are buffered: a send completes without waiting for the receiver,
/// which keeps the ring schedules deadlock-free. Delivery is reliable and
/// FIFO per (src, dst) pair.
pub trait Transport: Send {
    fn rank(&self) -> u32;

    fn n_ranks(&self) -> u32;

    /// Enqueue a message for `dst`. Self-sends are rejected.
    fn send(&self, dst: u32, msg: WireMessage) -> Result<(), TransportError>;

    /// Block until the uniquely matching message arrives.
    fn recv(
        &self,
        src: u32,
        collective_id: u32,
        phase: u8,
        step: u32,
    ) -> Result<WireMessage, TransportError>;

    /// Non-blocking variant of [`Transport::recv`]; used by the round-based
    /// single-threaded scheduler.
    fn try_recv(
        &self,
        src: u32,
        collective_id: u32,
        phase: u8,
        step: u32,
    ) -> Result<Option<WireMessage>, TransportError>;
}

/// Per-phase send statistics recorded by an instrumented fabric.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PhaseStats {
    pub messages: u64,
    pub max_step: u32,
    pub max_payload_bytes: u64,
    /// Messages sent per rank within this phase.
    pub sends_per_rank: BTreeMap<u32, u64>,
}

impl PhaseStats {
    /// Number of sequential step slots observed (step indices are assigned by
    /// the schedules as dependency depth, so this is the phase's chain length).
    pub fn sequential_steps(&self) -> u64 {
        if self.messages == 0 {
            0
        } else {
            self.max_step as u64 + 1
        }
    }
}

/// Aggregate send statistics keyed by wire phase code.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TransportStats {
    pub phases: BTreeMap<u8, PhaseStats>,
    pub total_messages: u64,
    pub total_payload_bytes: u64,
}

impl TransportStats {
    pub(crate) fn record(&mut self, src: u32, phase: u8, step: u32, payload_bytes: u64) {
        let entry = self.phases.entry(phase).or_default();
        entry.messages += 1;
        entry.max_step = entry.max_step.max(step);
        entry.max_payload_bytes = entry.max_payload_bytes.max(payload_bytes);
        *entry.sends_per_rank.entry(src).or_insert(0) += 1;
        self.total_messages += 1;
        self.total_payload_bytes += payload_bytes;
    }
}

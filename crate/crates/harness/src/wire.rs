//! Framed binary messages of the classical channel.
//!
//! Every message is `"CPQK" | version | type | length (u32 BE) | payload`.
//! All integers are big-endian and reals are IEEE-754 binary64. FRAMES
//! carries the simulated optical pulses in the clear: the harness simulates
//! the quantum channel, it does not protect it.

use std::io::{self, Read, Write};

use cowpnp_core::photonic::JonesVector;
use cowpnp_core::stations::{FrameRecord, SlotRecord};
use cowpnp_core::{DetectionEvent, Line};
use num_complex::Complex;
use thiserror::Error;

use crate::report::SessionReport;

pub const MAGIC: [u8; 4] = *b"CPQK";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
/// Largest payload a peer may announce.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    Params = 0x02,
    Frames = 0x03,
    Detections = 0x04,
    DecoyReveal = 0x05,
    QberSample = 0x06,
    PaSeed = 0x07,
    Report = 0x08,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => MsgType::Hello,
            0x02 => MsgType::Params,
            0x03 => MsgType::Frames,
            0x04 => MsgType::Detections,
            0x05 => MsgType::DecoyReveal,
            0x06 => MsgType::QberSample,
            0x07 => MsgType::PaSeed,
            0x08 => MsgType::Report,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Hello => "HELLO",
            MsgType::Params => "PARAMS",
            MsgType::Frames => "FRAMES",
            MsgType::Detections => "DETECTIONS",
            MsgType::DecoyReveal => "DECOY_REVEAL",
            MsgType::QberSample => "QBER_SAMPLE",
            MsgType::PaSeed => "PA_SEED",
            MsgType::Report => "REPORT",
        }
    }
}

impl std::fmt::Display for MsgType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { nonce: u64 },
    /// Canonical configuration text.
    Params { text: String },
    Frames(Vec<FrameRecord>),
    Detections(Vec<DetectionEvent>),
    /// Strictly increasing symbol indices.
    DecoyReveal(Vec<u32>),
    /// Symbol indices of the disclosed bits and the sender's bits there.
    QberSample { indices: Vec<u32>, bits: Vec<bool> },
    PaSeed(u64),
    Report(SessionReport),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::Params { .. } => MsgType::Params,
            Message::Frames(_) => MsgType::Frames,
            Message::Detections(_) => MsgType::Detections,
            Message::DecoyReveal(_) => MsgType::DecoyReveal,
            Message::QberSample { .. } => MsgType::QberSample,
            Message::PaSeed(_) => MsgType::PaSeed,
            Message::Report(_) => MsgType::Report,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("{0} trailing bytes after the payload")]
    Trailing(usize),
    #[error("malformed {msg}: {detail}")]
    Malformed { msg: MsgType, detail: String },
}

fn malformed(msg: MsgType, detail: impl Into<String>) -> DecodeError {
    DecodeError::Malformed {
        msg,
        detail: detail.into(),
    }
}

fn line_byte(l: Line) -> u8 {
    match l {
        Line::Data => 0,
        Line::Monitor => 1,
    }
}

fn encode_payload(msg: &Message) -> Vec<u8> {
    let mut p = Vec::new();
    let count = |p: &mut Vec<u8>, n: usize| {
        p.extend_from_slice(&u32::try_from(n).expect("count fits in u32").to_be_bytes())
    };
    match msg {
        Message::Hello { nonce } => p.extend_from_slice(&nonce.to_be_bytes()),
        Message::Params { text } => p.extend_from_slice(text.as_bytes()),
        Message::Frames(frames) => {
            count(&mut p, frames.len());
            for f in frames {
                p.extend_from_slice(&f.frame_id.to_be_bytes());
                let pol = &f.polarization;
                for x in [pol.h.re, pol.h.im, pol.v.re, pol.v.im] {
                    p.extend_from_slice(&x.to_be_bytes());
                }
                p.push(u8::try_from(f.slots.len()).expect("at most 255 slots per frame"));
                for s in &f.slots {
                    p.push(s.bin);
                    p.extend_from_slice(&s.mu.to_be_bytes());
                    p.extend_from_slice(&s.phase.to_be_bytes());
                }
            }
        }
        Message::Detections(events) => {
            count(&mut p, events.len());
            for e in events {
                p.extend_from_slice(&e.frame_id.to_be_bytes());
                p.push(e.bin_index);
                p.push(line_byte(e.line));
            }
        }
        Message::DecoyReveal(idx) => {
            count(&mut p, idx.len());
            for i in idx {
                p.extend_from_slice(&i.to_be_bytes());
            }
        }
        Message::QberSample { indices, bits } => {
            assert_eq!(indices.len(), bits.len(), "one disclosed bit per index");
            count(&mut p, indices.len());
            for i in indices {
                p.extend_from_slice(&i.to_be_bytes());
            }
            for chunk in bits.chunks(8) {
                p.push(chunk.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | (u8::from(b) << (7 - k))));
            }
        }
        Message::PaSeed(seed) => p.extend_from_slice(&seed.to_be_bytes()),
        Message::Report(r) => p.extend_from_slice(serde_json::to_string(r).expect("report serializes").as_bytes()),
    }
    p
}

pub fn encode_message(msg: &Message) -> Vec<u8> {
    let payload = encode_payload(msg);
    let len = u32::try_from(payload.len()).expect("payload fits in u32");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Validated header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub msg_type: MsgType,
    pub length: u32,
}

pub fn decode_header(h: &[u8]) -> Result<Header, DecodeError> {
    if h.len() < HEADER_LEN {
        // report the most specific problem visible in what is there
        if h.len() >= 4 && h[..4] != MAGIC {
            return Err(DecodeError::BadMagic(h[..4].try_into().unwrap()));
        }
        return Err(DecodeError::Truncated {
            needed: HEADER_LEN,
            have: h.len(),
        });
    }
    let magic: [u8; 4] = h[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(DecodeError::BadVersion(h[4]));
    }
    let msg_type = MsgType::from_byte(h[5]).ok_or(DecodeError::UnknownType(h[5]))?;
    let length = u32::from_be_bytes(h[6..10].try_into().unwrap());
    if length > MAX_PAYLOAD {
        return Err(DecodeError::TooLarge(length));
    }
    Ok(Header { msg_type, length })
}

/// Decodes exactly one message occupying all of `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<Message, DecodeError> {
    let header = decode_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let len = header.length as usize;
    if body.len() < len {
        return Err(DecodeError::Truncated {
            needed: len,
            have: body.len(),
        });
    }
    if body.len() > len {
        return Err(DecodeError::Trailing(body.len() - len));
    }
    decode_payload(header.msg_type, body)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    msg: MsgType,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let have = self.buf.len() - self.pos;
        if have < n {
            return Err(malformed(self.msg, format!("payload ends early: need {n} more bytes, have {have}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads an element count and checks that `count * min_size` bytes
    /// remain, so a hostile count cannot trigger a large allocation.
    fn count(&mut self, min_size: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        let have = self.buf.len() - self.pos;
        if n.saturating_mul(min_size) > have {
            return Err(malformed(
                self.msg,
                format!("count {n} needs at least {} bytes, {have} remain", n.saturating_mul(min_size)),
            ));
        }
        Ok(n)
    }

    fn finish(self) -> Result<(), DecodeError> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(malformed(self.msg, format!("{rest} unused payload bytes")));
        }
        Ok(())
    }
}

fn decode_payload(msg: MsgType, payload: &[u8]) -> Result<Message, DecodeError> {
    let mut c = Cursor {
        buf: payload,
        pos: 0,
        msg,
    };
    let out = match msg {
        MsgType::Hello => Message::Hello { nonce: c.u64()? },
        MsgType::Params => {
            let text = std::str::from_utf8(c.take(payload.len())?)
                .map_err(|e| malformed(msg, format!("config text is not UTF-8: {e}")))?;
            Message::Params { text: text.to_string() }
        }
        MsgType::Frames => {
            // id, polarization, slot count
            let n = c.count(4 + 32 + 1)?;
            let mut frames = Vec::with_capacity(n);
            for _ in 0..n {
                let frame_id = c.u32()?;
                let [hr, hi, vr, vi] = [c.f64()?, c.f64()?, c.f64()?, c.f64()?];
                let n_slots = c.u8()?;
                let mut slots = Vec::with_capacity(usize::from(n_slots));
                for _ in 0..n_slots {
                    slots.push(SlotRecord {
                        bin: c.u8()?,
                        mu: c.f64()?,
                        phase: c.f64()?,
                    });
                }
                frames.push(FrameRecord {
                    frame_id,
                    polarization: JonesVector::new(Complex::new(hr, hi), Complex::new(vr, vi)),
                    slots,
                });
            }
            Message::Frames(frames)
        }
        MsgType::Detections => {
            let n = c.count(6)?;
            let mut events = Vec::with_capacity(n);
            for _ in 0..n {
                let frame_id = c.u32()?;
                let bin_index = c.u8()?;
                let line = match c.u8()? {
                    0 => Line::Data,
                    1 => Line::Monitor,
                    b => return Err(malformed(msg, format!("line tag {b} is neither data (0) nor monitor (1)"))),
                };
                events.push(DetectionEvent {
                    frame_id,
                    bin_index,
                    line,
                });
            }
            Message::Detections(events)
        }
        MsgType::DecoyReveal => {
            let n = c.count(4)?;
            let idx = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(malformed(msg, "indices are not strictly increasing"));
            }
            Message::DecoyReveal(idx)
        }
        MsgType::QberSample => {
            let n = c.count(4)?;
            let indices = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
            let packed = c.take(n.div_ceil(8))?;
            let bits = (0..n).map(|k| packed[k / 8] >> (7 - k % 8) & 1 == 1).collect();
            if n % 8 != 0 && packed[n / 8] & (0xff >> (n % 8)) != 0 {
                return Err(malformed(msg, "padding bits are not zero"));
            }
            Message::QberSample { indices, bits }
        }
        MsgType::PaSeed => Message::PaSeed(c.u64()?),
        MsgType::Report => {
            let text = std::str::from_utf8(c.take(payload.len())?)
                .map_err(|e| malformed(msg, format!("report is not UTF-8: {e}")))?;
            Message::Report(SessionReport::from_json(text).map_err(|e| malformed(msg, e.to_string()))?)
        }
    };
    c.finish()?;
    Ok(out)
}

#[derive(Debug, Error)]
pub enum RecvError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_message(msg))?;
    w.flush()
}

/// Reads one message. The payload buffer grows with the data actually
/// received, never ahead of it.
pub fn read_message<R: Read>(r: &mut R) -> Result<Message, RecvError> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)?;
    let header = decode_header(&head)?;
    let mut payload = Vec::new();
    let got = r.take(u64::from(header.length)).read_to_end(&mut payload)?;
    if got < header.length as usize {
        return Err(DecodeError::Truncated {
            needed: header.length as usize,
            have: got,
        }
        .into());
    }
    Ok(decode_payload(header.msg_type, &payload)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_bytes() {
        let b = encode_message(&Message::Hello { nonce: 1 });
        assert_eq!(
            b,
            [0x43, 0x50, 0x51, 0x4B, 0x01, 0x01, 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 1]
        );
    }

    #[test]
    fn decoy_reveal_round_trip() {
        let m = Message::DecoyReveal(vec![3, 7]);
        assert_eq!(decode_message(&encode_message(&m)).unwrap(), m);
    }

    #[test]
    fn distinct_header_errors() {
        let mut b = encode_message(&Message::PaSeed(9));
        let good = b.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_message(&b), Err(DecodeError::BadMagic(_))));
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(decode_message(&b), Err(DecodeError::BadVersion(2)));
        let mut b = good.clone();
        b[5] = 0x7f;
        assert_eq!(decode_message(&b), Err(DecodeError::UnknownType(0x7f)));
        assert!(matches!(decode_message(&good[..good.len() - 1]), Err(DecodeError::Truncated { .. })));
        assert!(matches!(decode_message(&good[..6]), Err(DecodeError::Truncated { .. })));
        let mut b = good.clone();
        b.push(0);
        assert_eq!(decode_message(&b), Err(DecodeError::Trailing(1)));
    }

    #[test]
    fn hostile_counts_do_not_allocate() {
        // DETECTIONS claiming 2^32-1 events with an empty body
        let mut b = MAGIC.to_vec();
        b.extend([VERSION, 0x04, 0, 0, 0, 4, 0xff, 0xff, 0xff, 0xff]);
        assert!(matches!(decode_message(&b), Err(DecodeError::Malformed { .. })));
    }

    #[test]
    fn qber_sample_bits_pack_msb_first() {
        let m = Message::QberSample {
            indices: vec![1, 2, 3],
            bits: vec![true, false, true],
        };
        let b = encode_message(&m);
        assert_eq!(*b.last().unwrap(), 0b1010_0000);
        assert_eq!(decode_message(&b).unwrap(), m);
        let mut bad = b.clone();
        *bad.last_mut().unwrap() |= 1;
        assert!(decode_message(&bad).is_err());
    }

    #[test]
    fn stream_reader_reports_truncation() {
        let b = encode_message(&Message::DecoyReveal(vec![1, 2, 3]));
        let mut r = &b[..b.len() - 2];
        assert!(matches!(
            read_message(&mut r),
            Err(RecvError::Decode(DecodeError::Truncated { .. }))
        ));
        let mut r = &b[..];
        assert_eq!(read_message(&mut r).unwrap(), Message::DecoyReveal(vec![1, 2, 3]));
    }
}

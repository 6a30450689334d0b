//! Binary framing for the parameter and scheduling channels.
//!
//! A frame is a 5-byte header (`u32` little-endian payload length, then a
//! `u8` message code) followed by the payload. Integers are fixed-width
//! little-endian, floats are IEEE-754 `f64` little-endian, strings and lists
//! carry a `u32` length prefix.

use alloc::string::String;
use alloc::vec::Vec;

use crate::consistency::{Clock, WorkerId};
use crate::schedule::ScheduleDecision;

pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 5;

pub const GET_REQ: u8 = 0x01;
pub const GET_RESP: u8 = 0x02;
pub const INC: u8 = 0x03;
pub const PUT: u8 = 0x04;
pub const CLOCK_COMMIT: u8 = 0x05;
pub const DECISION: u8 = 0x10;
pub const PARTIAL: u8 = 0x11;
pub const PULL_DONE: u8 = 0x12;
pub const HELLO: u8 = 0x20;
pub const SHUTDOWN: u8 = 0x21;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("truncated at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown message type {code:#04x} at byte {offset}")]
    UnknownType { offset: usize, code: u8 },
    #[error("frame declares {declared} payload bytes but {actual} are present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("invalid UTF-8 string at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("invalid {what} at byte {offset}")]
    InvalidValue { offset: usize, what: &'static str },
    #[error("payload of {0} bytes exceeds the u32 length field")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Worker = 0,
    Scheduler = 1,
    Server = 2,
}

/// Outcome carried by a `GET_RESP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    UnknownTable = 1,
    UnknownRow = 2,
    UnknownWorker = 3,
    Interrupted = 4,
    PutConflict = 5,
    BadRequest = 6,
}

impl Status {
    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Ok,
            1 => Self::UnknownTable,
            2 => Self::UnknownRow,
            3 => Self::UnknownWorker,
            4 => Self::Interrupted,
            5 => Self::PutConflict,
            6 => Self::BadRequest,
            _ => return None,
        })
    }
}

/// One additive cell update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncEntry {
    pub row: u64,
    pub col: u32,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    GetReq {
        table: String,
        row: u64,
        reader: WorkerId,
    },
    /// Reply to `GET_REQ` and acknowledgement of `CLOCK_COMMIT`. For a read,
    /// `clock` is the shard's frontier when the row was taken; for a commit
    /// it is the committer's new clock.
    GetResp {
        status: Status,
        clock: Clock,
        values: Vec<f64>,
        detail: String,
    },
    Inc {
        table: String,
        producer: WorkerId,
        clock: Clock,
        entries: Vec<IncEntry>,
    },
    Put {
        table: String,
        row: u64,
        col: u32,
        value: f64,
        writer: WorkerId,
        clock: Clock,
    },
    ClockCommit {
        worker: WorkerId,
        clock: Clock,
    },
    Decision(ScheduleDecision),
    Partial {
        clock: Clock,
        worker: WorkerId,
        values: Vec<f64>,
    },
    PullDone {
        clock: Clock,
    },
    Hello {
        version: u8,
        role: Role,
        id: u32,
    },
    Shutdown,
}

impl Message {
    pub fn code(&self) -> u8 {
        match self {
            Self::GetReq { .. } => GET_REQ,
            Self::GetResp { .. } => GET_RESP,
            Self::Inc { .. } => INC,
            Self::Put { .. } => PUT,
            Self::ClockCommit { .. } => CLOCK_COMMIT,
            Self::Decision(_) => DECISION,
            Self::Partial { .. } => PARTIAL,
            Self::PullDone { .. } => PULL_DONE,
            Self::Hello { .. } => HELLO,
            Self::Shutdown => SHUTDOWN,
        }
    }
}

pub fn is_known_code(code: u8) -> bool {
    matches!(
        code,
        GET_REQ | GET_RESP | INC | PUT | CLOCK_COMMIT | DECISION | PARTIAL | PULL_DONE | HELLO
            | SHUTDOWN
    )
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) -> Result<(), ProtocolError> {
        self.u32(u32::try_from(n).map_err(|_| ProtocolError::TooLarge(n))?);
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<(), ProtocolError> {
        self.len(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn f64s(&mut self, v: &[f64]) -> Result<(), ProtocolError> {
        self.len(v.len())?;
        v.iter().for_each(|x| self.f64(*x));
        Ok(())
    }
}

fn encode_payload(msg: &Message, w: &mut Writer) -> Result<(), ProtocolError> {
    match msg {
        Message::GetReq { table, row, reader } => {
            w.str(table)?;
            w.u64(*row);
            w.u32(*reader);
        }
        Message::GetResp {
            status,
            clock,
            values,
            detail,
        } => {
            w.u8(*status as u8);
            w.u64(*clock);
            w.f64s(values)?;
            w.str(detail)?;
        }
        Message::Inc {
            table,
            producer,
            clock,
            entries,
        } => {
            w.str(table)?;
            w.u32(*producer);
            w.u64(*clock);
            w.len(entries.len())?;
            for e in entries {
                w.u64(e.row);
                w.u32(e.col);
                w.f64(e.delta);
            }
        }
        Message::Put {
            table,
            row,
            col,
            value,
            writer,
            clock,
        } => {
            w.str(table)?;
            w.u64(*row);
            w.u32(*col);
            w.f64(*value);
            w.u32(*writer);
            w.u64(*clock);
        }
        Message::ClockCommit { worker, clock } => {
            w.u32(*worker);
            w.u64(*clock);
        }
        Message::Decision(d) => {
            w.u64(d.clock);
            w.u8(d.whole_model as u8);
            w.u64(d.priority_version);
            w.len(d.assignments.len())?;
            for (worker, indices) in &d.assignments {
                w.u32(*worker);
                w.len(indices.len())?;
                indices.iter().for_each(|j| w.u64(*j as u64));
            }
        }
        Message::Partial {
            clock,
            worker,
            values,
        } => {
            w.u64(*clock);
            w.u32(*worker);
            w.f64s(values)?;
        }
        Message::PullDone { clock } => w.u64(*clock),
        Message::Hello { version, role, id } => {
            w.u8(*version);
            w.u8(*role as u8);
            w.u32(*id);
        }
        Message::Shutdown => {}
    }
    Ok(())
}

/// Serializes one message as a complete frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut w = Writer(Vec::with_capacity(64));
    w.0.extend_from_slice(&[0; HEADER_LEN]);
    encode_payload(msg, &mut w)?;
    let payload = w.0.len() - HEADER_LEN;
    let len = u32::try_from(payload).map_err(|_| ProtocolError::TooLarge(payload))?;
    w.0[..4].copy_from_slice(&len.to_le_bytes());
    w.0[4] = msg.code();
    Ok(w.0)
}

/// Parsed frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub length: usize,
    pub code: u8,
}

impl FrameHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < HEADER_LEN {
            return Err(ProtocolError::Truncated {
                offset: bytes.len(),
                needed: HEADER_LEN - bytes.len(),
            });
        }
        let length = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let code = bytes[4];
        if !is_known_code(code) {
            return Err(ProtocolError::UnknownType { offset: 4, code });
        }
        Ok(Self { length, code })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf[0]` within the frame, for error reporting.
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(ProtocolError::Truncated {
                offset: self.base + self.buf.len(),
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn offset(&self) -> usize {
        self.base + self.pos
    }
    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ProtocolError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_bits(self.u64()?))
    }
    /// Reads a count whose elements need at least `elem` bytes each,
    /// rejecting counts the remaining payload cannot hold.
    fn count(&mut self, elem: usize) -> Result<usize, ProtocolError> {
        let n = self.u32()? as usize;
        let rest = self.buf.len() - self.pos;
        if n.saturating_mul(elem) > rest {
            return Err(ProtocolError::Truncated {
                offset: self.base + self.buf.len(),
                needed: n * elem - rest,
            });
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, ProtocolError> {
        let n = self.count(1)?;
        let at = self.offset();
        let bytes = self.take(n)?;
        core::str::from_utf8(bytes)
            .map(String::from)
            .map_err(|_| ProtocolError::InvalidUtf8 { offset: at })
    }
    fn f64s(&mut self) -> Result<Vec<f64>, ProtocolError> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn bool(&mut self) -> Result<bool, ProtocolError> {
        let at = self.offset();
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(ProtocolError::InvalidValue {
                offset: at,
                what: "bool",
            }),
        }
    }
}

/// Decodes a payload whose header has already been read.
pub fn decode_payload(code: u8, payload: &[u8]) -> Result<Message, ProtocolError> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
        base: HEADER_LEN,
    };
    let msg = match code {
        GET_REQ => Message::GetReq {
            table: r.str()?,
            row: r.u64()?,
            reader: r.u32()?,
        },
        GET_RESP => {
            let at = r.offset();
            let status = Status::from_code(r.u8()?).ok_or(ProtocolError::InvalidValue {
                offset: at,
                what: "status",
            })?;
            Message::GetResp {
                status,
                clock: r.u64()?,
                values: r.f64s()?,
                detail: r.str()?,
            }
        }
        INC => {
            let table = r.str()?;
            let producer = r.u32()?;
            let clock = r.u64()?;
            let n = r.count(20)?;
            let entries = (0..n)
                .map(|_| {
                    Ok(IncEntry {
                        row: r.u64()?,
                        col: r.u32()?,
                        delta: r.f64()?,
                    })
                })
                .collect::<Result<_, ProtocolError>>()?;
            Message::Inc {
                table,
                producer,
                clock,
                entries,
            }
        }
        PUT => Message::Put {
            table: r.str()?,
            row: r.u64()?,
            col: r.u32()?,
            value: r.f64()?,
            writer: r.u32()?,
            clock: r.u64()?,
        },
        CLOCK_COMMIT => Message::ClockCommit {
            worker: r.u32()?,
            clock: r.u64()?,
        },
        DECISION => {
            let clock = r.u64()?;
            let whole_model = r.bool()?;
            let priority_version = r.u64()?;
            let n = r.count(8)?;
            let mut assignments = Vec::with_capacity(n);
            for _ in 0..n {
                let worker = r.u32()?;
                let k = r.count(8)?;
                let mut indices = Vec::with_capacity(k);
                for _ in 0..k {
                    let at = r.offset();
                    let j = r.u64()?;
                    indices.push(usize::try_from(j).map_err(|_| ProtocolError::InvalidValue {
                        offset: at,
                        what: "index",
                    })?);
                }
                assignments.push((worker, indices));
            }
            Message::Decision(ScheduleDecision {
                clock,
                assignments,
                whole_model,
                priority_version,
            })
        }
        PARTIAL => Message::Partial {
            clock: r.u64()?,
            worker: r.u32()?,
            values: r.f64s()?,
        },
        PULL_DONE => Message::PullDone { clock: r.u64()? },
        HELLO => {
            let version = r.u8()?;
            let at = r.offset();
            let role = match r.u8()? {
                0 => Role::Worker,
                1 => Role::Scheduler,
                2 => Role::Server,
                _ => {
                    return Err(ProtocolError::InvalidValue {
                        offset: at,
                        what: "role",
                    })
                }
            };
            Message::Hello {
                version,
                role,
                id: r.u32()?,
            }
        }
        SHUTDOWN => Message::Shutdown,
        code => return Err(ProtocolError::UnknownType { offset: 4, code }),
    };
    if r.pos != payload.len() {
        return Err(ProtocolError::LengthMismatch {
            declared: payload.len(),
            actual: r.pos,
        });
    }
    Ok(msg)
}

/// Decodes exactly one complete frame.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(ProtocolError::LengthMismatch {
            declared: used - HEADER_LEN,
            actual: bytes.len() - HEADER_LEN,
        });
    }
    Ok(msg)
}

/// Decodes the first frame in `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), ProtocolError> {
    let header = FrameHeader::parse(bytes)?;
    let available = bytes.len() - HEADER_LEN;
    if available < header.length {
        return Err(ProtocolError::LengthMismatch {
            declared: header.length,
            actual: available,
        });
    }
    let end = HEADER_LEN + header.length;
    Ok((decode_payload(header.code, &bytes[HEADER_LEN..end])?, end))
}

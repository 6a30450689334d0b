//! Framed message links: an in-memory loopback and TCP, both carrying the
//! exact bytes produced by the codec.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use mlps_core::protocol::{
    decode_payload, encode, FrameHeader, Message, ProtocolError, Role, Status, HEADER_LEN,
    PROTOCOL_VERSION,
};

use crate::server::ParamServer;
use crate::table::CellOp;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("unexpected message: {0}")]
    Unexpected(String),
}

/// Frames sent on one side of a link, in order.
pub type Tap = Arc<Mutex<Vec<Vec<u8>>>>;

pub fn new_tap() -> Tap {
    Arc::new(Mutex::new(Vec::new()))
}

/// A bidirectional, per-direction FIFO message channel.
pub trait Link: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Message, TransportError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError>;
}

impl Link for Box<dyn Link> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        (**self).send(msg)
    }
    fn recv(&mut self) -> Result<Message, TransportError> {
        (**self).recv()
    }
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        (**self).recv_timeout(timeout)
    }
}

fn record(tap: &Option<Tap>, frame: &[u8]) {
    if let Some(tap) = tap {
        tap.lock().unwrap_or_else(|e| e.into_inner()).push(frame.to_vec());
    }
}

fn decode_frame(frame: &[u8]) -> Result<Message, TransportError> {
    let header = FrameHeader::parse(frame)?;
    let payload = &frame[HEADER_LEN..];
    if payload.len() != header.length {
        return Err(ProtocolError::LengthMismatch {
            declared: header.length,
            actual: payload.len(),
        }
        .into());
    }
    Ok(decode_payload(header.code, payload)?)
}

/// In-memory link; frames are encoded and decoded exactly as on TCP.
pub struct ChannelLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    tap: Option<Tap>,
}

/// Two connected loopback endpoints.
pub fn loopback_pair() -> (ChannelLink, ChannelLink) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        ChannelLink {
            tx: atx,
            rx: arx,
            tap: None,
        },
        ChannelLink {
            tx: btx,
            rx: brx,
            tap: None,
        },
    )
}

impl ChannelLink {
    pub fn with_tap(mut self, tap: Tap) -> Self {
        self.tap = Some(tap);
        self
    }
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let frame = encode(msg)?;
        record(&self.tap, &frame);
        self.tx.send(frame).map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed)?;
        decode_frame(&frame)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(frame) => decode_frame(&frame),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}

/// Length-prefixed frames over a TCP stream.
pub struct TcpLink {
    stream: TcpStream,
    tap: Option<Tap>,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream, tap: None })
    }

    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    pub fn with_tap(mut self, tap: Tap) -> Self {
        self.tap = Some(tap);
        self
    }

    fn read_frame(&mut self) -> Result<Message, TransportError> {
        let mut header = [0u8; HEADER_LEN];
        match self.stream.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(TransportError::Closed),
            Err(e)
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                return Err(TransportError::Timeout)
            }
            Err(e) => return Err(e.into()),
        }
        let parsed = FrameHeader::parse(&header)?;
        let mut payload = vec![0u8; parsed.length];
        self.stream.read_exact(&mut payload).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                TransportError::Closed
            } else {
                e.into()
            }
        })?;
        Ok(decode_payload(parsed.code, &payload)?)
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let frame = encode(msg)?;
        record(&self.tap, &frame);
        self.stream.write_all(&frame).map_err(|e| {
            if matches!(
                e.kind(),
                io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset
            ) {
                TransportError::Closed
            } else {
                e.into()
            }
        })
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        self.stream.set_read_timeout(None)?;
        self.read_frame()
    }

    /// A timeout mid-frame leaves the stream unusable; callers treat
    /// [`TransportError::Timeout`] as fatal.
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        self.stream
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let out = self.read_frame();
        self.stream.set_read_timeout(None)?;
        out
    }
}

pub fn hello(role: Role, id: u32) -> Message {
    Message::Hello {
        version: PROTOCOL_VERSION,
        role,
        id,
    }
}

/// Reads a `HELLO`, checking the protocol version.
pub fn expect_hello(link: &mut dyn Link) -> Result<(Role, u32), TransportError> {
    match link.recv()? {
        Message::Hello { version, role, id } if version == PROTOCOL_VERSION => Ok((role, id)),
        other => Err(TransportError::Unexpected(format!("{other:?}"))),
    }
}

/// Serves one client connection against a shard until `SHUTDOWN` or close.
/// The client's `HELLO` must already have been consumed.
pub fn serve_connection<L: Link>(server: &ParamServer, link: L) -> Result<(), TransportError> {
    match serve(server, link) {
        Err(TransportError::Closed) => Ok(()),
        other => other,
    }
}

fn serve<L: Link>(server: &ParamServer, mut link: L) -> Result<(), TransportError> {
    let schema = server.schema().clone();
    loop {
        let msg = match link.recv() {
            Ok(m) => m,
            Err(TransportError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };
        match msg {
            Message::GetReq { table, row, reader } => {
                let reply = match server.get(&table, row, reader) {
                    Ok(read) => Message::GetResp {
                        status: Status::Ok,
                        clock: read.frontier,
                        values: read.values,
                        detail: String::new(),
                    },
                    Err(e) => error_reply(&e),
                };
                link.send(&reply)?;
            }
            Message::Inc {
                table,
                producer,
                clock,
                entries,
            } => {
                let ops: Result<Vec<_>, _> = entries
                    .iter()
                    .map(|e| {
                        schema
                            .cell(&table, e.row, e.col)
                            .map(|c| (c, CellOp::Delta(e.delta)))
                    })
                    .collect();
                if let Err(e) = ops.and_then(|ops| server.stage(producer, clock, ops)) {
                    log::warn!("shard {}: rejected INC: {e}", server.shard());
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
                let staged = schema
                    .cell(&table, row, col)
                    .and_then(|c| server.stage(writer, clock, [(c, CellOp::Overwrite(value))]));
                if let Err(e) = staged {
                    log::warn!("shard {}: rejected PUT: {e}", server.shard());
                }
            }
            Message::ClockCommit { worker, clock } => {
                let reply = match server.commit(worker, clock) {
                    Ok(next) => Message::GetResp {
                        status: Status::Ok,
                        clock: next,
                        values: Vec::new(),
                        detail: String::new(),
                    },
                    Err(e) => error_reply(&e),
                };
                link.send(&reply)?;
            }
            Message::Shutdown => return Ok(()),
            other => {
                return Err(TransportError::Unexpected(format!(
                    "shard {} got {other:?}",
                    server.shard()
                )))
            }
        }
    }
}

fn error_reply(e: &crate::error::PsError) -> Message {
    Message::GetResp {
        status: e.status(),
        clock: 0,
        values: Vec::new(),
        detail: e.detail(),
    }
}

/// A TCP listener serving one shard. Accepts exactly `expected` client
/// connections, each on its own thread.
pub struct ShardEndpoint {
    addr: SocketAddr,
    accept: JoinHandle<Result<(), TransportError>>,
}

impl ShardEndpoint {
    pub fn spawn(
        server: Arc<ParamServer>,
        expected: usize,
        taps: Option<Vec<Tap>>,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let addr = listener.local_addr()?;
        let accept = thread::Builder::new()
            .name(format!("shard{}-accept", server.shard()))
            .spawn(move || {
                let mut handlers = Vec::new();
                for _ in 0..expected {
                    let (stream, _) = listener.accept()?;
                    let mut link = TcpLink::new(stream)?;
                    let (_, id) = expect_hello(&mut link)?;
                    if let Some(tap) = taps.as_ref().and_then(|t| t.get(id as usize)) {
                        link = link.with_tap(tap.clone());
                    }
                    let server = server.clone();
                    handlers.push(thread::spawn(move || serve_connection(&server, link)));
                }
                for h in handlers {
                    h.join()
                        .map_err(|_| TransportError::Unexpected("handler panicked".into()))??;
                }
                Ok(())
            })?;
        Ok(Self { addr, accept })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn join(self) -> Result<(), TransportError> {
        self.accept
            .join()
            .map_err(|_| TransportError::Unexpected("accept thread panicked".into()))?
    }
}

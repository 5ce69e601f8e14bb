use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use super::server::ServerSession;
use super::wire::WireMessage;
use crate::error::{Error, ProtocolErrorCode, Result};

/// Client side of a reliable, ordered line exchange: every request line gets
/// exactly one reply line.
pub trait Transport {
    fn roundtrip_line(&mut self, request: &str) -> Result<String>;

    fn roundtrip(&mut self, msg: &WireMessage) -> Result<WireMessage> {
        let reply = self.roundtrip_line(&msg.encode())?;
        WireMessage::decode(&reply)
    }
}

/// Calls a [`ServerSession`] directly, still going through the line codec.
pub struct InProcessTransport {
    pub server: ServerSession,
}

impl InProcessTransport {
    pub fn new(server: ServerSession) -> Self {
        InProcessTransport { server }
    }
}

impl Transport for InProcessTransport {
    fn roundtrip_line(&mut self, request: &str) -> Result<String> {
        let reply = match WireMessage::decode(request) {
            Ok(msg) => self.server.handle(msg),
            Err(Error::Protocol { code, detail }) => WireMessage::error(code, detail),
            Err(e) => WireMessage::error(ProtocolErrorCode::Malformed, e.to_string()),
        };
        Ok(reply.encode())
    }
}

/// NDJSON over TCP.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpTransport {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }
}

impl Transport for TcpTransport {
    fn roundtrip_line(&mut self, request: &str) -> Result<String> {
        let io = |e: std::io::Error| Error::protocol(ProtocolErrorCode::Transport, e.to_string());
        self.writer.write_all(request.as_bytes()).map_err(io)?;
        self.writer.flush().map_err(io)?;
        let mut line = String::new();
        if self.reader.read_line(&mut line).map_err(io)? == 0 {
            return Err(Error::protocol(
                ProtocolErrorCode::Transport,
                "connection closed by server",
            ));
        }
        Ok(line)
    }
}

/// Records every byte in both directions.
pub struct CapturingTransport<T> {
    inner: T,
    /// `(request, reply)` pairs in order.
    pub exchanges: Vec<(String, String)>,
}

impl<T: Transport> CapturingTransport<T> {
    pub fn new(inner: T) -> Self {
        CapturingTransport {
            inner,
            exchanges: Vec::new(),
        }
    }

    pub fn into_inner(self) -> T {
        self.inner
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    /// Everything sent client to server, concatenated.
    pub fn sent_bytes(&self) -> String {
        self.exchanges.iter().map(|(req, _)| req.as_str()).collect()
    }

    /// Everything sent server to client, concatenated.
    pub fn received_bytes(&self) -> String {
        self.exchanges.iter().map(|(_, rep)| rep.as_str()).collect()
    }
}

impl<T: Transport> Transport for CapturingTransport<T> {
    fn roundtrip_line(&mut self, request: &str) -> Result<String> {
        let reply = self.inner.roundtrip_line(request)?;
        self.exchanges.push((request.to_string(), reply.clone()));
        Ok(reply)
    }
}

/// Serve one connection until the client finishes or either side aborts.
pub(crate) fn serve_stream(stream: TcpStream, mut session: ServerSession) -> Result<ServerSession> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut line = String::new();
    while !session.is_closed() {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let reply = match WireMessage::decode(&line) {
            Ok(msg) => session.handle(msg),
            Err(Error::Protocol { code, detail }) => {
                let reply = WireMessage::error(code, detail);
                writer.write_all(reply.encode().as_bytes())?;
                break;
            }
            Err(e) => return Err(e),
        };
        writer.write_all(reply.encode().as_bytes())?;
        writer.flush()?;
    }
    Ok(session)
}

use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use sparsewpir_core::{Context, IcfEvent, KeywordType, ProfileId};

use crate::error::{IcfError, Result};
use crate::metrics::Stats;
use crate::wire::{read_frame, write_frame, ErrorCode, Request, Response};

/// Blocking connection to an identifier cache. One outstanding request at a time.
#[derive(Debug)]
pub struct IcfClient {
    stream: TcpStream,
    peer: SocketAddr,
    sent: u64,
    received: u64,
}

impl IcfClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Self::from_stream(stream)
    }

    pub fn connect_timeout(addr: &SocketAddr, timeout: Duration) -> Result<Self> {
        Self::from_stream(TcpStream::connect_timeout(addr, timeout)?)
    }

    fn from_stream(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr()?;
        Ok(IcfClient { stream, peer, sent: 0, received: 0 })
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    /// Frame bytes written and read so far, headers included.
    pub fn traffic(&self) -> (u64, u64) {
        (self.sent, self.received)
    }

    /// Sends `req` and returns the response as received, error frames included.
    pub fn call(&mut self, req: &Request) -> Result<Response> {
        let (ty, body) = req.encode();
        write_frame(&mut self.stream, ty, &body)?;
        self.sent += body.len() as u64 + 5;
        let (ty, body) = read_frame(&mut self.stream)?
            .ok_or_else(|| IcfError::Protocol("connection closed before the response".into()))?;
        self.received += body.len() as u64 + 5;
        Response::decode(ty, body)
    }

    fn expect(&mut self, req: &Request) -> Result<Response> {
        match self.call(req)? {
            Response::Error { code: ErrorCode::ContextMismatch, context: Some(c), .. } => Err(IcfError::ContextMismatch(Box::new(c))),
            Response::Error { code: ErrorCode::PeerUnreachable, message, .. } => {
                // The server prefixes the message with the unreachable keyword type.
                let (kind, reason) = message.split_once(": ").unwrap_or(("", &message));
                let fallback = match req {
                    Request::GetContext(k) | Request::Query { kind: k, .. } => *k,
                    _ => KeywordType::Supi,
                };
                let kind = kind.parse().unwrap_or(fallback);
                Err(IcfError::PeerUnreachable { kind, reason: reason.to_owned() })
            }
            Response::Error { code, message, .. } => Err(IcfError::Remote { code, message }),
            ok => Ok(ok),
        }
    }

    pub fn get_context(&mut self, kind: KeywordType) -> Result<Context> {
        match self.expect(&Request::GetContext(kind))? {
            Response::Context(c) => Ok(c),
            other => Err(unexpected(&other)),
        }
    }

    /// Uploads a serialized profile; returns its id and whether the server already held it.
    pub fn put_profile(&mut self, profile: &[u8]) -> Result<(ProfileId, bool)> {
        match self.expect(&Request::PutProfile(profile.to_vec()))? {
            Response::ProfileAck { id, cached } => Ok((id, cached)),
            other => Err(unexpected(&other)),
        }
    }

    pub fn query(&mut self, kind: KeywordType, query: &[u8]) -> Result<Vec<u8>> {
        match self.expect(&Request::Query { kind, query: query.to_vec() })? {
            Response::Answer(a) => Ok(a),
            other => Err(unexpected(&other)),
        }
    }

    /// Returns whether the event triggered a resize.
    pub fn ingest(&mut self, ev: &IcfEvent) -> Result<bool> {
        self.ingest_line(&ev.to_json())
    }

    pub fn ingest_line(&mut self, line: &str) -> Result<bool> {
        match self.expect(&Request::Ingest(line.to_owned()))? {
            Response::Ingested { resized } => Ok(resized),
            other => Err(unexpected(&other)),
        }
    }

    pub fn stats(&mut self) -> Result<Stats> {
        match self.expect(&Request::Stats)? {
            Response::Stats(json) => serde_json::from_str(&json).map_err(|e| IcfError::Protocol(e.to_string())),
            other => Err(unexpected(&other)),
        }
    }
}

fn unexpected(r: &Response) -> IcfError {
    IcfError::Protocol(format!("unexpected response {:#04x}", r.encode().0))
}

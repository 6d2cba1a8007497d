//! Length-prefixed frames: `[u32 BE length][u8 type][body]`, the length covering type and body.

use std::io::{self, Read, Write};

use sparsewpir_core::{Context, KeywordType, ProfileId};

use crate::error::{IcfError, Result};

pub const MAX_FRAME: usize = 1 << 28;

pub mod msg {
    pub const GET_CONTEXT: u8 = 0x01;
    pub const PUT_PROFILE: u8 = 0x02;
    pub const QUERY: u8 = 0x03;
    pub const INGEST: u8 = 0x04;
    pub const STATS: u8 = 0x05;

    pub const CONTEXT: u8 = 0x81;
    pub const PROFILE_ACK: u8 = 0x82;
    pub const ANSWER: u8 = 0x83;
    pub const INGESTED: u8 = 0x84;
    pub const STATS_REPORT: u8 = 0x85;
    pub const ERROR: u8 = 0xe0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    ContextMismatch = 1,
    UnknownProfile = 2,
    Malformed = 3,
    UnsupportedKeyword = 4,
    PeerUnreachable = 5,
    Internal = 6,
    ProfileMismatch = 7,
}

impl ErrorCode {
    fn from_u8(v: u8) -> Option<Self> {
        use ErrorCode::*;
        [ContextMismatch, UnknownProfile, Malformed, UnsupportedKeyword, PeerUnreachable, Internal, ProfileMismatch]
            .into_iter()
            .find(|c| *c as u8 == v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    GetContext(KeywordType),
    PutProfile(Vec<u8>),
    /// Serialized query for the index of the given keyword type.
    Query { kind: KeywordType, query: Vec<u8> },
    /// One event as a JSON line.
    Ingest(String),
    Stats,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Context(Context),
    ProfileAck { id: ProfileId, cached: bool },
    Answer(Vec<u8>),
    Ingested { resized: bool },
    Stats(String),
    Error { code: ErrorCode, message: String, context: Option<Context> },
}

pub fn write_frame<W: Write>(w: &mut W, ty: u8, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len() + 1)
        .ok()
        .filter(|&l| l as usize <= MAX_FRAME)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut head = [0u8; 5];
    head[..4].copy_from_slice(&len.to_be_bytes());
    head[4] = ty;
    w.write_all(&head)?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame; `None` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(u8, Vec<u8>)>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    read_frame_after_len(r, u32::from_be_bytes(len) as usize).map(Some)
}

pub(crate) fn read_frame_after_len<R: Read>(r: &mut R, len: usize) -> Result<(u8, Vec<u8>)> {
    if len == 0 || len > MAX_FRAME {
        return Err(IcfError::Protocol(format!("frame length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let ty = buf.remove(0);
    Ok((ty, buf))
}

fn kind_from(b: Option<&u8>) -> Result<KeywordType> {
    b.copied()
        .and_then(KeywordType::from_tag)
        .ok_or_else(|| IcfError::Protocol("missing or unknown keyword type".into()))
}

impl Request {
    pub fn encode(&self) -> (u8, Vec<u8>) {
        match self {
            Request::GetContext(k) => (msg::GET_CONTEXT, vec![k.tag()]),
            Request::PutProfile(b) => (msg::PUT_PROFILE, b.clone()),
            Request::Query { kind, query } => {
                let mut body = Vec::with_capacity(query.len() + 1);
                body.push(kind.tag());
                body.extend_from_slice(query);
                (msg::QUERY, body)
            }
            Request::Ingest(line) => (msg::INGEST, line.as_bytes().to_vec()),
            Request::Stats => (msg::STATS, Vec::new()),
        }
    }

    pub fn decode(ty: u8, mut body: Vec<u8>) -> Result<Self> {
        Ok(match ty {
            msg::GET_CONTEXT if body.len() == 1 => Request::GetContext(kind_from(body.first())?),
            msg::PUT_PROFILE => Request::PutProfile(body),
            msg::QUERY => {
                let kind = kind_from(body.first())?;
                body.remove(0);
                Request::Query { kind, query: body }
            }
            msg::INGEST => Request::Ingest(String::from_utf8(body).map_err(|_| IcfError::Protocol("event is not UTF-8".into()))?),
            msg::STATS if body.is_empty() => Request::Stats,
            _ => return Err(IcfError::Protocol(format!("unexpected request type {ty:#04x} ({} bytes)", body.len()))),
        })
    }
}

impl Response {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error { code, message: message.into(), context: None }
    }

    pub fn encode(&self) -> (u8, Vec<u8>) {
        match self {
            Response::Context(c) => (msg::CONTEXT, c.to_bytes()),
            Response::ProfileAck { id, cached } => {
                let mut body = id.0.to_vec();
                body.push(*cached as u8);
                (msg::PROFILE_ACK, body)
            }
            Response::Answer(b) => (msg::ANSWER, b.clone()),
            Response::Ingested { resized } => (msg::INGESTED, vec![*resized as u8]),
            Response::Stats(json) => (msg::STATS_REPORT, json.as_bytes().to_vec()),
            Response::Error { code, message, context } => {
                let mut body = vec![*code as u8];
                body.extend_from_slice(&(message.len() as u32).to_be_bytes());
                body.extend_from_slice(message.as_bytes());
                if let Some(c) = context {
                    body.extend_from_slice(&c.to_bytes());
                }
                (msg::ERROR, body)
            }
        }
    }

    pub fn decode(ty: u8, body: Vec<u8>) -> Result<Self> {
        let bad = || IcfError::Protocol(format!("malformed response type {ty:#04x}"));
        Ok(match ty {
            msg::CONTEXT => Response::Context(Context::from_bytes(&body)?),
            msg::PROFILE_ACK if body.len() == 33 => {
                Response::ProfileAck { id: ProfileId(body[..32].try_into().unwrap()), cached: body[32] != 0 }
            }
            msg::ANSWER => Response::Answer(body),
            msg::INGESTED if body.len() == 1 => Response::Ingested { resized: body[0] != 0 },
            msg::STATS_REPORT => Response::Stats(String::from_utf8(body).map_err(|_| bad())?),
            msg::ERROR if body.len() >= 5 => {
                let code = ErrorCode::from_u8(body[0]).ok_or_else(bad)?;
                let len = u32::from_be_bytes(body[1..5].try_into().unwrap()) as usize;
                let msg = body.get(5..5 + len).ok_or_else(bad)?;
                let message = String::from_utf8_lossy(msg).into_owned();
                let rest = &body[5 + len..];
                let context = if rest.is_empty() { None } else { Some(Context::from_bytes(rest)?) };
                Response::Error { code, message, context }
            }
            _ => return Err(bad()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Context {
        Context { dims: vec![4, 4], ring_degree: 256, version: 3, record_bytes: 128, theta: 2, provisioned: 64, toy: true }
    }

    #[test]
    fn frames_roundtrip() {
        let reqs = [
            Request::GetContext(KeywordType::Tmsi),
            Request::PutProfile(vec![1, 2, 3]),
            Request::Query { kind: KeywordType::Suci, query: vec![9; 40] },
            Request::Ingest("{}".into()),
            Request::Stats,
        ];
        for r in reqs {
            let (ty, body) = r.encode();
            let mut buf = Vec::new();
            write_frame(&mut buf, ty, &body).unwrap();
            assert_eq!(u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize, body.len() + 1);
            let (ty2, body2) = read_frame(&mut buf.as_slice()).unwrap().unwrap();
            assert_eq!(Request::decode(ty2, body2).unwrap(), r);
        }
        let resps = [
            Response::Context(ctx()),
            Response::ProfileAck { id: ProfileId([7; 32]), cached: true },
            Response::Answer(vec![5; 10]),
            Response::Ingested { resized: false },
            Response::Error { code: ErrorCode::ContextMismatch, message: "stale".into(), context: Some(ctx()) },
            Response::error(ErrorCode::Malformed, "bad"),
        ];
        for r in resps {
            let (ty, body) = r.encode();
            assert_eq!(Response::decode(ty, body).unwrap(), r);
        }
    }

    #[test]
    fn clean_eof_and_truncation() {
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
        let mut buf = Vec::new();
        write_frame(&mut buf, msg::STATS, &[]).unwrap();
        write_frame(&mut buf, msg::QUERY, &[1, 2, 3]).unwrap();
        buf.truncate(buf.len() - 1);
        let mut r = buf.as_slice();
        assert!(read_frame(&mut r).unwrap().is_some());
        assert!(read_frame(&mut r).is_err());
        assert!(Request::decode(msg::GET_CONTEXT, vec![9]).is_err());
        assert!(read_frame(&mut [0u8, 0, 0, 0].as_slice()).is_err());
    }
}

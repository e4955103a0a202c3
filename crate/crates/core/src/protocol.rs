//! Length-prefixed wire framing between client and server.
//!
//! A frame is `u32` payload length, `u8` message type, then the payload.
//! Messages the server receives are built from public material only: the
//! handshake carries a [`PublicKeySet`], which has no secret-key field.

use std::io::{Read, Write};

use latent_ckks::{params_id, Ciphertext, PublicKeySet, Wire};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::latent::LatentTensor;
use crate::layout::Layout;
use crate::packed::PackedTensor;
use crate::runtime::{ClientContext, InferRequest, InferenceTrace, RefreshOracle, ServerContext};

pub const HANDSHAKE: u8 = 1;
pub const INFER_REQUEST: u8 = 2;
pub const REFRESH_REQUEST: u8 = 3;
pub const REFRESH_RESPONSE: u8 = 4;
pub const LOGITS: u8 = 5;

/// Upper bound on a single frame, to reject corrupt length prefixes early.
pub const MAX_FRAME: usize = 1 << 31;

/// Messages sent from the client to the server.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerBound {
    Handshake { fingerprint: u64, keys: PublicKeySet },
    InferRequest(InferRequest),
    RefreshResponse(PackedTensor),
}

/// Messages sent from the server to the client.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientBound {
    RefreshRequest(PackedTensor),
    Logits(Ciphertext),
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Protocol("truncated message".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn put_blob(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

/// `u64` fingerprint, `u32` height, width, stride phase and channel count,
/// then one length-prefixed ciphertext per channel.
pub fn encode_tensor(fingerprint: u64, t: &PackedTensor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&fingerprint.to_le_bytes());
    for v in [t.height(), t.width(), t.stride_phase(), t.channel_count()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for ct in &t.channels {
        put_blob(&mut out, &ct.to_bytes());
    }
    out
}

fn read_tensor(r: &mut Reader) -> Result<(u64, PackedTensor)> {
    let fingerprint = r.u64()?;
    let (height, width, stride_phase, count) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()?);
    if stride_phase == 0 || !stride_phase.is_power_of_two() {
        return Err(Error::Protocol(format!("invalid stride phase {stride_phase}")));
    }
    let channels = (0..count)
        .map(|_| Ok(Ciphertext::from_bytes(r.blob()?)?))
        .collect::<Result<Vec<_>>>()?;
    if channels.iter().any(|c| c.params_id() != fingerprint) {
        return Err(Error::Protocol("channel fingerprint differs from the message".into()));
    }
    let layout = Layout {
        height,
        width,
        stride_phase,
    };
    Ok((fingerprint, PackedTensor { channels, layout }))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(u64, PackedTensor)> {
    let mut r = Reader { buf: bytes };
    let t = read_tensor(&mut r)?;
    r.finish()?;
    Ok(t)
}

impl ServerBound {
    pub fn message_type(&self) -> u8 {
        match self {
            ServerBound::Handshake { .. } => HANDSHAKE,
            ServerBound::InferRequest(_) => INFER_REQUEST,
            ServerBound::RefreshResponse(_) => REFRESH_RESPONSE,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            ServerBound::Handshake { fingerprint, keys } => {
                let mut out = fingerprint.to_le_bytes().to_vec();
                out.extend_from_slice(&keys.to_bytes());
                out
            }
            ServerBound::InferRequest(req) => encode_tensor(req.fingerprint, &req.tensor),
            ServerBound::RefreshResponse(t) => encode_tensor(fingerprint_of(t), t),
        }
    }

    pub fn parse(kind: u8, payload: &[u8]) -> Result<Self> {
        match kind {
            HANDSHAKE => {
                let mut r = Reader { buf: payload };
                let fingerprint = r.u64()?;
                let keys = PublicKeySet::from_bytes(r.buf)?;
                Ok(ServerBound::Handshake { fingerprint, keys })
            }
            INFER_REQUEST => {
                let (fingerprint, tensor) = decode_tensor(payload)?;
                Ok(ServerBound::InferRequest(InferRequest { fingerprint, tensor }))
            }
            REFRESH_RESPONSE => Ok(ServerBound::RefreshResponse(decode_tensor(payload)?.1)),
            other => Err(Error::Protocol(format!("unexpected message type {other} at the server"))),
        }
    }
}

impl ClientBound {
    pub fn message_type(&self) -> u8 {
        match self {
            ClientBound::RefreshRequest(_) => REFRESH_REQUEST,
            ClientBound::Logits(_) => LOGITS,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            ClientBound::RefreshRequest(t) => encode_tensor(fingerprint_of(t), t),
            ClientBound::Logits(ct) => ct.to_bytes(),
        }
    }

    pub fn parse(kind: u8, payload: &[u8]) -> Result<Self> {
        match kind {
            REFRESH_REQUEST => Ok(ClientBound::RefreshRequest(decode_tensor(payload)?.1)),
            LOGITS => Ok(ClientBound::Logits(Ciphertext::from_bytes(payload)?)),
            other => Err(Error::Protocol(format!("unexpected message type {other} at the client"))),
        }
    }
}

fn fingerprint_of(t: &PackedTensor) -> u64 {
    t.channels.first().map_or(0, |c| c.params_id())
}

/// Writes one frame; returns the number of bytes written.
pub fn write_frame<W: Write>(w: &mut W, kind: u8, payload: &[u8]) -> Result<u64> {
    if payload.len() > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {} bytes is too large", payload.len())));
    }
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(&[kind])?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(5 + payload.len() as u64)
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<(u8, Vec<u8>)> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let len = u32::from_le_bytes(head[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame length {len} exceeds the limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok((head[4], payload))
}

pub fn send_to_server<W: Write>(w: &mut W, msg: &ServerBound) -> Result<u64> {
    write_frame(w, msg.message_type(), &msg.payload())
}

pub fn send_to_client<W: Write>(w: &mut W, msg: &ClientBound) -> Result<u64> {
    write_frame(w, msg.message_type(), &msg.payload())
}

pub fn recv_at_server<R: Read>(r: &mut R) -> Result<ServerBound> {
    let (kind, payload) = read_frame(r)?;
    ServerBound::parse(kind, &payload)
}

pub fn recv_at_client<R: Read>(r: &mut R) -> Result<ClientBound> {
    let (kind, payload) = read_frame(r)?;
    ClientBound::parse(kind, &payload)
}

/// Server-side oracle that asks the remote client to refresh.
pub struct RemoteRefresh<S: Read + Write> {
    pub stream: S,
}

impl<S: Read + Write> RefreshOracle for RemoteRefresh<S> {
    fn refresh(&mut self, tensor: PackedTensor) -> Result<PackedTensor> {
        send_to_client(&mut self.stream, &ClientBound::RefreshRequest(tensor))?;
        match recv_at_server(&mut self.stream)? {
            ServerBound::RefreshResponse(t) => Ok(t),
            other => Err(Error::Protocol(format!(
                "expected a refresh response, got message type {}",
                other.message_type()
            ))),
        }
    }
}

/// Serves one session on `stream`: handshake, one inference with refresh
/// round trips, then the logits.
pub fn serve_session<S: Read + Write>(mut stream: S, graph: &ModelGraph) -> Result<InferenceTrace> {
    let keys = match recv_at_server(&mut stream)? {
        ServerBound::Handshake { fingerprint, keys } => {
            if fingerprint != params_id(keys.params()) {
                return Err(Error::Protocol("handshake fingerprint does not match its keys".into()));
            }
            keys
        }
        other => {
            return Err(Error::Protocol(format!(
                "expected a handshake, got message type {}",
                other.message_type()
            )))
        }
    };
    let server = ServerContext::new(graph, keys)?;
    let req = match recv_at_server(&mut stream)? {
        ServerBound::InferRequest(req) => req,
        other => {
            return Err(Error::Protocol(format!(
                "expected an inference request, got message type {}",
                other.message_type()
            )))
        }
    };
    let mut oracle = RemoteRefresh { stream: &mut stream };
    let (logits, mut trace) = server.infer(&req, &mut oracle)?;
    trace.bytes_transferred += send_to_client(&mut stream, &ClientBound::Logits(logits))?;
    Ok(trace)
}

/// Client side of [`serve_session`]: returns the encrypted logits.
pub fn run_client<S: Read + Write, R: Rng + ?Sized>(
    mut stream: S,
    client: &ClientContext,
    latent: &LatentTensor,
    rng: &mut R,
) -> Result<Ciphertext> {
    send_to_server(
        &mut stream,
        &ServerBound::Handshake {
            fingerprint: client.fingerprint(),
            keys: client.public_keys().clone(),
        },
    )?;
    send_to_server(&mut stream, &ServerBound::InferRequest(client.encrypt(latent, rng)?))?;
    loop {
        match recv_at_client(&mut stream)? {
            ClientBound::RefreshRequest(t) => {
                let fresh = client.refresh(&t, rng)?;
                send_to_server(&mut stream, &ServerBound::RefreshResponse(fresh))?;
            }
            ClientBound::Logits(ct) => return Ok(ct),
        }
    }
}

//! OBEX-style object push: frame codec, client session and server side.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! opcode:u8  length:u16  [connect params]  header*
//!
//! connect params (CONNECT request, CONNECT response): version:u8 flags:u8 max_packet:u16
//!
//! header 0x01 Name          id:u8 len:u16 ascii-bytes      (len counts id + len + data)
//! header 0xC3 Length        id:u8 value:u32
//! header 0x48 Body          id:u8 len:u16 bytes
//! header 0x49 EndOfBody     id:u8 len:u16 bytes
//! header 0xCB ConnectionId  id:u8 value:u32
//! ```
//!
//! `length` is the size of the whole frame including opcode and length.

use std::fmt;

use thiserror::Error;

use crate::simnet::{transfer_duration, LinkHandle, RadioDevice, SimError, SimTime, SimWorld};

pub const OBEX_VERSION: u8 = 0x10;
pub const DEFAULT_MAX_PACKET: u16 = 1024;
/// opcode + length field.
pub const FRAME_PREFIX_LEN: usize = 3;
/// id + 2-byte length of a byte-sequence header.
pub const SEQ_HEADER_PREFIX_LEN: usize = 3;
/// id + 4-byte value.
pub const U32_HEADER_LEN: usize = 5;
/// Bytes every PUT frame spends before its body chunk.
pub const PUT_FRAME_OVERHEAD: usize = FRAME_PREFIX_LEN + SEQ_HEADER_PREFIX_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Connect,
    Disconnect,
    Put,
    PutFinal,
    Continue,
    Success,
    BadRequest,
    Forbidden,
}

impl Opcode {
    pub fn code(self) -> u8 {
        match self {
            Opcode::Connect => 0x80,
            Opcode::Disconnect => 0x81,
            Opcode::Put => 0x02,
            Opcode::PutFinal => 0x82,
            Opcode::Continue => 0x90,
            Opcode::Success => 0xA0,
            Opcode::BadRequest => 0xC0,
            Opcode::Forbidden => 0xC3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x80 => Opcode::Connect,
            0x81 => Opcode::Disconnect,
            0x02 => Opcode::Put,
            0x82 => Opcode::PutFinal,
            0x90 => Opcode::Continue,
            0xA0 => Opcode::Success,
            0xC0 => Opcode::BadRequest,
            0xC3 => Opcode::Forbidden,
            _ => return None,
        })
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02X}", self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConnectParams {
    pub version: u8,
    pub flags: u8,
    pub max_packet: u16,
}

impl ConnectParams {
    pub fn new(max_packet: u16) -> Self {
        Self {
            version: OBEX_VERSION,
            flags: 0,
            max_packet,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObexHeader {
    Name(String),
    Length(u32),
    Body(Vec<u8>),
    EndOfBody(Vec<u8>),
    ConnectionId(u32),
}

impl ObexHeader {
    pub const NAME: u8 = 0x01;
    pub const LENGTH: u8 = 0xC3;
    pub const BODY: u8 = 0x48;
    pub const END_OF_BODY: u8 = 0x49;
    pub const CONNECTION_ID: u8 = 0xCB;

    pub fn id(&self) -> u8 {
        match self {
            ObexHeader::Name(_) => Self::NAME,
            ObexHeader::Length(_) => Self::LENGTH,
            ObexHeader::Body(_) => Self::BODY,
            ObexHeader::EndOfBody(_) => Self::END_OF_BODY,
            ObexHeader::ConnectionId(_) => Self::CONNECTION_ID,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            ObexHeader::Name(s) => SEQ_HEADER_PREFIX_LEN + s.len(),
            ObexHeader::Body(b) | ObexHeader::EndOfBody(b) => SEQ_HEADER_PREFIX_LEN + b.len(),
            ObexHeader::Length(_) | ObexHeader::ConnectionId(_) => U32_HEADER_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObexFrame {
    pub opcode: Opcode,
    pub connect: Option<ConnectParams>,
    pub headers: Vec<ObexHeader>,
}

impl ObexFrame {
    pub fn new(opcode: Opcode, headers: Vec<ObexHeader>) -> Self {
        Self {
            opcode,
            connect: None,
            headers,
        }
    }

    pub fn connect(max_packet: u16) -> Self {
        Self {
            opcode: Opcode::Connect,
            connect: Some(ConnectParams::new(max_packet)),
            headers: Vec::new(),
        }
    }

    pub fn response(opcode: Opcode) -> Self {
        Self::new(opcode, Vec::new())
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_PREFIX_LEN
            + if self.connect.is_some() { 4 } else { 0 }
            + self
                .headers
                .iter()
                .map(ObexHeader::encoded_len)
                .sum::<usize>()
    }

    pub fn name(&self) -> Option<&str> {
        self.headers.iter().find_map(|h| match h {
            ObexHeader::Name(n) => Some(n.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("frame of {0} bytes exceeds the 65535-byte limit")]
    Oversize(usize),
    #[error("header of {0} bytes exceeds the 65535-byte limit")]
    OversizeHeader(usize),
    #[error("name {0:?} is not single-byte ASCII")]
    NonAsciiName(String),
    #[error("CONNECT frame without connect parameters")]
    MissingConnectParams,
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown opcode 0x{0:02X}")]
    UnknownOpcode(u8),
    #[error("unknown header id 0x{0:02X}")]
    UnknownHeader(u8),
    #[error("length mismatch: {0}")]
    LengthMismatch(&'static str),
}

fn put_u16(out: &mut Vec<u8>, v: usize) -> Result<(), CodecError> {
    let v = u16::try_from(v).map_err(|_| CodecError::OversizeHeader(v))?;
    out.extend_from_slice(&v.to_be_bytes());
    Ok(())
}

pub fn encode_frame(frame: &ObexFrame) -> Result<Vec<u8>, CodecError> {
    if frame.opcode == Opcode::Connect && frame.connect.is_none() {
        return Err(CodecError::MissingConnectParams);
    }
    let total = frame.encoded_len();
    if total > usize::from(u16::MAX) {
        return Err(CodecError::Oversize(total));
    }
    let mut out = Vec::with_capacity(total);
    out.push(frame.opcode.code());
    put_u16(&mut out, total)?;
    if let Some(c) = frame.connect {
        out.push(c.version);
        out.push(c.flags);
        out.extend_from_slice(&c.max_packet.to_be_bytes());
    }
    for header in &frame.headers {
        out.push(header.id());
        match header {
            ObexHeader::Name(name) => {
                if !name.is_ascii() {
                    return Err(CodecError::NonAsciiName(name.clone()));
                }
                put_u16(&mut out, header.encoded_len())?;
                out.extend_from_slice(name.as_bytes());
            }
            ObexHeader::Body(bytes) | ObexHeader::EndOfBody(bytes) => {
                put_u16(&mut out, header.encoded_len())?;
                out.extend_from_slice(bytes);
            }
            ObexHeader::Length(v) | ObexHeader::ConnectionId(v) => {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning it with the
/// unconsumed remainder.
pub fn decode_frame(bytes: &[u8]) -> Result<(ObexFrame, &[u8]), CodecError> {
    decode_with(bytes, |op| op == Opcode::Connect)
}

/// Decodes the server's answer to CONNECT, whose Success frame also carries
/// connect parameters.
pub fn decode_connect_response(bytes: &[u8]) -> Result<(ObexFrame, &[u8]), CodecError> {
    decode_with(bytes, |op| op == Opcode::Success)
}

fn decode_with(
    bytes: &[u8],
    has_connect: impl Fn(Opcode) -> bool,
) -> Result<(ObexFrame, &[u8]), CodecError> {
    if bytes.len() < FRAME_PREFIX_LEN {
        return Err(CodecError::Truncated {
            needed: FRAME_PREFIX_LEN,
            available: bytes.len(),
        });
    }
    let opcode = Opcode::from_code(bytes[0]).ok_or(CodecError::UnknownOpcode(bytes[0]))?;
    let total = usize::from(u16::from_be_bytes([bytes[1], bytes[2]]));
    if total < FRAME_PREFIX_LEN {
        return Err(CodecError::LengthMismatch("frame length below minimum"));
    }
    if total > bytes.len() {
        return Err(CodecError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    let (frame_bytes, rest) = bytes.split_at(total);
    let mut body = &frame_bytes[FRAME_PREFIX_LEN..];

    let connect = if has_connect(opcode) {
        if body.len() < 4 {
            return Err(CodecError::LengthMismatch("connect parameters cut short"));
        }
        let params = ConnectParams {
            version: body[0],
            flags: body[1],
            max_packet: u16::from_be_bytes([body[2], body[3]]),
        };
        body = &body[4..];
        Some(params)
    } else {
        None
    };

    let mut headers = Vec::new();
    while let Some(&id) = body.first() {
        let header = match id {
            ObexHeader::LENGTH | ObexHeader::CONNECTION_ID => {
                if body.len() < U32_HEADER_LEN {
                    return Err(CodecError::LengthMismatch("4-byte header overruns frame"));
                }
                let v = u32::from_be_bytes([body[1], body[2], body[3], body[4]]);
                body = &body[U32_HEADER_LEN..];
                if id == ObexHeader::LENGTH {
                    ObexHeader::Length(v)
                } else {
                    ObexHeader::ConnectionId(v)
                }
            }
            ObexHeader::NAME | ObexHeader::BODY | ObexHeader::END_OF_BODY => {
                if body.len() < SEQ_HEADER_PREFIX_LEN {
                    return Err(CodecError::LengthMismatch("header prefix overruns frame"));
                }
                let len = usize::from(u16::from_be_bytes([body[1], body[2]]));
                if len < SEQ_HEADER_PREFIX_LEN {
                    return Err(CodecError::LengthMismatch("header length below minimum"));
                }
                if len > body.len() {
                    return Err(CodecError::LengthMismatch("header overruns frame"));
                }
                let data = body[SEQ_HEADER_PREFIX_LEN..len].to_vec();
                body = &body[len..];
                match id {
                    ObexHeader::NAME => {
                        if !data.is_ascii() {
                            return Err(CodecError::NonAsciiName(
                                String::from_utf8_lossy(&data).into_owned(),
                            ));
                        }
                        ObexHeader::Name(String::from_utf8(data).expect("ascii"))
                    }
                    ObexHeader::BODY => ObexHeader::Body(data),
                    _ => ObexHeader::EndOfBody(data),
                }
            }
            other => return Err(CodecError::UnknownHeader(other)),
        };
        headers.push(header);
    }

    Ok((
        ObexFrame {
            opcode,
            connect,
            headers,
        },
        rest,
    ))
}

/// Final path component of `path`, accepting both `/` and `\` separators.
pub fn base_name(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

/// Bytes of the first PUT frame spent on Name and Length headers.
pub fn first_frame_extra(name: &str) -> usize {
    SEQ_HEADER_PREFIX_LEN + name.len() + U32_HEADER_LEN
}

/// Payload bytes a full PUT frame carries.
pub fn chunk_capacity(max_packet: u16) -> usize {
    usize::from(max_packet).saturating_sub(PUT_FRAME_OVERHEAD)
}

/// `max(1, ceil((payload + first_frame_extra) / capacity))`.
pub fn expected_frame_count(name: &str, payload_len: usize, max_packet: u16) -> usize {
    let capacity = chunk_capacity(max_packet);
    (payload_len + first_frame_extra(name))
        .div_ceil(capacity)
        .max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PushError {
    #[error("session is {0:?}, expected Connected")]
    InvalidState(PushState),
    #[error("invalid file name {0:?}")]
    InvalidName(String),
    #[error("payload of {0} bytes does not fit the 32-bit Length header")]
    PayloadTooLarge(usize),
    #[error("name {0:?} leaves no room for body bytes in a {1}-byte packet")]
    NameTooLong(String, u16),
    #[error("link lost at t={0}")]
    LinkLost(SimTime),
    #[error("receiver refused the push")]
    Refused,
    #[error("receiver rejected the frame sequence")]
    BadRequest,
    #[error("unexpected response {0}")]
    UnexpectedResponse(Opcode),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Link(#[from] SimError),
}

/// Splits a payload into the PUT sequence for `name`.
pub fn build_put_frames(
    name: &str,
    payload: &[u8],
    max_packet: u16,
) -> Result<Vec<ObexFrame>, PushError> {
    if name.is_empty() || !name.is_ascii() {
        return Err(PushError::InvalidName(name.to_string()));
    }
    let total =
        u32::try_from(payload.len()).map_err(|_| PushError::PayloadTooLarge(payload.len()))?;
    let capacity = chunk_capacity(max_packet);
    let extra = first_frame_extra(name);
    if extra > capacity {
        return Err(PushError::NameTooLong(name.to_string(), max_packet));
    }

    let mut frames = Vec::new();
    let mut offset = 0;
    loop {
        let room = if frames.is_empty() {
            capacity - extra
        } else {
            capacity
        };
        let end = (offset + room).min(payload.len());
        let chunk = payload[offset..end].to_vec();
        let last = end == payload.len();
        let mut headers = Vec::new();
        if frames.is_empty() {
            headers.push(ObexHeader::Name(name.to_string()));
            headers.push(ObexHeader::Length(total));
        }
        if last {
            headers.push(ObexHeader::EndOfBody(chunk));
            frames.push(ObexFrame::new(Opcode::PutFinal, headers));
            break;
        }
        headers.push(ObexHeader::Body(chunk));
        frames.push(ObexFrame::new(Opcode::Put, headers));
        offset = end;
    }
    Ok(frames)
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct PendingPut {
    name: String,
    declared_len: Option<u32>,
    body: Vec<u8>,
}

/// Receiver-side push state kept on each device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PushServer {
    pub max_packet: u16,
    pending: Option<PendingPut>,
}

impl Default for PushServer {
    fn default() -> Self {
        Self {
            max_packet: DEFAULT_MAX_PACKET,
            pending: None,
        }
    }
}

impl PushServer {
    /// Drops any partially received object.
    pub fn abort(&mut self) {
        self.pending = None;
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }
}

/// Server side of the push: answers one request frame, reassembling PUT
/// sequences into the device inbox.
pub fn serve_push(device: &mut RadioDevice, frame: &ObexFrame) -> ObexFrame {
    let server = &mut device.push_server;
    match frame.opcode {
        Opcode::Connect => {
            server.abort();
            let client_max = frame.connect.map_or(DEFAULT_MAX_PACKET, |c| c.max_packet);
            let mut reply = ObexFrame::new(Opcode::Success, vec![ObexHeader::ConnectionId(1)]);
            reply.connect = Some(ConnectParams::new(server.max_packet.min(client_max)));
            reply
        }
        Opcode::Disconnect => {
            server.abort();
            ObexFrame::response(Opcode::Success)
        }
        Opcode::Put | Opcode::PutFinal => {
            if device.refuse_push {
                server.abort();
                return ObexFrame::response(Opcode::Forbidden);
            }
            let is_final = frame.opcode == Opcode::PutFinal;
            match absorb_put(server.pending.take(), frame, is_final) {
                Ok(pending) if !is_final => {
                    server.pending = Some(pending);
                    ObexFrame::response(Opcode::Continue)
                }
                Ok(done) => {
                    device.inbox.insert(done.name, done.body);
                    ObexFrame::response(Opcode::Success)
                }
                Err(()) => ObexFrame::response(Opcode::BadRequest),
            }
        }
        _ => {
            server.abort();
            ObexFrame::response(Opcode::BadRequest)
        }
    }
}

fn absorb_put(
    pending: Option<PendingPut>,
    frame: &ObexFrame,
    is_final: bool,
) -> Result<PendingPut, ()> {
    let mut pending = pending;
    let mut ended = false;
    for header in &frame.headers {
        if ended {
            return Err(());
        }
        match header {
            ObexHeader::Name(name) => {
                if pending.is_some() || name.is_empty() {
                    return Err(());
                }
                pending = Some(PendingPut {
                    name: name.clone(),
                    declared_len: None,
                    body: Vec::new(),
                });
            }
            ObexHeader::Length(len) => {
                let p = pending.as_mut().ok_or(())?;
                if p.declared_len.is_some() || !p.body.is_empty() {
                    return Err(());
                }
                p.declared_len = Some(*len);
            }
            ObexHeader::Body(chunk) => pending.as_mut().ok_or(())?.body.extend_from_slice(chunk),
            ObexHeader::EndOfBody(chunk) => {
                if !is_final {
                    return Err(());
                }
                pending.as_mut().ok_or(())?.body.extend_from_slice(chunk);
                ended = true;
            }
            ObexHeader::ConnectionId(_) => {}
        }
    }
    let pending = pending.ok_or(())?;
    if is_final {
        if !ended {
            return Err(());
        }
        if pending
            .declared_len
            .is_some_and(|n| n as usize != pending.body.len())
        {
            return Err(());
        }
    }
    Ok(pending)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushState {
    Idle,
    Connected,
    Transferring,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferOutcome {
    pub name: String,
    pub bytes: usize,
    pub frames: usize,
    pub started: SimTime,
    pub finished: SimTime,
    pub attempt: u32,
}

/// Client side of one push over a link.
#[derive(Debug)]
pub struct PushSession {
    link: LinkHandle,
    max_packet: u16,
    state: PushState,
}

impl PushSession {
    pub fn new(link: LinkHandle) -> Self {
        Self {
            link,
            max_packet: DEFAULT_MAX_PACKET,
            state: PushState::Idle,
        }
    }

    pub fn with_max_packet(link: LinkHandle, max_packet: u16) -> Self {
        Self {
            max_packet,
            ..Self::new(link)
        }
    }

    pub fn state(&self) -> PushState {
        self.state
    }

    pub fn max_packet(&self) -> u16 {
        self.max_packet
    }

    pub fn link(&self) -> LinkHandle {
        self.link
    }

    /// Sends CONNECT and negotiates the packet size down to the smaller of
    /// the two ends.
    pub fn connect(&mut self, world: &mut SimWorld) -> Result<(), PushError> {
        if self.state != PushState::Idle {
            return Err(PushError::InvalidState(self.state));
        }
        if !world.is_linked(self.link) {
            self.state = PushState::Failed;
            return Err(PushError::LinkLost(world.now()));
        }
        let request = encode_frame(&ObexFrame::connect(self.max_packet))?;
        let device = world
            .device_mut(self.link.slave)
            .expect("linked device exists");
        let (request, _) = decode_frame(&request)?;
        let reply = encode_frame(&serve_push(device, &request))?;
        let (reply, _) = decode_connect_response(&reply)?;
        if reply.opcode != Opcode::Success {
            self.state = PushState::Failed;
            return Err(PushError::UnexpectedResponse(reply.opcode));
        }
        let negotiated = reply.connect.map_or(self.max_packet, |c| c.max_packet);
        self.max_packet = self.max_packet.min(negotiated);
        self.state = PushState::Connected;
        world.record(
            "obex_connected",
            [
                ("max_packet", self.max_packet.to_string()),
                ("slave", self.link.slave.to_string()),
            ],
        );
        Ok(())
    }

    /// Pushes `payload` under the base name of `name`. Takes
    /// `transfer_duration(payload)` of simulated time; a link lost before
    /// the final frame leaves nothing in the receiver's inbox.
    pub fn push_file(
        &mut self,
        world: &mut SimWorld,
        name: &str,
        payload: &[u8],
    ) -> Result<TransferOutcome, PushError> {
        if self.state != PushState::Connected {
            return Err(PushError::InvalidState(self.state));
        }
        let name = base_name(name);
        let frames = build_put_frames(name, payload, self.max_packet)?;
        debug_assert_eq!(
            frames.len(),
            expected_frame_count(name, payload.len(), self.max_packet)
        );

        world.flush();
        let slave = self.link.slave;
        let started = world.now();
        if !world.is_linked(self.link) {
            self.state = PushState::Failed;
            return Err(PushError::LinkLost(started));
        }
        let duration = transfer_duration(payload.len() as u64, world.params());
        let finished = started + duration;
        let attempt = world.next_transfer_attempt(slave);
        let device = world.device(slave).expect("linked device exists");
        let scripted_loss = device.link_loss_attempts.contains(&attempt);
        let departure = device.departure.filter(|d| *d > started && *d <= finished);
        let loss_at = match departure {
            Some(d) => Some(d),
            None if scripted_loss || world.draw_link_loss() => {
                Some(started + SimTime::from_millis((duration.as_millis() / 2).max(1)))
            }
            None => None,
        };

        self.state = PushState::Transferring;
        world.record(
            "transfer_started",
            [
                ("attempt", attempt.to_string()),
                ("bytes", payload.len().to_string()),
                ("frames", frames.len().to_string()),
                ("name", name.to_string()),
                ("slave", slave.to_string()),
            ],
        );

        let n = frames.len() as u64;
        for (i, frame) in frames.iter().enumerate() {
            let sent_at = started + SimTime::from_millis(duration.as_millis() * (i as u64 + 1) / n);
            if let Some(lost) = loss_at.filter(|l| sent_at >= *l) {
                return Err(self.fail_link_lost(world, lost));
            }
            let wire = encode_frame(frame)?;
            assert!(
                wire.len() <= usize::from(self.max_packet),
                "frame exceeds negotiated packet size"
            );
            let (request, rest) = decode_frame(&wire)?;
            debug_assert!(rest.is_empty());
            let device = world.device_mut(slave).expect("linked device exists");
            let reply = encode_frame(&serve_push(device, &request))?;
            let (reply, _) = decode_frame(&reply)?;
            let expected = if frame.opcode == Opcode::PutFinal {
                Opcode::Success
            } else {
                Opcode::Continue
            };
            if reply.opcode != expected {
                self.state = PushState::Failed;
                let (reason, err) = match reply.opcode {
                    Opcode::Forbidden => ("refused", PushError::Refused),
                    Opcode::BadRequest => ("bad-request", PushError::BadRequest),
                    other => ("unexpected-response", PushError::UnexpectedResponse(other)),
                };
                world.record(
                    "transfer_failed",
                    [("reason", reason.to_string()), ("slave", slave.to_string())],
                );
                return Err(err);
            }
        }

        world.advance(finished);
        self.state = PushState::Done;
        world.record(
            "transfer_completed",
            [
                ("bytes", payload.len().to_string()),
                ("name", name.to_string()),
                ("slave", slave.to_string()),
            ],
        );
        Ok(TransferOutcome {
            name: name.to_string(),
            bytes: payload.len(),
            frames: frames.len(),
            started,
            finished,
            attempt,
        })
    }

    fn fail_link_lost(&mut self, world: &mut SimWorld, lost: SimTime) -> PushError {
        world.advance(lost);
        world.disconnect(self.link, "link-lost");
        if let Some(device) = world.device_mut(self.link.slave) {
            device.push_server.abort();
        }
        self.state = PushState::Failed;
        world.record(
            "transfer_failed",
            [
                ("reason", "link-lost".to_string()),
                ("slave", self.link.slave.to_string()),
            ],
        );
        PushError::LinkLost(lost)
    }

    /// Sends DISCONNECT if the link is still up.
    pub fn disconnect(&mut self, world: &mut SimWorld) {
        if world.is_linked(self.link) {
            if let Some(device) = world.device_mut(self.link.slave) {
                serve_push(device, &ObexFrame::response(Opcode::Disconnect));
            }
        }
        if matches!(self.state, PushState::Connected | PushState::Idle) {
            self.state = PushState::Done;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{MacId, RadioParams};

    fn hex(bytes: &[u8]) -> String {
        bytes
            .iter()
            .map(|b| format!("{b:02X}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn connect_frame_bytes() {
        let bytes = encode_frame(&ObexFrame::connect(1024)).unwrap();
        assert_eq!(hex(&bytes), "80 00 07 10 00 04 00");
    }

    #[test]
    fn minimal_put_final_round_trips() {
        let f = ObexFrame::new(
            Opcode::PutFinal,
            vec![
                ObexHeader::Name(String::new()),
                ObexHeader::EndOfBody(Vec::new()),
            ],
        );
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(decode_frame(&bytes).unwrap(), (f, &[][..]));
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            decode_frame(&[0x80, 0x00]),
            Err(CodecError::Truncated { .. })
        ));
        assert_eq!(
            decode_frame(&[0x7F, 0x00, 0x03]),
            Err(CodecError::UnknownOpcode(0x7F))
        );
        assert_eq!(
            decode_frame(&[0x02, 0x00, 0x04, 0x55]),
            Err(CodecError::UnknownHeader(0x55))
        );
        assert!(matches!(
            decode_frame(&[0x02, 0x00, 0x02]),
            Err(CodecError::LengthMismatch(_))
        ));
        assert!(matches!(
            decode_frame(&[0x02, 0x00, 0x09, 0x48, 0x00, 0x03]),
            Err(CodecError::Truncated { .. })
        ));
        assert!(matches!(
            decode_frame(&[0x02, 0x00, 0x06, 0x48, 0x00, 0x09]),
            Err(CodecError::LengthMismatch(_))
        ));
    }

    #[test]
    fn trailing_bytes_are_returned() {
        let mut bytes = encode_frame(&ObexFrame::response(Opcode::Continue)).unwrap();
        bytes.push(0xEE);
        let (frame, rest) = decode_frame(&bytes).unwrap();
        assert_eq!(frame.opcode, Opcode::Continue);
        assert_eq!(rest, &[0xEE]);
    }

    #[test]
    fn rejects_non_ascii_names_and_oversize_frames() {
        let f = ObexFrame::new(Opcode::Put, vec![ObexHeader::Name("café".into())]);
        assert!(matches!(encode_frame(&f), Err(CodecError::NonAsciiName(_))));
        let f = ObexFrame::new(Opcode::Put, vec![ObexHeader::Body(vec![0; 65_533])]);
        assert!(matches!(encode_frame(&f), Err(CodecError::Oversize(_))));
        assert_eq!(
            encode_frame(&ObexFrame::response(Opcode::Connect)),
            Err(CodecError::MissingConnectParams)
        );
    }

    #[test]
    fn base_name_strips_directories() {
        assert_eq!(base_name("c:\\cpi.txt"), "cpi.txt");
        assert_eq!(base_name("notes/week1/cpi.txt"), "cpi.txt");
        assert_eq!(base_name("cpi.txt"), "cpi.txt");
    }

    #[test]
    fn empty_payload_is_one_final_frame() {
        let frames = build_put_frames("cpi.txt", &[], 1024).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(
            frames[0],
            ObexFrame::new(
                Opcode::PutFinal,
                vec![
                    ObexHeader::Name("cpi.txt".into()),
                    ObexHeader::Length(0),
                    ObexHeader::EndOfBody(vec![])
                ]
            )
        );
    }

    #[test]
    fn server_rejects_body_before_name_and_refuses_when_configured() {
        let mac = MacId::from_u64(1).unwrap();
        let mut device = RadioDevice::new(mac, "d");
        let reply = serve_push(
            &mut device,
            &ObexFrame::new(Opcode::PutFinal, vec![ObexHeader::EndOfBody(vec![1])]),
        );
        assert_eq!(reply.opcode, Opcode::BadRequest);
        assert!(device.inbox.is_empty());

        device.refuse_push = true;
        let frames = build_put_frames("a.txt", b"hi", 1024).unwrap();
        assert_eq!(
            serve_push(&mut device, &frames[0]).opcode,
            Opcode::Forbidden
        );
        assert!(device.inbox.is_empty());
    }

    #[test]
    fn server_reassembles_three_frames() {
        let mac = MacId::from_u64(1).unwrap();
        let mut device = RadioDevice::new(mac, "d");
        let payload: Vec<u8> = (0..2500u32).map(|i| (i % 251) as u8).collect();
        let frames = build_put_frames("notes.bin", &payload, 1024).unwrap();
        assert_eq!(frames.len(), 3);
        let codes: Vec<u8> = frames
            .iter()
            .map(|f| serve_push(&mut device, f).opcode.code())
            .collect();
        assert_eq!(codes, vec![0x90, 0x90, 0xA0]);
        assert_eq!(device.inbox["notes.bin"], payload);
    }

    fn linked_world(slave_dev: RadioDevice) -> (SimWorld, LinkHandle) {
        let mut w = SimWorld::new(3, RadioParams::default()).unwrap();
        let master = MacId::from_u64(0xAA).unwrap();
        let slave = slave_dev.mac;
        w.add_device(RadioDevice::new(master, "local")).unwrap();
        w.add_device(slave_dev).unwrap();
        let link = w.connect(master, slave).unwrap();
        (w, link)
    }

    #[test]
    fn session_state_machine() {
        let mac = MacId::from_u64(1).unwrap();
        let (mut w, link) = linked_world(RadioDevice::new(mac, "d"));
        let mut s = PushSession::new(link);
        assert_eq!(
            s.push_file(&mut w, "a", b"x"),
            Err(PushError::InvalidState(PushState::Idle))
        );
        s.connect(&mut w).unwrap();
        assert_eq!(s.state(), PushState::Connected);
        assert!(matches!(
            s.push_file(&mut w, "", b"x"),
            Err(PushError::InvalidName(_))
        ));
        let out = s.push_file(&mut w, "c:\\cpi.txt", b"lecture").unwrap();
        assert_eq!(s.state(), PushState::Done);
        assert_eq!(out.frames, 1);
        assert_eq!(out.finished - out.started, transfer_duration(7, w.params()));
        assert_eq!(w.device(mac).unwrap().inbox["cpi.txt"], b"lecture");
        s.disconnect(&mut w);
        assert_eq!(s.state(), PushState::Done);

        let mut idle = PushSession::new(link);
        idle.connect(&mut w).unwrap();
        idle.disconnect(&mut w);
        assert_eq!(idle.state(), PushState::Done);
    }

    #[test]
    fn negotiates_smaller_packet_size() {
        let mac = MacId::from_u64(1).unwrap();
        let mut dev = RadioDevice::new(mac, "d");
        dev.push_server.max_packet = 256;
        let (mut w, link) = linked_world(dev);
        let mut s = PushSession::new(link);
        s.connect(&mut w).unwrap();
        assert_eq!(s.max_packet(), 256);
        let out = s.push_file(&mut w, "x.bin", &[7; 1000]).unwrap();
        assert_eq!(out.frames, expected_frame_count("x.bin", 1000, 256));
    }

    #[test]
    fn scripted_link_loss_fails_without_inbox_entry() {
        let mac = MacId::from_u64(1).unwrap();
        let mut dev = RadioDevice::new(mac, "d");
        dev.link_loss_attempts.insert(1);
        let (mut w, link) = linked_world(dev);
        let mut s = PushSession::new(link);
        s.connect(&mut w).unwrap();
        let err = s.push_file(&mut w, "big.bin", &[1; 5000]).unwrap_err();
        assert!(matches!(err, PushError::LinkLost(_)));
        assert_eq!(s.state(), PushState::Failed);
        assert!(!w.is_linked(link));
        let device = w.device(mac).unwrap();
        assert!(device.inbox.is_empty());
        assert!(!device.push_server.has_pending());
    }

    #[test]
    fn departure_mid_transfer_loses_link() {
        let mac = MacId::from_u64(1).unwrap();
        let dev = RadioDevice::new(mac, "d")
            .present_between(SimTime::ZERO, Some(SimTime::from_millis(150)));
        let (mut w, link) = linked_world(dev);
        let mut s = PushSession::new(link);
        s.connect(&mut w).unwrap();
        let err = s.push_file(&mut w, "big.bin", &[1; 375_000]).unwrap_err();
        assert_eq!(err, PushError::LinkLost(SimTime::from_millis(150)));
        assert!(w.device(mac).unwrap().inbox.is_empty());
    }

    #[test]
    fn refusing_receiver() {
        let mac = MacId::from_u64(1).unwrap();
        let mut dev = RadioDevice::new(mac, "d");
        dev.refuse_push = true;
        let (mut w, link) = linked_world(dev);
        let mut s = PushSession::new(link);
        s.connect(&mut w).unwrap();
        assert_eq!(
            s.push_file(&mut w, "a.txt", b"abc"),
            Err(PushError::Refused)
        );
        assert_eq!(s.state(), PushState::Failed);
        assert!(w.device(mac).unwrap().inbox.is_empty());
    }
}

//! Framed request/response messages.
//!
//! ```text
//! frame:    "ESCW" | msg_type u8 (1 request, 2 response) | body_len u32 | body
//! request:  request_id [16] | sig_len u16 | sig utf8 | ESDF payload
//! response: request_id [16] | status u8 | compute_micros u64 |
//!           ctype_len u16 | ctype utf8 | out_len u32 | payload
//! ```

use std::io::{self, Read};

use thiserror::Error;

pub const FRAME_MAGIC: &[u8; 4] = b"ESCW";
pub const FRAME_HEADER_LEN: usize = 9;
pub const DEFAULT_MAX_FRAME: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Request = 1,
    Response = 2,
}

impl MsgType {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(MsgType::Request),
            2 => Some(MsgType::Response),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    UnknownFn = 1,
    ComputeError = 2,
    DecodeError = 3,
}

impl Status {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Status::Ok),
            1 => Some(Status::UnknownFn),
            2 => Some(Status::ComputeError),
            3 => Some(Status::DecodeError),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad frame magic")]
    BadMagic,
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("malformed body: {0}")]
    BadBody(&'static str),
    #[error("channel authentication failed")]
    AuthFailed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRequest {
    pub request_id: [u8; 16],
    pub compute_sig: String,
    pub df_payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireResponse {
    pub request_id: [u8; 16],
    pub status: Status,
    pub compute_micros: u64,
    pub content_type: String,
    pub payload: Vec<u8>,
}

impl WireResponse {
    pub fn error(request_id: [u8; 16], status: Status) -> Self {
        Self {
            request_id,
            status,
            compute_micros: 0,
            content_type: String::new(),
            payload: Vec::new(),
        }
    }
}

pub fn encode_frame(msg_type: MsgType, body: &[u8]) -> Vec<u8> {
    let len = u32::try_from(body.len()).expect("frame body fits u32");
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.push(msg_type as u8);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(body);
    out
}

/// Split a complete frame into its type and body.
pub fn parse_frame(frame: &[u8]) -> Result<(MsgType, &[u8]), WireError> {
    if frame.len() < FRAME_HEADER_LEN {
        return Err(WireError::Truncated);
    }
    let (msg_type, len) = parse_header(frame[..FRAME_HEADER_LEN].try_into().unwrap())?;
    let body = &frame[FRAME_HEADER_LEN..];
    if body.len() != len {
        return Err(WireError::Truncated);
    }
    Ok((msg_type, body))
}

fn parse_header(header: &[u8; FRAME_HEADER_LEN]) -> Result<(MsgType, usize), WireError> {
    if &header[..4] != FRAME_MAGIC {
        return Err(WireError::BadMagic);
    }
    let msg_type = MsgType::from_u8(header[4]).ok_or(WireError::UnknownMsgType(header[4]))?;
    let len = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    Ok((msg_type, len))
}

/// Read one whole frame. Returns `None` on a clean end of stream before the
/// first header byte.
pub fn read_frame<R: Read>(r: &mut R, max_body: usize) -> Result<Option<Vec<u8>>, WireError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (_, len) = parse_header(&header)?;
    if len > max_body {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + len);
    frame.extend_from_slice(&header);
    frame.resize(FRAME_HEADER_LEN + len, 0);
    r.read_exact(&mut frame[FRAME_HEADER_LEN..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    Ok(Some(frame))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn id(&mut self) -> Result<[u8; 16], WireError> {
        Ok(self.take(16)?.try_into().unwrap())
    }

    fn utf8(&mut self, n: usize) -> Result<String, WireError> {
        std::str::from_utf8(self.take(n)?)
            .map(str::to_string)
            .map_err(|_| WireError::BadBody("invalid utf-8"))
    }
}

impl WireRequest {
    pub fn encode(&self) -> Vec<u8> {
        let sig_len = u16::try_from(self.compute_sig.len()).expect("signature fits u16");
        let mut body = Vec::with_capacity(18 + self.compute_sig.len() + self.df_payload.len());
        body.extend_from_slice(&self.request_id);
        body.extend_from_slice(&sig_len.to_le_bytes());
        body.extend_from_slice(self.compute_sig.as_bytes());
        body.extend_from_slice(&self.df_payload);
        encode_frame(MsgType::Request, &body)
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: body };
        let request_id = r.id()?;
        let sig_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let compute_sig = r.utf8(sig_len)?;
        Ok(Self {
            request_id,
            compute_sig,
            df_payload: r.buf.to_vec(),
        })
    }
}

impl WireResponse {
    pub fn encode(&self) -> Vec<u8> {
        let ctype_len = u16::try_from(self.content_type.len()).expect("content type fits u16");
        let out_len = u32::try_from(self.payload.len()).expect("payload fits u32");
        let mut body = Vec::with_capacity(35 + self.content_type.len() + self.payload.len());
        body.extend_from_slice(&self.request_id);
        body.push(self.status as u8);
        body.extend_from_slice(&self.compute_micros.to_le_bytes());
        body.extend_from_slice(&ctype_len.to_le_bytes());
        body.extend_from_slice(self.content_type.as_bytes());
        body.extend_from_slice(&out_len.to_le_bytes());
        body.extend_from_slice(&self.payload);
        encode_frame(MsgType::Response, &body)
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: body };
        let request_id = r.id()?;
        let status = r.take(1)?[0];
        let status = Status::from_u8(status).ok_or(WireError::BadBody("unknown status"))?;
        let compute_micros = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let ctype_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let content_type = r.utf8(ctype_len)?;
        let out_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let payload = r.take(out_len)?.to_vec();
        if !r.buf.is_empty() {
            return Err(WireError::BadBody("trailing bytes"));
        }
        if status != Status::Ok && !payload.is_empty() {
            return Err(WireError::BadBody("payload on error status"));
        }
        Ok(Self {
            request_id,
            status,
            compute_micros,
            content_type,
            payload,
        })
    }
}

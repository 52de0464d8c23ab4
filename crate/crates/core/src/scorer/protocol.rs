//! Line-plus-payload wire format spoken with a model bridge over stdio.
//!
//! ```text
//! engine -> bridge   HELLO DECAM 1\n
//! bridge -> engine   OK <H> <W> <C> <num_classes>\n
//! engine -> bridge   SCORE <n> <class_index>\n   + n*H*W*C f32 LE
//! engine -> bridge   LOGITS_ALL <n>\n            + n*H*W*C f32 LE
//! bridge -> engine   LOGITS <m>\n                + m f32 LE
//! bridge -> engine   ERR <message>\n
//! ```
//!
//! Image payloads are row-major, channel-last.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

use crate::tensor::ImageTensor;

pub const HELLO: &[u8] = b"HELLO DECAM 1\n";

/// Longest header line accepted from a peer.
const MAX_LINE: usize = 4096;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the stream")]
    Closed,
    #[error("malformed line {0:?}")]
    Malformed(String),
}

/// Bridge handshake reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handshake {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
}

impl Handshake {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn line(&self) -> String {
        format!(
            "OK {} {} {} {}\n",
            self.height, self.width, self.channels, self.num_classes
        )
    }
}

/// A message from bridge to engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ok(Handshake),
    Logits(Vec<f32>),
    Err(String),
}

/// A message from engine to bridge, header only; payloads follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Request {
    Hello,
    Score { n: usize, class_index: usize },
    LogitsAll { n: usize },
}

/// Read one `\n`-terminated line, without the terminator.
pub fn read_line<R: BufRead>(r: &mut R) -> Result<String, ProtocolError> {
    let mut buf = Vec::new();
    let n = r
        .by_ref()
        .take(MAX_LINE as u64)
        .read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Err(ProtocolError::Closed);
    }
    if buf.last() != Some(&b'\n') {
        return Err(ProtocolError::Malformed(
            String::from_utf8_lossy(&buf).into_owned(),
        ));
    }
    buf.pop();
    String::from_utf8(buf)
        .map_err(|e| ProtocolError::Malformed(String::from_utf8_lossy(e.as_bytes()).into_owned()))
}

pub fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, ProtocolError> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ProtocolError::Closed
        } else {
            ProtocolError::Io(e)
        }
    })?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f32>) -> io::Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    w.write_all(&bytes)
}

fn parse_fields<const N: usize>(line: &str, tag: &str) -> Option<[usize; N]> {
    let rest = line.strip_prefix(tag)?.strip_prefix(' ')?;
    let mut out = [0usize; N];
    let mut parts = rest.split(' ');
    for slot in out.iter_mut() {
        *slot = parts.next()?.parse().ok()?;
    }
    parts.next().is_none().then_some(out)
}

/// Read a full reply frame, payload included.
pub fn read_reply<R: BufRead>(r: &mut R) -> Result<Reply, ProtocolError> {
    let line = read_line(r)?;
    if let Some(msg) = line.strip_prefix("ERR ") {
        return Ok(Reply::Err(msg.to_string()));
    }
    if let Some([h, w, c, k]) = parse_fields::<4>(&line, "OK") {
        return Ok(Reply::Ok(Handshake {
            height: h,
            width: w,
            channels: c,
            num_classes: k,
        }));
    }
    if let Some([n]) = parse_fields::<1>(&line, "LOGITS") {
        return Ok(Reply::Logits(read_f32s(r, n)?));
    }
    Err(ProtocolError::Malformed(line))
}

pub fn write_reply<W: Write>(w: &mut W, reply: &Reply) -> io::Result<()> {
    match reply {
        Reply::Ok(hs) => w.write_all(hs.line().as_bytes())?,
        Reply::Logits(values) => {
            // header and payload go out in one write so a failure never
            // leaves a header without its floats
            let mut buf = format!("LOGITS {}\n", values.len()).into_bytes();
            write_f32s(&mut buf, values.iter().copied())?;
            w.write_all(&buf)?;
        }
        Reply::Err(msg) => {
            let msg = msg.replace('\n', " ");
            w.write_all(format!("ERR {msg}\n").as_bytes())?;
        }
    }
    w.flush()
}

/// Parse a request header line.
pub fn parse_request(line: &str) -> Result<Request, ProtocolError> {
    if line == "HELLO DECAM 1" {
        return Ok(Request::Hello);
    }
    if let Some([n, class_index]) = parse_fields::<2>(line, "SCORE") {
        return Ok(Request::Score { n, class_index });
    }
    if let Some([n]) = parse_fields::<1>(line, "LOGITS_ALL") {
        return Ok(Request::LogitsAll { n });
    }
    Err(ProtocolError::Malformed(line.to_string()))
}

/// Encode a request with its image payload into one buffer.
pub fn encode_request(req: Request, batch: &[ImageTensor]) -> Vec<u8> {
    let header = match req {
        Request::Hello => return HELLO.to_vec(),
        Request::Score { n, class_index } => format!("SCORE {n} {class_index}\n"),
        Request::LogitsAll { n } => format!("LOGITS_ALL {n}\n"),
    };
    let floats: usize = batch.iter().map(|b| b.data().len()).sum();
    let mut buf = Vec::with_capacity(header.len() + floats * 4);
    buf.extend_from_slice(header.as_bytes());
    for img in batch {
        for &v in img.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

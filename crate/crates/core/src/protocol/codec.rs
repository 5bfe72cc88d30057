use std::io::{self, Read, Write};

use log::debug;

use super::{Message, ProtocolError};

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

/// Writes a 4-byte big-endian length followed by the JSON body.
pub fn write_frame(w: &mut impl Write, msg: &Message) -> Result<(), ProtocolError> {
    let body = serde_json::to_vec(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if body.len() > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(body.len()));
    }
    debug!("frame {:?} {} bytes", msg.kind, body.len());
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean end of stream before a header.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Message>, ProtocolError> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Malformed("truncated frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Malformed(format!("truncated frame body, expected {len} bytes")),
        _ => e.into(),
    })?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))
}

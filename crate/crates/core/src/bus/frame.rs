use thiserror::Error;

/// Upper bound on the length field: topic + separator + payload.
pub const MAX_FRAME_LEN: usize = 64 * 1024;

/// Bus wire unit.
///
/// Encoded as a 4-byte big-endian length, the topic bytes, a 0x00
/// separator, then the payload. The length counts everything after itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub topic: String,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("topic contains a NUL byte")]
    NulInTopic,
    #[error("frame body of {0} bytes exceeds {MAX_FRAME_LEN}")]
    TooLarge(usize),
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame has no topic separator")]
    MissingSeparator,
    #[error("topic is not UTF-8")]
    TopicEncoding,
}

impl Frame {
    pub fn new(topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Result<Self, FrameError> {
        let f = Frame {
            topic: topic.into(),
            payload: payload.into(),
        };
        f.check()?;
        Ok(f)
    }

    fn body_len(&self) -> usize {
        self.topic.len() + 1 + self.payload.len()
    }

    fn check(&self) -> Result<(), FrameError> {
        if self.topic.as_bytes().contains(&0) {
            return Err(FrameError::NulInTopic);
        }
        if self.body_len() > MAX_FRAME_LEN {
            return Err(FrameError::TooLarge(self.body_len()));
        }
        Ok(())
    }
}

pub fn frame_encode(f: &Frame) -> Result<Vec<u8>, FrameError> {
    f.check()?;
    let len = f.body_len();
    let mut out = Vec::with_capacity(4 + len);
    out.extend_from_slice(&(len as u32).to_be_bytes());
    out.extend_from_slice(f.topic.as_bytes());
    out.push(0);
    out.extend_from_slice(&f.payload);
    Ok(out)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn frame_decode(bytes: &[u8]) -> Result<Frame, FrameError> {
    let (frame, used) = decode_prefix(bytes)?.ok_or(FrameError::Truncated {
        needed: 4,
        have: bytes.len(),
    })?;
    if used != bytes.len() {
        return Err(FrameError::TooLarge(bytes.len() - 4));
    }
    Ok(frame)
}

/// Decodes one frame from the front of `bytes`, returning it with the
/// number of bytes consumed, or `None` if more input is needed.
fn decode_prefix(bytes: &[u8]) -> Result<Option<(Frame, usize)>, FrameError> {
    if bytes.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    if bytes.len() < 4 + len {
        return Ok(None);
    }
    let body = &bytes[4..4 + len];
    let sep = body
        .iter()
        .position(|&b| b == 0)
        .ok_or(FrameError::MissingSeparator)?;
    let topic = std::str::from_utf8(&body[..sep]).map_err(|_| FrameError::TopicEncoding)?;
    Ok(Some((
        Frame {
            topic: topic.to_owned(),
            payload: body[sep + 1..].to_vec(),
        },
        4 + len,
    )))
}

/// Incremental decoder for a byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Drains every complete frame currently buffered.
    pub fn drain(&mut self) -> Result<Vec<Frame>, FrameError> {
        let mut frames = Vec::new();
        let mut offset = 0;
        while let Some((frame, used)) = decode_prefix(&self.buf[offset..])? {
            frames.push(frame);
            offset += used;
        }
        self.buf.drain(..offset);
        Ok(frames)
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let f = Frame::new("s/p", b"{}".to_vec()).unwrap();
        let bytes = frame_encode(&f).unwrap();
        assert_eq!(bytes, b"\x00\x00\x00\x06s/p\x00{}");
    }

    #[test]
    fn nul_topic_rejected() {
        assert_eq!(Frame::new("s\0p", b"".to_vec()), Err(FrameError::NulInTopic));
        let f = Frame {
            topic: "a\0".into(),
            payload: vec![],
        };
        assert_eq!(frame_encode(&f), Err(FrameError::NulInTopic));
    }

    #[test]
    fn oversize_rejected() {
        let payload = vec![b'x'; MAX_FRAME_LEN];
        assert!(matches!(
            Frame::new("t", payload),
            Err(FrameError::TooLarge(_))
        ));
        let ok = vec![b'x'; MAX_FRAME_LEN - 2];
        assert!(Frame::new("t", ok).is_ok());
    }

    #[test]
    fn decoder_handles_split_input() {
        let a = frame_encode(&Frame::new("a/b", b"1".to_vec()).unwrap()).unwrap();
        let b = frame_encode(&Frame::new("c/d", b"22".to_vec()).unwrap()).unwrap();
        let mut all = a.clone();
        all.extend_from_slice(&b);
        let mut dec = FrameDecoder::new();
        dec.push(&all[..5]);
        assert!(dec.drain().unwrap().is_empty());
        dec.push(&all[5..a.len() + 3]);
        assert_eq!(dec.drain().unwrap().len(), 1);
        dec.push(&all[a.len() + 3..]);
        let rest = dec.drain().unwrap();
        assert_eq!(rest[0].topic, "c/d");
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn declared_length_over_limit_is_an_error() {
        let mut dec = FrameDecoder::new();
        dec.push(&(MAX_FRAME_LEN as u32 + 1).to_be_bytes());
        assert!(dec.drain().is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(topic in "[^\u{0}]{0,40}", payload in proptest::collection::vec(any::<u8>(), 0..512)) {
            let f = Frame::new(topic, payload).unwrap();
            prop_assert_eq!(frame_decode(&frame_encode(&f).unwrap()).unwrap(), f);
        }
    }
}

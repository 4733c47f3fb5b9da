//! Binary PGM (P5) and PPM (P6).

use super::Image;
use crate::error::{Error, Result};

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    payload_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(pos) {
                    pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            _ => return pos,
        }
    }
}

fn read_number(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let pos = skip_space_and_comments(bytes, pos);
    let start = pos;
    let mut end = pos;
    while bytes.get(end).is_some_and(u8::is_ascii_digit) {
        end += 1;
    }
    if end == start {
        return Err(parse_err(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| parse_err(start, format!("{what} out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let (width, pos) = read_number(bytes, 2, "width")?;
    let (height, pos) = read_number(bytes, pos, "height")?;
    let (maxval, pos) = read_number(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(pos, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(parse_err(pos, "expected single whitespace after maxval")),
    }
    Ok(Header {
        width,
        height,
        maxval,
        payload_start: pos + 1,
    })
}

/// Decodes P5 (`channels == 1`) or P6 (`channels == 3`). Sixteen-bit samples
/// keep their high byte.
pub(super) fn decode_pnm(bytes: &[u8], channels: usize) -> Result<Image> {
    let magic = if channels == 1 { b"P5" } else { b"P6" };
    let h = parse_header(bytes, magic)?;
    let samples = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| parse_err(h.payload_start, "image too large"))?;
    let sample_bytes = if h.maxval > 255 { 2 } else { 1 };
    let payload = &bytes[h.payload_start.min(bytes.len())..];
    let needed = samples * sample_bytes;
    if payload.len() < needed {
        return Err(parse_err(
            h.payload_start + payload.len(),
            format!("payload truncated: {} of {needed} bytes", payload.len()),
        ));
    }
    let pixels = if sample_bytes == 1 {
        payload[..needed].to_vec()
    } else {
        payload[..needed].chunks_exact(2).map(|s| s[0]).collect()
    };
    Image::new(h.width, h.height, channels, pixels)
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_literal_pgm() {
        let mut bytes = b"P5 2 2 255 ".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 255]);
        let img = decode_pnm(&bytes, 1).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.pixels(), &[0, 64, 128, 255]);
    }

    #[test]
    fn decodes_literal_ppm() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0]);
        let img = decode_pnm(&bytes, 3).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.pixels(), &[255, 0, 0]);
    }

    #[test]
    fn truncated_payload_reports_missing_offset() {
        let header = b"P5 2 2 255 ";
        let mut bytes = header.to_vec();
        bytes.extend_from_slice(&[0, 64, 128]);
        match decode_pnm(&bytes, 1) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, header.len() + 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_sixteen_bit() {
        let mut bytes = b"P5\n# a comment\n2 1\n# another\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x12, 0x34, 0xff, 0x00]);
        let img = decode_pnm(&bytes, 1).unwrap();
        assert_eq!(img.pixels(), &[0x12, 0xff]);
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_pnm(b"P6 1 1 255 ", 1), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode_pnm(b"P5 x", 1), Err(Error::Parse { offset: 3, .. })));
        assert!(matches!(decode_pnm(b"P5 1 1 70000 \0", 1), Err(Error::Parse { .. })));
    }

    #[test]
    fn encode_decode_round_trip() {
        let img = Image::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(decode_pnm(&encode_pnm(&img), 3).unwrap(), img);
    }
}

//! Binary RGB PPM (`P6`) with 8- or 16-bit samples.

use std::path::Path;

use ahdr_tensor::{Shape, Tensor};

use super::{dequantize, read_file, write_atomic, BitDepth, DecodeError, HeaderReader};
use crate::error::{Error, Result};

/// Decodes a `P6` image into a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>, DecodeError> {
    let mut hdr = HeaderReader::new(bytes);
    hdr.expect_magic(b"P6")?;
    let width: usize = hdr.number("width")?;
    let height: usize = hdr.number("height")?;
    let maxval_at = hdr.pos;
    let maxval: u32 = hdr.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(DecodeError::new(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    if width == 0 || height == 0 {
        return Err(DecodeError::new(0, format!("empty image {width}x{height}")));
    }
    let start = hdr.end_header()?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let plane = width * height;
    let expected = plane * 3 * bps;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < expected {
        return Err(DecodeError::new(
            bytes.len(),
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(DecodeError::new(start + expected, "trailing bytes after payload"));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane * 3 {
        let code = if bps == 1 {
            payload[i] as u32
        } else {
            u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as u32
        };
        if code > maxval {
            return Err(DecodeError::new(start + i * bps, format!("sample {code} exceeds maxval {maxval}")));
        }
        let (pixel, c) = (i / 3, i % 3);
        data[c * plane + pixel] = dequantize(code, maxval);
    }
    Ok(Tensor::new(Shape::new(1, 3, height, width), data).expect("shape matches payload"))
}

/// Encodes a `(1, 3, H, W)` tensor; values are clamped to `[0, 1]` and
/// rounded to the nearest code.
pub fn encode_ppm(t: &Tensor<f32>, depth: BitDepth) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.batch() != 1 || s.channels() != 3 {
        return Err(Error::InvalidParam(format!("PPM needs shape (1, 3, H, W), got {s}")));
    }
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("PPM sample {i} is not finite")));
    }
    let (h, w) = (s.height(), s.width());
    let maxval = depth.maxval();
    let mut out = format!("P6\n{w} {h}\n{maxval}\n").into_bytes();
    let plane = h * w;
    let bps = if depth == BitDepth::Eight { 1 } else { 2 };
    out.reserve(plane * 3 * bps);
    for pixel in 0..plane {
        for c in 0..3 {
            let v = t.data()[c * plane + pixel] as f64;
            let code = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
            match depth {
                BitDepth::Eight => out.push(code as u8),
                BitDepth::Sixteen => out.extend_from_slice(&(code as u16).to_be_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&read_file(path)?).map_err(|e| e.at(path))
}

pub fn write_ppm(path: &Path, t: &Tensor<f32>, depth: BitDepth) -> Result<()> {
    write_atomic(path, &encode_ppm(t, depth)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_red_pixel() {
        let t = decode_ppm(b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 1, 1));
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sixteen_bit_mid_gray() {
        let t = decode_ppm(b"P6 1 1 65535\n\x80\x00\x80\x00\x80\x00").unwrap();
        assert!((t.data()[0] as f64 - 32768.0 / 65535.0).abs() < 1e-7);
        assert!((t.data()[0] - 0.500_007_63).abs() < 1e-7);
    }

    #[test]
    fn comments_in_header() {
        let t = decode_ppm(b"P6\n# made by hand\n2 1\n# max\n255\n\x00\x00\x00\xff\xff\xff").unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 1, 2));
        assert_eq!(t.at(0, 1, 0, 1), 1.0);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let e = decode_ppm(b"P6\n2 2\n255\n\x00\x00").unwrap_err();
        assert_eq!(e.offset, 13);
        assert!(e.message.contains("truncated"), "{e}");
    }

    #[test]
    fn malformed_headers() {
        assert_eq!(decode_ppm(b"P3\n1 1\n255\n").unwrap_err().offset, 0);
        let e = decode_ppm(b"P6\n1 x\n255\n").unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(decode_ppm(b"P6\n1 1\n0\n").is_err());
        assert!(decode_ppm(b"P6\n1 1").is_err());
        assert!(decode_ppm(b"P6\n1 1\n255\n\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn read_error_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ppm");
        std::fs::write(&p, b"P6\n1 1\n255\n").unwrap();
        let msg = read_ppm(&p).unwrap_err().to_string();
        assert!(msg.contains("bad.ppm") && msg.contains("byte 11"), "{msg}");
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        assert!(encode_ppm(&Tensor::zeros(Shape::new(1, 1, 2, 2)), BitDepth::Eight).is_err());
    }
}

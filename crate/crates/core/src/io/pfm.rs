//! Colour Portable Float Map (`PF`): 32-bit floats, rows stored bottom-up,
//! byte order given by the sign of the scale field (negative = little-endian).

use std::path::Path;

use ahdr_tensor::{Shape, Tensor};

use super::{read_file, write_atomic, DecodeError, HeaderReader};
use crate::error::{Error, Result};

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>, DecodeError> {
    if bytes.starts_with(b"Pf") {
        return Err(DecodeError::new(0, "grayscale PFM (`Pf`) is not supported"));
    }
    let mut hdr = HeaderReader::new(bytes);
    hdr.expect_magic(b"PF")?;
    let width: usize = hdr.number("width")?;
    let height: usize = hdr.number("height")?;
    let scale_at = hdr.pos;
    let scale: f64 = hdr.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(DecodeError::new(scale_at, format!("invalid scale {scale}")));
    }
    if width == 0 || height == 0 {
        return Err(DecodeError::new(0, format!("empty image {width}x{height}")));
    }
    let little = scale < 0.0;
    let start = hdr.end_header()?;
    let plane = width * height;
    let expected = plane * 12;
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
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (pixel, c) = (i / 3, i % 3);
        let (file_row, x) = (pixel / width, pixel % width);
        let y = height - 1 - file_row;
        if v.is_nan() {
            return Err(DecodeError::new(start + 4 * i, format!("NaN at pixel (x={x}, y={y}) channel {c}")));
        }
        data[c * plane + y * width + x] = v;
    }
    Ok(Tensor::new(Shape::new(1, 3, height, width), data).expect("shape matches payload"))
}

/// Encodes little-endian with scale `-1`.
pub fn encode_pfm(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.batch() != 1 || s.channels() != 3 {
        return Err(Error::InvalidParam(format!("PFM needs shape (1, 3, H, W), got {s}")));
    }
    if let Some(i) = t.data().iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("PFM sample {i} is NaN")));
    }
    let (h, w) = (s.height(), s.width());
    let plane = h * w;
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(plane * 12);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..3 {
                out.extend_from_slice(&t.data()[c * plane + y * w + x].to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_pfm(path: &Path) -> Result<Tensor<f32>> {
    decode_pfm(&read_file(path)?).map_err(|e| e.at(path))
}

pub fn write_pfm(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_pfm(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A 2x1 image hand-assembled in big-endian order: bottom row first.
    #[test]
    fn big_endian_bottom_up() {
        let mut bytes = b"PF\n1 2\n1.0\n".to_vec();
        for v in [0.25f32, 0.5, 0.75, 1.0, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let t = decode_pfm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 1));
        // Bottom row in file order is image row 1.
        assert_eq!([t.at(0, 0, 1, 0), t.at(0, 1, 1, 0), t.at(0, 2, 1, 0)], [0.25, 0.5, 0.75]);
        assert_eq!([t.at(0, 0, 0, 0), t.at(0, 1, 0, 0), t.at(0, 2, 0, 0)], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn negative_scale_is_little_endian() {
        let mut bytes = b"PF\n1 1\n-1\n".to_vec();
        for v in [0.1f32, 0.2, 0.3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(decode_pfm(&bytes).unwrap().data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn grayscale_rejected() {
        let e = decode_pfm(b"Pf\n1 1\n-1\n\x00\x00\x00\x00").unwrap_err();
        assert!(e.message.contains("grayscale"));
    }

    #[test]
    fn nan_names_pixel() {
        let mut bytes = b"PF\n2 1\n-1\n".to_vec();
        for v in [0.0f32, 0.0, 0.0, 0.0, f32::NAN, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let e = decode_pfm(&bytes).unwrap_err();
        assert!(e.message.contains("x=1, y=0") && e.message.contains("channel 1"), "{e}");
    }

    #[test]
    fn truncated() {
        let e = decode_pfm(b"PF\n1 1\n-1\n\x00\x00").unwrap_err();
        assert!(e.message.contains("truncated"));
        assert!(decode_pfm(b"PF\n1 1\n0\n").is_err());
    }
}

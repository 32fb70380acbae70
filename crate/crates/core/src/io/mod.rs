//! File formats: PPM/PFM images, checkpoints and the on-disk dataset layout.

pub mod checkpoint;
pub mod dataset;
pub mod pfm;
pub mod ppm;

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample width of an integer image file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    /// Narrowest depth that stores `bits`-bit quantized values exactly;
    /// unquantized data (`bits == 0`) goes to 16 bits.
    pub fn for_quantization(bits: u32) -> Self {
        if (1..=8).contains(&bits) {
            BitDepth::Eight
        } else {
            BitDepth::Sixteen
        }
    }
}

/// Maps an integer code to `[0, 1]`. Used by both the PPM reader and the
/// camera model so decoded values match rendered ones bitwise.
pub fn dequantize(code: u32, maxval: u32) -> f32 {
    (code as f64 / maxval as f64) as f32
}

/// Malformed payload, located by byte offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub offset: usize,
    pub message: String,
}

impl DecodeError {
    pub(crate) fn new(offset: usize, message: impl Into<String>) -> Self {
        DecodeError {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn at(self, path: &Path) -> Error {
        Error::format(path, self.offset, self.message)
    }
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "byte {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for DecodeError {}

/// Cursor over a netpbm-style ASCII header.
pub(crate) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> HeaderReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8]) -> Result<(), DecodeError> {
        let got = self.bytes.get(..magic.len());
        if got != Some(magic) {
            let shown = String::from_utf8_lossy(got.unwrap_or(self.bytes));
            return Err(DecodeError::new(
                0,
                format!("expected magic `{}`, found `{shown}`", String::from_utf8_lossy(magic)),
            ));
        }
        self.pos = magic.len();
        Ok(())
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Next whitespace-delimited token and its offset.
    pub(crate) fn token(&mut self, what: &str) -> Result<(&'a str, usize), DecodeError> {
        let before = self.pos;
        self.skip_space_and_comments();
        if self.pos == before && before != 0 {
            return Err(DecodeError::new(self.pos, format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DecodeError::new(start, format!("truncated header: missing {what}")));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| DecodeError::new(start, format!("non-ASCII {what}")))?;
        Ok((tok, start))
    }

    pub(crate) fn number<N: std::str::FromStr>(&mut self, what: &str) -> Result<N, DecodeError> {
        let (tok, at) = self.token(what)?;
        tok.parse()
            .map_err(|_| DecodeError::new(at, format!("invalid {what} `{tok}`")))
    }

    /// Consumes the single whitespace byte that ends the header and returns
    /// the payload offset.
    pub(crate) fn end_header(&mut self) -> Result<usize, DecodeError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            Some(_) => Err(DecodeError::new(self.pos, "expected whitespace after header")),
            None => Err(DecodeError::new(self.pos, "truncated header")),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParam(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn atomic_write_missing_dir_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nope").join("a.bin");
        let err = write_atomic(&p, b"x").unwrap_err().to_string();
        assert!(err.contains("a.bin"), "{err}");
    }

    #[test]
    fn dequantize_endpoints() {
        assert_eq!(dequantize(0, 255), 0.0);
        assert_eq!(dequantize(255, 255), 1.0);
        assert_eq!(dequantize(65535, 65535), 1.0);
    }
}

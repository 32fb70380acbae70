//! On-disk dataset layout:
//!
//! ```text
//! DIR/manifest.txt            one line per sample: `<id> <b1>,<b2>,<b3> <seed|->`
//! DIR/<id>/low.ppm mid.ppm high.ppm
//! DIR/<id>/gt.pfm
//! DIR/<id>/exposure.txt       one integer bias per line, shortest first
//! ```

use std::path::Path;

use super::pfm::{read_pfm, write_pfm};
use super::ppm::{read_ppm, write_ppm};
use super::{read_file, write_atomic, BitDepth};
use crate::error::{Error, Result};
use crate::hdr::{ExposureImage, HdrImage};
use crate::synth::SampleTriplet;

pub const MANIFEST: &str = "manifest.txt";
pub const LDR_FILES: [&str; 3] = ["low.ppm", "mid.ppm", "high.ppm"];
pub const GT_FILE: &str = "gt.pfm";
pub const EXPOSURE_FILE: &str = "exposure.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub biases: [i32; 3],
    /// Generator seed, when the sample is synthetic.
    pub seed: Option<u64>,
}

/// Parses `-2,0,2` into three biases.
pub fn parse_biases(s: &str) -> Result<[i32; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParam(format!("expected three comma-separated biases, got `{s}`")));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| Error::InvalidParam(format!("bias `{p}` is not an integer")))?;
    }
    Ok(out)
}

pub fn format_biases(b: [i32; 3]) -> String {
    format!("{},{},{}", b[0], b[1], b[2])
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::from("# id biases seed\n");
    for e in entries {
        let seed = e.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        text.push_str(&format!("{} {} {seed}\n", e.id, format_biases(e.biases)));
    }
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let bytes = read_file(&path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Dataset(format!("{}: not UTF-8", path.display())))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::Dataset(format!("{}:{}: {m}", path.display(), lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected `<id> <biases> <seed>`, got `{line}`")));
        }
        if !valid_id(fields[0]) {
            return Err(bad(format!("invalid sample id `{}`", fields[0])));
        }
        let biases = parse_biases(fields[1]).map_err(|e| bad(e.to_string()))?;
        let seed = match fields[2] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad(format!("invalid seed `{s}`")))?),
        };
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            biases,
            seed,
        });
    }
    Ok(entries)
}

pub fn write_dataset_sample(dir: &Path, sample: &SampleTriplet, depth: BitDepth) -> Result<()> {
    if !valid_id(&sample.id) {
        return Err(Error::Dataset(format!("invalid sample id `{}`", sample.id)));
    }
    let sdir = dir.join(&sample.id);
    std::fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
    for (ldr, name) in sample.ldrs.iter().zip(LDR_FILES) {
        write_ppm(&sdir.join(name), ldr.ldr(), depth)?;
    }
    write_pfm(&sdir.join(GT_FILE), sample.gt.radiance())?;
    let b = sample.biases();
    write_atomic(&sdir.join(EXPOSURE_FILE), format!("{}\n{}\n{}\n", b[0], b[1], b[2]).as_bytes())
}

fn read_exposures(path: &Path) -> Result<[i32; 3]> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Dataset(format!("{}: not UTF-8", path.display())))?;
    let values: Vec<&str> = text.split_whitespace().collect();
    if values.len() != 3 {
        return Err(Error::Dataset(format!("{}: expected 3 biases, found {}", path.display(), values.len())));
    }
    let mut out = [0; 3];
    for (o, v) in out.iter_mut().zip(values) {
        *o = v
            .parse()
            .map_err(|_| Error::Dataset(format!("{}: bias `{v}` is not an integer", path.display())))?;
    }
    Ok(out)
}

pub fn read_dataset_sample(dir: &Path, entry: &ManifestEntry) -> Result<SampleTriplet> {
    let sdir = dir.join(&entry.id);
    let biases = read_exposures(&sdir.join(EXPOSURE_FILE))?;
    if biases != entry.biases {
        return Err(Error::Dataset(format!(
            "{}: biases {biases:?} disagree with manifest {:?}",
            sdir.display(),
            entry.biases
        )));
    }
    let mut ldrs = Vec::with_capacity(3);
    for (name, bias) in LDR_FILES.iter().zip(biases) {
        ldrs.push(ExposureImage::new(read_ppm(&sdir.join(name))?, bias)?);
    }
    let gt_path = sdir.join(GT_FILE);
    let gt = HdrImage::new(read_pfm(&gt_path)?)
        .map_err(|e| Error::Dataset(format!("{}: {e}", gt_path.display())))?;
    let ldrs: [ExposureImage; 3] = ldrs.try_into().expect("three exposures");
    SampleTriplet::new(entry.id.clone(), ldrs, gt).map_err(|e| Error::Dataset(format!("{}: {e}", sdir.display())))
}

/// Reads every sample listed in the manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<SampleTriplet>> {
    read_manifest(dir)?
        .iter()
        .map(|e| read_dataset_sample(dir, e))
        .collect()
}

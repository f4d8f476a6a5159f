//! Binary array persistence with text manifests and content hashes.
//!
//! Arrays are raw little-endian IEEE-754 values, row-major, no header;
//! shapes and checksums live in the sidecar manifests. Identical inputs
//! produce byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One persisted array as recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

impl ArrayEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn write_f64_array(path: &Path, shape: &[usize], data: &[f64]) -> Result<ArrayEntry> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::LengthMismatch {
            what: "array shape vs data",
            expected,
            got: data.len(),
        });
    }
    let mut writer = BufWriter::new(File::create(path)?);
    let mut hasher = Sha256::new();
    for &value in data {
        let bytes = value.to_le_bytes();
        hasher.update(bytes);
        writer.write_all(&bytes)?;
    }
    writer.flush()?;
    Ok(ArrayEntry {
        file: file_name(path),
        dtype: "f64".into(),
        shape: shape.to_vec(),
        sha256: hex_digest(hasher),
    })
}

pub fn write_f32_array(path: &Path, shape: &[usize], data: &[f32]) -> Result<ArrayEntry> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::LengthMismatch {
            what: "array shape vs data",
            expected,
            got: data.len(),
        });
    }
    let mut writer = BufWriter::new(File::create(path)?);
    let mut hasher = Sha256::new();
    for &value in data {
        let bytes = value.to_le_bytes();
        hasher.update(bytes);
        writer.write_all(&bytes)?;
    }
    writer.flush()?;
    Ok(ArrayEntry {
        file: file_name(path),
        dtype: "f32".into(),
        shape: shape.to_vec(),
        sha256: hex_digest(hasher),
    })
}

/// Read an array back, verifying dtype, length, and checksum.
pub fn read_f64_array(dir: &Path, entry: &ArrayEntry) -> Result<Vec<f64>> {
    if entry.dtype != "f64" {
        return Err(Error::Manifest(format!(
            "{}: expected dtype f64, manifest says {}",
            entry.file, entry.dtype
        )));
    }
    let bytes = read_and_verify(dir, entry, 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk size")))
        .collect())
}

pub fn read_f32_array(dir: &Path, entry: &ArrayEntry) -> Result<Vec<f32>> {
    if entry.dtype != "f32" {
        return Err(Error::Manifest(format!(
            "{}: expected dtype f32, manifest says {}",
            entry.file, entry.dtype
        )));
    }
    let bytes = read_and_verify(dir, entry, 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk size")))
        .collect())
}

fn read_and_verify(dir: &Path, entry: &ArrayEntry, width: usize) -> Result<Vec<u8>> {
    let path = dir.join(&entry.file);
    let mut reader = BufReader::new(File::open(&path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != entry.len() * width {
        return Err(Error::Manifest(format!(
            "{}: expected {} bytes, found {}",
            entry.file,
            entry.len() * width,
            bytes.len()
        )));
    }
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hex_digest(hasher);
    if digest != entry.sha256 {
        return Err(Error::Manifest(format!(
            "{}: checksum mismatch (manifest {}, file {digest})",
            entry.file, entry.sha256
        )));
    }
    Ok(bytes)
}

pub fn write_manifest<T: Serialize>(path: &Path, manifest: &T) -> Result<()> {
    let text = toml::to_string_pretty(manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buffer = [0u8; 64 * 1024];
    loop {
        let read = reader.read(&mut buffer)?;
        if read == 0 {
            break;
        }
        hasher.update(&buffer[..read]);
    }
    Ok(hex_digest(hasher))
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

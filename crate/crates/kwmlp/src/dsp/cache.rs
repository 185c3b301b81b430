//! On-disk MFCC cache blobs.
//!
//! One file per clip: the 8-byte magic `KWMFCC01` followed by the 40x98
//! feature matrix as little-endian f32, row-major. The format carries no
//! dimension fields, so it only holds the default feature shape.

use super::Mfcc;
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"KWMFCC01";
const ROWS: usize = 40;
const COLS: usize = 98;

pub fn write_blob(path: &Path, mfcc: &Mfcc) -> Result<()> {
    if mfcc.shape() != (ROWS, COLS) {
        return Err(Error::contract(format!(
            "cache blob format is fixed at {ROWS}x{COLS}, got {:?}",
            mfcc.shape()
        )));
    }
    let mut bytes = Vec::with_capacity(8 + ROWS * COLS * 4);
    bytes.extend_from_slice(MAGIC);
    for &v in mfcc.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_blob(path: &Path) -> Result<Mfcc> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Parse(format!("{}: bad mfcc cache magic", path.display())));
    }
    let body = &bytes[8..];
    if body.len() != ROWS * COLS * 4 {
        return Err(Error::Parse(format!(
            "{}: cache blob holds {} bytes, expected {}",
            path.display(),
            body.len(),
            ROWS * COLS * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Mfcc::new(ROWS, COLS, data)
}

//! Binary file formats.
//!
//! All three share a 7-byte header: a 4-byte magic, version `0x01`, the
//! dimension `d` and the level `k`.
//!
//! - `VRBM` masks: `ceil(2^{kd}/8)` bytes, bit `i` (LSB first) is cell `i`.
//! - `VRBW` weighted masks: `2^{kd}` little-endian `u32` weights with
//!   denominator `2^32 - 1`.
//! - `VRBC` coverage fields: little-endian `u32` replicate count `n`, then
//!   `2^{kd}` little-endian `u32` counts.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_traits::{One, Zero};

use crate::coverage::{CoverageField, ValueField};
use crate::error::{Error, Result};
use crate::exact::{self, Exact};
use crate::grid::{GridSpec, Mask, WeightedMask};

pub const MASK_MAGIC: [u8; 4] = *b"VRBM";
pub const WEIGHTS_MAGIC: [u8; 4] = *b"VRBW";
pub const COVERAGE_MAGIC: [u8; 4] = *b"VRBC";
pub const VERSION: u8 = 0x01;

/// Denominator of the fixed-point weights in `VRBW` files.
pub const WEIGHT_DENOM: u32 = u32::MAX;

fn write_header(out: &mut Vec<u8>, magic: [u8; 4], grid: GridSpec) {
    out.extend_from_slice(&magic);
    out.push(VERSION);
    out.push(grid.dim() as u8);
    out.push(grid.level());
}

fn read_header(bytes: &[u8], magic: [u8; 4]) -> Result<(GridSpec, &[u8])> {
    if bytes.len() < 7 {
        return Err(Error::Format("truncated header".into()));
    }
    if bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {}",
            &bytes[..4],
            String::from_utf8_lossy(&magic)
        )));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let grid = GridSpec::new(bytes[5], bytes[6]).map_err(|e| Error::Format(e.to_string()))?;
    Ok((grid, &bytes[7..]))
}

fn expect_len(payload: &[u8], len: usize, what: &str) -> Result<()> {
    if payload.len() != len {
        return Err(Error::Format(format!(
            "{what} payload has {} bytes, expected {len}",
            payload.len()
        )));
    }
    Ok(())
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let grid = mask.grid();
    let nbytes = grid.cell_count().div_ceil(8);
    let mut out = Vec::with_capacity(7 + nbytes);
    write_header(&mut out, MASK_MAGIC, grid);
    let mut payload = Vec::with_capacity(mask.words().len() * 8);
    for w in mask.words() {
        payload.extend_from_slice(&w.to_le_bytes());
    }
    payload.truncate(nbytes);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let (grid, payload) = read_header(bytes, MASK_MAGIC)?;
    let cells = grid.cell_count();
    expect_len(payload, cells.div_ceil(8), "mask")?;
    let words = payload
        .chunks(8)
        .map(|c| {
            let mut buf = [0u8; 8];
            buf[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(buf)
        })
        .collect::<Vec<_>>();
    if cells % 8 != 0 && payload[payload.len() - 1] >> (cells % 8) != 0 {
        return Err(Error::Format("padding bits set past the last cell".into()));
    }
    Ok(Mask::from_words(grid, words))
}

/// Nearest fixed-point representation of a weight.
pub fn weight_to_fixed(w: &Exact) -> u32 {
    if w.is_zero() {
        return 0;
    }
    if w.is_one() {
        return WEIGHT_DENOM;
    }
    let scaled = (w * Exact::from_integer(i128::from(WEIGHT_DENOM))).round();
    // strictly fractional weights stay strictly fractional
    scaled.to_integer().clamp(1, i128::from(WEIGHT_DENOM) - 1) as u32
}

pub fn encode_weighted(w: &WeightedMask) -> Vec<u8> {
    let grid = w.grid();
    let cells = grid.cell_count();
    let mut out = Vec::with_capacity(7 + 4 * cells);
    write_header(&mut out, WEIGHTS_MAGIC, grid);
    let mut values = vec![0u32; cells];
    for i in w.unit_cells().iter_ones() {
        values[i] = WEIGHT_DENOM;
    }
    for (i, frac) in w.fractional_cells() {
        values[*i] = weight_to_fixed(frac);
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_weighted(bytes: &[u8]) -> Result<WeightedMask> {
    let (grid, payload) = read_header(bytes, WEIGHTS_MAGIC)?;
    expect_len(payload, 4 * grid.cell_count(), "weights")?;
    let mut full = Mask::empty(grid);
    let mut partial = Vec::new();
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        match v {
            0 => {}
            WEIGHT_DENOM => full.set(i, true),
            _ => partial.push((i, exact::ratio(i128::from(v), i128::from(WEIGHT_DENOM)))),
        }
    }
    WeightedMask::from_parts(full, partial)
}

pub fn encode_coverage(field: &CoverageField) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(11 + 4 * grid.cell_count());
    write_header(&mut out, COVERAGE_MAGIC, grid);
    out.extend_from_slice(&field.replicates().to_le_bytes());
    for c in field.counts() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode_coverage(bytes: &[u8]) -> Result<CoverageField> {
    let (grid, payload) = read_header(bytes, COVERAGE_MAGIC)?;
    expect_len(payload, 4 + 4 * grid.cell_count(), "coverage")?;
    let n = u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]);
    let counts = payload[4..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    CoverageField::from_counts(grid, n, counts)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    decode_mask(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_file(path, &encode_mask(mask))
}

pub fn read_weighted(path: &Path) -> Result<WeightedMask> {
    decode_weighted(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn write_weighted(path: &Path, w: &WeightedMask) -> Result<()> {
    write_file(path, &encode_weighted(w))
}

pub fn read_coverage(path: &Path) -> Result<CoverageField> {
    decode_coverage(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn write_coverage(path: &Path, field: &CoverageField) -> Result<()> {
    write_file(path, &encode_coverage(field))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

/// Replicate file name used by the simulator.
pub fn mask_file_name(index: usize) -> String {
    format!("mask_{index:06}.vrbm")
}

/// Reads every `*.vrbm` file in a directory, sorted by file name.
pub fn read_mask_dir(dir: &Path) -> Result<Vec<Mask>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "vrbm") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_mask(p)).collect()
}

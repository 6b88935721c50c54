//! Binary matrix and code-grid files.
//!
//! Matrix files: 4 magic bytes, then little-endian `u32` version, rows and
//! cols, then `rows·cols` little-endian `f32` values in row-major order.
//! Code files: magic `CODE`, `u32` version, rows, cols and label, then
//! `rows·cols` little-endian `u32` indices.

use std::fs;
use std::path::Path;

use zenfoley_core::frontend::ExternalFeatures;
use zenfoley_core::{CategoryLabel, CodeGrid, Tensor};

use crate::error::{FormatError, PipelineError, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"CFE1";
pub const CEMBED_MAGIC: [u8; 4] = *b"CEM1";
pub const CODE_MAGIC: [u8; 4] = *b"CODE";
pub const VERSION: u32 = 1;

/// Cursor over a byte slice that reports truncation with the total size
/// that was needed.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated {
            expected: usize::MAX,
            found: self.bytes.len(),
        })?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::Magic {
                expected: String::from_utf8_lossy(&expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    /// Checks the `u32` version word that follows every magic.
    pub(crate) fn version(&mut self, supported: u32) -> Result<(), FormatError> {
        match self.u32()? {
            v if v == supported => Ok(()),
            v => Err(FormatError::Version(v)),
        }
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated {
            expected: usize::MAX,
            found: self.bytes.len(),
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn encode_matrix(magic: [u8; 4], m: &Tensor) -> Vec<u8> {
    assert_eq!(m.rank(), 2, "matrix files hold rank-2 tensors");
    let mut out = Vec::with_capacity(16 + 4 * m.numel());
    out.extend_from_slice(&magic);
    for v in [VERSION, m.shape()[0] as u32, m.shape()[1] as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(magic: [u8; 4], bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(magic)?;
    r.version(VERSION)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 {
        return Err(FormatError::EmptyExtent { field: "rows" });
    }
    if cols == 0 {
        return Err(FormatError::EmptyExtent { field: "cols" });
    }
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    Ok(Tensor::new(&[rows, cols], data).expect("header shape matches payload"))
}

pub fn read_matrix(path: &Path, magic: [u8; 4]) -> Result<Tensor> {
    decode_matrix(magic, &read_bytes(path)?).map_err(|e| PipelineError::format(path, e))
}

pub fn write_matrix(path: &Path, magic: [u8; 4], m: &Tensor) -> Result<()> {
    write_bytes(path, &encode_matrix(magic, m))
}

pub fn read_features(path: &Path) -> Result<ExternalFeatures> {
    Ok(ExternalFeatures::new(read_matrix(path, FEATURE_MAGIC)?)?)
}

pub fn write_features(path: &Path, f: &ExternalFeatures) -> Result<()> {
    write_matrix(path, FEATURE_MAGIC, &f.values)
}

pub fn encode_codes(grid: &CodeGrid, label: CategoryLabel) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * grid.len());
    out.extend_from_slice(&CODE_MAGIC);
    for v in [VERSION, grid.rows() as u32, grid.cols() as u32, label.id() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &k in grid.raster() {
        out.extend_from_slice(&(k as u32).to_le_bytes());
    }
    out
}

pub fn decode_codes(bytes: &[u8]) -> Result<(CodeGrid, CategoryLabel), FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(CODE_MAGIC)?;
    r.version(VERSION)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let label = r.u32()?;
    if rows == 0 {
        return Err(FormatError::EmptyExtent { field: "rows" });
    }
    if cols == 0 {
        return Err(FormatError::EmptyExtent { field: "cols" });
    }
    let label = CategoryLabel::new(label as usize).map_err(|e| FormatError::Field {
        field: "label",
        detail: e.to_string(),
    })?;
    let raw = r.take(rows * cols * 4)?;
    r.finish()?;
    let tokens = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let grid = CodeGrid::new(rows, cols, tokens).expect("header shape matches payload");
    Ok((grid, label))
}

pub fn read_codes(path: &Path) -> Result<(CodeGrid, CategoryLabel)> {
    decode_codes(&read_bytes(path)?).map_err(|e| PipelineError::format(path, e))
}

pub fn write_codes(path: &Path, grid: &CodeGrid, label: CategoryLabel) -> Result<()> {
    write_bytes(path, &encode_codes(grid, label))
}

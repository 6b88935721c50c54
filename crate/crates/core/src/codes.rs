//! Integer code grids and their raster scan.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A `(rows, cols)` grid of codebook indices. Columns are the time axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodeGrid {
    rows: usize,
    cols: usize,
    indices: Vec<usize>,
}

impl CodeGrid {
    pub fn new(rows: usize, cols: usize, indices: Vec<usize>) -> Result<Self> {
        if rows == 0 || cols == 0 || indices.len() != rows * cols {
            return Err(Error::dim("code grid", &[rows, cols], &[indices.len()]));
        }
        Ok(CodeGrid {
            rows,
            cols,
            indices,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> usize {
        self.indices[raster_position(r, c, self.cols)]
    }

    /// Row-major scan, time innermost.
    pub fn raster(&self) -> &[usize] {
        &self.indices
    }

    pub fn into_raster(self) -> Vec<usize> {
        self.indices
    }

    /// Inverse of [`CodeGrid::raster`].
    pub fn from_raster(rows: usize, cols: usize, tokens: Vec<usize>) -> Result<Self> {
        Self::new(rows, cols, tokens)
    }

    pub fn max_index(&self) -> usize {
        self.indices.iter().copied().max().unwrap_or(0)
    }
}

/// Sequence position of grid cell `(r, c)`.
pub fn raster_position(r: usize, c: usize, cols: usize) -> usize {
    r * cols + c
}

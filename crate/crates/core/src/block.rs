//! Coordinate blocks of a parameter vector.
//!
//! A [`BlockPartition`] splits `0..d` into contiguous, non-overlapping ranges.
//! Block selection is represented by `(offset, length)` only; no selection
//! matrix is ever formed.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{check_len, BdcError, Result};
use crate::fmt::fmt_f64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    block_dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(block_dims: Vec<usize>) -> Result<Self> {
        if block_dims.is_empty() {
            return Err(BdcError::InvalidArgument("partition needs at least one block".into()));
        }
        if let Some(pos) = block_dims.iter().position(|&d| d == 0) {
            return Err(BdcError::InvalidArgument(format!("block {pos} has zero dimension")));
        }
        let mut offsets = Vec::with_capacity(block_dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in &block_dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Self { block_dims, offsets })
    }

    pub fn n_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().expect("offsets never empty")
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    /// Cumulative starts; `offsets()[n_blocks]` equals the total dimension.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_dim(&self, i: usize) -> Result<usize> {
        self.check_index(i)?;
        Ok(self.block_dims[i])
    }

    pub fn range(&self, i: usize) -> Result<Range<usize>> {
        self.check_index(i)?;
        Ok(self.offsets[i]..self.offsets[i + 1])
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i < self.n_blocks() {
            Ok(())
        } else {
            Err(BdcError::BlockIndex { index: i, n_blocks: self.n_blocks() })
        }
    }
}

/// A dense parameter vector tied to a partition.
///
/// Operations that produce a modified vector return a new value; solvers that
/// need in-place updates use [`BlockVector::set_block`] on buffers they own.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    partition: Arc<BlockPartition>,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(partition: Arc<BlockPartition>, data: Vec<f64>) -> Result<Self> {
        check_len(partition.total_dim(), data.len())?;
        Ok(Self { partition, data })
    }

    pub fn zeros(partition: Arc<BlockPartition>) -> Self {
        let d = partition.total_dim();
        Self { partition, data: vec![0.0; d] }
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn extract_block(&self, i: usize) -> Result<&[f64]> {
        let r = self.partition.range(i)?;
        Ok(&self.data[r])
    }

    /// Panicking accessor for callers that already validated `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        self.extract_block(i).expect("block index validated by caller")
    }

    pub fn embed_block(partition: Arc<BlockPartition>, i: usize, x: &[f64]) -> Result<Self> {
        let r = partition.range(i)?;
        check_len(r.len(), x.len())?;
        let mut out = Self::zeros(partition);
        out.data[r].copy_from_slice(x);
        Ok(out)
    }

    /// Copy of `self` with block `i` zeroed.
    pub fn complement(&self, i: usize) -> Result<Self> {
        let r = self.partition.range(i)?;
        let mut out = self.clone();
        out.data[r].fill(0.0);
        Ok(out)
    }

    pub fn replace_block(&self, i: usize, x: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_block(i, x)?;
        Ok(out)
    }

    pub fn set_block(&mut self, i: usize, x: &[f64]) -> Result<()> {
        let r = self.partition.range(i)?;
        check_len(r.len(), x.len())?;
        self.data[r].copy_from_slice(x);
        Ok(())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// One CSV row, values at round-trip precision.
    pub fn to_csv_row(&self) -> String {
        self.data.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

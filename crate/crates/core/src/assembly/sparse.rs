use std::io::Write;

use nalgebra::Matrix3;

use crate::error::{CpdError, Result};
use crate::geometry::NeighborTable;

pub type Block = Matrix3<f64>;

/// Block-compressed sparse rows of 3x3 blocks.
///
/// Row `a` holds one block for `a` itself and one per one-neighbour of `a`,
/// with column ids ascending. Every contributing pair or triplet of `a` lies
/// inside this pattern, so it never changes with the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCsr {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    blocks: Vec<Block>,
}

impl BlockCsr {
    pub fn from_table(table: &NeighborTable) -> Self {
        let n = table.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for a in 0..n {
            let nb = table.neighbors(a);
            let split = nb.partition_point(|&i| (i as usize) < a);
            cols.extend_from_slice(&nb[..split]);
            cols.push(a as u32);
            cols.extend_from_slice(&nb[split..]);
            row_ptr.push(cols.len());
        }
        let blocks = vec![Block::zeros(); cols.len()];
        Self { row_ptr, cols, blocks }
    }

    pub fn n_block_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn row_cols(&self, row: usize) -> &[u32] {
        &self.cols[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    pub fn row_blocks(&self, row: usize) -> &[Block] {
        &self.blocks[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    pub fn clear(&mut self) {
        self.blocks.iter_mut().for_each(|b| *b = Block::zeros());
    }

    fn index(&self, row: usize, col: usize) -> Option<usize> {
        let cols = self.row_cols(row);
        cols.binary_search(&(col as u32)).ok().map(|k| self.row_ptr[row] + k)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Block> {
        self.index(row, col).map(|k| &self.blocks[k])
    }

    /// Adds `block` at `(row, col)`; panics if the position is outside the pattern.
    pub fn add(&mut self, row: usize, col: usize, block: &Block) {
        let k = self.index(row, col).unwrap_or_else(|| panic!("block ({row}, {col}) outside the sparsity pattern"));
        self.blocks[k] += block;
    }

    /// Mutable per-row views, for row-parallel assembly.
    pub(crate) fn rows_mut(&mut self) -> Vec<(&[u32], &mut [Block])> {
        let mut out = Vec::with_capacity(self.n_block_rows());
        let mut rest: &mut [Block] = &mut self.blocks;
        for r in 0..self.row_ptr.len() - 1 {
            let len = self.row_ptr[r + 1] - self.row_ptr[r];
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(len);
            out.push((&self.cols[self.row_ptr[r]..self.row_ptr[r + 1]], head));
            rest = tail;
        }
        out
    }

    /// Scalar entry `(i, j)`, zero outside the pattern.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.get(i / 3, j / 3).map_or(0.0, |b| b[(i % 3, j % 3)])
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `max |K - K^T|` over all scalar entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n_block_rows() {
            for (&c, b) in self.row_cols(r).iter().zip(self.row_blocks(r)) {
                let t = self.get(c as usize, r).copied().unwrap_or_else(Block::zeros);
                worst = worst.max((b - t.transpose()).abs().max());
            }
        }
        worst
    }

    /// True if block `(r, c)` is in the pattern exactly when `(c, r)` is.
    pub fn pattern_is_symmetric(&self) -> bool {
        (0..self.n_block_rows()).all(|r| self.row_cols(r).iter().all(|&c| self.index(c as usize, r).is_some()))
    }

    /// Number of scalar entries in each scalar row with `|value| > 0`.
    pub fn nonzeros_per_row(&self) -> Vec<usize> {
        let mut counts = vec![0usize; 3 * self.n_block_rows()];
        for r in 0..self.n_block_rows() {
            for b in self.row_blocks(r) {
                for i in 0..3 {
                    counts[3 * r + i] += (0..3).filter(|&j| b[(i, j)] != 0.0).count();
                }
            }
        }
        counts
    }

    /// Dense copy, for tests and small diagnostics.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = 3 * self.n_block_rows();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for r in 0..self.n_block_rows() {
            for (&c, b) in self.row_cols(r).iter().zip(self.row_blocks(r)) {
                m.fixed_view_mut::<3, 3>(3 * r, 3 * c as usize).copy_from(b);
            }
        }
        m
    }

    /// Calls `f(row, col, value)` for each non-zero scalar entry, rows ascending.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, usize, f64)) {
        for r in 0..self.n_block_rows() {
            for i in 0..3 {
                for (&c, b) in self.row_cols(r).iter().zip(self.row_blocks(r)) {
                    for j in 0..3 {
                        let v = b[(i, j)];
                        if v != 0.0 {
                            f(3 * r + i, 3 * c as usize + j, v);
                        }
                    }
                }
            }
        }
    }

    /// Sparsity export as CSV `row,col,abs_value`.
    pub fn write_sparsity_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "col", "abs_value"])?;
        let mut err = None;
        self.for_each_nonzero(|r, c, v| {
            if err.is_none() {
                if let Err(e) = w.write_record(&[r.to_string(), c.to_string(), format!("{:e}", v.abs())]) {
                    err = Some(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        w.flush().map_err(|e| CpdError::io("<sparsity csv>", e))?;
        Ok(())
    }
}

use std::io::{self, Write};

use num_complex::Complex64;

use crate::geometry::Mesh;

/// Complex matrix stored as dense `p x p` blocks on the element adjacency
/// pattern (block-CSR, row-major inside each block).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseMatrix {
    p: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Complex64>,
}

impl BlockSparseMatrix {
    /// Zero matrix whose block pattern is "self plus edge neighbours".
    pub fn from_mesh(mesh: &Mesh, p: usize) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for t in 0..mesh.num_elements() {
            let mut row = mesh.neighbors(t);
            row.push(t);
            row.sort_unstable();
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        let values = vec![Complex64::new(0.0, 0.0); cols.len() * p * p];
        Self { p, row_ptr, cols, values }
    }

    pub fn block_size(&self) -> usize {
        self.p
    }

    pub fn block_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Scalar dimension.
    pub fn dim(&self) -> usize {
        self.block_rows() * self.p
    }

    pub fn stored_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[range.clone()].binary_search(&col).ok().map(|k| range.start + k)
    }

    pub fn block(&self, row: usize, col: usize) -> Option<&[Complex64]> {
        let pp = self.p * self.p;
        self.position(row, col).map(|k| &self.values[k * pp..(k + 1) * pp])
    }

    /// Adds `block` into block `(row, col)`.
    ///
    /// # Panics
    /// If `(row, col)` is outside the pattern or `block` has the wrong length.
    pub fn add_block(&mut self, row: usize, col: usize, block: &[Complex64]) {
        let pp = self.p * self.p;
        assert_eq!(block.len(), pp);
        let k = self.position(row, col).unwrap_or_else(|| panic!("block ({row}, {col}) not in pattern"));
        for (a, b) in self.values[k * pp..(k + 1) * pp].iter_mut().zip(block) {
            *a += b;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let p = self.p;
        self.block(i / p, j / p).map_or(Complex64::new(0.0, 0.0), |b| b[(i % p) * p + j % p])
    }

    /// Stored entries as `(row, col, value)` in block-row order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        let p = self.p;
        (0..self.block_rows()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).flat_map(move |k| {
                let c = self.cols[k];
                (0..p * p).map(move |e| (r * p + e / p, c * p + e % p, self.values[k * p * p + e]))
            })
        })
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let p = self.p;
        let mut y = vec![Complex64::new(0.0, 0.0); self.dim()];
        for r in 0..self.block_rows() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                let block = &self.values[k * p * p..(k + 1) * p * p];
                for i in 0..p {
                    let mut acc = y[r * p + i];
                    for j in 0..p {
                        acc += block[i * p + j] * x[c * p + j];
                    }
                    y[r * p + i] = acc;
                }
            }
        }
        y
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let n = self.dim();
        let mut dense = vec![Complex64::new(0.0, 0.0); n * n];
        for (i, j, v) in self.triplets() {
            dense[i * n + j] = v;
        }
        dense
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `||self - other||_F`; both matrices must share a pattern.
    ///
    /// # Panics
    /// If the patterns differ.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        assert!(self.p == other.p && self.row_ptr == other.row_ptr && self.cols == other.cols, "patterns differ");
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest row sum of absolute values.
    pub fn norm_one_rows(&self) -> f64 {
        let mut sums = vec![0.0; self.dim()];
        for (i, _, v) in self.triplets() {
            sums[i] += v.norm();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// `row col re im` lines, 0-based.
    pub fn write_coordinate(&self, out: &mut impl Write) -> io::Result<()> {
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {:e} {:e}", v.re, v.im)?;
        }
        Ok(())
    }
}

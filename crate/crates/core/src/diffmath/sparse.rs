use crate::scalar::Real;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<S> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<S>,
}

impl<S: Real> CsrMatrix<S> {
    /// Builds a matrix from per-row `(column, value)` lists.
    ///
    /// Panics if a column index is out of range.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, S)>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for &(c, v) in row {
                assert!(c < cols, "column {c} out of range for {cols} columns");
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of one row as `(column, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_is_empty(&self, r: usize) -> bool {
        self.row_ptr[r] == self.row_ptr[r + 1]
    }

    /// `y[r, k] = Σ_c A[r, c] · x[c, k]` where `x` has `width` interleaved
    /// columns (e.g. the colour channels of a texture).
    pub fn matmul_interleaved(&self, x: &[S], width: usize, y: &mut [S]) {
        debug_assert_eq!(x.len(), self.cols * width);
        debug_assert_eq!(y.len(), self.rows * width);
        for r in 0..self.rows {
            let out = &mut y[r * width..(r + 1) * width];
            out.fill(S::zero());
            for (c, w) in self.row(r) {
                let src = &x[c * width..(c + 1) * width];
                for k in 0..width {
                    out[k] += w * src[k];
                }
            }
        }
    }

    /// Accumulates `Aᵀ · dy` into `dx` (same layout as `matmul_interleaved`).
    pub fn transpose_matmul_acc(&self, dy: &[S], width: usize, dx: &mut [S]) {
        for r in 0..self.rows {
            let g = &dy[r * width..(r + 1) * width];
            for (c, w) in self.row(r) {
                let dst = &mut dx[c * width..(c + 1) * width];
                for k in 0..width {
                    dst[k] += w * g[k];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_product_and_transpose() {
        let m = CsrMatrix::from_rows(3, &[vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, 0.5)]]);
        let x = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let mut y = [0.0; 6];
        m.matmul_interleaved(&x, 2, &mut y);
        assert_eq!(y, [7.0, 70.0, 0.0, 0.0, 1.0, 10.0]);
        let mut dx = [0.0; 6];
        m.transpose_matmul_acc(&[1.0, 1.0, 5.0, 5.0, 2.0, 2.0], 2, &mut dx);
        assert_eq!(dx, [1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(m.row_is_empty(1));
        assert_eq!(m.nnz(), 3);
    }
}

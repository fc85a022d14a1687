//! Compressed sparse column storage used by the QP backend.

/// A sparse matrix in compressed sparse column form.
///
/// Row indices inside each column are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowval: Vec<usize>,
    pub nzval: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowval: Vec::new(),
            nzval: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Entries that sum to exactly zero are kept so the sparsity pattern does
    /// not depend on numerical cancellation.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let dst = next[c];
            rows[dst] = r;
            vals[dst] = v;
            next[c] += 1;
        }

        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowval = Vec::with_capacity(triplets.len());
        let mut nzval = Vec::with_capacity(triplets.len());
        colptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for c in 0..ncols {
            scratch.clear();
            scratch.extend((counts[c]..counts[c + 1]).map(|k| (rows[k], vals[k])));
            scratch.sort_by_key(|&(r, _)| r);
            let mut last: Option<usize> = None;
            for &(r, v) in &scratch {
                if last == Some(r) {
                    *nzval.last_mut().unwrap() += v;
                } else {
                    rowval.push(r);
                    nzval.push(v);
                    last = Some(r);
                }
            }
            colptr.push(rowval.len());
        }
        CscMatrix {
            nrows,
            ncols,
            colptr,
            rowval,
            nzval,
        }
    }

    pub fn nnz(&self) -> usize {
        self.rowval.len()
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.colptr[j]..self.colptr[j + 1]).map(move |k| (self.rowval[k], self.nzval[k]))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                out.push((i, j, v));
            }
        }
        out
    }

    /// `y += alpha * A x`
    pub fn gemv(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for j in 0..self.ncols {
            let xj = alpha * x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowval[k]] += self.nzval[k] * xj;
            }
        }
    }

    /// `y += alpha * A' x`
    pub fn gemv_t(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut acc = 0.0;
            for k in self.colptr[j]..self.colptr[j + 1] {
                acc += self.nzval[k] * x[self.rowval[k]];
            }
            y[j] += alpha * acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.gemv(1.0, x, &mut y);
        y
    }

    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.gemv_t(1.0, x, &mut y);
        y
    }

    pub fn transpose(&self) -> CscMatrix {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        CscMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Scales rows by `row` and columns by `col`: `diag(row) * A * diag(col)`.
    pub fn scale(&mut self, row: &[f64], col: &[f64]) {
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                self.nzval[k] *= row[self.rowval[k]] * col[j];
            }
        }
    }

    /// Infinity norm of every column.
    pub fn col_norms_inf(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.col(j).fold(0.0_f64, |m, (_, v)| m.max(v.abs())))
            .collect()
    }

    /// Infinity norm of every row.
    pub fn row_norms_inf(&self) -> Vec<f64> {
        let mut out = vec![0.0_f64; self.nrows];
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                out[i] = out[i].max(v.abs());
            }
        }
        out
    }

    /// Returns `true` when the matrix equals its transpose entry by entry.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let t = self.transpose();
        if t.colptr != self.colptr || t.rowval != self.rowval {
            return false;
        }
        self.nzval
            .iter()
            .zip(&t.nzval)
            .all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort_rows() {
        let m = CscMatrix::from_triplets(3, 2, &[(2, 0, 1.0), (0, 0, 2.0), (2, 0, 3.0), (1, 1, -1.0)]);
        assert_eq!(m.colptr, vec![0, 2, 3]);
        assert_eq!(m.rowval, vec![0, 2, 1]);
        assert_eq!(m.nzval, vec![2.0, 4.0, -1.0]);
    }

    #[test]
    fn gemv_matches_dense() {
        let m = CscMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 0, 2.0), (0, 2, 3.0), (1, 1, 4.0)]);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![4.0, 6.0]);
        assert_eq!(m.mul_t_vec(&[1.0, 2.0]), vec![5.0, 8.0, 3.0]);
    }

    #[test]
    fn symmetry_check() {
        let s = CscMatrix::from_triplets(2, 2, &[(0, 1, 1.5), (1, 0, 1.5), (0, 0, 2.0)]);
        assert!(s.is_symmetric(0.0));
        let n = CscMatrix::from_triplets(2, 2, &[(0, 1, 1.5), (0, 0, 2.0)]);
        assert!(!n.is_symmetric(0.0));
    }
}

//! Sparse LDL' factorization for quasi-definite KKT matrices.
//!
//! The symbolic phase computes a fill-reducing AMD ordering, the elimination
//! tree and the column counts of `L` once per sparsity pattern; the numeric
//! phase is an up-looking factorization that can be repeated with new values
//! on the same pattern. Pivots whose sign disagrees with the expected inertia
//! are replaced by a small value of the expected sign.

use super::sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdlError {
    #[error("matrix is not upper triangular (entry ({row}, {col}))")]
    NotUpperTriangular { row: usize, col: usize },
    #[error("ordering failed: {0}")]
    Ordering(String),
    #[error("non-finite pivot at column {0}")]
    NonFinitePivot(usize),
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// Permuted upper triangle.
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    /// Position of each input entry inside `ax`.
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    /// Expected pivot signs in permuted order.
    signs: Vec<f64>,
    pub regularize_eps: f64,
    pub regularize_delta: f64,
    /// Number of pivots replaced during the last factorization.
    pub regularized_pivots: usize,
    work: Vec<f64>,
}

impl LdlFactor {
    /// Symbolic analysis of the upper triangle `k` with expected pivot signs.
    pub fn analyze(k: &CscMatrix, signs: &[f64]) -> Result<Self, LdlError> {
        let n = k.ncols;
        assert_eq!(k.nrows, n);
        assert_eq!(signs.len(), n);
        for j in 0..n {
            for (i, _) in k.col(j) {
                if i > j {
                    return Err(LdlError::NotUpperTriangular { row: i, col: j });
                }
            }
        }

        let perm = if n == 0 {
            Vec::new()
        } else {
            let control = amd::Control::default();
            let (p, _, _) = amd::order::<usize>(n, &k.colptr, &k.rowval, &control)
                .map_err(|s| LdlError::Ordering(format!("{s:?}")))?;
            p
        };
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Permute into a new upper triangle, remembering where each entry lands.
        let mut counts = vec![0usize; n + 1];
        let mut placed = Vec::with_capacity(k.nnz());
        for j in 0..n {
            for (i, _) in k.col(j) {
                let (a, b) = (iperm[i], iperm[j]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                counts[c + 1] += 1;
                placed.push((r, c));
            }
        }
        for c in 0..n {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut ai = vec![0usize; placed.len()];
        let mut slot = vec![0usize; placed.len()];
        for (e, &(r, c)) in placed.iter().enumerate() {
            ai[next[c]] = r;
            slot[e] = next[c];
            next[c] += 1;
        }
        // Sort rows inside each column and carry the map along.
        let mut order: Vec<usize> = (0..placed.len()).collect();
        let mut inv = vec![0usize; placed.len()];
        for c in 0..n {
            let seg = &mut order[counts[c]..counts[c + 1]];
            seg.sort_by_key(|&p| ai[p]);
            for (off, &p) in seg.iter().enumerate() {
                inv[p] = counts[c] + off;
            }
        }
        let sorted_ai: Vec<usize> = order.iter().map(|&p| ai[p]).collect();
        let map: Vec<usize> = slot.iter().map(|&s| inv[s]).collect();

        let ap = counts;
        let ai = sorted_ai;

        // Elimination tree and column counts.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for j in 0..n {
            mark[j] = j;
            for p in ap[j]..ap[j + 1] {
                let mut i = ai[p];
                while mark[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    mark[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];

        let psigns = perm.iter().map(|&old| signs[old]).collect();
        Ok(LdlFactor {
            n,
            perm,
            ax: vec![0.0; ai.len()],
            ap,
            ai,
            map,
            etree,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            lp,
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            signs: psigns,
            regularize_eps: 1e-13,
            regularize_delta: 1e-7,
            regularized_pivots: 0,
            work: vec![0.0; n],
        })
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization with the values of the analyzed pattern.
    pub fn factor(&mut self, values: &[f64]) -> Result<(), LdlError> {
        assert_eq!(values.len(), self.map.len());
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (k, &v) in values.iter().enumerate() {
            self.ax[self.map[k]] += v;
        }

        let n = self.n;
        let mut y_vals = vec![0.0; n];
        let mut y_mark = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        self.regularized_pivots = 0;

        for k in 0..n {
            let mut nnz_y = 0;
            let mut dk = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    dk = self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_mark[b] {
                    y_mark[b] = true;
                    elim[0] = b;
                    let mut n_e = 1;
                    let mut nx = self.etree[b];
                    while nx != NONE && nx < k {
                        if y_mark[nx] {
                            break;
                        }
                        y_mark[nx] = true;
                        elim[n_e] = nx;
                        n_e += 1;
                        nx = self.etree[nx];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[nnz_y] = elim[n_e];
                        nnz_y += 1;
                    }
                }
            }

            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                let l = yc * self.dinv[c];
                self.lx[tmp] = l;
                dk -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_mark[c] = false;
            }

            if !dk.is_finite() {
                return Err(LdlError::NonFinitePivot(k));
            }
            let s = self.signs[k];
            if dk * s <= self.regularize_eps {
                dk = s * self.regularize_delta;
                self.regularized_pivots += 1;
            }
            self.d[k] = dk;
            self.dinv[k] = 1.0 / dk;
        }
        Ok(())
    }

    /// Solves `K x = b` in place.
    pub fn solve(&mut self, b: &mut [f64]) {
        let n = self.n;
        let x = &mut self.work;
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for i in 0..n {
            b[self.perm[i]] = x[i];
        }
    }
}

/// `y = K x` for a symmetric matrix stored as its upper triangle.
pub fn sym_upper_mul(k: &CscMatrix, values: &[f64], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..k.ncols {
        for p in k.colptr[j]..k.colptr[j + 1] {
            let i = k.rowval[p];
            let v = values[p];
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn upper_from_dense(m: &DMatrix<f64>) -> CscMatrix {
        let mut t = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..=j {
                if m[(i, j)] != 0.0 || i == j {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        CscMatrix::from_triplets(m.nrows(), m.ncols(), &t)
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [[4, 1, 1], [1, 3, 0], [1, 0, -2]]
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 1.0, 1.0, 3.0, 0.0, 1.0, 0.0, -2.0]);
        let k = upper_from_dense(&m);
        let mut f = LdlFactor::analyze(&k, &[1.0, 1.0, -1.0]).unwrap();
        f.factor(&k.nzval).unwrap();
        let b = [1.0, 2.0, 3.0];
        let mut x = b.to_vec();
        f.solve(&mut x);
        let r = &m * DVector::from_vec(x) - DVector::from_row_slice(&b);
        assert!(r.amax() < 1e-12);
        assert_eq!(f.regularized_pivots, 0);
    }

    #[test]
    fn random_sparse_spd_systems() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(2..30);
            let mut m = DMatrix::<f64>::zeros(n, n);
            for _ in 0..2 * n {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] += v;
                m[(j, i)] += v;
            }
            for i in 0..n {
                m[(i, i)] += 2.0 * n as f64;
            }
            let k = upper_from_dense(&m);
            let mut f = LdlFactor::analyze(&k, &vec![1.0; n]).unwrap();
            f.factor(&k.nzval).unwrap();
            let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
            let mut x = b.clone();
            f.solve(&mut x);
            let mut y = vec![0.0; n];
            sym_upper_mul(&k, &k.nzval, &x, &mut y);
            for i in 0..n {
                assert!((y[i] - b[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_lower_entries() {
        let k = CscMatrix::from_triplets(2, 2, &[(1, 0, 1.0), (0, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(
            LdlFactor::analyze(&k, &[1.0, 1.0]),
            Err(LdlError::NotUpperTriangular { .. })
        ));
    }
}

//! Convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 x' H x + c' x + constant
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//!                 lower <= x <= upper
//! ```
//!
//! and are solved by a primal-dual interior point method (Mehrotra
//! predictor-corrector) working on a regularized, quasi-definite reduced KKT
//! system factored by a sparse LDL'.

mod ipm;
pub mod ldl;
mod scaling;
pub mod sparse;

use std::io::{self, Write};

pub use sparse::CscMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("objective matrix is not symmetric")]
    NotSymmetric,
    #[error("objective matrix is not positive semidefinite")]
    NotPsd,
    #[error("problem data contains a non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// Accepted for the best iterate when a run ends without reaching `tol`.
    /// Also the absolute bound on primal residuals of any accepted iterate.
    pub reduced_tol: f64,
    pub max_iter: usize,
    /// Static diagonal regularization of the KKT matrix.
    pub regularization: f64,
    /// Dual (primal) objective magnitude beyond which a diverging iterate is
    /// checked for an infeasibility (unboundedness) certificate.
    pub divergence_threshold: f64,
    pub ruiz_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            reduced_tol: 1e-6,
            max_iter: 200,
            regularization: 1e-9,
            divergence_threshold: 1e8,
            ruiz_iterations: 15,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Residuals {
    /// `max |A_eq x - b_eq|`
    pub primal_eq: f64,
    /// Largest violation of `A_in x <= b_in` and of the bounds.
    pub primal_ineq: f64,
    /// `max |H x + c + A_eq' y + A_in' z + z_upper - z_lower|`
    pub stationarity: f64,
    /// Most negative inequality multiplier (zero when all are nonnegative).
    pub dual_infeasibility: f64,
    /// Largest `slack * multiplier` product.
    pub complementarity: f64,
    /// Smaller of `|primal - dual objective|` and `sum |slack * multiplier|`.
    pub duality_gap: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: Status,
    pub x: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub z_ineq: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
}

/// A convex QP. `h` holds both triangles of the symmetric objective matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: CscMatrix,
    pub c: Vec<f64>,
    pub constant: f64,
    pub a_eq: CscMatrix,
    pub b_eq: Vec<f64>,
    pub a_ineq: CscMatrix,
    pub b_ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticProgram {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.h.mul_vec(x);
        0.5 * dot(x, &hx) + dot(&self.c, x) + self.constant
    }

    /// Checks dimensions, finiteness, symmetry and positive semidefiniteness.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let dims = [
            ("h rows", self.h.nrows, n),
            ("h cols", self.h.ncols, n),
            ("a_eq cols", self.a_eq.ncols, n),
            ("b_eq", self.b_eq.len(), self.a_eq.nrows),
            ("a_ineq cols", self.a_ineq.ncols, n),
            ("b_ineq", self.b_ineq.len(), self.a_ineq.nrows),
            ("lower", self.lower.len(), n),
            ("upper", self.upper.len(), n),
        ];
        for (what, got, want) in dims {
            if got != want {
                return Err(QpError::Dimension(format!("{what}: {got} != {want}")));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.h.nzval) {
            return Err(QpError::NonFinite("h"));
        }
        if !finite(&self.c) || !self.constant.is_finite() {
            return Err(QpError::NonFinite("c"));
        }
        if !finite(&self.a_eq.nzval) || !finite(&self.b_eq) {
            return Err(QpError::NonFinite("a_eq/b_eq"));
        }
        if !finite(&self.a_ineq.nzval) || !finite(&self.b_ineq) {
            return Err(QpError::NonFinite("a_ineq/b_ineq"));
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("bounds"));
        }
        if !self.h.is_symmetric(1e-12) {
            return Err(QpError::NotSymmetric);
        }
        check_psd(&self.h)
    }

    /// Writes the problem as plain-text triplets for external cross-checking.
    ///
    /// Layout: a header line `qp <n> <m_eq> <m_ineq>`, then sections `H`,
    /// `c`, `A_eq`, `b_eq`, `A_ineq`, `b_ineq`, `bounds`, each introduced by
    /// its name and entry count. Matrix entries are `row col value`, vector
    /// entries `index value`, bounds `index lower upper`. Values use 17
    /// significant digits.
    pub fn write_debug<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "qp {} {} {}", self.num_vars(), self.b_eq.len(), self.b_ineq.len())?;
        writeln!(w, "constant {:.16e}", self.constant)?;
        let mat = |w: &mut W, name: &str, m: &CscMatrix| -> io::Result<()> {
            writeln!(w, "{name} {}", m.nnz())?;
            for (i, j, v) in m.triplets() {
                writeln!(w, "{i} {j} {v:.16e}")?;
            }
            Ok(())
        };
        let vec = |w: &mut W, name: &str, v: &[f64]| -> io::Result<()> {
            writeln!(w, "{name} {}", v.len())?;
            for (i, x) in v.iter().enumerate() {
                writeln!(w, "{i} {x:.16e}")?;
            }
            Ok(())
        };
        mat(&mut w, "H", &self.h)?;
        vec(&mut w, "c", &self.c)?;
        mat(&mut w, "A_eq", &self.a_eq)?;
        vec(&mut w, "b_eq", &self.b_eq)?;
        mat(&mut w, "A_ineq", &self.a_ineq)?;
        vec(&mut w, "b_ineq", &self.b_ineq)?;
        writeln!(w, "bounds {}", self.lower.len())?;
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            writeln!(w, "{i} {l:.16e} {u:.16e}")?;
        }
        Ok(())
    }
}

fn check_psd(h: &CscMatrix) -> Result<(), QpError> {
    let n = h.ncols;
    if h.nnz() == 0 {
        return Ok(());
    }
    let scale = h.nzval.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let shift = 1e-9 * scale.max(1.0);
    let mut t: Vec<(usize, usize, f64)> = h.triplets().into_iter().filter(|&(i, j, _)| i <= j).collect();
    t.extend((0..n).map(|i| (i, i, shift)));
    let upper = CscMatrix::from_triplets(n, n, &t);
    let mut f = ldl::LdlFactor::analyze(&upper, &vec![1.0; n])
        .map_err(|e| QpError::NumericalBreakdown(e.to_string()))?;
    f.regularize_eps = 0.0;
    f.factor(&upper.nzval)
        .map_err(|e| QpError::NumericalBreakdown(e.to_string()))?;
    if f.regularized_pivots > 0 {
        return Err(QpError::NotPsd);
    }
    Ok(())
}

/// Incremental construction of a [`QuadraticProgram`].
#[derive(Debug, Clone, Default)]
pub struct QpBuilder {
    lower: Vec<f64>,
    upper: Vec<f64>,
    c: Vec<f64>,
    h: Vec<(usize, usize, f64)>,
    constant: f64,
    eq: Vec<(usize, usize, f64)>,
    b_eq: Vec<f64>,
    ineq: Vec<(usize, usize, f64)>,
    b_ineq: Vec<f64>,
}

impl QpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.c.push(cost);
        self.c.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn add_cost(&mut self, var: usize, cost: f64) {
        self.c[var] += cost;
    }

    pub fn add_constant(&mut self, v: f64) {
        self.constant += v;
    }

    /// Adds `value` to `H[i][j]` and, off the diagonal, to `H[j][i]`.
    pub fn add_hessian(&mut self, i: usize, j: usize, value: f64) {
        if i == j {
            self.h.push((i, i, value));
        } else {
            self.h.push((i, j, value));
            self.h.push((j, i, value));
        }
    }

    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.b_eq.len();
        self.eq.extend(terms.iter().map(|&(j, v)| (row, j, v)));
        self.b_eq.push(rhs);
        row
    }

    pub fn add_ineq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.b_ineq.len();
        self.ineq.extend(terms.iter().map(|&(j, v)| (row, j, v)));
        self.b_ineq.push(rhs);
        row
    }

    pub fn build(self) -> QuadraticProgram {
        let n = self.c.len();
        QuadraticProgram {
            h: CscMatrix::from_triplets(n, n, &self.h),
            c: self.c,
            constant: self.constant,
            a_eq: CscMatrix::from_triplets(self.b_eq.len(), n, &self.eq),
            b_eq: self.b_eq,
            a_ineq: CscMatrix::from_triplets(self.b_ineq.len(), n, &self.ineq),
            b_ineq: self.b_ineq,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

/// Solves `qp` with a primal-dual interior point method.
///
/// The result is deterministic for fixed input and options.
pub fn solve(qp: &QuadraticProgram, opts: &SolveOptions) -> Result<SolveResult, QpError> {
    qp.validate()?;
    ipm::solve(qp, opts)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

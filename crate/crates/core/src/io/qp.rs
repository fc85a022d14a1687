use serde::{Deserialize, Serialize};

use super::{check_version, IoError};
use crate::qp::{QpBuilder, QuadraticProgram};

/// A QP as JSON. Bounds of `null` are infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpFile {
    pub format_version: String,
    #[serde(default)]
    pub name: String,
    pub c: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
    /// Upper-triangle `(i, j, value)` entries of the symmetric objective matrix.
    #[serde(default)]
    pub h: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub eq: Vec<RowRecord>,
    /// Rows of `a x <= rhs`.
    #[serde(default)]
    pub ineq: Vec<RowRecord>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowRecord {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl QpFile {
    pub fn into_qp(self, origin: &str) -> Result<QuadraticProgram, IoError> {
        let schema = |message: String| IoError::Schema { path: origin.into(), message };
        let n = self.c.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(schema(format!("bounds must have {n} entries")));
        }
        let in_range = |j: usize| j < n;
        if !self.h.iter().all(|&(i, j, _)| in_range(i) && in_range(j) && i <= j) {
            return Err(schema("h entries must be upper-triangle indices below c.len()".into()));
        }
        if !self.eq.iter().chain(&self.ineq).flat_map(|r| &r.terms).all(|&(j, _)| in_range(j)) {
            return Err(schema("row term index out of range".into()));
        }
        let mut b = QpBuilder::new();
        for j in 0..n {
            b.add_var(
                self.lower[j].unwrap_or(f64::NEG_INFINITY),
                self.upper[j].unwrap_or(f64::INFINITY),
                self.c[j],
            );
        }
        b.add_constant(self.constant);
        for &(i, j, v) in &self.h {
            b.add_hessian(i, j, v);
        }
        for r in &self.eq {
            b.add_eq(&r.terms, r.rhs);
        }
        for r in &self.ineq {
            b.add_ineq(&r.terms, r.rhs);
        }
        Ok(b.build())
    }
}

pub fn parse_qp(text: &str, origin: &str) -> Result<QuadraticProgram, IoError> {
    let file: QpFile = super::parse_json(text, origin)?;
    check_version(&file.format_version, origin)?;
    file.into_qp(origin)
}

//! AC power flow: injections, Jacobians, Newton solve and first-order models.
//!
//! Jacobians are dense `n x n` matrices, so memory grows as `O(n^2)` in the
//! bus count. Angles are in radians and never wrapped.

mod case;

pub use case::{Branch, Bus, BusKind, Generator, GridCase, GridError};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub const NEWTON_TOL: f64 = 1e-8;
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("Newton iteration did not converge in {iterations} iterations (mismatch history {history:?})")]
    NonConvergence { iterations: usize, history: Vec<f64> },
    #[error("singular power-flow Jacobian at iteration {0}")]
    SingularJacobian(usize),
}

/// Net injections `P_i`, `Q_i` in pu.
pub fn ac_injections(case: &GridCase, v: &[f64], theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GridError> {
    case.check_dims(v, theta)?;
    Ok(injections(case, v, theta))
}

fn injections(case: &GridCase, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = case.num_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let (gij, bij) = (case.g[(i, j)], case.b[(i, j)]);
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            p[i] += v[i] * v[j] * (gij * c + bij * s);
            q[i] += v[i] * v[j] * (gij * s - bij * c);
        }
    }
    (p, q)
}

/// Partial derivatives of the injections with respect to `V` and `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub p_v: DMatrix<f64>,
    pub p_theta: DMatrix<f64>,
    pub q_v: DMatrix<f64>,
    pub q_theta: DMatrix<f64>,
}

pub fn jacobians(case: &GridCase, v: &[f64], theta: &[f64]) -> Result<Jacobians, GridError> {
    case.check_dims(v, theta)?;
    Ok(jacobians_unchecked(case, v, theta))
}

fn jacobians_unchecked(case: &GridCase, v: &[f64], theta: &[f64]) -> Jacobians {
    let n = case.num_buses();
    let (p, q) = injections(case, v, theta);
    let mut jac = Jacobians {
        p_v: DMatrix::zeros(n, n),
        p_theta: DMatrix::zeros(n, n),
        q_v: DMatrix::zeros(n, n),
        q_theta: DMatrix::zeros(n, n),
    };
    for i in 0..n {
        let (gii, bii) = (case.g[(i, i)], case.b[(i, i)]);
        for j in 0..n {
            if i == j {
                continue;
            }
            let (gij, bij) = (case.g[(i, j)], case.b[(i, j)]);
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            let a = gij * c + bij * s;
            let d = gij * s - bij * c;
            jac.p_v[(i, j)] = v[i] * a;
            jac.p_theta[(i, j)] = v[i] * v[j] * d;
            jac.q_v[(i, j)] = v[i] * d;
            jac.q_theta[(i, j)] = -v[i] * v[j] * a;
        }
        let vi = v[i];
        if vi != 0.0 {
            jac.p_v[(i, i)] = p[i] / vi + gii * vi;
            jac.q_v[(i, i)] = q[i] / vi - bii * vi;
        }
        jac.p_theta[(i, i)] = -q[i] - bii * vi * vi;
        jac.q_theta[(i, i)] = p[i] - gii * vi * vi;
    }
    jac
}

/// A solved power-flow state and its linearization data.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net injections, pu.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub jac: Jacobians,
    pub iterations: usize,
    /// Largest absolute mismatch at the solution, pu.
    pub residual: f64,
}

impl OperatingPoint {
    /// First-order model of the net injections around this point.
    pub fn linear_injections(&self, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dv = DVector::from_iterator(v.len(), v.iter().zip(&self.v).map(|(a, b)| a - b));
        let dt = DVector::from_iterator(theta.len(), theta.iter().zip(&self.theta).map(|(a, b)| a - b));
        let p = &self.jac.p_v * &dv + &self.jac.p_theta * &dt;
        let q = &self.jac.q_v * &dv + &self.jac.q_theta * &dt;
        (
            p.iter().zip(&self.p).map(|(d, p0)| p0 + d).collect(),
            q.iter().zip(&self.q).map(|(d, q0)| q0 + d).collect(),
        )
    }
}

/// Fixed quantities of a power-flow solve.
#[derive(Debug, Clone)]
pub struct PowerFlowSpec {
    /// Net active injection target at every non-reference bus, pu.
    pub p_net: Vec<f64>,
    /// Net reactive injection target at every non-AVR bus, pu.
    pub q_net: Vec<f64>,
    /// Voltage magnitudes at AVR buses.
    pub v_set: Vec<Option<f64>>,
}

impl PowerFlowSpec {
    /// Base case: scheduled generation against base demand.
    pub fn base(case: &GridCase) -> Self {
        Self::with_extra_demand(case, &vec![0.0; case.num_buses()])
    }

    /// Base case with additional active demand `x` (pu) at each bus, of
    /// which `alpha_pq * x` is also drawn as reactive power.
    pub fn with_extra_demand(case: &GridCase, x: &[f64]) -> Self {
        let pg = case.scheduled_pg();
        let base = case.base_mva;
        PowerFlowSpec {
            p_net: (0..case.num_buses())
                .map(|i| pg[i] - case.buses[i].pd / base - x[i])
                .collect(),
            q_net: (0..case.num_buses())
                .map(|i| -case.buses[i].qd / base - case.alpha_pq * x[i])
                .collect(),
            v_set: case.v_set.clone(),
        }
    }
}

/// Newton-Raphson from flat start on the scheduled base case.
pub fn solve_operating_point(case: &GridCase) -> Result<OperatingPoint, PowerFlowError> {
    solve_with(case, &PowerFlowSpec::base(case))
}

/// Newton-Raphson from flat start with explicit injection targets.
///
/// Unknowns are the angles of all non-reference buses and the magnitudes of
/// buses without voltage control.
pub fn solve_with(case: &GridCase, spec: &PowerFlowSpec) -> Result<OperatingPoint, PowerFlowError> {
    let n = case.num_buses();
    for len in [spec.p_net.len(), spec.q_net.len(), spec.v_set.len()] {
        if len != n {
            return Err(GridError::DimensionMismatch { expected: n, got: len }.into());
        }
    }
    let ang: Vec<usize> = (0..n).filter(|&i| i != case.slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| spec.v_set[i].is_none()).collect();
    let mut v: Vec<f64> = spec.v_set.iter().map(|s| s.unwrap_or(1.0)).collect();
    let mut theta = vec![0.0; n];
    let dim = ang.len() + mag.len();

    let mismatch = |v: &[f64], theta: &[f64]| -> DVector<f64> {
        let (p, q) = injections(case, v, theta);
        let mut f = DVector::zeros(dim);
        for (k, &i) in ang.iter().enumerate() {
            f[k] = p[i] - spec.p_net[i];
        }
        for (k, &i) in mag.iter().enumerate() {
            f[ang.len() + k] = q[i] - spec.q_net[i];
        }
        f
    };

    let mut history = Vec::new();
    let mut f = mismatch(&v, &theta);
    let mut iterations = 0;
    loop {
        let norm = f.amax();
        history.push(norm);
        if !norm.is_finite() {
            return Err(PowerFlowError::NonConvergence { iterations, history });
        }
        if norm < NEWTON_TOL {
            break;
        }
        if iterations == NEWTON_MAX_ITER {
            return Err(PowerFlowError::NonConvergence { iterations, history });
        }
        let jac = jacobians_unchecked(case, &v, &theta);
        let mut m = DMatrix::zeros(dim, dim);
        for (r, &i) in ang.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                m[(r, c)] = jac.p_theta[(i, j)];
            }
            for (c, &j) in mag.iter().enumerate() {
                m[(r, ang.len() + c)] = jac.p_v[(i, j)];
            }
        }
        for (r, &i) in mag.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                m[(ang.len() + r, c)] = jac.q_theta[(i, j)];
            }
            for (c, &j) in mag.iter().enumerate() {
                m[(ang.len() + r, ang.len() + c)] = jac.q_v[(i, j)];
            }
        }
        let step = m
            .lu()
            .solve(&(-&f))
            .filter(|s| s.iter().all(|x| x.is_finite()))
            .ok_or(PowerFlowError::SingularJacobian(iterations))?;
        for (k, &i) in ang.iter().enumerate() {
            theta[i] += step[k];
        }
        for (k, &i) in mag.iter().enumerate() {
            v[i] += step[ang.len() + k];
        }
        iterations += 1;
        f = mismatch(&v, &theta);
    }

    let (p, q) = injections(case, &v, &theta);
    let jac = jacobians_unchecked(case, &v, &theta);
    Ok(OperatingPoint {
        residual: f.amax(),
        v,
        theta,
        p,
        q,
        jac,
        iterations,
    })
}

/// Linearized thermal limit `coeffs . (V_i, V_j, theta_i, theta_j) <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalRow {
    pub line: usize,
    pub from: usize,
    pub to: usize,
    pub coeffs: [f64; 4],
    pub rhs: f64,
    /// `false` for unrated lines; such rows impose nothing.
    pub active: bool,
}

/// `|y|^2 (V_i^2 + V_j^2 - 2 V_i V_j cos(theta_i - theta_j))`
pub fn thermal_lhs(case: &GridCase, line: usize, v: &[f64], theta: &[f64]) -> f64 {
    let br = &case.branches[line];
    let (vi, vj) = (v[br.from], v[br.to]);
    br.y_sq() * (vi * vi + vj * vj - 2.0 * vi * vj * (theta[br.from] - theta[br.to]).cos())
}

/// Gradient of [`thermal_lhs`] with respect to `(V_i, V_j, theta_i, theta_j)`.
pub fn thermal_gradient(case: &GridCase, line: usize, v: &[f64], theta: &[f64]) -> [f64; 4] {
    let br = &case.branches[line];
    let (vi, vj) = (v[br.from], v[br.to]);
    let (s, c) = (theta[br.from] - theta[br.to]).sin_cos();
    let y2 = br.y_sq();
    let dth = 2.0 * y2 * vi * vj * s;
    [2.0 * y2 * (vi - vj * c), 2.0 * y2 * (vj - vi * c), dth, -dth]
}

pub fn linear_thermal_limit(case: &GridCase, op: &OperatingPoint, line: usize) -> Result<ThermalRow, GridError> {
    if line >= case.branches.len() {
        return Err(GridError::UnknownLine(line));
    }
    let br = &case.branches[line];
    let limit = case.thermal_limit(line);
    let f0 = thermal_lhs(case, line, &op.v, &op.theta);
    let coeffs = thermal_gradient(case, line, &op.v, &op.theta);
    let x0 = [op.v[br.from], op.v[br.to], op.theta[br.from], op.theta[br.to]];
    let lin0: f64 = coeffs.iter().zip(&x0).map(|(a, b)| a * b).sum();
    let active = limit.is_finite();
    Ok(ThermalRow {
        line,
        from: br.from,
        to: br.to,
        coeffs,
        rhs: if active { limit * limit - f0 + lin0 } else { f64::INFINITY },
        active,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchFlow {
    pub from: u32,
    pub to: u32,
    pub p_ij: f64,
    pub p_ji: f64,
    pub q_ij: f64,
    pub q_ji: f64,
    pub p_loss: f64,
    pub q_loss: f64,
    pub thermal_lhs: f64,
    pub thermal_limit_sq: f64,
}

/// Nonlinear branch flows (pu) from the full pi model of every line.
pub fn branch_report(case: &GridCase, v: &[f64], theta: &[f64]) -> Result<Vec<BranchFlow>, GridError> {
    case.check_dims(v, theta)?;
    let mut out = Vec::with_capacity(case.branches.len());
    for (k, br) in case.branches.iter().enumerate() {
        let (gs, bs) = br.series_admittance();
        let tau = br.ratio();
        let (i, j) = (br.from, br.to);
        let (vi, vj) = (v[i], v[j]);
        let (s, c) = (theta[i] - theta[j]).sin_cos();
        let bsh = br.b / 2.0;
        // S_ij = V_i conj(I_ij) with I_ij = Y_ff V_i + Y_ft V_j.
        let vi_t = vi / tau;
        let p_ij = vi_t * vi_t * gs - vi_t * vj * (gs * c + bs * s);
        let q_ij = -vi_t * vi_t * (bs + bsh) - vi_t * vj * (gs * s - bs * c);
        let p_ji = vj * vj * gs - vj * vi_t * (gs * c - bs * s);
        let q_ji = -vj * vj * (bs + bsh) - vj * vi_t * (-gs * s - bs * c);
        let lim = case.thermal_limit(k);
        out.push(BranchFlow {
            from: case.buses[i].id,
            to: case.buses[j].id,
            p_ij,
            p_ji,
            q_ij,
            q_ji,
            p_loss: p_ij + p_ji,
            q_loss: q_ij + q_ji,
            thermal_lhs: thermal_lhs(case, k, v, theta),
            thermal_limit_sq: lim * lim,
        });
    }
    Ok(out)
}

//! Mehrotra predictor-corrector interior point method.
//!
//! Internally the problem is put in the form `min 1/2 x'Px + c'x` subject to
//! `Ax = b`, `Gx + s = h`, `s >= 0`, where `G` stacks the user inequality
//! rows followed by one row per finite upper bound and one per finite lower
//! bound. Eliminating `s` and the inequality multipliers leaves the
//! quasi-definite system
//!
//! ```text
//!     [ P + G' D G + rho I    A'     ] [dx]   [r1]
//!     [ A                   -delta I ] [dy] = [r2]
//! ```
//!
//! with `D = z ./ s`, whose pattern is fixed across iterations.
//!
//! A diverging dual (primal) objective, a stalled iteration or the
//! iteration cap triggers a classification pass: an elastic feasibility LP
//! decides infeasibility and a bounded recession LP decides unboundedness.

use super::ldl::{sym_upper_mul, LdlFactor};
use super::scaling::{equilibrate, Scaling};
use super::sparse::CscMatrix;
use super::{dot, norm_inf, QpBuilder, QpError, QuadraticProgram, Residuals, SolveOptions, SolveResult, Status};

const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 3;

/// Problem in internal standard form (unscaled).
#[derive(Debug, Clone)]
struct StdForm {
    p: CscMatrix,
    c: Vec<f64>,
    a: CscMatrix,
    b: Vec<f64>,
    g: CscMatrix,
    h: Vec<f64>,
    n_user_ineq: usize,
    /// Variable of each upper-bound row, in order.
    upper_rows: Vec<usize>,
    /// Variable of each lower-bound row, in order.
    lower_rows: Vec<usize>,
}

impl StdForm {
    fn from_qp(qp: &QuadraticProgram) -> Self {
        let n = qp.num_vars();
        let mut t = qp.a_ineq.triplets();
        let mut h = qp.b_ineq.clone();
        let mut upper_rows = Vec::new();
        let mut lower_rows = Vec::new();
        for j in 0..n {
            if qp.upper[j].is_finite() {
                t.push((h.len(), j, 1.0));
                h.push(qp.upper[j]);
                upper_rows.push(j);
            }
        }
        for j in 0..n {
            if qp.lower[j].is_finite() {
                t.push((h.len(), j, -1.0));
                h.push(-qp.lower[j]);
                lower_rows.push(j);
            }
        }
        StdForm {
            p: qp.h.clone(),
            c: qp.c.clone(),
            a: qp.a_eq.clone(),
            b: qp.b_eq.clone(),
            g: CscMatrix::from_triplets(h.len(), n, &t),
            h,
            n_user_ineq: qp.b_ineq.len(),
            upper_rows,
            lower_rows,
        }
    }
}

/// Reduced KKT matrix with a fixed pattern.
struct Kkt {
    n: usize,
    m: usize,
    pattern: CscMatrix,
    base: Vec<f64>,
    /// `(position, G row, G_rj * G_rk)` contributions of `G' D G`.
    gdg: Vec<(usize, usize, f64)>,
    diag: Vec<usize>,
    values: Vec<f64>,
    plain: Vec<f64>,
    rho: f64,
    delta: f64,
    factor: LdlFactor,
    scratch: Vec<f64>,
}

fn position(m: &CscMatrix, i: usize, j: usize) -> usize {
    let start = m.colptr[j];
    let rows = &m.rowval[start..m.colptr[j + 1]];
    start + rows.binary_search(&i).expect("entry in pattern")
}

impl Kkt {
    fn new(p: &CscMatrix, a: &CscMatrix, g: &CscMatrix, reg: f64) -> Result<Self, QpError> {
        let n = p.ncols;
        let m = a.nrows;
        let dim = n + m;
        let gt = g.transpose();

        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, _) in p.triplets() {
            if i <= j {
                t.push((i, j, 0.0));
            }
        }
        for r in 0..gt.ncols {
            let row: Vec<(usize, f64)> = gt.col(r).collect();
            for (ka, &(ja, _)) in row.iter().enumerate() {
                for &(jb, _) in &row[ka..] {
                    t.push((ja.min(jb), ja.max(jb), 0.0));
                }
            }
        }
        for (i, j, _) in a.triplets() {
            t.push((j, n + i, 0.0));
        }
        for k in 0..dim {
            t.push((k, k, 0.0));
        }
        let pattern = CscMatrix::from_triplets(dim, dim, &t);

        let mut base = vec![0.0; pattern.nnz()];
        for (i, j, v) in p.triplets() {
            if i <= j {
                base[position(&pattern, i, j)] += v;
            }
        }
        for (i, j, v) in a.triplets() {
            base[position(&pattern, j, n + i)] += v;
        }
        let mut gdg = Vec::new();
        for r in 0..gt.ncols {
            let row: Vec<(usize, f64)> = gt.col(r).collect();
            for (ka, &(ja, va)) in row.iter().enumerate() {
                for &(jb, vb) in &row[ka..] {
                    gdg.push((position(&pattern, ja.min(jb), ja.max(jb)), r, va * vb));
                }
            }
        }
        let diag: Vec<usize> = (0..dim).map(|k| position(&pattern, k, k)).collect();
        let signs: Vec<f64> = (0..dim).map(|k| if k < n { 1.0 } else { -1.0 }).collect();
        let factor = LdlFactor::analyze(&pattern, &signs)
            .map_err(|e| QpError::NumericalBreakdown(e.to_string()))?;
        let nnz = pattern.nnz();
        Ok(Kkt {
            n,
            m,
            pattern,
            base,
            gdg,
            diag,
            values: vec![0.0; nnz],
            plain: vec![0.0; nnz],
            rho: reg,
            delta: reg,
            factor,
            scratch: vec![0.0; dim],
        })
    }

    fn refactor(&mut self, d: &[f64]) -> Result<(), QpError> {
        self.plain.copy_from_slice(&self.base);
        for &(pos, r, coef) in &self.gdg {
            self.plain[pos] += d[r] * coef;
        }
        self.values.copy_from_slice(&self.plain);
        for k in 0..self.n + self.m {
            let pos = self.diag[k];
            if k < self.n {
                self.values[pos] += self.rho;
            } else {
                self.values[pos] -= self.delta;
            }
        }
        self.factor
            .factor(&self.values)
            .map_err(|e| QpError::NumericalBreakdown(e.to_string()))
    }

    /// Solves with the regularized factor, refining against the plain matrix.
    fn solve(&mut self, rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.factor.solve(&mut sol);
        let rnorm0 = norm_inf(rhs).max(1e-300);
        let mut best = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            sym_upper_mul(&self.pattern, &self.plain, &sol, &mut self.scratch);
            let mut res: Vec<f64> = rhs.iter().zip(&self.scratch).map(|(r, k)| r - k).collect();
            let rn = norm_inf(&res);
            if !(rn < best) || rn <= 1e-14 * rnorm0 {
                break;
            }
            best = rn;
            self.factor.solve(&mut res);
            for (s, e) in sol.iter_mut().zip(&res) {
                *s += e;
            }
        }
        sol
    }
}

/// Factors with growing regularization until the factorization succeeds.
/// Refinement against the unregularized matrix keeps directions accurate.
fn refactor_escalating(kkt: &mut Kkt, d: &[f64], reg: f64) -> bool {
    for bump in [1.0, 1e2, 1e4] {
        kkt.rho = reg * bump;
        kkt.delta = reg * bump;
        if kkt.refactor(d).is_ok() {
            return true;
        }
    }
    false
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

/// Iterations before objective divergence is taken as a certificate hint.
const DIVERGENCE_MIN_ITER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Converged,
    DualDiverged,
    PrimalDiverged,
    Stalled,
    IterLimit,
    /// Factorization or search direction failed mid-run.
    Breakdown,
}

/// Unscaled optimality measures of an iterate.
#[derive(Debug, Clone, Copy)]
struct Measures {
    r_eq: f64,
    r_in: f64,
    r_dual: f64,
    pobj: f64,
    dobj: f64,
    eq_scale: f64,
    in_scale: f64,
    dual_scale: f64,
    max_comp: f64,
    /// `sum |slack * multiplier|`
    sum_comp: f64,
    min_z: f64,
}

fn measures(f: &StdForm, x: &[f64], y: &[f64], z: &[f64]) -> Measures {
    let px = f.p.mul_vec(x);
    let ax = f.a.mul_vec(x);
    let gx = f.g.mul_vec(x);
    let aty = f.a.mul_t_vec(y);
    let gtz = f.g.mul_t_vec(z);
    let r_eq = ax.iter().zip(&f.b).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let r_in = gx.iter().zip(&f.h).fold(0.0_f64, |m, (g, h)| m.max(g - h));
    let mut r_dual = 0.0_f64;
    for j in 0..x.len() {
        r_dual = r_dual.max((px[j] + f.c[j] + aty[j] + gtz[j]).abs());
    }
    let xpx = dot(x, &px);
    let pobj = 0.5 * xpx + dot(&f.c, x);
    let dobj = -0.5 * xpx - dot(&f.b, y) - dot(&f.h, z);
    let max_comp = gx
        .iter()
        .zip(&f.h)
        .zip(z)
        .fold(0.0_f64, |m, ((g, h), zi)| m.max(((h - g) * zi).abs()));
    let sum_comp = gx.iter().zip(&f.h).zip(z).map(|((g, h), zi)| ((h - g) * zi).abs()).sum();
    Measures {
        r_eq,
        r_in: r_in.max(0.0),
        r_dual,
        pobj,
        dobj,
        eq_scale: 1.0 + norm_inf(&f.b).max(norm_inf(&ax)),
        in_scale: 1.0 + norm_inf(&f.h).max(norm_inf(&gx)),
        dual_scale: 1.0
            + norm_inf(&f.c)
                .max(norm_inf(&px))
                .max(norm_inf(&aty))
                .max(norm_inf(&gtz)),
        max_comp,
        sum_comp,
        min_z: z.iter().fold(f64::INFINITY, |m, v| m.min(*v)),
    }
}

/// The smaller of the objective difference and the total complementarity,
/// which agree up to residual terms. The latter avoids cancellation when
/// the objective is small next to `b'y`.
fn gap(m: &Measures) -> f64 {
    (m.pobj - m.dobj).abs().min(m.sum_comp)
}

/// Largest relative optimality error; converged when at most `tol`.
fn merit(m: &Measures) -> f64 {
    worst_error(m, (m.pobj - m.dobj).abs())
}

/// As [`merit`] with the cancellation-free gap, for the reduced tolerance.
fn reduced_merit(m: &Measures) -> f64 {
    worst_error(m, gap(m))
}

fn worst_error(m: &Measures, gap: f64) -> f64 {
    let worst = (m.r_eq / m.eq_scale)
        .max(m.r_in / m.in_scale)
        .max(m.r_dual / m.dual_scale)
        .max(gap / (1.0 + m.pobj.abs().min(m.dobj.abs())));
    if worst.is_finite() { worst } else { f64::INFINITY }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (a, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            alpha = alpha.min(-a / d);
        }
    }
    alpha
}

struct Scaled {
    f: StdForm,
    scaling: Scaling,
}

fn scale_problem(orig: &StdForm, iterations: usize) -> Scaled {
    let mut f = orig.clone();
    let scaling = equilibrate(&mut f.p, &mut f.c, &mut f.a, &mut f.g, iterations);
    for (b, e) in f.b.iter_mut().zip(&scaling.e_eq) {
        *b *= e;
    }
    for (h, e) in f.h.iter_mut().zip(&scaling.e_in) {
        *h *= e;
    }
    Scaled { f, scaling }
}

fn unscale(sc: &Scaling, it: &Iterate) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x = it.x.iter().zip(&sc.d).map(|(x, d)| x * d).collect();
    let y = it.y.iter().zip(&sc.e_eq).map(|(y, e)| y * e / sc.cost).collect();
    let z = it.z.iter().zip(&sc.e_in).map(|(z, e)| z * e / sc.cost).collect();
    (x, y, z)
}

/// Core iteration. Returns the outcome, the unscaled `(x, y, z)` and the
/// iteration count.
fn iterate(
    orig: &StdForm,
    opts: &SolveOptions,
) -> Result<(Outcome, Vec<f64>, Vec<f64>, Vec<f64>, usize), QpError> {
    let Scaled { f, scaling } = scale_problem(orig, opts.ruiz_iterations);
    let n = f.c.len();
    let m = f.b.len();
    let p = f.h.len();
    let mut kkt = Kkt::new(&f.p, &f.a, &f.g, opts.regularization)?;

    // Initial point: least-squares fit with unit weights, then shift into
    // the positive orthant.
    kkt.refactor(&vec![1.0; p])?;
    let mut rhs = vec![0.0; n + m];
    for j in 0..n {
        rhs[j] = -f.c[j];
    }
    f.g.gemv_t(1.0, &f.h, &mut rhs[..n]);
    rhs[n..].copy_from_slice(&f.b);
    let sol = kkt.solve(&rhs);
    let x = sol[..n].to_vec();
    let y = sol[n..].to_vec();
    let gx = f.g.mul_vec(&x);
    let mut s: Vec<f64> = f.h.iter().zip(&gx).map(|(h, g)| h - g).collect();
    let mut z: Vec<f64> = s.iter().map(|v| -v).collect();
    if p > 0 {
        let ap = -s.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        if ap >= 0.0 {
            s.iter_mut().for_each(|v| *v += 1.0 + ap);
        }
        let ad = -z.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        if ad >= 0.0 {
            z.iter_mut().for_each(|v| *v += 1.0 + ad);
        }
    }
    let mut it = Iterate { x, y, z, s };

    let mut small_steps = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>, usize)> = None;
    // Falls back to the best primal-feasible iterate when it meets the
    // reduced tolerance.
    let finish = |outcome: Outcome, xu: Vec<f64>, yu: Vec<f64>, zu: Vec<f64>, iter: usize, best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>, usize)>| {
        match best {
            Some((m, bx, by, bz, bi)) if m <= opts.reduced_tol => Ok((Outcome::Converged, bx, by, bz, bi)),
            _ => Ok((outcome, xu, yu, zu, iter)),
        }
    };
    for iter in 0..opts.max_iter {
        let (xu, yu, zu) = unscale(&scaling, &it);
        let meas = measures(orig, &xu, &yu, &zu);
        let score = merit(&meas);
        let primal_ok = meas.r_eq.max(meas.r_in) <= opts.reduced_tol;
        if score <= opts.tol && primal_ok {
            return Ok((Outcome::Converged, xu, yu, zu, iter));
        }
        let reduced = reduced_merit(&meas);
        if primal_ok && best.as_ref().is_none_or(|b| reduced < b.0) {
            best = Some((reduced, xu.clone(), yu.clone(), zu.clone(), iter));
        }
        if !meas.pobj.is_finite() || !meas.dobj.is_finite() {
            return finish(Outcome::Stalled, xu, yu, zu, iter, best);
        }
        // Divergence is judged on the equilibrated objective values, once
        // the starting point has been left behind.
        let sm = measures(&f, &it.x, &it.y, &it.z);
        if iter >= DIVERGENCE_MIN_ITER {
            if sm.dobj > opts.divergence_threshold && sm.dobj - sm.pobj > 0.0 {
                return finish(Outcome::DualDiverged, xu, yu, zu, iter, best);
            }
            if sm.pobj < -opts.divergence_threshold {
                return finish(Outcome::PrimalDiverged, xu, yu, zu, iter, best);
            }
        }

        // Residuals in scaled space.
        let mut rd = f.p.mul_vec(&it.x);
        for j in 0..n {
            rd[j] += f.c[j];
        }
        f.a.gemv_t(1.0, &it.y, &mut rd);
        f.g.gemv_t(1.0, &it.z, &mut rd);
        let mut rp = f.a.mul_vec(&it.x);
        for i in 0..m {
            rp[i] -= f.b[i];
        }
        let mut rg = f.g.mul_vec(&it.x);
        for i in 0..p {
            rg[i] += it.s[i] - f.h[i];
        }

        let d: Vec<f64> = it.z.iter().zip(&it.s).map(|(z, s)| z / s).collect();
        if !refactor_escalating(&mut kkt, &d, opts.regularization) {
            return finish(Outcome::Breakdown, xu, yu, zu, iter, best);
        }

        let mu = if p > 0 { dot(&it.s, &it.z) / p as f64 } else { 0.0 };
        let newton = |kkt: &mut Kkt, rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut rhs = vec![0.0; n + m];
            let w: Vec<f64> = (0..p).map(|i| d[i] * rg[i] - rc[i] / it.s[i]).collect();
            for j in 0..n {
                rhs[j] = -rd[j];
            }
            f.g.gemv_t(-1.0, &w, &mut rhs[..n]);
            for i in 0..m {
                rhs[n + i] = -rp[i];
            }
            let sol = kkt.solve(&rhs);
            let dx = sol[..n].to_vec();
            let dy = sol[n..].to_vec();
            let gdx = f.g.mul_vec(&dx);
            let dz: Vec<f64> = (0..p).map(|i| d[i] * (gdx[i] + rg[i]) - rc[i] / it.s[i]).collect();
            let ds: Vec<f64> = (0..p).map(|i| -(rc[i] + it.s[i] * dz[i]) / it.z[i]).collect();
            (dx, dy, dz, ds)
        };

        // Predictor.
        let rc_aff: Vec<f64> = (0..p).map(|i| it.s[i] * it.z[i]).collect();
        let (dx_a, dy_a, dz_a, ds_a) = newton(&mut kkt, &rc_aff);
        let (dx, dy, dz, ds) = if p == 0 {
            (dx_a, dy_a, dz_a, ds_a)
        } else {
            let alpha_aff = max_step(&it.s, &ds_a).min(max_step(&it.z, &dz_a)).min(1.0);
            let mu_aff = (0..p)
                .map(|i| (it.s[i] + alpha_aff * ds_a[i]) * (it.z[i] + alpha_aff * dz_a[i]))
                .sum::<f64>()
                / p as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            // Corrector.
            let rc: Vec<f64> = (0..p)
                .map(|i| it.s[i] * it.z[i] + ds_a[i] * dz_a[i] - sigma * mu)
                .collect();
            newton(&mut kkt, &rc)
        };

        let alpha = if p == 0 {
            1.0
        } else {
            (STEP_FRACTION * max_step(&it.s, &ds).min(max_step(&it.z, &dz))).min(1.0)
        };
        if !alpha.is_finite() || dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return finish(Outcome::Breakdown, xu, yu, zu, iter, best);
        }
        for j in 0..n {
            it.x[j] += alpha * dx[j];
        }
        for i in 0..m {
            it.y[i] += alpha * dy[i];
        }
        for i in 0..p {
            it.z[i] += alpha * dz[i];
            it.s[i] += alpha * ds[i];
        }

        if alpha < 1e-10 {
            small_steps += 1;
            if small_steps >= 5 {
                let (xu, yu, zu) = unscale(&scaling, &it);
                return finish(Outcome::Stalled, xu, yu, zu, iter + 1, best);
            }
        } else {
            small_steps = 0;
        }
    }
    let (xu, yu, zu) = unscale(&scaling, &it);
    finish(Outcome::IterLimit, xu, yu, zu, opts.max_iter, best)
}

/// Minimum total violation of the constraints; zero iff feasible.
fn elastic_violation(f: &StdForm, opts: &SolveOptions) -> Result<Option<f64>, QpError> {
    let n = f.c.len();
    let mut b = QpBuilder::new();
    for _ in 0..n {
        b.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
    }
    let at = f.a.transpose();
    for i in 0..f.b.len() {
        let mut terms: Vec<(usize, f64)> = at.col(i).collect();
        let up = b.add_var(0.0, f64::INFINITY, 1.0);
        let dn = b.add_var(0.0, f64::INFINITY, 1.0);
        terms.push((up, 1.0));
        terms.push((dn, -1.0));
        b.add_eq(&terms, f.b[i]);
    }
    let gt = f.g.transpose();
    for i in 0..f.h.len() {
        let mut terms: Vec<(usize, f64)> = gt.col(i).collect();
        let t = b.add_var(0.0, f64::INFINITY, 1.0);
        terms.push((t, -1.0));
        b.add_ineq(&terms, f.h[i]);
    }
    let aux = StdForm::from_qp(&b.build());
    let (outcome, x, _, _, _) = iterate(&aux, opts)?;
    if outcome != Outcome::Converged {
        return Ok(None);
    }
    Ok(Some(dot(&aux.c, &x)))
}

/// Most negative `c'd` over recession directions `d` in the unit box.
fn recession_descent(f: &StdForm, opts: &SolveOptions) -> Result<Option<f64>, QpError> {
    let n = f.c.len();
    let mut b = QpBuilder::new();
    for j in 0..n {
        b.add_var(-1.0, 1.0, f.c[j]);
    }
    let pt = f.p.transpose();
    for j in 0..n {
        let terms: Vec<(usize, f64)> = pt.col(j).collect();
        if !terms.is_empty() {
            b.add_eq(&terms, 0.0);
        }
    }
    let at = f.a.transpose();
    for i in 0..f.b.len() {
        let terms: Vec<(usize, f64)> = at.col(i).collect();
        b.add_eq(&terms, 0.0);
    }
    let gt = f.g.transpose();
    for i in 0..f.h.len() {
        let terms: Vec<(usize, f64)> = gt.col(i).collect();
        b.add_ineq(&terms, 0.0);
    }
    let aux = StdForm::from_qp(&b.build());
    let (outcome, x, _, _, _) = iterate(&aux, opts)?;
    if outcome != Outcome::Converged {
        return Ok(None);
    }
    Ok(Some(dot(&aux.c, &x)))
}

fn classify(f: &StdForm, opts: &SolveOptions, fallback: Status) -> Result<Status, QpError> {
    let aux_opts = SolveOptions {
        max_iter: opts.max_iter.max(100),
        ..*opts
    };
    let data_scale = 1.0 + norm_inf(&f.b).max(norm_inf(&f.h));
    match elastic_violation(f, &aux_opts)? {
        Some(v) if v > 1e-6 * data_scale => return Ok(Status::Infeasible),
        Some(_) => {}
        None => return Ok(fallback),
    }
    let c_scale = 1.0 + norm_inf(&f.c);
    match recession_descent(f, &aux_opts)? {
        Some(v) if v < -1e-6 * c_scale => Ok(Status::Unbounded),
        _ => Ok(fallback),
    }
}

/// Factor bringing the largest objective coefficient to one, so that
/// tolerances do not depend on the objective's units.
fn objective_scale(f: &StdForm) -> f64 {
    let m = norm_inf(&f.c).max(norm_inf(&f.p.nzval));
    if m > 0.0 && m.is_finite() { (1.0 / m).clamp(1e-6, 1e6) } else { 1.0 }
}

pub(super) fn solve(qp: &QuadraticProgram, opts: &SolveOptions) -> Result<SolveResult, QpError> {
    let n = qp.num_vars();
    let f = StdForm::from_qp(qp);

    let crossed = (0..n).any(|j| qp.lower[j] > qp.upper[j]);
    let (status, x, y, z, iterations) = if crossed {
        (Status::Infeasible, vec![0.0; n], vec![0.0; f.b.len()], vec![0.0; f.h.len()], 0)
    } else {
        let sigma = objective_scale(&f);
        let mut fs = f.clone();
        fs.p.nzval.iter_mut().for_each(|v| *v *= sigma);
        fs.c.iter_mut().for_each(|v| *v *= sigma);
        let (outcome, x, mut y, mut z, iters) = iterate(&fs, opts)?;
        y.iter_mut().for_each(|v| *v /= sigma);
        z.iter_mut().for_each(|v| *v /= sigma);
        let status = match outcome {
            Outcome::Converged => Status::Optimal,
            Outcome::Breakdown => match classify(&fs, opts, Status::IterLimit)? {
                Status::IterLimit => {
                    return Err(QpError::NumericalBreakdown(format!("factorization failed at iteration {iters}")))
                }
                status => status,
            },
            _ => classify(&fs, opts, Status::IterLimit)?,
        };
        (status, x, y, z, iters)
    };

    let z_ineq = z[..f.n_user_ineq].to_vec();
    let mut z_upper = vec![0.0; n];
    let mut z_lower = vec![0.0; n];
    let nu = f.upper_rows.len();
    for (k, &j) in f.upper_rows.iter().enumerate() {
        z_upper[j] = z[f.n_user_ineq + k];
    }
    for (k, &j) in f.lower_rows.iter().enumerate() {
        z_lower[j] = z[f.n_user_ineq + nu + k];
    }

    let meas = measures(&f, &x, &y, &z);
    let gap = gap(&meas);
    let residuals = Residuals {
        primal_eq: meas.r_eq,
        primal_ineq: meas.r_in,
        stationarity: meas.r_dual,
        dual_infeasibility: if z.is_empty() { 0.0 } else { (-meas.min_z).max(0.0) },
        complementarity: meas.max_comp,
        duality_gap: gap,
        relative_gap: gap / (1.0 + meas.pobj.abs().min(meas.dobj.abs())),
    };
    Ok(SolveResult {
        status,
        objective: qp.objective(&x),
        x,
        y_eq: y,
        z_ineq,
        z_lower,
        z_upper,
        iterations,
        residuals,
    })
}

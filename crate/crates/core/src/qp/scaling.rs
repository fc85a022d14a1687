//! Ruiz equilibration of the KKT data.

use super::sparse::CscMatrix;

const MIN_SCALE: f64 = 1e-4;
const MAX_SCALE: f64 = 1e4;

#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    /// Variable scaling: `x = d .* x_scaled`.
    pub d: Vec<f64>,
    /// Equality row scaling.
    pub e_eq: Vec<f64>,
    /// Inequality row scaling.
    pub e_in: Vec<f64>,
    /// Objective scaling.
    pub cost: f64,
}

fn clamp_inv_sqrt(v: f64) -> f64 {
    if v <= 1e-12 {
        1.0
    } else {
        (1.0 / v.sqrt()).clamp(MIN_SCALE, MAX_SCALE)
    }
}

/// Scales `p`, `c`, `a`, `g` in place and returns the accumulated factors.
pub(crate) fn equilibrate(
    p: &mut CscMatrix,
    c: &mut [f64],
    a: &mut CscMatrix,
    g: &mut CscMatrix,
    iterations: usize,
) -> Scaling {
    let n = c.len();
    let mut d = vec![1.0; n];
    let mut e_eq = vec![1.0; a.nrows];
    let mut e_in = vec![1.0; g.nrows];

    for _ in 0..iterations {
        let pc = p.col_norms_inf();
        let ac = a.col_norms_inf();
        let gc = g.col_norms_inf();
        let dk: Vec<f64> = (0..n)
            .map(|j| clamp_inv_sqrt(pc[j].max(ac[j]).max(gc[j])))
            .collect();
        let ek: Vec<f64> = a.row_norms_inf().into_iter().map(clamp_inv_sqrt).collect();
        let fk: Vec<f64> = g.row_norms_inf().into_iter().map(clamp_inv_sqrt).collect();

        p.scale(&dk, &dk);
        a.scale(&ek, &dk);
        g.scale(&fk, &dk);
        for j in 0..n {
            d[j] *= dk[j];
        }
        for i in 0..e_eq.len() {
            e_eq[i] *= ek[i];
        }
        for i in 0..e_in.len() {
            e_in[i] *= fk[i];
        }
    }

    for j in 0..n {
        c[j] *= d[j];
    }
    let pc = p.col_norms_inf();
    let mean_p = if n > 0 { pc.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let cmax = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let denom = mean_p.max(cmax);
    let cost = if denom <= 1e-12 {
        1.0
    } else {
        (1.0 / denom).clamp(MIN_SCALE, MAX_SCALE)
    };
    p.nzval.iter_mut().for_each(|v| *v *= cost);
    c.iter_mut().for_each(|v| *v *= cost);

    Scaling { d, e_eq, e_in, cost }
}

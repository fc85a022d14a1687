use std::path::PathBuf;

use hdev_core::io::{load_grid_case, GridFile};
use hdev_core::powerflow::*;
use nalgebra::Complex;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C = Complex<f64>;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn ieee24() -> GridCase {
    load_grid_case(&fixture("ieee24.json")).unwrap()
}

fn bus(id: u32, kind: BusKind, pd: f64, qd: f64) -> Bus {
    Bus { id, kind, pd, qd, gs: 0.0, bs: 0.0 }
}

fn line(from: usize, to: usize, r: f64, x: f64) -> Branch {
    Branch { from, to, r, x, b: 0.0, rate_a: 0.0, tap: 0.0 }
}

fn slack_gen(bus: usize) -> Generator {
    Generator { bus, pg: 0.0, pmin: 0.0, pmax: 1e3, qmin: -1e3, qmax: 1e3, vg: 1.0, cost: [0.0, 1.0, 0.0] }
}

/// Two buses joined by `y = 1 - j10`.
fn two_bus(load_mw: f64) -> GridCase {
    let z = C::new(1.0, 0.0) / C::new(1.0, -10.0);
    GridCase::new(
        100.0,
        vec![bus(1, BusKind::Ref, 0.0, 0.0), bus(2, BusKind::Pq, load_mw, 0.0)],
        vec![line(0, 1, z.re, z.im)],
        vec![slack_gen(0)],
        0.2,
    )
    .unwrap()
}

fn random_case(rng: &mut ChaCha8Rng, n: usize) -> GridCase {
    let mut buses = vec![bus(1, BusKind::Ref, 0.0, 0.0)];
    for i in 1..n {
        let mut b = bus(i as u32 + 1, BusKind::Pq, rng.random_range(0.0..50.0), rng.random_range(0.0..20.0));
        b.gs = rng.random_range(0.0..5.0);
        b.bs = rng.random_range(-20.0..20.0);
        buses.push(b);
    }
    let mut branches = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        branches.push(Branch {
            from: j,
            to: i,
            r: rng.random_range(0.001..0.05),
            x: rng.random_range(0.01..0.3),
            b: rng.random_range(0.0..0.2),
            rate_a: rng.random_range(50.0..500.0),
            tap: if rng.random_range(0.0..1.0) < 0.3 { rng.random_range(0.95..1.05) } else { 0.0 },
        });
    }
    if n > 2 {
        branches.push(Branch { from: 0, to: n - 1, ..line(0, 1, 0.02, 0.1) });
    }
    GridCase::new(100.0, buses, branches, vec![slack_gen(0)], 0.2).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let v = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let t = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    (v, t)
}

/// Bus admittance built directly from complex branch data.
fn ybus_oracle(case: &GridCase) -> Vec<Vec<C>> {
    let n = case.num_buses();
    let mut y = vec![vec![C::new(0.0, 0.0); n]; n];
    for br in &case.branches {
        let ys = C::new(1.0, 0.0) / C::new(br.r, br.x);
        let sh = C::new(0.0, br.b / 2.0);
        let t = if br.tap == 0.0 { 1.0 } else { br.tap };
        y[br.from][br.from] += (ys + sh) / (t * t);
        y[br.to][br.to] += ys + sh;
        y[br.from][br.to] -= ys / t;
        y[br.to][br.from] -= ys / t;
    }
    for (i, b) in case.buses.iter().enumerate() {
        y[i][i] += C::new(b.gs, b.bs) / case.base_mva;
    }
    y
}

/// `S_i = V_i conj(sum_j Y_ij V_j)`
fn injections_oracle(case: &GridCase, v: &[f64], theta: &[f64]) -> Vec<C> {
    let y = ybus_oracle(case);
    let n = v.len();
    let vc: Vec<C> = (0..n).map(|i| C::from_polar(v[i], theta[i])).collect();
    (0..n)
        .map(|i| {
            let current: C = (0..n).map(|j| y[i][j] * vc[j]).sum();
            vc[i] * current.conj()
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

#[test]
fn flat_start_on_lossless_network_injects_nothing() {
    let case = GridCase::new(
        100.0,
        vec![bus(1, BusKind::Ref, 0.0, 0.0), bus(2, BusKind::Pq, 0.0, 0.0)],
        vec![line(0, 1, 0.0, 0.1)],
        vec![slack_gen(0)],
        0.2,
    )
    .unwrap();
    let (p, q) = ac_injections(&case, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
    for x in p.iter().chain(&q) {
        assert!(x.abs() < 1e-12);
    }
}

#[test]
fn two_bus_injections_match_complex_power() {
    let case = two_bus(0.0);
    let (v, t) = ([1.0, 1.0], [0.0, -0.1]);
    let (p, q) = ac_injections(&case, &v, &t).unwrap();
    let s = injections_oracle(&case, &v, &t);
    for i in 0..2 {
        assert!((p[i] - s[i].re).abs() < 1e-12);
        assert!((q[i] - s[i].im).abs() < 1e-12);
    }
}

#[test]
fn admittance_matrix_matches_complex_construction() {
    let case = ieee24();
    let y = ybus_oracle(&case);
    for i in 0..24 {
        for j in 0..24 {
            assert!((case.g[(i, j)] - y[i][j].re).abs() < 1e-12);
            assert!((case.b[(i, j)] - y[i][j].im).abs() < 1e-12);
        }
    }
}

#[test]
fn stored_solved_state_reproduces_stored_injections() {
    #[derive(serde::Deserialize)]
    struct Solved {
        v: Vec<f64>,
        theta: Vec<f64>,
        p: Vec<f64>,
        q: Vec<f64>,
    }
    let text = std::fs::read_to_string(fixture("ieee24_solved.json")).unwrap();
    let st: Solved = serde_json::from_str(&text).unwrap();
    let case = ieee24();
    let s = injections_oracle(&case, &st.v, &st.theta);
    let (p, q) = ac_injections(&case, &st.v, &st.theta).unwrap();
    for i in 0..24 {
        assert!((s[i].re - st.p[i]).abs() < 1e-6, "P at {i}");
        assert!((s[i].im - st.q[i]).abs() < 1e-6, "Q at {i}");
        assert!((p[i] - st.p[i]).abs() < 1e-6);
        assert!((q[i] - st.q[i]).abs() < 1e-6);
    }
}

#[test]
fn single_bus_needs_no_iterations() {
    let case = GridCase::new(100.0, vec![bus(1, BusKind::Ref, 10.0, 2.0)], vec![], vec![slack_gen(0)], 0.2).unwrap();
    let op = solve_operating_point(&case).unwrap();
    assert_eq!(op.iterations, 0);
    assert_eq!(op.v, vec![1.0]);
}

#[test]
fn two_bus_load_matches_scalar_root() {
    let load = 0.5;
    let case = two_bus(load);
    let op = solve_operating_point(&case).unwrap();

    // With V1 = 1: conj(S2) = Y21 conj(U) + Y22 |U|^2, so w = |U|^2 solves
    // w |Y21|^2 = |conj(S2) - Y22 w|^2. Take the high-voltage root.
    let y = ybus_oracle(&case);
    let s2 = C::new(-load / 100.0, 0.0);
    let f = |w: f64| w * y[1][0].norm_sqr() - (s2.conj() - y[1][1] * w).norm_sqr();
    let (mut lo, mut hi) = (0.8, 1.2);
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    let u = ((s2.conj() - y[1][1] * w) / y[1][0]).conj();
    assert!((op.v[1] - w.sqrt()).abs() < 1e-8, "{} vs {}", op.v[1], w.sqrt());
    assert!((op.theta[1] - u.arg()).abs() < 1e-8);
}

#[test]
fn ieee24_converges_quickly() {
    let op = solve_operating_point(&ieee24()).unwrap();
    assert!(op.iterations <= 10);
    assert!(op.residual < 1e-8);
    assert_eq!(op.theta[12], 0.0);
}

#[test]
fn solution_is_invariant_under_bus_reordering() {
    let case = ieee24();
    let op = solve_operating_point(&case).unwrap();
    let mut file = GridFile::from_case(&case, "perm");
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for k in (1..file.buses.len()).rev() {
        let j = rng.random_range(0..=k);
        file.buses.swap(k, j);
    }
    let permuted = file.into_case().unwrap();
    let op2 = solve_operating_point(&permuted).unwrap();
    for (i, b) in case.buses.iter().enumerate() {
        let k = permuted.bus_index(b.id).unwrap();
        assert!((op.v[i] - op2.v[k]).abs() < 1e-9);
        assert!((op.theta[i] - op2.theta[k]).abs() < 1e-9);
    }
}

#[test]
fn jacobians_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let case = random_case(&mut rng, n);
        let (v, t) = random_state(&mut rng, n);
        let jac = jacobians(&case, &v, &t).unwrap();
        for j in 0..n {
            let (mut vp, mut vm) = (v.clone(), v.clone());
            vp[j] += h;
            vm[j] -= h;
            let (pp, qp) = ac_injections(&case, &vp, &t).unwrap();
            let (pm, qm) = ac_injections(&case, &vm, &t).unwrap();
            let (mut tp, mut tm) = (t.clone(), t.clone());
            tp[j] += h;
            tm[j] -= h;
            let (ppt, qpt) = ac_injections(&case, &v, &tp).unwrap();
            let (pmt, qmt) = ac_injections(&case, &v, &tm).unwrap();
            for i in 0..n {
                let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
                assert!(rel_err(jac.p_v[(i, j)], fd(pp[i], pm[i])) < 1e-6);
                assert!(rel_err(jac.q_v[(i, j)], fd(qp[i], qm[i])) < 1e-6);
                assert!(rel_err(jac.p_theta[(i, j)], fd(ppt[i], pmt[i])) < 1e-6);
                assert!(rel_err(jac.q_theta[(i, j)], fd(qpt[i], qmt[i])) < 1e-6);
            }
        }
    }
}

#[test]
fn angle_jacobian_at_flat_start_is_a_weighted_laplacian() {
    let mut case = ieee24();
    for br in &mut case.branches {
        br.r = 0.0;
    }
    let case = GridCase::new(case.base_mva, case.buses, case.branches, case.generators, 0.2).unwrap();
    let n = case.num_buses();
    let jac = jacobians(&case, &vec![1.0; n], &vec![0.0; n]).unwrap();
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| case.b[(i, j)]).sum();
        assert!((jac.p_theta[(i, i)] - off).abs() < 1e-9);
        let row: f64 = (0..n).map(|j| jac.p_theta[(i, j)]).sum();
        assert!(row.abs() < 1e-9);
        for j in 0..n {
            assert!((jac.p_theta[(i, j)] - jac.p_theta[(j, i)]).abs() < 1e-9);
        }
    }
}

#[test]
fn isolated_bus_has_empty_jacobian_row_and_column() {
    let mut case = two_bus(0.0);
    case.g = nalgebra::DMatrix::zeros(2, 2);
    case.b = nalgebra::DMatrix::zeros(2, 2);
    case.b[(0, 0)] = 1.0;
    let jac = jacobians(&case, &[1.0, 1.05], &[0.0, 0.2]).unwrap();
    for m in [&jac.p_v, &jac.p_theta, &jac.q_v, &jac.q_theta] {
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 1)], 0.0);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let case = two_bus(0.0);
    assert!(matches!(
        ac_injections(&case, &[1.0], &[0.0, 0.0]),
        Err(GridError::DimensionMismatch { .. })
    ));
}

#[test]
fn linear_model_is_exact_at_the_operating_point() {
    let op = solve_operating_point(&ieee24()).unwrap();
    let (p, q) = op.linear_injections(&op.v, &op.theta);
    assert_eq!(p, op.p);
    assert_eq!(q, op.q);
}

#[test]
fn linear_model_error_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = rng.random_range(2..=5);
        let case = random_case(&mut rng, n);
        let op = solve_operating_point(&case).unwrap();
        let dir: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = |r: f64| {
            let v: Vec<f64> = (0..n).map(|i| op.v[i] + r * dir[i]).collect();
            let t: Vec<f64> = (0..n).map(|i| op.theta[i] + r * dir[n + i]).collect();
            let (p, q) = ac_injections(&case, &v, &t).unwrap();
            let (pl, ql) = op.linear_injections(&v, &t);
            (0..n).fold(0.0_f64, |m, i| m.max((p[i] - pl[i]).abs()).max((q[i] - ql[i]).abs()))
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn thermal_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    for _ in 0..50 {
        let n = rng.random_range(2..=5);
        let case = random_case(&mut rng, n);
        let (v, t) = random_state(&mut rng, n);
        for line in 0..case.branches.len() {
            let g = thermal_gradient(&case, line, &v, &t);
            let br = &case.branches[line];
            let idx = [br.from, br.to];
            for k in 0..4 {
                let (mut vp, mut vm, mut tp, mut tm) = (v.clone(), v.clone(), t.clone(), t.clone());
                if k < 2 {
                    vp[idx[k]] += h;
                    vm[idx[k]] -= h;
                } else {
                    tp[idx[k - 2]] += h;
                    tm[idx[k - 2]] -= h;
                }
                let fd = (thermal_lhs(&case, line, &vp, &tp) - thermal_lhs(&case, line, &vm, &tm)) / (2.0 * h);
                assert!(rel_err(g[k], fd) < 1e-6, "{} vs {fd}", g[k]);
            }
        }
    }
}

#[test]
fn thermal_row_is_exact_at_the_operating_point() {
    let case = ieee24();
    let op = solve_operating_point(&case).unwrap();
    for line in 0..case.branches.len() {
        let row = linear_thermal_limit(&case, &op, line).unwrap();
        let br = &case.branches[line];
        let x = [op.v[br.from], op.v[br.to], op.theta[br.from], op.theta[br.to]];
        let lhs: f64 = row.coeffs.iter().zip(&x).map(|(a, b)| a * b).sum();
        let lim = case.thermal_limit(line);
        let f0 = thermal_lhs(&case, line, &op.v, &op.theta);
        assert!((row.rhs - lhs - (lim * lim - f0)).abs() < 1e-9);
    }
    assert!(matches!(linear_thermal_limit(&case, &op, 99), Err(GridError::UnknownLine(99))));
}

#[test]
fn thermal_row_vanishes_for_equal_terminals_and_unrated_lines() {
    let case = two_bus(0.0);
    assert_eq!(thermal_lhs(&case, 0, &[1.02, 1.02], &[0.1, 0.1]), 0.0);
    let g = thermal_gradient(&case, 0, &[1.02, 1.02], &[0.1, 0.1]);
    assert!(g[2].abs() < 1e-15 && g[3].abs() < 1e-15);
    let op = solve_operating_point(&case).unwrap();
    let row = linear_thermal_limit(&case, &op, 0).unwrap();
    assert!(!row.active);
}

#[test]
fn branch_flows_vanish_without_angle_or_magnitude_difference() {
    let case = GridCase::new(
        100.0,
        vec![bus(1, BusKind::Ref, 0.0, 0.0), bus(2, BusKind::Pq, 0.0, 0.0)],
        vec![line(0, 1, 0.0, 0.1)],
        vec![slack_gen(0)],
        0.2,
    )
    .unwrap();
    let rep = branch_report(&case, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
    assert_eq!(rep[0].p_ij, 0.0);
    assert_eq!(rep[0].p_ji, 0.0);
}

#[test]
fn branch_losses_match_series_current() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let case = random_case(&mut rng, 2);
        let (v, t) = random_state(&mut rng, 2);
        let rep = branch_report(&case, &v, &t).unwrap();
        let br = &case.branches[0];
        let tau = br.ratio();
        let vi = C::from_polar(v[br.from], t[br.from]) / tau;
        let vj = C::from_polar(v[br.to], t[br.to]);
        let is = (vi - vj) / C::new(br.r, br.x);
        let p_loss = is.norm_sqr() * br.r;
        let q_loss = is.norm_sqr() * br.x - br.b / 2.0 * (vi.norm_sqr() + vj.norm_sqr());
        assert!((rep[0].p_loss - p_loss).abs() < 1e-10);
        assert!((rep[0].q_loss - q_loss).abs() < 1e-10);
        assert_eq!(rep[0].p_loss, rep[0].p_ij + rep[0].p_ji);
    }
}

#[test]
fn branch_flows_sum_to_bus_injections() {
    let case = ieee24();
    let op = solve_operating_point(&case).unwrap();
    let rep = branch_report(&case, &op.v, &op.theta).unwrap();
    let mut p = vec![0.0; 24];
    for (br, f) in case.branches.iter().zip(&rep) {
        p[br.from] += f.p_ij;
        p[br.to] += f.p_ji;
    }
    for i in 0..24 {
        let shunt = case.buses[i].gs / case.base_mva * op.v[i] * op.v[i];
        assert!((p[i] + shunt - op.p[i]).abs() < 1e-9);
    }
    for f in &rep {
        assert!(f.p_loss >= 0.0);
    }
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hdev_core::coopt::{solve_scenario, FleetMode, PenaltyKind, Schedule};
use hdev_core::fleet::{baseline_schedule, exit_nodes, FleetFlows, FleetSpec};
use hdev_core::io::{load_grid_case, load_qp, load_scenario, write_results, RunMode, Scenario};
use hdev_core::powerflow::*;
use hdev_core::qp::{solve, QpBuilder, QuadraticProgram, SolveOptions, Status};
use hdev_core::transport_graph::{ArcKind, ExpandedGraph};
use nalgebra::{Complex, DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C = Complex<f64>;
type Outcome = Result<String, String>;

const SCENARIOS: [&str; 4] = [
    "scenario_two_bus.json",
    "scenario_zero_fleet.json",
    "scenario_sampled.json",
    "scenario_case_study.json",
];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn scenario(name: &str) -> Scenario {
    load_scenario(&fixture(name), None).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

/// A radial network with moderate loads, so its base power flow is solvable.
fn random_case(rng: &mut ChaCha8Rng, n: usize) -> GridCase {
    let bus = |id: u32, kind, pd, qd| Bus { id, kind, pd, qd, gs: 0.0, bs: 0.0 };
    let mut buses = vec![bus(1, BusKind::Ref, 0.0, 0.0)];
    for i in 1..n {
        let mut b = bus(i as u32 + 1, BusKind::Pq, rng.random_range(0.0..20.0), rng.random_range(0.0..10.0));
        b.gs = rng.random_range(0.0..5.0);
        b.bs = rng.random_range(-20.0..20.0);
        buses.push(b);
    }
    let mut branches = Vec::new();
    for i in 1..n {
        branches.push(Branch {
            from: rng.random_range(0..i),
            to: i,
            r: rng.random_range(0.001..0.05),
            x: rng.random_range(0.01..0.3),
            b: rng.random_range(0.0..0.2),
            rate_a: rng.random_range(50.0..500.0),
            tap: if rng.random_range(0.0..1.0) < 0.3 { rng.random_range(0.95..1.05) } else { 0.0 },
        });
    }
    let slack = Generator { bus: 0, pg: 0.0, pmin: 0.0, pmax: 1e3, qmin: -1e3, qmax: 1e3, vg: 1.0, cost: [0.0, 1.0, 0.0] };
    GridCase::new(100.0, buses, branches, vec![slack], 0.2).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let v = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let t = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    (v, t)
}

fn newton_on_ieee24() -> Outcome {
    let start = Instant::now();
    let case = load_grid_case(&fixture("ieee24.json")).map_err(|e| e.to_string())?;
    let op = solve_operating_point(&case).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(op.iterations <= 10, || format!("{} iterations", op.iterations))?;
    ensure(op.residual < 1e-8, || format!("residual {:e}", op.residual))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{} iterations, residual {:.2e}, {elapsed:.2?}", op.iterations, op.residual))
}

fn jacobians_vs_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let case = random_case(&mut rng, n);
        let (v, t) = random_state(&mut rng, n);
        let jac = jacobians(&case, &v, &t).map_err(|e| e.to_string())?;
        for j in 0..n {
            let shifted = |xs: &[f64], d: f64| {
                let mut out = xs.to_vec();
                out[j] += d;
                out
            };
            let (pvp, qvp) = ac_injections(&case, &shifted(&v, h), &t).unwrap();
            let (pvm, qvm) = ac_injections(&case, &shifted(&v, -h), &t).unwrap();
            let (ptp, qtp) = ac_injections(&case, &v, &shifted(&t, h)).unwrap();
            let (ptm, qtm) = ac_injections(&case, &v, &shifted(&t, -h)).unwrap();
            let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
            for i in 0..n {
                worst = worst
                    .max(rel_err(jac.p_v[(i, j)], fd(pvp[i], pvm[i])))
                    .max(rel_err(jac.q_v[(i, j)], fd(qvp[i], qvm[i])))
                    .max(rel_err(jac.p_theta[(i, j)], fd(ptp[i], ptm[i])))
                    .max(rel_err(jac.q_theta[(i, j)], fd(qtp[i], qtm[i])));
            }
        }
    }
    ensure(worst < 1e-6, || format!("worst relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.2e} over 100 states"))
}

fn linearization_is_second_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for case_no in 0..20 {
        let n = rng.random_range(2..=6);
        let case = random_case(&mut rng, n);
        let op = solve_operating_point(&case).map_err(|e| format!("case {case_no}: {e}"))?;
        let dir: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = |r: f64| {
            let v: Vec<f64> = (0..n).map(|i| op.v[i] + r * dir[i]).collect();
            let t: Vec<f64> = (0..n).map(|i| op.theta[i] + r * dir[n + i]).collect();
            let (p, q) = ac_injections(&case, &v, &t).unwrap();
            let (pl, ql) = op.linear_injections(&v, &t);
            (0..n).fold(0.0_f64, |m, i| m.max((p[i] - pl[i]).abs()).max((q[i] - ql[i]).abs()))
        };
        let errs = [err(0.02), err(0.01), err(0.005)];
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            ensure((3.0..=5.0).contains(&ratio), || format!("case {case_no}: ratio {ratio}"))?;
        }
    }
    Ok(format!("halving ratios in [{lo:.3}, {hi:.3}] over 20 cases"))
}

/// Every arc sequence one vehicle can take from its origin to an exit node.
fn vehicle_paths(g: &ExpandedGraph, f: &FleetSpec) -> Vec<(Vec<usize>, usize)> {
    let exits: BTreeSet<usize> = exit_nodes(g, f).unwrap();
    let start = g.node_index(*f.criteria.injections.keys().next().unwrap()).unwrap();
    let mut out = Vec::new();
    let mut stack = vec![(start, Vec::new())];
    while let Some((node, arcs)) = stack.pop() {
        if exits.contains(&node) {
            out.push((arcs.clone(), node));
        }
        for &a in g.out_arcs(node) {
            if g.arcs()[a].kind == ArcKind::Discharging {
                continue;
            }
            let mut next = arcs.clone();
            next.push(a);
            stack.push((g.arcs()[a].head_index, next));
        }
    }
    out
}

fn two_bus_matches_enumeration() -> Outcome {
    let start = Instant::now();
    let sc = scenario("scenario_two_bus.json");
    ensure(sc.fleets.len() == 1 && sc.fleets[0].size == 1.0, || "expected one vehicle".into())?;
    ensure(sc.graph.steps() == 3 && sc.setup.expansion.levels() == 3, || "expected 3 steps and 3 levels".into())?;
    let paths = vehicle_paths(&sc.graph, &sc.fleets[0]);
    let mut notes = Vec::new();
    for kind in PenaltyKind::ALL {
        let cfg = sc.config(kind).map_err(|e| e.to_string())?;
        let opt = solve_scenario(&sc.case, &sc.graph, &sc.fleets, &cfg, FleetMode::Optimize).map_err(|e| e.to_string())?;
        let mut best = f64::INFINITY;
        for (arcs, exit) in &paths {
            let mut flows = FleetFlows::zeros(&sc.graph, 1);
            for &a in arcs {
                flows.lambda[0][a] += 1.0;
            }
            flows.departures[0][*exit] = 1.0;
            if let Ok(s) = solve_scenario(&sc.case, &sc.graph, &sc.fleets, &cfg, FleetMode::Fixed(&flows)) {
                best = best.min(s.objective.solver_objective);
            }
        }
        let lp = opt.objective.solver_objective;
        let tol = 1e-6 * (1.0 + best.abs());
        ensure(lp <= best + tol, || format!("{kind:?}: {lp} > {best}"))?;
        let integral = opt.flows.lambda[0].iter().all(|l| (l - l.round()).abs() < 1e-6);
        if integral {
            ensure((lp - best).abs() <= tol, || format!("{kind:?}: integral optimum {lp} != {best}"))?;
        }
        notes.push(format!("{}: {lp:.6} vs {best:.6}{}", kind.name(), if integral { " (integral)" } else { "" }));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{} paths; {}; {elapsed:.2?}", paths.len(), notes.join(", ")))
}

fn case_study_direction() -> Outcome {
    let start = Instant::now();
    let sc = scenario("scenario_case_study.json");
    let vehicles: f64 = sc.fleets.iter().map(|f| f.size).sum();
    ensure(vehicles <= 3000.0, || format!("{vehicles} vehicles"))?;
    let base = sc.run(RunMode::Baseline, PenaltyKind::L1).map_err(|e| e.to_string())?;
    let nb = base.summary.linear_band.violations;
    ensure(nb >= 1, || "baseline has no violations".into())?;
    let route = base.summary.routes.first().map(|r| r.buses.clone()).unwrap_or_default();
    ensure(route == [1, 4, 14, 20, 22], || format!("baseline route {route:?}"))?;
    let mut notes = vec![format!("baseline {nb} violations on route {route:?}")];
    for kind in [PenaltyKind::L1, PenaltyKind::Linf] {
        let co = sc.run(RunMode::Coopt, kind).map_err(|e| e.to_string())?;
        let n = co.summary.linear_band.violations;
        ensure(2 * n <= nb, || format!("{kind:?}: {n} violations vs baseline {nb}"))?;
        notes.push(format!("{} {n}", kind.name()));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("{}; {vehicles} vehicles, {elapsed:.2?}", notes.join(", ")))
}

fn penalty_contrast() -> Outcome {
    let mut sc = scenario("scenario_case_study.json");
    sc.cost_weight = 0.0;
    sc.penalty.weight = 1.0;
    let solve_kind = |kind| -> Result<Schedule, String> {
        let cfg = sc.config(kind).map_err(|e| e.to_string())?;
        solve_scenario(&sc.case, &sc.graph, &sc.fleets, &cfg, FleetMode::Optimize).map_err(|e| e.to_string())
    };
    let l1 = solve_kind(PenaltyKind::L1)?;
    let linf = solve_kind(PenaltyKind::Linf)?;
    let (a, b) = (&l1.linear_band, &linf.linear_band);
    ensure(b.linf <= a.linf + 1e-6, || format!("linf: {} at linf optimum > {} at l1 optimum", b.linf, a.linf))?;
    ensure(a.l1 <= b.l1 + 1e-6, || format!("l1: {} at l1 optimum > {} at linf optimum", a.l1, b.l1))?;
    Ok(format!("linf sum {:.6} <= {:.6}; l1 sum {:.6} <= {:.6}", b.linf, a.linf, a.l1, b.l1))
}

/// Largest violation of the conservation, coupling and loss identities,
/// recomputed from the graph and the complex branch model.
fn conservation_violations(sc: &Scenario, v2g: bool, s: &Schedule) -> Result<f64, String> {
    let g = &sc.graph;
    let mut worst = 0.0_f64;
    for (h, fleet) in sc.fleets.iter().enumerate() {
        let lambda = &s.flows.lambda[h];
        let dep = &s.flows.departures[h];
        for node in 0..g.num_nodes() {
            let inflow: f64 = g.in_arcs(node).iter().map(|&a| lambda[a]).sum();
            let outflow: f64 = g.out_arcs(node).iter().map(|&a| lambda[a]).sum();
            let inject = fleet.criteria.injections.get(&g.node(node)).copied().unwrap_or(0.0);
            worst = worst.max((inflow + inject - outflow - dep[node]).abs());
        }
        for &l in lambda.iter().chain(dep) {
            worst = worst.max(-l);
        }
        let injected: f64 = fleet.criteria.injections.values().sum();
        let withdrawn: f64 = fleet.criteria.withdrawals.values().sum();
        let departed: f64 = dep.iter().sum();
        worst = worst.max((departed - withdrawn).abs()).max((injected - withdrawn).abs());
        for (node, &d) in dep.iter().enumerate() {
            if d.abs() > 1e-9 {
                let u = g.node(node);
                let ok = fleet
                    .criteria
                    .withdrawals
                    .keys()
                    .any(|w| w.location == u.location && u.energy >= w.energy && u.time <= w.time);
                if !ok {
                    return Err(format!("fleet {} departs from {u:?} outside every target", fleet.id));
                }
            }
        }
    }

    let exp = &sc.setup.expansion;
    let delta = exp.energy_step_kwh / 1000.0 / exp.dt_hours;
    for (t, step) in s.steps.iter().enumerate() {
        let mut x = vec![0.0; sc.case.num_buses()];
        for (a, arc) in g.arcs().iter().enumerate() {
            let sign = match arc.kind {
                ArcKind::Charging => 1.0,
                ArcKind::Discharging if v2g => -1.0,
                _ => continue,
            };
            if arc.tail.time == t {
                let i = sc.case.bus_index(arc.tail.location).ok_or("station is not a bus")?;
                x[i] += sign * delta * s.flows.lambda.iter().map(|l| l[a]).sum::<f64>();
            }
        }
        for (i, xi) in x.iter().enumerate() {
            worst = worst.max((step.x_mw[i] - xi).abs());
        }

        let (Some(v), Some(theta)) = (&step.v_nonlinear, &step.theta_nonlinear) else {
            continue;
        };
        let report = branch_report(&sc.case, v, theta).map_err(|e| e.to_string())?;
        let mut losses = 0.0;
        for (br, f) in sc.case.branches.iter().zip(&report) {
            let tau = if br.tap == 0.0 { 1.0 } else { br.tap };
            let vi = C::from_polar(v[br.from], theta[br.from]) / tau;
            let vj = C::from_polar(v[br.to], theta[br.to]);
            let current = (vi - vj) / C::new(br.r, br.x);
            let p_loss = current.norm_sqr() * br.r;
            let q_loss = current.norm_sqr() * br.x - br.b / 2.0 * (vi.norm_sqr() + vj.norm_sqr());
            worst = worst
                .max((f.p_loss - p_loss).abs())
                .max((f.q_loss - q_loss).abs())
                .max((f.p_ij + f.p_ji - f.p_loss).abs());
            losses += p_loss;
        }
        let (p, _) = ac_injections(&sc.case, v, theta).map_err(|e| e.to_string())?;
        let shunt: f64 = sc.case.buses.iter().zip(v).map(|(b, vi)| b.gs / sc.case.base_mva * vi * vi).sum();
        worst = worst.max((p.iter().sum::<f64>() - losses - shunt).abs());
    }
    Ok(worst)
}

fn conservation_on_fixture_scenarios() -> Outcome {
    let mut worst = 0.0_f64;
    let mut solves = 0;
    for name in SCENARIOS {
        let sc = scenario(name);
        let baseline = baseline_schedule(&sc.graph, &sc.fleets).map_err(|e| format!("{name}: {e}"))?;
        let mut runs: Vec<(String, Schedule, bool)> = Vec::new();
        for kind in PenaltyKind::ALL {
            let cfg = sc.config(kind).map_err(|e| e.to_string())?;
            let co = solve_scenario(&sc.case, &sc.graph, &sc.fleets, &cfg, FleetMode::Optimize)
                .map_err(|e| format!("{name} {kind:?}: {e}"))?;
            runs.push((format!("{name} coopt {}", kind.name()), co, cfg.enable_v2g));
        }
        let cfg = sc.config(sc.penalty.kind).map_err(|e| e.to_string())?;
        let base = solve_scenario(&sc.case, &sc.graph, &sc.fleets, &cfg, FleetMode::Fixed(&baseline.flows))
            .map_err(|e| format!("{name} baseline: {e}"))?;
        runs.push((format!("{name} baseline"), base, cfg.enable_v2g));
        for (label, s, v2g) in &runs {
            let w = conservation_violations(&sc, *v2g, s).map_err(|e| format!("{label}: {e}"))?;
            ensure(w < 1e-6, || format!("{label}: violation {w:e}"))?;
            worst = worst.max(w);
            solves += 1;
        }
    }
    Ok(format!("worst violation {worst:.2e} over {solves} solves"))
}

struct DenseLp {
    c: Vec<f64>,
    g: Vec<Vec<f64>>,
    h: Vec<f64>,
}

/// Best vertex of `{x : G x <= h}` over all `n`-subsets of active rows.
fn vertex_optimum(lp: &DenseLp) -> Option<f64> {
    let n = lp.c.len();
    let rows = lp.g.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let m = DMatrix::from_fn(n, n, |i, j| lp.g[idx[i]][j]);
        let rhs = DVector::from_fn(n, |i, _| lp.h[idx[i]]);
        if let Some(x) = m.lu().solve(&rhs) {
            let feasible = lp
                .g
                .iter()
                .zip(&lp.h)
                .all(|(row, h)| row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() <= h + 1e-9);
            if feasible && x.iter().all(|v| v.is_finite()) {
                let obj: f64 = lp.c.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        let Some(k) = (0..n).rev().find(|&k| idx[k] < rows - n + k) else {
            return best;
        };
        idx[k] += 1;
        for t in k + 1..n {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

fn random_lp(rng: &mut ChaCha8Rng) -> (QuadraticProgram, DenseLp) {
    let n = rng.random_range(2..=4);
    let extra = rng.random_range(1..=4);
    let mut b = QpBuilder::new();
    let (mut g, mut h) = (Vec::new(), Vec::new());
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    for j in 0..n {
        let hi = rng.random_range(0.5..10.0);
        b.add_var(0.0, hi, c[j]);
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        g.push(e.clone());
        h.push(hi);
        e[j] = -1.0;
        g.push(e);
        h.push(0.0);
    }
    for _ in 0..extra {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs = rng.random_range(0.2..5.0);
        let terms: Vec<_> = row.iter().copied().enumerate().collect();
        b.add_ineq(&terms, rhs);
        g.push(row);
        h.push(rhs);
    }
    (b.build(), DenseLp { c, g, h })
}

fn solver_suite() -> Outcome {
    let opts = SolveOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let mut worst_gap = 0.0_f64;
    let mut worst_kkt = 0.0_f64;
    for case in 0..50 {
        let (qp, lp) = random_lp(&mut rng);
        let oracle = vertex_optimum(&lp).ok_or("origin is always feasible")?;
        let r = solve(&qp, &opts).map_err(|e| e.to_string())?;
        ensure(r.status == Status::Optimal, || format!("LP {case}: {:?}", r.status))?;
        let gap = (r.objective - oracle).abs() / (1.0 + oracle.abs());
        ensure(gap <= 1e-6, || format!("LP {case}: {} vs vertex optimum {oracle}", r.objective))?;
        let res = &r.residuals;
        let kkt = [res.primal_eq, res.primal_ineq, res.stationarity, res.dual_infeasibility, res.complementarity, res.relative_gap]
            .into_iter()
            .fold(0.0_f64, f64::max);
        ensure(kkt < 1e-6, || format!("LP {case}: KKT residuals {res:?}"))?;
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(kkt);
    }
    let qp = load_qp(&fixture("qp_contradiction.json")).map_err(|e| e.to_string())?;
    let r = solve(&qp, &opts).map_err(|e| e.to_string())?;
    ensure(r.status == Status::Infeasible, || format!("contradiction fixture: {:?}", r.status))?;
    Ok(format!("50 LPs, worst gap {worst_gap:.1e}, worst KKT {worst_kkt:.1e}; contradiction Infeasible"))
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for name in SCENARIOS {
        let sc = scenario(name);
        for mode in [RunMode::Baseline, RunMode::Coopt] {
            let mut bundles = Vec::new();
            for attempt in 0..2 {
                let sc = if attempt == 0 { sc.clone() } else { scenario(name) };
                let bundle = sc.run(mode, sc.penalty.kind).map_err(|e| format!("{name}: {e}"))?;
                let dir = tmp.path().join(format!("{name}-{mode:?}-{attempt}"));
                write_results(&bundle, &dir, true).map_err(|e| e.to_string())?;
                bundles.push(read_dir_bytes(&dir));
            }
            ensure(bundles[0] == bundles[1], || format!("{name} {mode:?}: bundles differ"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} bundle pairs byte-identical"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("power flow on IEEE 24-bus", newton_on_ieee24),
        ("Jacobians vs central differences", jacobians_vs_finite_differences),
        ("linearization error order", linearization_is_second_order),
        ("2-bus optimum vs enumeration", two_bus_matches_enumeration),
        ("case study direction", case_study_direction),
        ("l1 / linf contrast", penalty_contrast),
        ("conservation on fixture scenarios", conservation_on_fixture_scenarios),
        ("solver suite", solver_suite),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

//! Fleet dispatch and linearized AC optimal power flow as one convex QP.
//!
//! Grid variables exist per time step: voltage magnitudes and angles,
//! generator outputs and, where vehicles can charge, the bus charging
//! demand `x`. Fleet variables are arc flows and departures per fleet.
//! Everything is in per unit except fleet flows, which count vehicles.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::fleet::{exit_nodes, flexibility_set, FleetError, FleetFlows, FleetSpec};
use crate::powerflow::{linear_thermal_limit, solve_operating_point, solve_with, GridCase, OperatingPoint, PowerFlowError, PowerFlowSpec};
use crate::qp::{self, QpBuilder, QpError, QuadraticProgram, Residuals, SolveOptions, SolveResult, Status};
use crate::transport_graph::{ArcKind, ExpandedGraph};

/// Acceptable voltage band, pu.
pub const BAND: (f64, f64) = (0.95, 1.05);
/// Slack on [`BAND`] absorbing round-off at buses regulated to its edge.
pub const BAND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoOptError {
    #[error("location {0} is not a grid bus")]
    LocationNotABus(u32),
    #[error("top_l must lie in [1, {buses}], got {top_l}")]
    BadTopL { top_l: usize, buses: usize },
    #[error("penalty and cost weights must be finite and non-negative")]
    BadWeight,
    #[error("expected 1 or {expected} operating points, got {got}")]
    InconsistentHorizon { expected: usize, got: usize },
    #[error("station limits at bus {0} are invalid")]
    BadStationLimit(u32),
    #[error("fixed fleet flows do not match the graph")]
    FlowShape,
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("problem is infeasible: {0}")]
    Infeasible(InfeasibilityHint),
    #[error("solver stopped with status {0:?}")]
    SolverFailure(Status),
}

/// First constraint family found to be infeasible on its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum InfeasibilityHint {
    TravelCriteria { fleet: String },
    StationLimits,
    GridConstraints,
}

impl std::fmt::Display for InfeasibilityHint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InfeasibilityHint::TravelCriteria { fleet } => write!(f, "travel criteria of fleet {fleet}"),
            InfeasibilityHint::StationLimits => write!(f, "fleet travel criteria combined with station limits"),
            InfeasibilityHint::GridConstraints => write!(f, "grid constraints"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L2,
    L1,
    Linf,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 3] = [PenaltyKind::L1, PenaltyKind::L2, PenaltyKind::Linf];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::L2 => "l2",
            PenaltyKind::L1 => "l1",
            PenaltyKind::Linf => "linf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub weight: f64,
    /// Size of the set of buses whose largest deviation is penalized (l-inf only).
    pub top_l: usize,
    /// Reference voltage per bus, pu.
    pub vref: Vec<f64>,
}

impl PenaltySpec {
    /// References are the AVR setpoints and 1 pu elsewhere; `top_l`
    /// defaults to every bus.
    pub fn new(case: &GridCase, kind: PenaltyKind, weight: f64, top_l: Option<usize>) -> Result<Self, CoOptError> {
        let n = case.num_buses();
        let top_l = top_l.unwrap_or(n);
        if top_l == 0 || top_l > n {
            return Err(CoOptError::BadTopL { top_l, buses: n });
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(CoOptError::BadWeight);
        }
        Ok(PenaltySpec { kind, weight, top_l, vref: case.v_ref() })
    }
}

/// The `top_l` buses with the largest `|V0 - Vref|`, in bus order. Ties go
/// to the lower bus index.
pub fn top_l_set(spec: &PenaltySpec, v0: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..spec.vref.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (v0[a] - spec.vref[a]).abs();
        let db = (v0[b] - spec.vref[b]).abs();
        db.total_cmp(&da).then(a.cmp(&b))
    });
    let mut top = order[..spec.top_l].to_vec();
    top.sort_unstable();
    top
}

/// Unweighted penalty of one voltage profile.
pub fn penalty_value(kind: PenaltyKind, vref: &[f64], top: &[usize], v: &[f64]) -> f64 {
    let d = |i: usize| v[i] - vref[i];
    match kind {
        PenaltyKind::L2 => (0..v.len()).map(|i| d(i) * d(i)).sum(),
        PenaltyKind::L1 => (0..v.len()).map(|i| d(i).abs()).sum(),
        PenaltyKind::Linf => top.iter().map(|&i| d(i).abs()).fold(0.0, f64::max),
    }
}

/// Adds `weight * Phi(V)` for one step. Returns the auxiliary variables:
/// one per bus for l1, one for l-inf, none for l2.
pub fn add_penalty_terms(b: &mut QpBuilder, spec: &PenaltySpec, top: &[usize], v_vars: &[usize]) -> Vec<usize> {
    let w = spec.weight;
    match spec.kind {
        PenaltyKind::L2 => {
            for (i, &v) in v_vars.iter().enumerate() {
                let r = spec.vref[i];
                b.add_hessian(v, v, 2.0 * w);
                b.add_cost(v, -2.0 * w * r);
                b.add_constant(w * r * r);
            }
            Vec::new()
        }
        PenaltyKind::L1 => {
            let mut aux = Vec::with_capacity(v_vars.len());
            for (i, &v) in v_vars.iter().enumerate() {
                let s = b.add_var(0.0, f64::INFINITY, w);
                b.add_ineq(&[(v, 1.0), (s, -1.0)], spec.vref[i]);
                b.add_ineq(&[(v, -1.0), (s, -1.0)], -spec.vref[i]);
                aux.push(s);
            }
            aux
        }
        PenaltyKind::Linf => {
            let m = b.add_var(0.0, f64::INFINITY, w);
            for &i in top {
                b.add_ineq(&[(v_vars[i], 1.0), (m, -1.0)], spec.vref[i]);
                b.add_ineq(&[(v_vars[i], -1.0), (m, -1.0)], -spec.vref[i]);
            }
            vec![m]
        }
    }
}

/// One coupling equation `x_i(t) = sum_a delta_a sum_h lambda_a^h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub location: u32,
    pub time: usize,
    /// `(arc id, delta_a in MW)`
    pub arcs: Vec<(usize, f64)>,
}

/// Coupling rows of every `(location, step)` with at least one arc that can
/// draw power. Discharging arcs count only with `v2g`.
pub fn coupling_rows(g: &ExpandedGraph, v2g: bool) -> Vec<CouplingRow> {
    let mut rows = Vec::new();
    for &loc in g.transport.locations() {
        for t in 0..g.steps() {
            let arcs: Vec<(usize, f64)> = g
                .charging_arcs_at(loc, t)
                .expect("location and step in range")
                .iter()
                .filter(|&&a| v2g || g.arcs()[a].kind == ArcKind::Charging)
                .map(|&a| (a, g.arcs()[a].power))
                .collect();
            if !arcs.is_empty() {
                rows.push(CouplingRow { location: loc, time: t, arcs });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoOptConfig {
    pub penalty: PenaltySpec,
    /// Multiplies the generation cost in $/h.
    pub cost_weight: f64,
    pub enable_v2g: bool,
    /// Re-linearize every step around the power flow of a first solve.
    pub relinearize_per_step: bool,
    /// Per-bus `(lower, upper)` charging demand, MW.
    pub station_limits: BTreeMap<u32, (f64, f64)>,
    pub solver: SolveOptions,
}

impl CoOptConfig {
    pub fn new(penalty: PenaltySpec) -> Self {
        CoOptConfig {
            penalty,
            cost_weight: 1.0,
            enable_v2g: false,
            relinearize_per_step: false,
            station_limits: BTreeMap::new(),
            solver: SolveOptions::default(),
        }
    }
}

/// How fleet flows enter the problem.
#[derive(Debug, Clone, Copy)]
pub enum FleetMode<'a> {
    /// Flows are decision variables.
    Optimize,
    /// Flows are given; their charging demand is a constant load.
    Fixed(&'a FleetFlows),
}

/// Sizes of every variable and row family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Census {
    pub steps: usize,
    pub buses: usize,
    pub generators: usize,
    pub avr_buses: usize,
    pub rated_lines: usize,
    /// Demand variables summed over steps.
    pub demand_vars: usize,
    /// Retained fleet arcs summed over fleets.
    pub fleet_arcs: usize,
    /// Departure variables summed over fleets.
    pub departure_vars: usize,
    /// Flow-balance rows summed over fleets.
    pub fleet_nodes: usize,
    /// Withdrawal targets summed over fleets.
    pub targets: usize,
    pub penalty: PenaltyKind,
    pub top_l: usize,
}

impl Census {
    pub fn variables(&self) -> usize {
        let aux = match self.penalty {
            PenaltyKind::L2 => 0,
            PenaltyKind::L1 => self.buses,
            PenaltyKind::Linf => 1,
        };
        self.steps * (2 * self.buses + 2 * self.generators + aux)
            + self.demand_vars
            + self.fleet_arcs
            + self.departure_vars
    }

    pub fn equalities(&self) -> usize {
        self.steps * (1 + self.avr_buses + 2 * self.buses) + self.demand_vars + self.fleet_nodes + self.targets
    }

    pub fn inequalities(&self) -> usize {
        let pen = match self.penalty {
            PenaltyKind::L2 => 0,
            PenaltyKind::L1 => 2 * self.buses,
            PenaltyKind::Linf => 2 * self.top_l,
        };
        self.steps * (self.rated_lines + pen)
    }
}

/// Variable indices of an assembled problem.
#[derive(Debug, Clone, Default)]
pub struct VarMap {
    /// `[t][bus]`
    pub v: Vec<Vec<usize>>,
    pub theta: Vec<Vec<usize>>,
    /// `[t][generator]`
    pub pg: Vec<Vec<usize>>,
    pub qg: Vec<Vec<usize>>,
    /// `[t][bus]`, present where vehicles can charge.
    pub x: Vec<Vec<Option<usize>>>,
    /// `[t]` penalty auxiliaries.
    pub penalty: Vec<Vec<usize>>,
    /// `[fleet]` `(arc id, variable)`
    pub lambda: Vec<Vec<(usize, usize)>>,
    /// `[fleet]` `(node index, variable)`
    pub departure: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
pub struct CoOptProblem<'a> {
    pub qp: QuadraticProgram,
    pub census: Census,
    pub vars: VarMap,
    /// Buses of the l-inf set.
    pub top: Vec<usize>,
    /// Fixed charging demand `[t][bus]` in MW, zero when flows are optimized.
    pub fixed_demand: Vec<Vec<f64>>,
    pub case: &'a GridCase,
    pub ops: &'a [OperatingPoint],
    pub graph: &'a ExpandedGraph,
    pub fleets: &'a [FleetSpec],
    pub config: &'a CoOptConfig,
    pub mode: FleetMode<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Parts {
    grid: bool,
    coupling: bool,
}

struct Assembly {
    builder: QpBuilder,
    census: Census,
    vars: VarMap,
    fixed_demand: Vec<Vec<f64>>,
}

/// Validated data shared by the full problem and its diagnostic subproblems.
struct Context<'a> {
    case: &'a GridCase,
    ops: &'a [OperatingPoint],
    g: &'a ExpandedGraph,
    fleets: &'a [FleetSpec],
    cfg: &'a CoOptConfig,
    mode: FleetMode<'a>,
    /// Transport location -> bus index.
    bus_of: BTreeMap<u32, usize>,
    /// Per bus `(lower, upper)` demand in pu.
    limits: Vec<(f64, f64)>,
    top: Vec<usize>,
    /// Retained arcs per fleet.
    kept: Vec<Vec<usize>>,
}

impl<'a> Context<'a> {
    fn new(
        case: &'a GridCase,
        ops: &'a [OperatingPoint],
        g: &'a ExpandedGraph,
        fleets: &'a [FleetSpec],
        cfg: &'a CoOptConfig,
        mode: FleetMode<'a>,
        top: Option<Vec<usize>>,
    ) -> Result<Self, CoOptError> {
        let steps = g.steps();
        if ops.len() != 1 && ops.len() != steps {
            return Err(CoOptError::InconsistentHorizon { expected: steps, got: ops.len() });
        }
        for op in ops {
            case.check_dims(&op.v, &op.theta).map_err(|e| CoOptError::PowerFlow(e.into()))?;
        }
        let n = case.num_buses();
        if cfg.penalty.vref.len() != n {
            return Err(CoOptError::PowerFlow(
                crate::powerflow::GridError::DimensionMismatch { expected: n, got: cfg.penalty.vref.len() }.into(),
            ));
        }
        if cfg.penalty.top_l == 0 || cfg.penalty.top_l > n {
            return Err(CoOptError::BadTopL { top_l: cfg.penalty.top_l, buses: n });
        }
        let weights = [cfg.penalty.weight, cfg.cost_weight];
        if !weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(CoOptError::BadWeight);
        }
        let mut bus_of = BTreeMap::new();
        for &loc in g.transport.locations() {
            let i = case.bus_index(loc).ok_or(CoOptError::LocationNotABus(loc))?;
            bus_of.insert(loc, i);
        }
        for f in fleets {
            f.check_nodes(g)?;
        }
        if let FleetMode::Fixed(flows) = mode {
            let ok = flows.lambda.len() == fleets.len()
                && flows.lambda.iter().all(|l| l.len() == g.arcs().len())
                && flows.departures.iter().all(|d| d.len() == g.num_nodes());
            if !ok {
                return Err(CoOptError::FlowShape);
            }
        }

        let total: f64 = fleets.iter().map(|f| f.size).sum();
        let upper = total * g.expansion.delta();
        let lower = if cfg.enable_v2g { -upper } else { 0.0 };
        let mut limits = vec![(lower / case.base_mva, upper / case.base_mva); n];
        for (&bus, &(lo, hi)) in &cfg.station_limits {
            let i = case.bus_index(bus).ok_or(CoOptError::LocationNotABus(bus))?;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CoOptError::BadStationLimit(bus));
            }
            limits[i] = (lo / case.base_mva, hi / case.base_mva);
        }

        let kept = match mode {
            FleetMode::Optimize => fleets.iter().map(|f| retained_arcs(g, f, cfg.enable_v2g)).collect::<Result<_, _>>()?,
            FleetMode::Fixed(_) => vec![Vec::new(); fleets.len()],
        };
        let top = top.unwrap_or_else(|| top_l_set(&cfg.penalty, &ops[0].v));
        Ok(Context { case, ops, g, fleets, cfg, mode, bus_of, limits, top, kept })
    }

    fn op(&self, t: usize) -> &OperatingPoint {
        if self.ops.len() == 1 {
            &self.ops[0]
        } else {
            &self.ops[t]
        }
    }

    /// Builds the full problem (`Parts { grid: true, coupling: true }`, all
    /// fleets) or one of its diagnostic relaxations.
    fn assemble(&self, parts: Parts, fleets: &[usize], objective: bool) -> Result<Assembly, CoOptError> {
        let case = self.case;
        let g = self.g;
        let steps = g.steps();
        let n = case.num_buses();
        let ng = case.generators.len();
        let base = case.base_mva;
        let optimize = matches!(self.mode, FleetMode::Optimize);
        let mut b = QpBuilder::new();
        let mut vars = VarMap::default();

        // Fixed demand from given flows.
        let mut fixed_demand = vec![vec![0.0; n]; steps];
        if let FleetMode::Fixed(flows) = self.mode {
            for (&loc, &i) in &self.bus_of {
                for (t, row) in fixed_demand.iter_mut().enumerate() {
                    row[i] = flows.demand_mw(g, loc, t, self.cfg.enable_v2g);
                }
            }
        }

        // Fleet variables come first in each step's coupling, so create them up front.
        let mut lambda_var: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); self.fleets.len()];
        let mut fleet_arcs = 0;
        let mut departure_vars = 0;
        let mut fleet_nodes = 0;
        let mut targets = 0;
        let fleet_set: BTreeSet<usize> = if optimize { fleets.iter().copied().collect() } else { BTreeSet::new() };
        vars.lambda = vec![Vec::new(); self.fleets.len()];
        vars.departure = vec![Vec::new(); self.fleets.len()];

        // Grid variables per step.
        let with_x = parts.coupling && optimize;
        let mut demand_vars = 0;
        let coupling = if with_x { coupling_rows(g, self.cfg.enable_v2g) } else { Vec::new() };
        for _ in 0..steps {
            if parts.grid {
                vars.v.push((0..n).map(|_| b.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0)).collect());
                vars.theta.push((0..n).map(|_| b.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0)).collect());
                vars.pg.push(
                    case.generators
                        .iter()
                        .map(|gen| b.add_var(gen.pmin / base, gen.pmax / base, 0.0))
                        .collect(),
                );
                vars.qg.push(
                    case.generators
                        .iter()
                        .map(|gen| b.add_var(gen.qmin / base, gen.qmax / base, 0.0))
                        .collect(),
                );
            }
            vars.x.push(vec![None; n]);
        }
        for row in &coupling {
            let kept_any = fleet_set.iter().any(|&h| row.arcs.iter().any(|(a, _)| self.kept[h].binary_search(a).is_ok()));
            if kept_any {
                let i = self.bus_of[&row.location];
                let (lo, hi) = self.limits[i];
                vars.x[row.time][i] = Some(b.add_var(lo, hi, 0.0));
                demand_vars += 1;
            }
        }
        for &h in &fleet_set {
            for &a in &self.kept[h] {
                let var = b.add_var(0.0, f64::INFINITY, 0.0);
                lambda_var[h].insert(a, var);
                vars.lambda[h].push((a, var));
            }
            fleet_arcs += self.kept[h].len();
        }

        // Grid rows.
        if parts.grid {
            for t in 0..steps {
                let op = self.op(t);
                b.add_eq(&[(vars.theta[t][case.slack], 1.0)], 0.0);
                for i in 0..n {
                    if let Some(vs) = case.v_set[i] {
                        b.add_eq(&[(vars.v[t][i], 1.0)], vs);
                    }
                }
                let jac = &op.jac;
                for (p_side, (jv, jt)) in [(true, (&jac.p_v, &jac.p_theta)), (false, (&jac.q_v, &jac.q_theta))] {
                    for i in 0..n {
                        let mut terms = Vec::new();
                        for (k, gen) in case.generators.iter().enumerate() {
                            if gen.bus == i {
                                terms.push((if p_side { vars.pg[t][k] } else { vars.qg[t][k] }, 1.0));
                            }
                        }
                        let share = if p_side { 1.0 } else { case.alpha_pq };
                        if let Some(x) = vars.x[t][i] {
                            terms.push((x, -share));
                        }
                        let mut rhs = if p_side { op.p[i] } else { op.q[i] };
                        for j in 0..n {
                            if jv[(i, j)] != 0.0 {
                                terms.push((vars.v[t][j], -jv[(i, j)]));
                                rhs -= jv[(i, j)] * op.v[j];
                            }
                            if jt[(i, j)] != 0.0 {
                                terms.push((vars.theta[t][j], -jt[(i, j)]));
                                rhs -= jt[(i, j)] * op.theta[j];
                            }
                        }
                        let load = if p_side { case.buses[i].pd } else { case.buses[i].qd };
                        rhs += load / base + share * fixed_demand[t][i] / base;
                        b.add_eq(&terms, rhs);
                    }
                }
                for line in 0..case.branches.len() {
                    let row = linear_thermal_limit(case, op, line).map_err(|e| CoOptError::PowerFlow(e.into()))?;
                    if row.active {
                        let (f, to) = (row.from, row.to);
                        let terms = [
                            (vars.v[t][f], row.coeffs[0]),
                            (vars.v[t][to], row.coeffs[1]),
                            (vars.theta[t][f], row.coeffs[2]),
                            (vars.theta[t][to], row.coeffs[3]),
                        ];
                        b.add_ineq(&terms, row.rhs);
                    }
                }
            }
        }

        // Coupling rows.
        for row in &coupling {
            let i = self.bus_of[&row.location];
            let Some(x) = vars.x[row.time][i] else { continue };
            let mut terms = vec![(x, 1.0)];
            for &h in &fleet_set {
                for &(a, delta) in &row.arcs {
                    if let Some(&var) = lambda_var[h].get(&a) {
                        terms.push((var, -delta / base));
                    }
                }
            }
            b.add_eq(&terms, 0.0);
        }

        // Fleet rows.
        for &h in &fleet_set {
            let fleet = &self.fleets[h];
            let exits = exit_nodes(g, fleet)?;
            let mut dep_var = BTreeMap::new();
            for &u in &exits {
                let var = b.add_var(0.0, f64::INFINITY, 0.0);
                dep_var.insert(u, var);
                vars.departure[h].push((u, var));
            }
            departure_vars += exits.len();
            let mut touched: BTreeSet<usize> = exits.clone();
            for &a in &self.kept[h] {
                touched.insert(g.arcs()[a].tail_index);
                touched.insert(g.arcs()[a].head_index);
            }
            for node in fleet.criteria.injections.keys() {
                touched.insert(g.node_index(*node).expect("checked node"));
            }
            for &v in &touched {
                let mut terms = Vec::new();
                for &a in g.out_arcs(v) {
                    if let Some(&var) = lambda_var[h].get(&a) {
                        terms.push((var, 1.0));
                    }
                }
                for &a in g.in_arcs(v) {
                    if let Some(&var) = lambda_var[h].get(&a) {
                        terms.push((var, -1.0));
                    }
                }
                if let Some(&var) = dep_var.get(&v) {
                    terms.push((var, 1.0));
                }
                let rhs = fleet.criteria.injections.get(&g.node(v)).copied().unwrap_or(0.0);
                if terms.is_empty() && rhs != 0.0 {
                    return Err(CoOptError::Infeasible(InfeasibilityHint::TravelCriteria { fleet: fleet.id.clone() }));
                }
                b.add_eq(&terms, rhs);
            }
            fleet_nodes += touched.len();
            for (&target, &count) in &fleet.criteria.withdrawals {
                let set = flexibility_set(g, target)?;
                let terms: Vec<(usize, f64)> = set
                    .members
                    .iter()
                    .map(|u| (dep_var[&g.node_index(*u).expect("member in graph")], 1.0))
                    .collect();
                b.add_eq(&terms, count);
            }
            targets += fleet.criteria.withdrawals.len();
        }

        // Objective.
        if objective && parts.grid {
            let wc = self.cfg.cost_weight;
            for t in 0..steps {
                for (k, gen) in case.generators.iter().enumerate() {
                    let [c2, c1, c0] = gen.cost;
                    let p = vars.pg[t][k];
                    if c2 != 0.0 {
                        b.add_hessian(p, p, 2.0 * wc * c2 * base * base);
                    }
                    b.add_cost(p, wc * c1 * base);
                    b.add_constant(wc * c0);
                }
                let aux = add_penalty_terms(&mut b, &self.cfg.penalty, &self.top, &vars.v[t]);
                vars.penalty.push(aux);
            }
        }

        let census = Census {
            steps: if parts.grid { steps } else { 0 },
            buses: n,
            generators: ng,
            avr_buses: case.v_set.iter().filter(|v| v.is_some()).count(),
            rated_lines: (0..case.branches.len()).filter(|&l| case.thermal_limit(l).is_finite()).count(),
            demand_vars,
            fleet_arcs,
            departure_vars,
            fleet_nodes,
            targets,
            penalty: self.cfg.penalty.kind,
            top_l: self.cfg.penalty.top_l,
        };
        Ok(Assembly { builder: b, census, vars, fixed_demand })
    }

    /// Finds the first infeasible family: each fleet alone, then all fleets
    /// with station limits, otherwise the grid.
    fn diagnose(&self) -> Result<InfeasibilityHint, CoOptError> {
        let opts = self.cfg.solver;
        if matches!(self.mode, FleetMode::Optimize) {
            let no_grid = Parts { grid: false, coupling: false };
            for h in 0..self.fleets.len() {
                let sub = match self.assemble(no_grid, &[h], false) {
                    Err(CoOptError::Infeasible(hint)) => return Ok(hint),
                    other => other?,
                };
                if qp::solve(&sub.builder.build(), &opts)?.status == Status::Infeasible {
                    return Ok(InfeasibilityHint::TravelCriteria { fleet: self.fleets[h].id.clone() });
                }
            }
            let all: Vec<usize> = (0..self.fleets.len()).collect();
            let sub = self.assemble(Parts { grid: false, coupling: true }, &all, false)?;
            if qp::solve(&sub.builder.build(), &opts)?.status == Status::Infeasible {
                return Ok(InfeasibilityHint::StationLimits);
            }
        }
        Ok(InfeasibilityHint::GridConstraints)
    }
}

/// Arcs that lie on some path from an injection node to an exit node.
/// Discharging arcs are dropped unless `v2g` is set.
pub fn retained_arcs(g: &ExpandedGraph, fleet: &FleetSpec, v2g: bool) -> Result<Vec<usize>, FleetError> {
    let allowed = |a: usize| v2g || g.arcs()[a].kind != ArcKind::Discharging;
    let nn = g.num_nodes();
    let mut fwd = vec![false; nn];
    let mut stack: Vec<usize> = Vec::new();
    for (node, &count) in &fleet.criteria.injections {
        if count > 0.0 {
            let i = g.node_index(*node).ok_or_else(|| FleetError::UnknownNode { fleet: fleet.id.clone(), node: *node })?;
            fwd[i] = true;
            stack.push(i);
        }
    }
    while let Some(v) = stack.pop() {
        for &a in g.out_arcs(v) {
            let w = g.arcs()[a].head_index;
            if allowed(a) && !fwd[w] {
                fwd[w] = true;
                stack.push(w);
            }
        }
    }
    let mut bwd = vec![false; nn];
    for u in exit_nodes(g, fleet)? {
        bwd[u] = true;
        stack.push(u);
    }
    while let Some(v) = stack.pop() {
        for &a in g.in_arcs(v) {
            let w = g.arcs()[a].tail_index;
            if allowed(a) && !bwd[w] {
                bwd[w] = true;
                stack.push(w);
            }
        }
    }
    Ok((0..g.arcs().len())
        .filter(|&a| allowed(a) && fwd[g.arcs()[a].tail_index] && bwd[g.arcs()[a].head_index])
        .collect())
}

/// Assembles the full problem. The l-inf bus set is taken from `ops[0]`.
pub fn assemble<'a>(
    case: &'a GridCase,
    ops: &'a [OperatingPoint],
    g: &'a ExpandedGraph,
    fleets: &'a [FleetSpec],
    config: &'a CoOptConfig,
    mode: FleetMode<'a>,
) -> Result<CoOptProblem<'a>, CoOptError> {
    assemble_with_top(case, ops, g, fleets, config, mode, None)
}

fn assemble_with_top<'a>(
    case: &'a GridCase,
    ops: &'a [OperatingPoint],
    g: &'a ExpandedGraph,
    fleets: &'a [FleetSpec],
    config: &'a CoOptConfig,
    mode: FleetMode<'a>,
    top: Option<Vec<usize>>,
) -> Result<CoOptProblem<'a>, CoOptError> {
    let ctx = Context::new(case, ops, g, fleets, config, mode, top)?;
    let all: Vec<usize> = (0..fleets.len()).collect();
    let asm = ctx.assemble(Parts { grid: true, coupling: true }, &all, true)?;
    Ok(CoOptProblem {
        qp: asm.builder.build(),
        census: asm.census,
        vars: asm.vars,
        top: ctx.top,
        fixed_demand: asm.fixed_demand,
        case,
        ops,
        graph: g,
        fleets,
        config,
        mode,
    })
}

/// Per-step results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    /// Voltage magnitudes of the linearized model, pu.
    pub v_linear: Vec<f64>,
    pub theta_linear: Vec<f64>,
    /// Per generator, MW and MVAr.
    pub pg_mw: Vec<f64>,
    pub qg_mvar: Vec<f64>,
    /// Vehicle charging demand per bus, MW.
    pub x_mw: Vec<f64>,
    /// Nonlinear power flow at the solved dispatch and demand; `None` when
    /// Newton-Raphson fails.
    pub v_nonlinear: Option<Vec<f64>>,
    pub theta_nonlinear: Option<Vec<f64>>,
}

/// Voltage quality over all buses and steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    /// Bus-steps outside [`BAND`].
    pub violations: usize,
    pub buses_with_violation: usize,
    /// Largest `|V - Vref|`.
    pub max_deviation: f64,
    pub worst_bus: u32,
    /// Sum over steps of the l1 penalty.
    pub l1: f64,
    /// Sum over steps of the l2 penalty.
    pub l2: f64,
    /// Sum over steps of the l-inf penalty on the problem's bus set.
    pub linf: f64,
}

impl BandReport {
    pub fn of(case: &GridCase, vref: &[f64], top: &[usize], profiles: &[&[f64]]) -> Self {
        let mut report = BandReport {
            violations: 0,
            buses_with_violation: 0,
            max_deviation: 0.0,
            worst_bus: case.buses[0].id,
            l1: 0.0,
            l2: 0.0,
            linf: 0.0,
        };
        let mut flagged = vec![false; case.num_buses()];
        for v in profiles {
            for (i, &vi) in v.iter().enumerate() {
                if vi < BAND.0 - BAND_TOL || vi > BAND.1 + BAND_TOL {
                    report.violations += 1;
                    flagged[i] = true;
                }
                let d = (vi - vref[i]).abs();
                if d > report.max_deviation {
                    report.max_deviation = d;
                    report.worst_bus = case.buses[i].id;
                }
            }
            report.l1 += penalty_value(PenaltyKind::L1, vref, top, v);
            report.l2 += penalty_value(PenaltyKind::L2, vref, top, v);
            report.linf += penalty_value(PenaltyKind::Linf, vref, top, v);
        }
        report.buses_with_violation = flagged.iter().filter(|f| **f).count();
        report
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Unweighted generation cost summed over steps, $/h.
    pub generation_cost: f64,
    /// Unweighted penalty summed over steps.
    pub penalty: f64,
    /// `cost_weight * generation_cost + weight * penalty`
    pub total: f64,
    /// Objective value reported by the solver.
    pub solver_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepartureRecord {
    pub fleet: String,
    pub bus: u32,
    pub energy: i32,
    pub step: usize,
    pub vehicles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub steps: Vec<StepResult>,
    pub flows: FleetFlows,
    /// Vehicles charging per `[t][bus]`.
    pub congestion: Vec<Vec<f64>>,
    pub departures: Vec<DepartureRecord>,
    pub objective: ObjectiveBreakdown,
    pub linear_band: BandReport,
    /// Over the steps whose nonlinear power flow converged.
    pub nonlinear_band: BandReport,
    pub nonlinear_failures: usize,
    pub status: Status,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl<'a> CoOptProblem<'a> {
    pub fn solve(&self) -> Result<Schedule, CoOptError> {
        let result = qp::solve(&self.qp, &self.config.solver)?;
        match result.status {
            Status::Optimal => Ok(self.interpret(&result)),
            Status::Infeasible => {
                let ctx = Context::new(self.case, self.ops, self.graph, self.fleets, self.config, self.mode, Some(self.top.clone()))?;
                Err(CoOptError::Infeasible(ctx.diagnose()?))
            }
            status => Err(CoOptError::SolverFailure(status)),
        }
    }

    /// Diagnoses infeasibility without solving the full problem first.
    pub fn infeasibility_hint(&self) -> Result<InfeasibilityHint, CoOptError> {
        Context::new(self.case, self.ops, self.graph, self.fleets, self.config, self.mode, Some(self.top.clone()))?.diagnose()
    }

    fn interpret(&self, r: &SolveResult) -> Schedule {
        let case = self.case;
        let g = self.graph;
        let base = case.base_mva;
        let n = case.num_buses();
        let v2g = self.config.enable_v2g;
        let x = &r.x;

        let flows = match self.mode {
            FleetMode::Fixed(f) => f.clone(),
            FleetMode::Optimize => {
                let mut flows = FleetFlows::zeros(g, self.fleets.len());
                for h in 0..self.fleets.len() {
                    for &(a, var) in &self.vars.lambda[h] {
                        flows.lambda[h][a] = x[var];
                    }
                    for &(u, var) in &self.vars.departure[h] {
                        flows.departures[h][u] = x[var];
                    }
                }
                flows
            }
        };

        let mut steps = Vec::with_capacity(g.steps());
        let mut congestion = Vec::with_capacity(g.steps());
        let mut generation_cost = 0.0;
        for t in 0..g.steps() {
            let v: Vec<f64> = self.vars.v[t].iter().map(|&j| x[j]).collect();
            let theta: Vec<f64> = self.vars.theta[t].iter().map(|&j| x[j]).collect();
            let pg: Vec<f64> = self.vars.pg[t].iter().map(|&j| x[j] * base).collect();
            let qg: Vec<f64> = self.vars.qg[t].iter().map(|&j| x[j] * base).collect();
            let mut x_mw = self.fixed_demand[t].clone();
            for i in 0..n {
                if let Some(j) = self.vars.x[t][i] {
                    x_mw[i] = x[j] * base;
                }
            }
            for (k, gen) in case.generators.iter().enumerate() {
                let [c2, c1, c0] = gen.cost;
                generation_cost += c2 * pg[k] * pg[k] + c1 * pg[k] + c0;
            }
            let mut cong = vec![0.0; n];
            for &loc in g.transport.locations() {
                let i = case.bus_index(loc).expect("location is a bus");
                cong[i] = flows.vehicles_charging(g, loc, t, v2g);
            }
            congestion.push(cong);

            let nonlinear = nonlinear_check(case, &pg, &qg, &x_mw);
            steps.push(StepResult {
                v_linear: v,
                theta_linear: theta,
                pg_mw: pg,
                qg_mvar: qg,
                x_mw,
                v_nonlinear: nonlinear.as_ref().map(|op| op.v.clone()),
                theta_nonlinear: nonlinear.map(|op| op.theta),
            });
        }

        let vref = &self.config.penalty.vref;
        let linear: Vec<&[f64]> = steps.iter().map(|s| s.v_linear.as_slice()).collect();
        let nonlinear: Vec<&[f64]> = steps.iter().filter_map(|s| s.v_nonlinear.as_deref()).collect();
        let linear_band = BandReport::of(case, vref, &self.top, &linear);
        let nonlinear_band = BandReport::of(case, vref, &self.top, &nonlinear);
        let penalty = match self.config.penalty.kind {
            PenaltyKind::L1 => linear_band.l1,
            PenaltyKind::L2 => linear_band.l2,
            PenaltyKind::Linf => linear_band.linf,
        };
        let objective = ObjectiveBreakdown {
            generation_cost,
            penalty,
            total: self.config.cost_weight * generation_cost + self.config.penalty.weight * penalty,
            solver_objective: r.objective,
        };

        let mut departures = Vec::new();
        for (h, fleet) in self.fleets.iter().enumerate() {
            for (u, &count) in flows.departures[h].iter().enumerate() {
                if count > 1e-6 {
                    let node = g.node(u);
                    departures.push(DepartureRecord {
                        fleet: fleet.id.clone(),
                        bus: node.location,
                        energy: node.energy,
                        step: node.time,
                        vehicles: count,
                    });
                }
            }
        }

        Schedule {
            nonlinear_failures: steps.len() - nonlinear.len(),
            steps,
            flows,
            congestion,
            departures,
            objective,
            linear_band,
            nonlinear_band,
            status: r.status,
            iterations: r.iterations,
            residuals: r.residuals.clone(),
        }
    }
}

/// Power flow at a given dispatch (MW, MVAr per generator) and extra demand.
pub fn dispatch_spec(case: &GridCase, pg_mw: &[f64], qg_mvar: &[f64], x_mw: &[f64]) -> PowerFlowSpec {
    let base = case.base_mva;
    let n = case.num_buses();
    let mut p_net: Vec<f64> = (0..n).map(|i| -(case.buses[i].pd + x_mw[i]) / base).collect();
    let mut q_net: Vec<f64> = (0..n)
        .map(|i| -(case.buses[i].qd + case.alpha_pq * x_mw[i]) / base)
        .collect();
    for (k, gen) in case.generators.iter().enumerate() {
        p_net[gen.bus] += pg_mw[k] / base;
        q_net[gen.bus] += qg_mvar[k] / base;
    }
    PowerFlowSpec { p_net, q_net, v_set: case.v_set.clone() }
}

fn nonlinear_check(case: &GridCase, pg: &[f64], qg: &[f64], x_mw: &[f64]) -> Option<OperatingPoint> {
    solve_with(case, &dispatch_spec(case, pg, qg, x_mw)).ok()
}

/// Solves one scenario end to end: base operating point, assembly, solve
/// and, when configured, one re-linearized pass.
pub fn solve_scenario(
    case: &GridCase,
    g: &ExpandedGraph,
    fleets: &[FleetSpec],
    config: &CoOptConfig,
    mode: FleetMode<'_>,
) -> Result<Schedule, CoOptError> {
    let base = [solve_operating_point(case)?];
    let problem = assemble(case, &base, g, fleets, config, mode)?;
    let first = problem.solve()?;
    if !config.relinearize_per_step {
        return Ok(first);
    }
    let mut ops = Vec::with_capacity(g.steps());
    for s in &first.steps {
        ops.push(solve_with(case, &dispatch_spec(case, &s.pg_mw, &s.qg_mvar, &s.x_mw))?);
    }
    // The l-inf set stays tied to the base point.
    let problem = assemble_with_top(case, &ops, g, fleets, config, mode, Some(problem.top.clone()))?;
    problem.solve()
}

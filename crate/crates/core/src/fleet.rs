//! Fleet travel criteria, flow constraints and the grid-agnostic baseline.
//!
//! A vehicle of a fleet leaves the network at node `u` on behalf of the
//! withdrawal target `v` when `u` is at the same location, holds at least
//! the target energy, and is no later than the target time.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngExt, SeedableRng};
use serde::Serialize;

use crate::transport_graph::{ArcKind, ExpandedGraph, ExpandedNode};

/// Conservation tolerance in vehicles.
pub const FLOW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FleetError {
    #[error("fleet {fleet}: node {node:?} is outside the expanded graph")]
    UnknownNode { fleet: String, node: ExpandedNode },
    #[error("fleet {fleet}: negative or non-finite vehicle count")]
    BadCount { fleet: String },
    #[error("fleet {fleet}: injections {injected} do not match withdrawals {withdrawn}")]
    Unbalanced { fleet: String, injected: f64, withdrawn: f64 },
    #[error("fleet {fleet}: injections {injected} do not match size {size}")]
    SizeMismatch { fleet: String, injected: f64, size: f64 },
    #[error("fleet {fleet}: {reason}")]
    Infeasible { fleet: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TravelCriteria {
    pub injections: BTreeMap<ExpandedNode, f64>,
    pub withdrawals: BTreeMap<ExpandedNode, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    pub id: String,
    pub size: f64,
    pub criteria: TravelCriteria,
}

impl FleetSpec {
    pub fn new(id: impl Into<String>, size: f64, criteria: TravelCriteria) -> Result<Self, FleetError> {
        let id = id.into();
        let counts = criteria.injections.values().chain(criteria.withdrawals.values());
        if !size.is_finite() || size < 0.0 || counts.clone().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(FleetError::BadCount { fleet: id });
        }
        let injected: f64 = criteria.injections.values().sum();
        let withdrawn: f64 = criteria.withdrawals.values().sum();
        let tol = FLOW_TOL * (1.0 + size);
        if (injected - withdrawn).abs() > tol {
            return Err(FleetError::Unbalanced { fleet: id, injected, withdrawn });
        }
        if (injected - size).abs() > tol {
            return Err(FleetError::SizeMismatch { fleet: id, injected, size });
        }
        Ok(FleetSpec { id, size, criteria })
    }

    /// Checks that every criteria node exists in `g`.
    pub fn check_nodes(&self, g: &ExpandedGraph) -> Result<(), FleetError> {
        for node in self.criteria.injections.keys().chain(self.criteria.withdrawals.keys()) {
            if g.node_index(*node).is_none() {
                return Err(FleetError::UnknownNode { fleet: self.id.clone(), node: *node });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlexibilitySet {
    pub target: ExpandedNode,
    pub members: Vec<ExpandedNode>,
}

/// Nodes at the target's location with at least its energy, no later than its time.
pub fn flexibility_set(g: &ExpandedGraph, target: ExpandedNode) -> Result<FlexibilitySet, FleetError> {
    if g.node_index(target).is_none() {
        return Err(FleetError::UnknownNode { fleet: String::new(), node: target });
    }
    let mut members = Vec::new();
    for e in target.energy..=g.expansion.e_max {
        for t in 0..=target.time {
            members.push(ExpandedNode::new(target.location, e, t));
        }
    }
    Ok(FlexibilitySet { target, members })
}

/// Decision variable of a fleet constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum FleetVar {
    /// Flow on an arc id.
    Lambda(usize),
    /// Departures at a node index.
    Departure(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearRow {
    pub terms: Vec<(FleetVar, f64)>,
    pub rhs: f64,
}

/// One equality per expanded node:
/// `sum_out lambda - sum_in lambda + psi_out = psi_in_bar`.
///
/// Departure variables appear only at members of some flexibility set.
pub fn flow_balance_rows(g: &ExpandedGraph, fleet: &FleetSpec) -> Result<Vec<LinearRow>, FleetError> {
    fleet.check_nodes(g)?;
    let exits = exit_nodes(g, fleet)?;
    let mut rows = Vec::with_capacity(g.num_nodes());
    for node in 0..g.num_nodes() {
        let mut terms: Vec<(FleetVar, f64)> = Vec::new();
        terms.extend(g.out_arcs(node).iter().map(|&a| (FleetVar::Lambda(a), 1.0)));
        terms.extend(g.in_arcs(node).iter().map(|&a| (FleetVar::Lambda(a), -1.0)));
        if exits.contains(&node) {
            terms.push((FleetVar::Departure(node), 1.0));
        }
        let rhs = fleet.criteria.injections.get(&g.node(node)).copied().unwrap_or(0.0);
        rows.push(LinearRow { terms, rhs });
    }
    Ok(rows)
}

/// One equality per withdrawal target: `sum_{u in U_v} psi_out_u = psi_out_bar_v`.
pub fn departure_rows(g: &ExpandedGraph, fleet: &FleetSpec) -> Result<Vec<LinearRow>, FleetError> {
    fleet.check_nodes(g)?;
    let mut rows = Vec::new();
    for (&target, &count) in &fleet.criteria.withdrawals {
        let set = flexibility_set(g, target)?;
        let terms = set
            .members
            .iter()
            .map(|u| (FleetVar::Departure(g.node_index(*u).expect("member in graph")), 1.0))
            .collect();
        rows.push(LinearRow { terms, rhs: count });
    }
    Ok(rows)
}

/// Node indices that belong to the flexibility set of some withdrawal target.
pub fn exit_nodes(g: &ExpandedGraph, fleet: &FleetSpec) -> Result<BTreeSet<usize>, FleetError> {
    let mut out = BTreeSet::new();
    for &target in fleet.criteria.withdrawals.keys() {
        for u in flexibility_set(g, target)?.members {
            out.insert(g.node_index(u).expect("member in graph"));
        }
    }
    Ok(out)
}

/// Arc flows and departures of every fleet, indexed by fleet position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FleetFlows {
    /// `lambda[h][arc]`
    pub lambda: Vec<Vec<f64>>,
    /// `departures[h][node]`
    pub departures: Vec<Vec<f64>>,
}

impl FleetFlows {
    pub fn zeros(g: &ExpandedGraph, fleets: usize) -> Self {
        FleetFlows {
            lambda: vec![vec![0.0; g.arcs().len()]; fleets],
            departures: vec![vec![0.0; g.num_nodes()]; fleets],
        }
    }

    /// Largest `|inflow - outflow + psi_in - psi_out|` over nodes and fleets.
    pub fn conservation_error(&self, g: &ExpandedGraph, fleets: &[FleetSpec]) -> f64 {
        let mut worst = 0.0_f64;
        for (h, fleet) in fleets.iter().enumerate() {
            let mut bal = vec![0.0; g.num_nodes()];
            for (a, arc) in g.arcs().iter().enumerate() {
                bal[arc.head_index] += self.lambda[h][a];
                bal[arc.tail_index] -= self.lambda[h][a];
            }
            for (node, &c) in &fleet.criteria.injections {
                bal[g.node_index(*node).expect("node in graph")] += c;
            }
            for (i, b) in bal.iter().enumerate() {
                worst = worst.max((b - self.departures[h][i]).abs());
            }
        }
        worst
    }

    /// Largest mismatch of the departure-flexibility equalities.
    pub fn departure_error(&self, g: &ExpandedGraph, fleets: &[FleetSpec]) -> f64 {
        let mut worst = 0.0_f64;
        for (h, fleet) in fleets.iter().enumerate() {
            for (&target, &count) in &fleet.criteria.withdrawals {
                let set = flexibility_set(g, target).expect("target in graph");
                let sum: f64 = set.members.iter().map(|u| self.departures[h][g.node_index(*u).unwrap()]).sum();
                worst = worst.max((sum - count).abs());
            }
        }
        worst
    }

    /// Vehicles on charging (and, with V2G, discharging) arcs at `(location, time)`.
    pub fn vehicles_charging(&self, g: &ExpandedGraph, location: u32, time: usize, v2g: bool) -> f64 {
        let arcs = g.charging_arcs_at(location, time).unwrap_or(&[]);
        let mut total = 0.0;
        for &a in arcs {
            if !v2g && g.arcs()[a].kind == ArcKind::Discharging {
                continue;
            }
            total += self.lambda.iter().map(|l| l[a]).sum::<f64>();
        }
        total
    }

    /// Charging demand at `(location, time)` in MW.
    pub fn demand_mw(&self, g: &ExpandedGraph, location: u32, time: usize, v2g: bool) -> f64 {
        let arcs = g.charging_arcs_at(location, time).unwrap_or(&[]);
        let mut total = 0.0;
        for &a in arcs {
            let arc = &g.arcs()[a];
            if !v2g && arc.kind == ArcKind::Discharging {
                continue;
            }
            total += arc.power * self.lambda.iter().map(|l| l[a]).sum::<f64>();
        }
        total
    }
}

/// One vehicle itinerary of the baseline, as arc ids plus its exit node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Itinerary {
    pub route: Vec<u32>,
    pub arcs: Vec<usize>,
    /// First node at the destination.
    pub arrival: ExpandedNode,
    /// First node that satisfies the withdrawal target.
    pub ready: ExpandedNode,
    pub exit: ExpandedNode,
    pub distance_km: f64,
}

/// Grid-agnostic schedule: distance-shortest route, charging only as needed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSchedule {
    pub flows: FleetFlows,
    /// Per fleet: `(vehicles, itinerary)` for each origin/target pairing.
    pub itineraries: Vec<Vec<(f64, Itinerary)>>,
}

/// Baseline dispatch of every fleet.
///
/// Injections and withdrawals of a fleet are paired in node order, splitting
/// counts as needed. Each pair follows the distance-shortest location path
/// (ties: earliest arrival, then lexicographically lowest bus sequence). At
/// each stop the vehicle charges just enough for the next hop, plus the
/// target energy before the final hop as far as the battery allows. It tops
/// up at the destination if still short, then rests until the target time
/// and exits.
pub fn baseline_schedule(g: &ExpandedGraph, fleets: &[FleetSpec]) -> Result<BaselineSchedule, FleetError> {
    let mut flows = FleetFlows::zeros(g, fleets.len());
    let mut itineraries = Vec::with_capacity(fleets.len());
    for (h, fleet) in fleets.iter().enumerate() {
        fleet.check_nodes(g)?;
        let mut list = Vec::new();
        for (origin, target, count) in pair_criteria(&fleet.criteria) {
            if count <= 0.0 {
                continue;
            }
            let it = route_vehicle(g, origin, target).map_err(|reason| FleetError::Infeasible {
                fleet: fleet.id.clone(),
                reason,
            })?;
            for &a in &it.arcs {
                flows.lambda[h][a] += count;
            }
            flows.departures[h][g.node_index(it.exit).expect("exit in graph")] += count;
            list.push((count, it));
        }
        itineraries.push(list);
    }
    Ok(BaselineSchedule { flows, itineraries })
}

fn pair_criteria(c: &TravelCriteria) -> Vec<(ExpandedNode, ExpandedNode, f64)> {
    let mut inj: Vec<(ExpandedNode, f64)> = c.injections.iter().map(|(k, v)| (*k, *v)).collect();
    let mut wd: Vec<(ExpandedNode, f64)> = c.withdrawals.iter().map(|(k, v)| (*k, *v)).collect();
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < inj.len() && j < wd.len() {
        let m = inj[i].1.min(wd[j].1);
        out.push((inj[i].0, wd[j].0, m));
        inj[i].1 -= m;
        wd[j].1 -= m;
        if inj[i].1 <= FLOW_TOL {
            i += 1;
        }
        if wd[j].1 <= FLOW_TOL {
            j += 1;
        }
    }
    out
}

/// All simple location paths of minimum total distance from `a` to `b`.
pub fn shortest_paths(g: &ExpandedGraph, a: u32, b: u32) -> Vec<(Vec<u32>, f64)> {
    let tr = &g.transport;
    let n = tr.locations().len();
    let (Some(src), Some(dst)) = (tr.location_index(a), tr.location_index(b)) else {
        return Vec::new();
    };
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[src] = 0.0;
    for _ in 0..n {
        let Some(u) = (0..n).filter(|&i| !done[i] && dist[i].is_finite()).min_by(|&x, &y| dist[x].total_cmp(&dist[y])) else {
            break;
        };
        done[u] = true;
        for &(nb, k) in tr.neighbors(tr.locations()[u]) {
            let v = tr.location_index(nb).unwrap();
            let d = dist[u] + tr.roads()[k].km;
            if d < dist[v] {
                dist[v] = d;
            }
        }
    }
    if !dist[dst].is_finite() {
        return Vec::new();
    }
    // Walk back along tight edges.
    let tight = |u: usize, v: usize, km: f64| (dist[u] + km - dist[v]).abs() <= 1e-9 * (1.0 + dist[v]);
    let mut out = Vec::new();
    let mut stack = vec![vec![dst]];
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if last == src {
            let route: Vec<u32> = path.iter().rev().map(|&i| tr.locations()[i]).collect();
            out.push((route, dist[dst]));
            continue;
        }
        for &(nb, k) in tr.neighbors(tr.locations()[last]) {
            let u = tr.location_index(nb).unwrap();
            if tight(u, last, tr.roads()[k].km) && !path.contains(&u) {
                let mut p = path.clone();
                p.push(u);
                stack.push(p);
            }
        }
    }
    out.sort_by(|x, y| x.0.cmp(&y.0));
    out
}

/// Simulates one vehicle along `route`; returns the itinerary or a reason.
pub fn simulate_route(g: &ExpandedGraph, route: &[u32], origin: ExpandedNode, target: ExpandedNode) -> Result<Itinerary, String> {
    let tr = &g.transport;
    let exp = g.expansion;
    let mut cur = origin;
    let mut arcs = Vec::new();
    let mut distance = 0.0;
    let find_arc = |from: ExpandedNode, kind: ArcKind, to: ExpandedNode| -> Option<usize> {
        let idx = g.node_index(from)?;
        g.out_arcs(idx).iter().copied().find(|&a| g.arcs()[a].kind == kind && g.arcs()[a].head == to)
    };
    for (k, pair) in route.windows(2).enumerate() {
        let road = tr.road_between(pair[0], pair[1]).ok_or_else(|| format!("no road {}-{}", pair[0], pair[1]))?;
        let w = road.travel_steps as i32;
        let last = k + 2 == route.len();
        if w + exp.e_min > exp.e_max {
            return Err(format!("hop {}-{} needs more than a full battery", pair[0], pair[1]));
        }
        let need = if last { (w + target.energy).min(exp.e_max) } else { w + exp.e_min };
        while cur.energy < need {
            if !tr.has_station(cur.location) {
                return Err(format!("must charge at location {} which has no station", cur.location));
            }
            let next = ExpandedNode::new(cur.location, cur.energy + 1, cur.time + 1);
            let a = find_arc(cur, ArcKind::Charging, next).ok_or("horizon too short to charge")?;
            arcs.push(a);
            cur = next;
        }
        let next = ExpandedNode::new(pair[1], cur.energy - w, cur.time + road.travel_steps);
        let a = find_arc(cur, ArcKind::Driving, next).ok_or("horizon too short to drive")?;
        arcs.push(a);
        distance += road.km;
        cur = next;
    }
    let arrival = cur;
    while cur.energy < target.energy {
        if !tr.has_station(cur.location) {
            return Err(format!("must charge at location {} which has no station", cur.location));
        }
        let next = ExpandedNode::new(cur.location, cur.energy + 1, cur.time + 1);
        let a = find_arc(cur, ArcKind::Charging, next).ok_or("horizon too short to charge")?;
        arcs.push(a);
        cur = next;
    }
    let ready = cur;
    if ready.time > target.time {
        return Err(format!("ready at step {} after the deadline {}", ready.time, target.time));
    }
    while cur.time < target.time {
        let next = ExpandedNode::new(cur.location, cur.energy, cur.time + 1);
        let a = find_arc(cur, ArcKind::Resting, next).ok_or("cannot rest until the deadline")?;
        arcs.push(a);
        cur = next;
    }
    Ok(Itinerary {
        route: route.to_vec(),
        arcs,
        arrival,
        ready,
        exit: cur,
        distance_km: distance,
    })
}

fn route_vehicle(g: &ExpandedGraph, origin: ExpandedNode, target: ExpandedNode) -> Result<Itinerary, String> {
    if origin.location == target.location {
        return simulate_route(g, &[origin.location], origin, target);
    }
    let paths = shortest_paths(g, origin.location, target.location);
    if paths.is_empty() {
        return Err(format!("no road path from {} to {}", origin.location, target.location));
    }
    let mut best: Option<Itinerary> = None;
    let mut last_err = String::new();
    for (route, _) in &paths {
        match simulate_route(g, route, origin, target) {
            Ok(it) => {
                let better = match &best {
                    None => true,
                    Some(b) => it.ready.time < b.ready.time,
                };
                if better {
                    best = Some(it);
                }
            }
            Err(e) => last_err = e,
        }
    }
    best.ok_or(last_err)
}

/// Ranges for the seeded travel-criteria sampler.
#[derive(Debug, Clone, PartialEq, serde::Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub fleets: usize,
    pub size: f64,
    /// Inclusive start-step range.
    pub start_steps: (usize, usize),
    /// Inclusive range of steps allowed between start and deadline.
    pub window_steps: (usize, usize),
    /// Inclusive initial energy-level range.
    pub start_energy: (i32, i32),
    /// Inclusive required final energy-level range.
    pub end_energy: (i32, i32),
}

/// Attempts per fleet before the sampler gives up.
pub const SAMPLER_ATTEMPTS: usize = 1000;

/// Draws fleets with distinct origin and destination locations, uniformly
/// from the configured ranges, redrawing any fleet the baseline router
/// cannot serve. Equal seeds give equal fleets.
pub fn sample_fleets(g: &ExpandedGraph, cfg: &SamplerConfig, seed: u64) -> Result<Vec<FleetSpec>, FleetError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let locs = g.transport.locations();
    let bad = |reason: &str| FleetError::Infeasible { fleet: "sampler".into(), reason: reason.into() };
    if locs.len() < 2 {
        return Err(bad("need at least two locations"));
    }
    let ordered = |r: (i64, i64)| r.0 <= r.1;
    let ranges = [
        (cfg.start_steps.0 as i64, cfg.start_steps.1 as i64),
        (cfg.window_steps.0 as i64, cfg.window_steps.1 as i64),
        (cfg.start_energy.0 as i64, cfg.start_energy.1 as i64),
        (cfg.end_energy.0 as i64, cfg.end_energy.1 as i64),
    ];
    if !ranges.iter().all(|r| ordered(*r)) {
        return Err(bad("empty sampling range"));
    }
    let mut out = Vec::with_capacity(cfg.fleets);
    for h in 0..cfg.fleets {
        let mut found = None;
        for _ in 0..SAMPLER_ATTEMPTS {
            let a = rng.random_range(0..locs.len());
            let mut b = rng.random_range(0..locs.len() - 1);
            if b >= a {
                b += 1;
            }
            let t0 = rng.random_range(cfg.start_steps.0..=cfg.start_steps.1);
            let t1 = (t0 + rng.random_range(cfg.window_steps.0..=cfg.window_steps.1)).min(g.steps() - 1);
            let e0 = rng.random_range(cfg.start_energy.0..=cfg.start_energy.1);
            let e1 = rng.random_range(cfg.end_energy.0..=cfg.end_energy.1);
            let mut c = TravelCriteria::default();
            c.injections.insert(ExpandedNode::new(locs[a], e0, t0), cfg.size);
            c.withdrawals.insert(ExpandedNode::new(locs[b], e1, t1), cfg.size);
            let spec = FleetSpec::new(format!("sampled-{h}"), cfg.size, c)?;
            spec.check_nodes(g)?;
            if baseline_schedule(g, std::slice::from_ref(&spec)).is_ok() {
                found = Some(spec);
                break;
            }
        }
        out.push(found.ok_or_else(|| bad("no serviceable fleet within the attempt budget"))?);
    }
    Ok(out)
}

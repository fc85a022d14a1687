//! Road network and its time-energy expansion.
//!
//! Nodes are `(location, energy level, time step)` triples. Arcs never go
//! backward in time:
//!
//! * charging: same location, one level up, one step;
//! * discharging: same location, one level down, one step;
//! * driving: along a road of `w` steps, `w` levels down, `w` steps;
//! * resting: same location and level, one step.
//!
//! Charging and discharging arcs exist only at station locations.

use std::collections::BTreeSet;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("road {index} connects location {location} to itself")]
    SelfLoop { index: usize, location: u32 },
    #[error("road {index} refers to undeclared location {location}")]
    UnknownEndpoint { index: usize, location: u32 },
    #[error("road {index} has invalid travel_steps or km")]
    BadRoad { index: usize },
    #[error("roads {first} and {second} join the same pair of locations")]
    DuplicateRoad { first: usize, second: usize },
    #[error("location {0} is declared twice")]
    DuplicateLocation(u32),
    #[error("station at undeclared location {0}")]
    UnknownStation(u32),
    #[error("horizon needs at least 2 steps")]
    EmptyHorizon,
    #[error("energy range [{0}, {1}] is degenerate")]
    DegenerateEnergyRange(i32, i32),
    #[error("energy step and step length must be positive and finite")]
    BadScale,
    #[error("unknown location {0}")]
    UnknownLocation(u32),
    #[error("time {0} outside the horizon")]
    TimeOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ArcError {
    #[error("arc goes backward in time")]
    BackwardTime,
    #[error("arc leaves the energy range")]
    EnergyBound,
    #[error("driving arc between non-adjacent locations")]
    NotNeighbor,
    #[error("node pair matches no arc rule")]
    InvalidTransition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Road {
    pub from: u32,
    pub to: u32,
    pub travel_steps: usize,
    pub km: f64,
}

/// Physical road network. Every location is also a grid bus id.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportGraph {
    locations: Vec<u32>,
    roads: Vec<Road>,
    stations: BTreeSet<u32>,
    /// Per location (sorted order): `(neighbor, road index)` sorted by neighbor.
    adjacency: Vec<Vec<(u32, usize)>>,
}

impl TransportGraph {
    /// `stations = None` places a station at every location.
    pub fn new(locations: Vec<u32>, roads: Vec<Road>, stations: Option<Vec<u32>>) -> Result<Self, GraphError> {
        let mut sorted = locations.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateLocation(w[0]));
        }
        let mut adjacency = vec![Vec::new(); sorted.len()];
        let mut seen = std::collections::BTreeMap::new();
        for (k, r) in roads.iter().enumerate() {
            if r.from == r.to {
                return Err(GraphError::SelfLoop { index: k, location: r.from });
            }
            let a = sorted
                .binary_search(&r.from)
                .map_err(|_| GraphError::UnknownEndpoint { index: k, location: r.from })?;
            let b = sorted
                .binary_search(&r.to)
                .map_err(|_| GraphError::UnknownEndpoint { index: k, location: r.to })?;
            if r.travel_steps < 1 || !(r.km.is_finite() && r.km > 0.0) {
                return Err(GraphError::BadRoad { index: k });
            }
            let key = (r.from.min(r.to), r.from.max(r.to));
            if let Some(first) = seen.insert(key, k) {
                return Err(GraphError::DuplicateRoad { first, second: k });
            }
            adjacency[a].push((r.to, k));
            adjacency[b].push((r.from, k));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let stations = match stations {
            None => sorted.iter().copied().collect(),
            Some(list) => {
                let set: BTreeSet<u32> = list.into_iter().collect();
                if let Some(&s) = set.iter().find(|s| sorted.binary_search(s).is_err()) {
                    return Err(GraphError::UnknownStation(s));
                }
                set
            }
        };
        Ok(TransportGraph {
            locations: sorted,
            roads,
            stations,
            adjacency,
        })
    }

    /// Locations in ascending id order.
    pub fn locations(&self) -> &[u32] {
        &self.locations
    }

    pub fn roads(&self) -> &[Road] {
        &self.roads
    }

    pub fn stations(&self) -> &BTreeSet<u32> {
        &self.stations
    }

    pub fn has_station(&self, location: u32) -> bool {
        self.stations.contains(&location)
    }

    pub fn location_index(&self, location: u32) -> Option<usize> {
        self.locations.binary_search(&location).ok()
    }

    /// Adjacent locations with the connecting road, by ascending id.
    pub fn neighbors(&self, location: u32) -> &[(u32, usize)] {
        match self.location_index(location) {
            Some(i) => &self.adjacency[i],
            None => &[],
        }
    }

    pub fn road_between(&self, a: u32, b: u32) -> Option<&Road> {
        self.neighbors(a)
            .iter()
            .find(|(n, _)| *n == b)
            .map(|&(_, k)| &self.roads[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ExpandedNode {
    pub location: u32,
    pub energy: i32,
    pub time: usize,
}

impl ExpandedNode {
    pub fn new(location: u32, energy: i32, time: usize) -> Self {
        ExpandedNode { location, energy, time }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ArcKind {
    Charging,
    Discharging,
    Driving,
    Resting,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arc {
    pub tail: ExpandedNode,
    pub head: ExpandedNode,
    pub tail_index: usize,
    pub head_index: usize,
    pub kind: ArcKind,
    /// Grid power per vehicle on this arc, MW.
    pub power: f64,
}

/// Energy discretization and horizon of an expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    pub e_min: i32,
    pub e_max: i32,
    pub steps: usize,
    pub energy_step_kwh: f64,
    pub dt_hours: f64,
}

impl Expansion {
    pub fn levels(&self) -> usize {
        (self.e_max - self.e_min + 1) as usize
    }

    /// Charging power per vehicle, MW.
    pub fn delta(&self) -> f64 {
        self.energy_step_kwh / 1000.0 / self.dt_hours
    }
}

/// Classifies the arc `tail -> head`.
pub fn validate_arc(
    tail: ExpandedNode,
    head: ExpandedNode,
    transport: &TransportGraph,
    e_min: i32,
    e_max: i32,
) -> Result<ArcKind, ArcError> {
    if head.time <= tail.time {
        return Err(ArcError::BackwardTime);
    }
    let dt = head.time - tail.time;
    if tail.location != head.location {
        let road = transport
            .road_between(tail.location, head.location)
            .ok_or(ArcError::NotNeighbor)?;
        if !(e_min..=e_max).contains(&tail.energy) || !(e_min..=e_max).contains(&head.energy) {
            return Err(ArcError::EnergyBound);
        }
        let drop = tail.energy - head.energy;
        if dt == road.travel_steps && drop == road.travel_steps as i32 {
            return Ok(ArcKind::Driving);
        }
        return Err(ArcError::InvalidTransition);
    }
    if !(e_min..=e_max).contains(&tail.energy) || !(e_min..=e_max).contains(&head.energy) {
        return Err(ArcError::EnergyBound);
    }
    if dt != 1 {
        return Err(ArcError::InvalidTransition);
    }
    match head.energy - tail.energy {
        1 => Ok(ArcKind::Charging),
        -1 => Ok(ArcKind::Discharging),
        0 => Ok(ArcKind::Resting),
        _ => Err(ArcError::InvalidTransition),
    }
}

/// The expanded network with arcs grouped by node.
#[derive(Debug, Clone)]
pub struct ExpandedGraph {
    pub transport: TransportGraph,
    pub expansion: Expansion,
    arcs: Vec<Arc>,
    out_ptr: Vec<usize>,
    out_arcs: Vec<usize>,
    in_ptr: Vec<usize>,
    in_arcs: Vec<usize>,
    /// `(location index, time)` -> charging and discharging arc ids.
    charging_index: Vec<Vec<usize>>,
}

pub fn build_expanded_graph(transport: &TransportGraph, expansion: Expansion) -> Result<ExpandedGraph, GraphError> {
    let Expansion { e_min, e_max, steps, energy_step_kwh, dt_hours } = expansion;
    if steps < 2 {
        return Err(GraphError::EmptyHorizon);
    }
    if e_min >= e_max {
        return Err(GraphError::DegenerateEnergyRange(e_min, e_max));
    }
    for v in [energy_step_kwh, dt_hours] {
        if !(v.is_finite() && v > 0.0) {
            return Err(GraphError::BadScale);
        }
    }
    let delta = expansion.delta();
    let n_loc = transport.locations().len();
    let mut graph = ExpandedGraph {
        transport: transport.clone(),
        expansion,
        arcs: Vec::new(),
        out_ptr: Vec::new(),
        out_arcs: Vec::new(),
        in_ptr: Vec::new(),
        in_arcs: Vec::new(),
        charging_index: vec![Vec::new(); n_loc * steps],
    };

    let mut arcs = Vec::new();
    for &loc in transport.locations() {
        let station = transport.has_station(loc);
        for e in e_min..=e_max {
            for t in 0..steps {
                let tail = ExpandedNode::new(loc, e, t);
                let mut push = |head: ExpandedNode, kind: ArcKind, power: f64| {
                    arcs.push(Arc {
                        tail,
                        head,
                        tail_index: graph.index_unchecked(tail),
                        head_index: graph.index_unchecked(head),
                        kind,
                        power,
                    });
                };
                if t + 1 < steps {
                    if station && e < e_max {
                        push(ExpandedNode::new(loc, e + 1, t + 1), ArcKind::Charging, delta);
                    }
                    if station && e > e_min {
                        push(ExpandedNode::new(loc, e - 1, t + 1), ArcKind::Discharging, -delta);
                    }
                }
                for &(nb, k) in transport.neighbors(loc) {
                    let w = transport.roads()[k].travel_steps;
                    if t + w < steps && e - w as i32 >= e_min {
                        push(ExpandedNode::new(nb, e - w as i32, t + w), ArcKind::Driving, 0.0);
                    }
                }
                if t + 1 < steps {
                    push(ExpandedNode::new(loc, e, t + 1), ArcKind::Resting, 0.0);
                }
            }
        }
    }

    let n = graph.num_nodes();
    let (out_ptr, out_arcs) = group(n, arcs.iter().map(|a| a.tail_index));
    let (in_ptr, in_arcs) = group(n, arcs.iter().map(|a| a.head_index));
    for (id, a) in arcs.iter().enumerate() {
        if matches!(a.kind, ArcKind::Charging | ArcKind::Discharging) {
            let li = transport.location_index(a.tail.location).expect("declared location");
            graph.charging_index[li * steps + a.tail.time].push(id);
        }
    }
    graph.arcs = arcs;
    graph.out_ptr = out_ptr;
    graph.out_arcs = out_arcs;
    graph.in_ptr = in_ptr;
    graph.in_arcs = in_arcs;
    Ok(graph)
}

fn group(n: usize, keys: impl Iterator<Item = usize> + Clone) -> (Vec<usize>, Vec<usize>) {
    let mut ptr = vec![0usize; n + 1];
    for k in keys.clone() {
        ptr[k + 1] += 1;
    }
    for i in 0..n {
        ptr[i + 1] += ptr[i];
    }
    let mut next = ptr.clone();
    let mut items = vec![0usize; ptr[n]];
    for (id, k) in keys.enumerate() {
        items[next[k]] = id;
        next[k] += 1;
    }
    (ptr, items)
}

impl ExpandedGraph {
    pub fn num_nodes(&self) -> usize {
        self.transport.locations().len() * self.expansion.levels() * self.expansion.steps
    }

    pub fn steps(&self) -> usize {
        self.expansion.steps
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    fn index_unchecked(&self, v: ExpandedNode) -> usize {
        let li = self.transport.location_index(v.location).expect("declared location");
        let (levels, steps) = (self.expansion.levels(), self.expansion.steps);
        li * levels * steps + (v.energy - self.expansion.e_min) as usize * steps + v.time
    }

    /// Canonical index: location-major, then energy, then time.
    pub fn node_index(&self, v: ExpandedNode) -> Option<usize> {
        self.transport.location_index(v.location)?;
        if v.energy < self.expansion.e_min || v.energy > self.expansion.e_max || v.time >= self.expansion.steps {
            return None;
        }
        Some(self.index_unchecked(v))
    }

    pub fn node(&self, index: usize) -> ExpandedNode {
        let (levels, steps) = (self.expansion.levels(), self.expansion.steps);
        let li = index / (levels * steps);
        let rem = index % (levels * steps);
        ExpandedNode::new(
            self.transport.locations()[li],
            self.expansion.e_min + (rem / steps) as i32,
            rem % steps,
        )
    }

    pub fn out_arcs(&self, node: usize) -> &[usize] {
        &self.out_arcs[self.out_ptr[node]..self.out_ptr[node + 1]]
    }

    pub fn in_arcs(&self, node: usize) -> &[usize] {
        &self.in_arcs[self.in_ptr[node]..self.in_ptr[node + 1]]
    }

    /// Charging and discharging arcs drawing power at `location` during step `time`.
    pub fn charging_arcs_at(&self, location: u32, time: usize) -> Result<&[usize], GraphError> {
        let li = self
            .transport
            .location_index(location)
            .ok_or(GraphError::UnknownLocation(location))?;
        if time >= self.expansion.steps {
            return Err(GraphError::TimeOutOfRange(time));
        }
        Ok(&self.charging_index[li * self.expansion.steps + time])
    }
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("case has no reference bus")]
    NoSlack,
    #[error("case has more than one reference bus ({0} and {1})")]
    MultipleSlack(u32, u32),
    #[error("bus {0} is declared twice")]
    DuplicateBus(u32),
    #[error("{record} refers to unknown bus {bus}")]
    UnknownBus { record: String, bus: u32 },
    #[error("branch {index} ({from}-{to}) has zero series impedance")]
    ZeroImpedance { index: usize, from: u32, to: u32 },
    #[error("branch {index} ({from}-{to}) connects a bus to itself")]
    SelfLoop { index: usize, from: u32, to: u32 },
    #[error("bus {0} is not connected to the reference bus")]
    Islanded(u32),
    #[error("generator {index} at bus {bus}: {reason}")]
    BadGenerator { index: usize, bus: u32, reason: String },
    #[error("voltage-controlled bus {0} has no generator")]
    AvrWithoutGenerator(u32),
    #[error("non-finite or invalid value in {0}")]
    BadValue(String),
    #[error("expected vectors of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown line index {0}")]
    UnknownLine(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    #[serde(rename = "PQ")]
    Pq,
    #[serde(rename = "PV")]
    Pv,
    #[serde(rename = "REF")]
    Ref,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Base demand, MW and MVAr.
    pub pd: f64,
    pub qd: f64,
    /// Shunt conductance and susceptance, MW and MVAr at 1 pu.
    pub gs: f64,
    pub bs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, pu.
    pub b: f64,
    /// Thermal rating in MVA; zero means unlimited.
    pub rate_a: f64,
    /// Off-nominal turns ratio on the `from` side; zero means 1.
    pub tap: f64,
}

impl Branch {
    pub fn ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }

    /// Series admittance `1 / (r + jx)` as `(g, b)`.
    pub fn series_admittance(&self) -> (f64, f64) {
        let d = self.r * self.r + self.x * self.x;
        (self.r / d, -self.x / d)
    }

    /// `|y|^2` of the series admittance.
    pub fn y_sq(&self) -> f64 {
        1.0 / (self.r * self.r + self.x * self.x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    /// Scheduled output used by the base-case power flow, MW.
    pub pg: f64,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Voltage setpoint, pu.
    pub vg: f64,
    /// `c2 P^2 + c1 P + c0` with `P` in MW, $/h.
    pub cost: [f64; 3],
}

/// Transmission grid with its bus admittance matrix.
///
/// All internal quantities are per unit on `base_mva`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    /// Reactive share of the vehicle charging demand.
    pub alpha_pq: f64,
    pub slack: usize,
    /// Real and imaginary parts of the bus admittance matrix.
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Voltage setpoint of each bus under automatic voltage regulation.
    pub v_set: Vec<Option<f64>>,
}

impl GridCase {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
        alpha_pq: f64,
    ) -> Result<Self, GridError> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(GridError::BadValue("base_mva".into()));
        }
        if !(alpha_pq.is_finite()) {
            return Err(GridError::BadValue("alpha_pq".into()));
        }
        let n = buses.len();
        let mut slack: Option<usize> = None;
        for (i, bus) in buses.iter().enumerate() {
            if buses[..i].iter().any(|b| b.id == bus.id) {
                return Err(GridError::DuplicateBus(bus.id));
            }
            if ![bus.pd, bus.qd, bus.gs, bus.bs].iter().all(|v| v.is_finite()) {
                return Err(GridError::BadValue(format!("bus {}", bus.id)));
            }
            if bus.kind == BusKind::Ref {
                if let Some(s) = slack {
                    return Err(GridError::MultipleSlack(buses[s].id, bus.id));
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or(GridError::NoSlack)?;

        for (k, br) in branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return Err(GridError::BadValue(format!("branch {k} bus index")));
            }
            let (f, t) = (buses[br.from].id, buses[br.to].id);
            if br.from == br.to {
                return Err(GridError::SelfLoop { index: k, from: f, to: t });
            }
            if ![br.r, br.x, br.b, br.rate_a, br.tap].iter().all(|v| v.is_finite())
                || br.rate_a < 0.0
                || br.tap < 0.0
            {
                return Err(GridError::BadValue(format!("branch {k} ({f}-{t})")));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(GridError::ZeroImpedance { index: k, from: f, to: t });
            }
        }

        let mut v_set = vec![None; n];
        for (k, gen) in generators.iter().enumerate() {
            if gen.bus >= n {
                return Err(GridError::BadValue(format!("generator {k} bus index")));
            }
            let bus = buses[gen.bus].id;
            let bad = |reason: &str| GridError::BadGenerator { index: k, bus, reason: reason.into() };
            let vals = [gen.pg, gen.pmin, gen.pmax, gen.qmin, gen.qmax, gen.vg];
            if !vals.iter().chain(&gen.cost).all(|v| v.is_finite()) {
                return Err(bad("non-finite value"));
            }
            if gen.pmin > gen.pmax {
                return Err(bad("pmin exceeds pmax"));
            }
            if gen.qmin > gen.qmax {
                return Err(bad("qmin exceeds qmax"));
            }
            if gen.cost[0] < 0.0 {
                return Err(bad("negative quadratic cost"));
            }
            if gen.vg <= 0.0 {
                return Err(bad("non-positive voltage setpoint"));
            }
            if buses[gen.bus].kind != BusKind::Pq && v_set[gen.bus].is_none() {
                v_set[gen.bus] = Some(gen.vg);
            }
        }
        for (i, bus) in buses.iter().enumerate() {
            if bus.kind != BusKind::Pq && v_set[i].is_none() {
                return Err(GridError::AvrWithoutGenerator(bus.id));
            }
        }

        check_connected(n, slack, &branches).map_err(|i| GridError::Islanded(buses[i].id))?;

        let (g, b) = admittance(base_mva, &buses, &branches);
        Ok(GridCase {
            base_mva,
            buses,
            branches,
            generators,
            alpha_pq,
            slack,
            g,
            b,
            v_set,
        })
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn is_avr(&self, bus: usize) -> bool {
        self.v_set[bus].is_some()
    }

    /// Voltage reference per bus: the setpoint at AVR buses, 1 pu elsewhere.
    pub fn v_ref(&self) -> Vec<f64> {
        self.v_set.iter().map(|v| v.unwrap_or(1.0)).collect()
    }

    /// Thermal limit `I_max` of a line in pu; infinite when unrated.
    pub fn thermal_limit(&self, line: usize) -> f64 {
        let r = self.branches[line].rate_a;
        if r == 0.0 {
            f64::INFINITY
        } else {
            r / self.base_mva
        }
    }

    /// Scheduled generation per bus, pu.
    pub fn scheduled_pg(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.num_buses()];
        for gen in &self.generators {
            p[gen.bus] += gen.pg / self.base_mva;
        }
        p
    }

    pub(crate) fn check_dims(&self, v: &[f64], theta: &[f64]) -> Result<(), GridError> {
        let n = self.num_buses();
        for len in [v.len(), theta.len()] {
            if len != n {
                return Err(GridError::DimensionMismatch { expected: n, got: len });
            }
        }
        Ok(())
    }
}

fn check_connected(n: usize, root: usize, branches: &[Branch]) -> Result<(), usize> {
    let mut adj = vec![Vec::new(); n];
    for br in branches {
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(i),
        None => Ok(()),
    }
}

/// Bus admittance matrix from the pi model of each branch plus bus shunts.
fn admittance(base: f64, buses: &[Bus], branches: &[Branch]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = buses.len();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for br in branches {
        let (gs, bs) = br.series_admittance();
        let tau = br.ratio();
        let (f, t) = (br.from, br.to);
        g[(f, f)] += gs / (tau * tau);
        b[(f, f)] += (bs + br.b / 2.0) / (tau * tau);
        g[(t, t)] += gs;
        b[(t, t)] += bs + br.b / 2.0;
        g[(f, t)] -= gs / tau;
        b[(f, t)] -= bs / tau;
        g[(t, f)] -= gs / tau;
        b[(t, f)] -= bs / tau;
    }
    for (i, bus) in buses.iter().enumerate() {
        g[(i, i)] += bus.gs / base;
        b[(i, i)] += bus.bs / base;
    }
    (g, b)
}

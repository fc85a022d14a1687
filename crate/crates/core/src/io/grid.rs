use serde::{Deserialize, Serialize};

use super::{check_version, IoError};
use crate::powerflow::{Branch, Bus, BusKind, Generator, GridCase, GridError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub format_version: String,
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    #[serde(default = "default_alpha_pq")]
    pub alpha_pq: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub generators: Vec<GeneratorRecord>,
}

fn default_alpha_pq() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: BusKind,
    pub pd: f64,
    pub qd: f64,
    #[serde(default)]
    pub gs: f64,
    #[serde(default)]
    pub bs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub rate_a: f64,
    #[serde(default)]
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub bus: u32,
    #[serde(default)]
    pub pg: f64,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    #[serde(default = "default_vg")]
    pub vg: f64,
    /// `[c2, c1, c0]`
    pub cost: [f64; 3],
}

fn default_vg() -> f64 {
    1.0
}

impl GridFile {
    pub fn into_case(self) -> Result<GridCase, GridError> {
        let index = |id: u32, record: String| {
            self.buses
                .iter()
                .position(|b| b.id == id)
                .ok_or(GridError::UnknownBus { record, bus: id })
        };
        let mut branches = Vec::with_capacity(self.branches.len());
        for (k, r) in self.branches.iter().enumerate() {
            branches.push(Branch {
                from: index(r.from, format!("branch {k}"))?,
                to: index(r.to, format!("branch {k}"))?,
                r: r.r,
                x: r.x,
                b: r.b,
                rate_a: r.rate_a,
                tap: r.tap,
            });
        }
        let mut generators = Vec::with_capacity(self.generators.len());
        for (k, g) in self.generators.iter().enumerate() {
            generators.push(Generator {
                bus: index(g.bus, format!("generator {k}"))?,
                pg: g.pg,
                pmin: g.pmin,
                pmax: g.pmax,
                qmin: g.qmin,
                qmax: g.qmax,
                vg: g.vg,
                cost: g.cost,
            });
        }
        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                kind: b.kind,
                pd: b.pd,
                qd: b.qd,
                gs: b.gs,
                bs: b.bs,
            })
            .collect();
        GridCase::new(self.base_mva, buses, branches, generators, self.alpha_pq)
    }

    pub fn from_case(case: &GridCase, name: &str) -> Self {
        let id = |i: usize| case.buses[i].id;
        GridFile {
            format_version: super::FORMAT_VERSION.into(),
            name: name.into(),
            base_mva: case.base_mva,
            alpha_pq: case.alpha_pq,
            buses: case
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    kind: b.kind,
                    pd: b.pd,
                    qd: b.qd,
                    gs: b.gs,
                    bs: b.bs,
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .map(|b| BranchRecord {
                    from: id(b.from),
                    to: id(b.to),
                    r: b.r,
                    x: b.x,
                    b: b.b,
                    rate_a: b.rate_a,
                    tap: b.tap,
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .map(|g| GeneratorRecord {
                    bus: id(g.bus),
                    pg: g.pg,
                    pmin: g.pmin,
                    pmax: g.pmax,
                    qmin: g.qmin,
                    qmax: g.qmax,
                    vg: g.vg,
                    cost: g.cost,
                })
                .collect(),
        }
    }
}

pub fn parse_grid_case(text: &str, origin: &str) -> Result<GridCase, IoError> {
    let file: GridFile = super::parse_json(text, origin)?;
    check_version(&file.format_version, origin)?;
    file.into_case().map_err(|source| IoError::Grid {
        path: origin.into(),
        source,
    })
}

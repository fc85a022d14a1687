use serde::{Deserialize, Serialize};

use super::{check_version, IoError};
use crate::transport_graph::{Expansion, Road, TransportGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportFile {
    pub format_version: String,
    #[serde(default)]
    pub name: String,
    pub locations: Vec<u32>,
    pub roads: Vec<RoadRecord>,
    /// Locations with charging stations; all locations when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<Vec<u32>>,
    pub energy: EnergyRecord,
    pub horizon: HorizonRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadRecord {
    pub from: u32,
    pub to: u32,
    pub travel_steps: usize,
    pub km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyRecord {
    /// Number of energy levels; levels are `0..levels`.
    pub levels: u32,
    pub step_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonRecord {
    pub steps: usize,
    pub dt_hours: f64,
}

/// A road network with the expansion parameters it is meant to be used with.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSetup {
    pub name: String,
    pub transport: TransportGraph,
    pub expansion: Expansion,
}

impl TransportFile {
    pub fn into_setup(self, origin: &str) -> Result<TransportSetup, IoError> {
        let schema = |message: String| IoError::Schema { path: origin.into(), message };
        if self.energy.levels < 2 {
            return Err(schema(format!("energy.levels must be at least 2, got {}", self.energy.levels)));
        }
        if !(self.energy.step_kwh.is_finite() && self.energy.step_kwh > 0.0) {
            return Err(schema("energy.step_kwh must be positive".into()));
        }
        if self.horizon.steps < 2 {
            return Err(schema(format!("horizon.steps must be at least 2, got {}", self.horizon.steps)));
        }
        if !(self.horizon.dt_hours.is_finite() && self.horizon.dt_hours > 0.0) {
            return Err(schema("horizon.dt_hours must be positive".into()));
        }
        let roads = self
            .roads
            .iter()
            .map(|r| Road { from: r.from, to: r.to, travel_steps: r.travel_steps, km: r.km })
            .collect();
        let transport = TransportGraph::new(self.locations, roads, self.stations)
            .map_err(|source| IoError::Transport { path: origin.into(), source })?;
        Ok(TransportSetup {
            name: self.name,
            transport,
            expansion: Expansion {
                e_min: 0,
                e_max: self.energy.levels as i32 - 1,
                steps: self.horizon.steps,
                energy_step_kwh: self.energy.step_kwh,
                dt_hours: self.horizon.dt_hours,
            },
        })
    }

    pub fn from_setup(setup: &TransportSetup) -> Self {
        let tr = &setup.transport;
        let all = tr.stations().len() == tr.locations().len();
        TransportFile {
            format_version: super::FORMAT_VERSION.into(),
            name: setup.name.clone(),
            locations: tr.locations().to_vec(),
            roads: tr
                .roads()
                .iter()
                .map(|r| RoadRecord { from: r.from, to: r.to, travel_steps: r.travel_steps, km: r.km })
                .collect(),
            stations: if all { None } else { Some(tr.stations().iter().copied().collect()) },
            energy: EnergyRecord {
                levels: setup.expansion.levels() as u32,
                step_kwh: setup.expansion.energy_step_kwh,
            },
            horizon: HorizonRecord {
                steps: setup.expansion.steps,
                dt_hours: setup.expansion.dt_hours,
            },
        }
    }
}

pub fn parse_transport(text: &str, origin: &str) -> Result<TransportSetup, IoError> {
    let file: TransportFile = super::parse_json(text, origin)?;
    check_version(&file.format_version, origin)?;
    file.into_setup(origin)
}

use serde::{Deserialize, Serialize};

use super::{check_version, IoError};
use crate::fleet::{FleetSpec, TravelCriteria};
use crate::transport_graph::{ExpandedNode, Expansion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetFile {
    pub format_version: String,
    pub fleets: Vec<FleetRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetRecord {
    pub id: String,
    pub size: f64,
    pub inject: Vec<CriterionRecord>,
    pub withdraw: Vec<CriterionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionRecord {
    pub bus: u32,
    pub soc_percent: f64,
    pub hour: f64,
    pub count: f64,
}

/// Energy level nearest to `soc_percent` of a full battery; ties round up.
pub fn soc_to_level(soc_percent: f64, expansion: &Expansion) -> i32 {
    let span = (expansion.e_max - expansion.e_min) as f64;
    expansion.e_min + (soc_percent / 100.0 * span + 0.5).floor() as i32
}

/// Time step nearest to `hour`; ties round up.
pub fn hour_to_step(hour: f64, expansion: &Expansion) -> i64 {
    (hour / expansion.dt_hours + 0.5).floor() as i64
}

pub fn level_to_soc(level: i32, expansion: &Expansion) -> f64 {
    100.0 * (level - expansion.e_min) as f64 / (expansion.e_max - expansion.e_min) as f64
}

impl FleetFile {
    pub fn into_specs(self, expansion: &Expansion, origin: &str) -> Result<Vec<FleetSpec>, IoError> {
        let schema = |message: String| IoError::Schema { path: origin.into(), message };
        let mut ids = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.fleets.len());
        for rec in self.fleets {
            if !ids.insert(rec.id.clone()) {
                return Err(schema(format!("fleet id {:?} appears twice", rec.id)));
            }
            let mut criteria = TravelCriteria::default();
            for (list, target) in [(&rec.inject, &mut criteria.injections), (&rec.withdraw, &mut criteria.withdrawals)] {
                for c in list {
                    if !(0.0..=100.0).contains(&c.soc_percent) {
                        return Err(schema(format!("fleet {}: soc_percent {} outside [0, 100]", rec.id, c.soc_percent)));
                    }
                    if !c.hour.is_finite() || c.hour < 0.0 {
                        return Err(schema(format!("fleet {}: invalid hour {}", rec.id, c.hour)));
                    }
                    let t = hour_to_step(c.hour, expansion);
                    if t >= expansion.steps as i64 {
                        return Err(schema(format!("fleet {}: hour {} is beyond the horizon", rec.id, c.hour)));
                    }
                    let node = ExpandedNode::new(c.bus, soc_to_level(c.soc_percent, expansion), t as usize);
                    *target.entry(node).or_insert(0.0) += c.count;
                }
            }
            let spec = FleetSpec::new(rec.id, rec.size, criteria)
                .map_err(|source| IoError::Fleet { path: origin.into(), source })?;
            out.push(spec);
        }
        Ok(out)
    }

    pub fn from_specs(specs: &[FleetSpec], expansion: &Expansion) -> Self {
        let records = |m: &std::collections::BTreeMap<ExpandedNode, f64>| {
            m.iter()
                .map(|(n, &count)| CriterionRecord {
                    bus: n.location,
                    soc_percent: level_to_soc(n.energy, expansion),
                    hour: n.time as f64 * expansion.dt_hours,
                    count,
                })
                .collect()
        };
        FleetFile {
            format_version: super::FORMAT_VERSION.into(),
            fleets: specs
                .iter()
                .map(|s| FleetRecord {
                    id: s.id.clone(),
                    size: s.size,
                    inject: records(&s.criteria.injections),
                    withdraw: records(&s.criteria.withdrawals),
                })
                .collect(),
        }
    }
}

pub fn parse_fleets(text: &str, expansion: &Expansion, origin: &str) -> Result<Vec<FleetSpec>, IoError> {
    let file: FleetFile = super::parse_json(text, origin)?;
    check_version(&file.format_version, origin)?;
    file.into_specs(expansion, origin)
}

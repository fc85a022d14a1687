use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    check_version, digest_json, FleetFile, GridFile, IoError, ResultsBundle, RouteRecord, RunMetadata, RunMode, TransportFile,
    TransportSetup,
};
use crate::coopt::{solve_scenario, CoOptConfig, CoOptError, FleetMode, PenaltyKind, PenaltySpec};
use crate::fleet::{baseline_schedule, sample_fleets, FleetSpec, SamplerConfig, TravelCriteria};
use crate::powerflow::GridCase;
use crate::transport_graph::{build_expanded_graph, ExpandedGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: String,
    #[serde(default)]
    pub name: String,
    /// Paths are relative to the scenario file.
    pub grid: String,
    pub transport: String,
    /// Fleet file; exclusive with `sampler`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleets: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub seed: u64,
    pub penalty: PenaltyRecord,
    #[serde(default = "one")]
    pub cost_weight: f64,
    #[serde(default)]
    pub flags: FlagsRecord,
    #[serde(default)]
    pub station_limits: Vec<StationLimitRecord>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyRecord {
    pub kind: PenaltyKind,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_l: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsRecord {
    #[serde(default)]
    pub enable_v2g: bool,
    #[serde(default)]
    pub relinearize_per_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationLimitRecord {
    pub bus: u32,
    pub min_mw: f64,
    pub max_mw: f64,
}

/// A scenario with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub case: GridCase,
    pub setup: TransportSetup,
    pub graph: ExpandedGraph,
    pub fleets: Vec<FleetSpec>,
    pub penalty: PenaltyRecord,
    pub cost_weight: f64,
    pub flags: FlagsRecord,
    pub station_limits: BTreeMap<u32, (f64, f64)>,
    pub seed: u64,
}

/// Canonical form of a loaded scenario, hashed for its digest.
#[derive(Serialize)]
struct Canonical<'a> {
    grid: GridFile,
    transport: TransportFile,
    fleets: FleetFile,
    penalty_weight: f64,
    top_l: Option<usize>,
    cost_weight: f64,
    flags: &'a FlagsRecord,
    station_limits: &'a BTreeMap<u32, (f64, f64)>,
}

impl Scenario {
    /// Digest of everything that shapes the feasible set and objective
    /// except the penalty kind, so runs that differ only in kind or mode
    /// are comparable.
    pub fn digest(&self) -> String {
        digest_json(&Canonical {
            grid: GridFile::from_case(&self.case, ""),
            transport: TransportFile::from_setup(&self.setup),
            fleets: FleetFile::from_specs(&self.fleets, &self.setup.expansion),
            penalty_weight: self.penalty.weight,
            top_l: self.penalty.top_l,
            cost_weight: self.cost_weight,
            flags: &self.flags,
            station_limits: &self.station_limits,
        })
    }

    pub fn config(&self, kind: PenaltyKind) -> Result<CoOptConfig, CoOptError> {
        let penalty = PenaltySpec::new(&self.case, kind, self.penalty.weight, self.penalty.top_l)?;
        let mut cfg = CoOptConfig::new(penalty);
        cfg.cost_weight = self.cost_weight;
        cfg.enable_v2g = self.flags.enable_v2g;
        cfg.relinearize_per_step = self.flags.relinearize_per_step;
        cfg.station_limits = self.station_limits.clone();
        Ok(cfg)
    }

    /// Solves the scenario. Baseline mode routes fleets grid-agnostically and
    /// dispatches the grid around the resulting load.
    pub fn run(&self, mode: RunMode, kind: PenaltyKind) -> Result<ResultsBundle, CoOptError> {
        let cfg = self.config(kind)?;
        let mut routes = Vec::new();
        let schedule = match mode {
            RunMode::Coopt => solve_scenario(&self.case, &self.graph, &self.fleets, &cfg, FleetMode::Optimize)?,
            RunMode::Baseline => {
                let baseline = baseline_schedule(&self.graph, &self.fleets)?;
                for (fleet, its) in self.fleets.iter().zip(&baseline.itineraries) {
                    for (vehicles, it) in its {
                        routes.push(RouteRecord {
                            fleet: fleet.id.clone(),
                            vehicles: *vehicles,
                            buses: it.route.clone(),
                            distance_km: it.distance_km,
                        });
                    }
                }
                solve_scenario(&self.case, &self.graph, &self.fleets, &cfg, FleetMode::Fixed(&baseline.flows))?
            }
        };
        let scenario_digest = self.digest();
        let meta = RunMetadata {
            scenario: self.name.clone(),
            config_digest: digest_json(&(&scenario_digest, mode, kind)),
            scenario_digest,
            mode,
            penalty: kind,
            penalty_weight: self.penalty.weight,
            cost_weight: self.cost_weight,
            seed: self.seed,
            fleet_sizes: self.fleets.iter().map(|f| f.size).collect(),
            dt_hours: self.setup.expansion.dt_hours,
            steps: self.setup.expansion.steps,
        };
        let mut bundle = ResultsBundle::from_schedule(meta, &self.case, &self.graph, &schedule);
        bundle.summary.routes = routes;
        Ok(bundle)
    }

    /// Sets every fleet to `size` vehicles, scaling its travel criteria.
    pub fn resize_fleets(&mut self, size: f64) -> Result<(), IoError> {
        let mut out = Vec::with_capacity(self.fleets.len());
        for f in &self.fleets {
            let k = if f.size > 0.0 { size / f.size } else { 0.0 };
            let scale = |m: &BTreeMap<_, f64>| m.iter().map(|(n, c)| (*n, c * k)).collect();
            let criteria = TravelCriteria {
                injections: scale(&f.criteria.injections),
                withdrawals: scale(&f.criteria.withdrawals),
            };
            let spec = FleetSpec::new(f.id.clone(), size, criteria)
                .map_err(|source| IoError::Fleet { path: self.name.clone(), source })?;
            out.push(spec);
        }
        self.fleets = out;
        Ok(())
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(rel)
}

/// Loads a scenario and everything it references. A `seed` overrides the
/// file's sampler seed.
pub fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, IoError> {
    let origin = path.display().to_string();
    let file: ScenarioFile = super::parse_json(&super::read_text(path)?, &origin)?;
    check_version(&file.format_version, &origin)?;
    let schema = |message: String| IoError::Schema { path: origin.clone(), message };

    if !(file.penalty.weight.is_finite() && file.penalty.weight >= 0.0) {
        return Err(schema(format!("penalty.weight must be non-negative, got {}", file.penalty.weight)));
    }
    if !(file.cost_weight.is_finite() && file.cost_weight >= 0.0) {
        return Err(schema(format!("cost_weight must be non-negative, got {}", file.cost_weight)));
    }
    let mut station_limits = BTreeMap::new();
    for s in &file.station_limits {
        if !(s.min_mw.is_finite() && s.max_mw.is_finite() && s.min_mw <= s.max_mw) {
            return Err(schema(format!("station limit at bus {} is not an interval", s.bus)));
        }
        if station_limits.insert(s.bus, (s.min_mw, s.max_mw)).is_some() {
            return Err(schema(format!("station limit for bus {} appears twice", s.bus)));
        }
    }

    let case = super::load_grid_case(&resolve(path, &file.grid))?;
    let setup = super::load_transport(&resolve(path, &file.transport))?;
    let graph = build_expanded_graph(&setup.transport, setup.expansion)
        .map_err(|source| IoError::Transport { path: file.transport.clone(), source })?;
    let seed = seed.unwrap_or(file.seed);
    let fleets = match (&file.fleets, &file.sampler) {
        (Some(f), None) => super::load_fleets(&resolve(path, f), &setup.expansion)?,
        (None, Some(cfg)) => {
            sample_fleets(&graph, cfg, seed).map_err(|source| IoError::Fleet { path: origin.clone(), source })?
        }
        _ => return Err(schema("exactly one of `fleets` and `sampler` is required".into())),
    };
    for f in &fleets {
        f.check_nodes(&graph)
            .map_err(|source| IoError::Fleet { path: origin.clone(), source })?;
    }

    Ok(Scenario {
        name: if file.name.is_empty() { origin.clone() } else { file.name },
        case,
        setup,
        graph,
        fleets,
        penalty: file.penalty,
        cost_weight: file.cost_weight,
        flags: file.flags,
        station_limits,
        seed,
    })
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{level_to_soc, IoError};
use crate::coopt::{BandReport, ObjectiveBreakdown, PenaltyKind, Schedule};
use crate::powerflow::GridCase;
use crate::qp::{Residuals, Status};
use crate::transport_graph::ExpandedGraph;

pub const VOLTAGES_CSV: &str = "voltages.csv";
pub const CONGESTION_CSV: &str = "congestion.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PLOT_DATA_CSV: &str = "plot_data.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Baseline,
    Coopt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub scenario: String,
    pub scenario_digest: String,
    /// Scenario digest combined with mode and penalty kind.
    pub config_digest: String,
    pub mode: RunMode,
    pub penalty: PenaltyKind,
    pub penalty_weight: f64,
    pub cost_weight: f64,
    pub seed: u64,
    pub fleet_sizes: Vec<f64>,
    pub dt_hours: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageRow {
    pub bus: u32,
    pub hour: f64,
    /// Nonlinear power flow at the solved dispatch; empty when it diverged.
    pub v_pu: Option<f64>,
    pub linear_v_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionRow {
    pub bus: u32,
    pub hour: f64,
    pub vehicles_charging: f64,
    pub x_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub fleet: String,
    pub bus: u32,
    pub soc_percent: f64,
    pub hour: f64,
    pub vehicles: f64,
}

/// A baseline itinerary shared by `vehicles` vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub fleet: String,
    pub vehicles: f64,
    pub buses: Vec<u32>,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationCongestion {
    pub bus: u32,
    pub peak_vehicles: f64,
    /// First hour at which the peak occurs.
    pub peak_hour: f64,
    /// Vehicles charging summed over steps.
    pub vehicle_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: Status,
    pub iterations: usize,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: String,
    pub meta: RunMetadata,
    pub objective: ObjectiveBreakdown,
    pub linear_band: BandReport,
    pub nonlinear_band: BandReport,
    pub nonlinear_failures: usize,
    pub solver: SolverSummary,
    pub arrivals: Vec<ArrivalRecord>,
    /// Baseline mode only.
    pub routes: Vec<RouteRecord>,
    pub stations: Vec<StationCongestion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsBundle {
    pub summary: Summary,
    pub voltages: Vec<VoltageRow>,
    pub congestion: Vec<CongestionRow>,
}

impl ResultsBundle {
    pub fn from_schedule(meta: RunMetadata, case: &GridCase, g: &ExpandedGraph, s: &Schedule) -> Self {
        let dt = g.expansion.dt_hours;
        let mut voltages = Vec::with_capacity(case.num_buses() * s.steps.len());
        for (i, bus) in case.buses.iter().enumerate() {
            for (t, step) in s.steps.iter().enumerate() {
                voltages.push(VoltageRow {
                    bus: bus.id,
                    hour: t as f64 * dt,
                    v_pu: step.v_nonlinear.as_ref().map(|v| v[i]),
                    linear_v_pu: step.v_linear[i],
                });
            }
        }

        let mut congestion = Vec::new();
        let mut stations = Vec::new();
        for &loc in g.transport.stations() {
            let i = case.bus_index(loc).expect("station is a bus");
            let mut peak = StationCongestion { bus: loc, peak_vehicles: 0.0, peak_hour: 0.0, vehicle_steps: 0.0 };
            for (t, step) in s.steps.iter().enumerate() {
                let n = s.congestion[t][i];
                congestion.push(CongestionRow { bus: loc, hour: t as f64 * dt, vehicles_charging: n, x_mw: step.x_mw[i] });
                if n > peak.peak_vehicles {
                    peak.peak_vehicles = n;
                    peak.peak_hour = t as f64 * dt;
                }
                peak.vehicle_steps += n;
            }
            stations.push(peak);
        }

        let arrivals = s
            .departures
            .iter()
            .map(|d| ArrivalRecord {
                fleet: d.fleet.clone(),
                bus: d.bus,
                soc_percent: level_to_soc(d.energy, &g.expansion),
                hour: d.step as f64 * dt,
                vehicles: d.vehicles,
            })
            .collect();

        let summary = Summary {
            format_version: super::FORMAT_VERSION.into(),
            meta,
            objective: s.objective.clone(),
            linear_band: s.linear_band.clone(),
            nonlinear_band: s.nonlinear_band.clone(),
            nonlinear_failures: s.nonlinear_failures,
            solver: SolverSummary { status: s.status, iterations: s.iterations, residuals: s.residuals.clone() },
            arrivals,
            routes: Vec::new(),
            stations,
        };
        ResultsBundle { summary, voltages, congestion }
    }
}

/// `x` rounded to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Shortest decimal form of `x` at 12 significant digits.
pub fn format_number(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64 number"));
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float at 12 significant digits.
pub fn to_json_text<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable");
    round_value(&mut v);
    let mut text = serde_json::to_string_pretty(&v).expect("serializable");
    text.push('\n');
    text
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::Schema { path: path.display().to_string(), message: e.to_string() }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the bundle into `dir`, creating it if needed. `plot_data` adds a
/// long-format table of every per-bus series.
pub fn write_results(bundle: &ResultsBundle, dir: &Path, plot_data: bool) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let f = format_number;
    write_csv(
        &dir.join(VOLTAGES_CSV),
        &["bus", "hour", "v_pu", "linear_v_pu"],
        bundle.voltages.iter().map(|r| {
            vec![r.bus.to_string(), f(r.hour), r.v_pu.map(f).unwrap_or_default(), f(r.linear_v_pu)]
        }),
    )?;
    write_csv(
        &dir.join(CONGESTION_CSV),
        &["bus", "hour", "vehicles_charging", "x_mw"],
        bundle
            .congestion
            .iter()
            .map(|r| vec![r.bus.to_string(), f(r.hour), f(r.vehicles_charging), f(r.x_mw)]),
    )?;
    let path = dir.join(SUMMARY_JSON);
    std::fs::write(&path, to_json_text(&bundle.summary)).map_err(io_err(&path))?;
    if plot_data {
        write_csv(&dir.join(PLOT_DATA_CSV), &["series", "bus", "hour", "value"], plot_rows(bundle).into_iter())?;
    }
    Ok(())
}

fn plot_rows(bundle: &ResultsBundle) -> Vec<Vec<String>> {
    let f = format_number;
    let mut rows = Vec::new();
    for r in &bundle.voltages {
        if let Some(v) = r.v_pu {
            rows.push(vec!["v_pu".into(), r.bus.to_string(), f(r.hour), f(v)]);
        }
        rows.push(vec!["linear_v_pu".into(), r.bus.to_string(), f(r.hour), f(r.linear_v_pu)]);
    }
    for r in &bundle.congestion {
        rows.push(vec!["vehicles_charging".into(), r.bus.to_string(), f(r.hour), f(r.vehicles_charging)]);
        rows.push(vec!["x_mw".into(), r.bus.to_string(), f(r.hour), f(r.x_mw)]);
    }
    rows
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

/// Reads a bundle written by [`write_results`].
pub fn read_results(dir: &Path) -> Result<ResultsBundle, IoError> {
    let path = dir.join(SUMMARY_JSON);
    let origin = path.display().to_string();
    let summary: Summary = super::parse_json(&super::read_text(&path)?, &origin)?;
    super::check_version(&summary.format_version, &origin)?;
    Ok(ResultsBundle {
        summary,
        voltages: read_csv(&dir.join(VOLTAGES_CSV))?,
        congestion: read_csv(&dir.join(CONGESTION_CSV))?,
    })
}

/// SHA-256 of every regular file in `dir`, keyed by file name.
pub fn file_digests(dir: &Path) -> Result<BTreeMap<String, String>, IoError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_file() {
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            out.insert(entry.file_name().to_string_lossy().into_owned(), super::digest_bytes(&bytes));
        }
    }
    Ok(out)
}

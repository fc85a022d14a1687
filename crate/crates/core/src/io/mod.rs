//! File formats and result bundles.
//!
//! Inputs are JSON documents carrying `format_version: "1"`. Unknown fields
//! are rejected.

mod fleet;
mod grid;
mod qp;
mod results;
mod scenario;
mod transport;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use fleet::{hour_to_step, level_to_soc, parse_fleets, soc_to_level, CriterionRecord, FleetFile, FleetRecord};
pub use grid::{parse_grid_case, BranchRecord, BusRecord, GeneratorRecord, GridFile};
pub use qp::{parse_qp, QpFile, RowRecord};
pub use results::{
    file_digests, format_number, read_results, round_sig, to_json_text, write_results, ArrivalRecord, CongestionRow,
    ResultsBundle, RouteRecord, RunMetadata, RunMode, SolverSummary, StationCongestion, Summary, VoltageRow, CONGESTION_CSV,
    PLOT_DATA_CSV, SUMMARY_JSON, VOLTAGES_CSV,
};
pub use scenario::{load_scenario, FlagsRecord, PenaltyRecord, Scenario, ScenarioFile, StationLimitRecord};
pub use transport::{parse_transport, EnergyRecord, HorizonRecord, RoadRecord, TransportFile, TransportSetup};

use crate::fleet::FleetError;
use crate::powerflow::{GridCase, GridError};
use crate::transport_graph::{Expansion, GraphError};
use crate::fleet::FleetSpec;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema error: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: unsupported format_version {found:?} (expected \"1\")")]
    Version { path: String, found: String },
    #[error("{path}: {source}")]
    Grid {
        path: String,
        #[source]
        source: GridError,
    },
    #[error("{path}: {source}")]
    Transport {
        path: String,
        #[source]
        source: GraphError,
    },
    #[error("{path}: {source}")]
    Fleet {
        path: String,
        #[source]
        source: FleetError,
    },
}

pub(crate) fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Schema {
        path: origin.into(),
        message: e.to_string(),
    })
}

pub(crate) fn check_version(found: &str, origin: &str) -> Result<(), IoError> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(IoError::Version {
            path: origin.into(),
            found: found.into(),
        })
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_grid_case(path: &Path) -> Result<GridCase, IoError> {
    parse_grid_case(&read_text(path)?, &path.display().to_string())
}

pub fn load_transport(path: &Path) -> Result<TransportSetup, IoError> {
    parse_transport(&read_text(path)?, &path.display().to_string())
}

pub fn load_qp(path: &Path) -> Result<crate::qp::QuadraticProgram, IoError> {
    parse_qp(&read_text(path)?, &path.display().to_string())
}

pub fn load_fleets(path: &Path, expansion: &Expansion) -> Result<Vec<FleetSpec>, IoError> {
    parse_fleets(&read_text(path)?, expansion, &path.display().to_string())
}

/// Hex SHA-256 of `bytes`.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    digest_bytes(&serde_json::to_vec(value).expect("serializable"))
}

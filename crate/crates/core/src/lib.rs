pub mod io;
pub mod powerflow;
pub mod qp;
pub mod coopt;
pub mod fleet;
pub mod transport_graph;

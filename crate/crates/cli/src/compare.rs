use std::collections::BTreeMap;
use std::path::Path;

use hdev_core::io::{format_number, read_results, ResultsBundle};

use crate::Failure;

/// One line of a comparison: a metric of run `a`, of run `b`, and `b - a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

impl Row {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

/// Metrics compared between two bundles of the same scenario.
pub fn comparison(a: &ResultsBundle, b: &ResultsBundle) -> Result<Vec<Row>, Failure> {
    let (sa, sb) = (&a.summary, &b.summary);
    if sa.meta.scenario_digest != sb.meta.scenario_digest {
        return Err(Failure::Input(format!(
            "ScenarioMismatch: bundles come from different scenarios ({} vs {})",
            sa.meta.scenario_digest, sb.meta.scenario_digest
        )));
    }
    let mut rows = Vec::new();
    let mut push = |metric: &str, a: f64, b: f64| rows.push(Row { metric: metric.into(), a, b });
    push("violations", sa.linear_band.violations as f64, sb.linear_band.violations as f64);
    push("nonlinear-violations", sa.nonlinear_band.violations as f64, sb.nonlinear_band.violations as f64);
    push(
        "buses-with-violation",
        sa.linear_band.buses_with_violation as f64,
        sb.linear_band.buses_with_violation as f64,
    );
    push("worst-bus-deviation", sa.linear_band.max_deviation, sb.linear_band.max_deviation);
    push("worst-bus", sa.linear_band.worst_bus as f64, sb.linear_band.worst_bus as f64);
    push("l1-deviation-sum", sa.linear_band.l1, sb.linear_band.l1);
    push("linf-deviation-sum", sa.linear_band.linf, sb.linear_band.linf);
    push("generation-cost", sa.objective.generation_cost, sb.objective.generation_cost);
    push("penalty", sa.objective.penalty, sb.objective.penalty);
    push("objective", sa.objective.total, sb.objective.total);

    let peaks = |s: &hdev_core::io::Summary| -> BTreeMap<u32, f64> {
        s.stations.iter().map(|st| (st.bus, st.peak_vehicles)).collect()
    };
    let (pa, pb) = (peaks(sa), peaks(sb));
    let max = |m: &BTreeMap<u32, f64>| m.values().fold(0.0_f64, |x, &y| x.max(y));
    push("peak-congestion", max(&pa), max(&pb));
    let buses: std::collections::BTreeSet<u32> = pa.keys().chain(pb.keys()).copied().collect();
    for bus in buses {
        let get = |m: &BTreeMap<u32, f64>| m.get(&bus).copied().unwrap_or(0.0);
        push(&format!("peak-congestion-bus-{bus}"), get(&pa), get(&pb));
    }
    Ok(rows)
}

pub fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let ba = read_results(a)?;
    let bb = read_results(b)?;
    let rows = comparison(&ba, &bb)?;
    let label = |r: &ResultsBundle| format!("{}-{}", mode_name(r), r.summary.meta.penalty.name());
    println!("{:<28} {:>16} {:>16} {:>16}", "metric", label(&ba), label(&bb), "delta");
    for r in &rows {
        println!(
            "{:<28} {:>16} {:>16} {:>16}",
            r.metric,
            format_number(r.a),
            format_number(r.b),
            format_number(r.delta())
        );
    }
    if let Some(path) = out {
        let mut text = String::from("metric,a,b,delta\n");
        for r in &rows {
            text += &format!("{},{},{},{}\n", r.metric, format_number(r.a), format_number(r.b), format_number(r.delta()));
        }
        std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn mode_name(r: &ResultsBundle) -> &'static str {
    match r.summary.meta.mode {
        hdev_core::io::RunMode::Baseline => "baseline",
        hdev_core::io::RunMode::Coopt => "coopt",
    }
}

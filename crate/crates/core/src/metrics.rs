//! Decision-step time series and end-of-run summary statistics: average
//! vehicle delay, maximum vehicle/queue/spillover counts, and the CV/NV
//! fairness split.

use serde::Serialize;

use crate::sim::CompletedVehicle;

/// One row per decision step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepRow {
    pub t: f64,
    pub total_vehicles: usize,
    pub total_queued: usize,
    pub total_spillover: usize,
    pub v_lyapunov: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsSeries {
    pub rows: Vec<StepRow>,
    pub completed: Vec<CompletedVehicle>,
    /// Vehicles still on the network or in a backlog at the horizon.
    pub incomplete: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub avg_delay_s: Option<f64>,
    pub max_vehicles: usize,
    pub max_queue: usize,
    pub max_spillover: usize,
    pub avg_cv_delay_s: Option<f64>,
    pub avg_nv_delay_s: Option<f64>,
    pub completed_vehicles: usize,
    pub incomplete_vehicles: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

/// Summary over completed vehicles only; incomplete vehicles are counted but
/// never enter the delay averages.
pub fn summarize(series: &MetricsSeries) -> Summary {
    Summary {
        avg_delay_s: mean(series.completed.iter().map(|c| c.delay_s)),
        max_vehicles: series.rows.iter().map(|r| r.total_vehicles).max().unwrap_or(0),
        max_queue: series.rows.iter().map(|r| r.total_queued).max().unwrap_or(0),
        max_spillover: series
            .rows
            .iter()
            .map(|r| r.total_spillover)
            .max()
            .unwrap_or(0),
        avg_cv_delay_s: mean(
            series
                .completed
                .iter()
                .filter(|c| c.is_cv)
                .map(|c| c.delay_s),
        ),
        avg_nv_delay_s: mean(
            series
                .completed
                .iter()
                .filter(|c| !c.is_cv)
                .map(|c| c.delay_s),
        ),
        completed_vehicles: series.completed.len(),
        incomplete_vehicles: series.incomplete,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessReport {
    pub avg_cv_delay_s: Option<f64>,
    pub avg_nv_delay_s: Option<f64>,
    /// NV minus CV; defined only when both classes completed vehicles.
    pub gap_s: Option<f64>,
}

pub fn fairness_report(completed: &[CompletedVehicle]) -> FairnessReport {
    let cv = mean(completed.iter().filter(|c| c.is_cv).map(|c| c.delay_s));
    let nv = mean(completed.iter().filter(|c| !c.is_cv).map(|c| c.delay_s));
    let gap = match (cv, nv) {
        (Some(c), Some(n)) => Some(n - c),
        _ => None,
    };
    FairnessReport {
        avg_cv_delay_s: cv,
        avg_nv_delay_s: nv,
        gap_s: gap,
    }
}

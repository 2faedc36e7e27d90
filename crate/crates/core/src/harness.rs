//! Run execution and file emission: single runs with step CSV, summary JSON
//! and optional event log; Cartesian sweeps over controllers, penetration
//! rates and seeds with per-cell fault isolation and aggregate statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::controller::run_policy;
use crate::metrics::{summarize, MetricsSeries, Summary};
use crate::network::build_network;
use crate::scenario::{ControllerKind, Scenario};
use crate::stability::{check_admissible, routed_demand, NecessaryConditionEvent};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilitySummary {
    pub feasible: bool,
    pub epsilon: f64,
}

/// End-of-run record serialized as the summary JSON.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub avg_delay_s: Option<f64>,
    pub max_vehicles: usize,
    pub max_queue: usize,
    pub max_spillover: usize,
    pub avg_cv_delay_s: Option<f64>,
    pub avg_nv_delay_s: Option<f64>,
    pub completed_vehicles: usize,
    pub incomplete_vehicles: u64,
    pub admissibility: AdmissibilitySummary,
    pub nc_events: Vec<NecessaryConditionEvent>,
}

pub struct RunArtifacts {
    pub summary: RunSummary,
    pub series: MetricsSeries,
    pub steps_path: PathBuf,
    pub summary_path: PathBuf,
    pub events_path: Option<PathBuf>,
}

/// Render the decision-step series as CSV text. Formatting is fixed so equal
/// runs are byte-identical.
pub fn steps_csv(series: &MetricsSeries) -> String {
    let mut out = String::from("t,total_vehicles,total_queued,total_spillover,V_lyapunov\n");
    for row in &series.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6}",
            row.t, row.total_vehicles, row.total_queued, row.total_spillover, row.v_lyapunov
        );
    }
    out
}

fn artifact_stem(scenario_stem: &str, scenario: &Scenario) -> String {
    format!(
        "{scenario_stem}_{}_{}",
        scenario.controller.kind.as_str(),
        scenario.sim.seed
    )
}

/// Execute one scenario and write `<stem>_<controller>_<seed>_steps.csv`,
/// `..._summary.json` and optionally `..._events.log` under `out_dir`.
pub fn run_scenario(
    scenario: &Scenario,
    scenario_stem: &str,
    out_dir: &Path,
    log_events: bool,
) -> Result<RunArtifacts> {
    scenario.validate_basic()?;
    let network = build_network(scenario)?;
    let out = run_policy(scenario, &network, log_events)?;

    let lambda = routed_demand(&network, scenario);
    let admissibility = check_admissible(&network, &lambda)?;
    let metrics = summarize(&out.series);

    let summary = RunSummary {
        scenario: scenario_stem.to_string(),
        controller: scenario.controller.kind.as_str().to_string(),
        seed: scenario.sim.seed,
        avg_delay_s: metrics.avg_delay_s,
        max_vehicles: metrics.max_vehicles,
        max_queue: metrics.max_queue,
        max_spillover: metrics.max_spillover,
        avg_cv_delay_s: metrics.avg_cv_delay_s,
        avg_nv_delay_s: metrics.avg_nv_delay_s,
        completed_vehicles: metrics.completed_vehicles,
        incomplete_vehicles: metrics.incomplete_vehicles,
        admissibility: AdmissibilitySummary {
            feasible: admissibility.feasible,
            epsilon: admissibility.epsilon,
        },
        nc_events: out.nc_events,
    };

    fs::create_dir_all(out_dir)?;
    let stem = artifact_stem(scenario_stem, scenario);
    let steps_path = out_dir.join(format!("{stem}_steps.csv"));
    fs::write(&steps_path, steps_csv(&out.series))?;
    let summary_path = out_dir.join(format!("{stem}_summary.json"));
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let events_path = if log_events {
        let path = out_dir.join(format!("{stem}_events.log"));
        let lines = out.state.event_log.as_deref().unwrap_or(&[]);
        fs::write(&path, lines.join("\n") + "\n")?;
        Some(path)
    } else {
        None
    };

    Ok(RunArtifacts {
        summary,
        series: out.series,
        steps_path,
        summary_path,
        events_path,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub controller: String,
    pub penetration: f64,
    pub seed: u64,
    /// "ok" or the error text; failures never abort the sweep.
    pub status: String,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepAggregate {
    pub controller: String,
    pub penetration: f64,
    pub runs: usize,
    pub avg_delay_mean: Option<f64>,
    pub avg_delay_std: Option<f64>,
    pub max_spillover_mean: Option<f64>,
    pub max_spillover_std: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub aggregates: Vec<SweepAggregate>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (Some(mean), Some(var.sqrt()))
}

/// Cartesian product of controllers × homogeneous penetration values × seeds.
/// Per-OD penetration overrides in the base scenario take precedence over the
/// swept default, so heterogeneous setups can pin specific ODs. Cells run in
/// parallel; each writes its artifacts under `out_dir/xi_<penetration>/`.
pub fn sweep(
    scenario: &Scenario,
    scenario_stem: &str,
    controllers: &[ControllerKind],
    penetrations: &[f64],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<SweepResult> {
    if controllers.is_empty() || penetrations.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidScenario(
            "sweep requires at least one controller, penetration and seed".into(),
        ));
    }
    let mut todo = Vec::new();
    for &controller in controllers {
        for &penetration in penetrations {
            for &seed in seeds {
                todo.push((controller, penetration, seed));
            }
        }
    }
    let cells: Vec<SweepCell> = todo
        .par_iter()
        .map(|&(controller, penetration, seed)| {
            let mut cell_scenario = scenario.clone();
            cell_scenario.controller.kind = controller;
            cell_scenario.penetration.default = penetration;
            cell_scenario.sim.seed = seed;
            let cell_dir = out_dir.join(format!("xi_{penetration}"));
            match run_scenario(&cell_scenario, scenario_stem, &cell_dir, false) {
                Ok(artifacts) => SweepCell {
                    controller: controller.as_str().to_string(),
                    penetration,
                    seed,
                    status: "ok".to_string(),
                    summary: Some(summarize(&artifacts.series)),
                },
                Err(e) => SweepCell {
                    controller: controller.as_str().to_string(),
                    penetration,
                    seed,
                    status: e.to_string(),
                    summary: None,
                },
            }
        })
        .collect();

    let mut aggregates = Vec::new();
    for &controller in controllers {
        for &penetration in penetrations {
            let done: Vec<&Summary> = cells
                .iter()
                .filter(|c| {
                    c.controller == controller.as_str()
                        && c.penetration == penetration
                        && c.summary.is_some()
                })
                .map(|c| c.summary.as_ref().unwrap())
                .collect();
            let delays: Vec<f64> = done.iter().filter_map(|s| s.avg_delay_s).collect();
            let spills: Vec<f64> = done.iter().map(|s| s.max_spillover as f64).collect();
            let (dm, ds) = mean_std(&delays);
            let (sm, ss) = mean_std(&spills);
            aggregates.push(SweepAggregate {
                controller: controller.as_str().to_string(),
                penetration,
                runs: done.len(),
                avg_delay_mean: dm,
                avg_delay_std: ds,
                max_spillover_mean: sm,
                max_spillover_std: ss,
            });
        }
    }

    let result = SweepResult { cells, aggregates };
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("sweep_results.json"),
        serde_json::to_string_pretty(&result)? + "\n",
    )?;
    let mut csv = String::from(
        "controller,penetration,seed,status,avg_delay_s,max_vehicles,max_queue,max_spillover\n",
    );
    for cell in &result.cells {
        let (delay, maxv, maxq, maxs) = match &cell.summary {
            Some(s) => (
                s.avg_delay_s.map(|d| format!("{d:.3}")).unwrap_or_default(),
                s.max_vehicles.to_string(),
                s.max_queue.to_string(),
                s.max_spillover.to_string(),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            cell.controller, cell.penetration, cell.seed, cell.status, delay, maxv, maxq, maxs
        );
    }
    fs::write(out_dir.join("sweep_results.csv"), csv)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scenario() -> Scenario {
        Scenario::from_str(
            r#"{
            "links": [
                {"id": "src", "is_source": true},
                {"id": "A", "length_m": 400.0},
                {"id": "B", "length_m": 400.0},
                {"id": "out", "is_sink": true}
            ],
            "movements": [
                {"incoming": "src", "outgoing": "A", "saturation_flow_vps": 1.0, "turning_ratio": 1.0},
                {"incoming": "A", "outgoing": "B", "saturation_flow_vps": 0.5, "turning_ratio": 1.0},
                {"incoming": "B", "outgoing": "out", "saturation_flow_vps": 0.5, "turning_ratio": 1.0}
            ],
            "nodes": [
                {"id": "N1", "phases": [{"id": "p", "movements": [["A", "B"]]}]},
                {"id": "N2", "phases": [{"id": "p", "movements": [["B", "out"]]}]}
            ],
            "od_pairs": [
                {"id": "od", "route": ["src", "A", "B", "out"], "demand_profile": "flat"}
            ],
            "demand_profiles": [{"id": "flat", "breakpoints_s": [0.0], "rates_vps": [0.15]}],
            "controller": {"type": "cvmp"},
            "sim": {"dt_s": 1.0, "horizon_s": 600.0, "t0_s": 10.0, "ty_s": 3.0, "seed": 2}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn run_writes_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = small_scenario();
        let artifacts = run_scenario(&scenario, "small", dir.path(), true).unwrap();
        assert!(artifacts.steps_path.ends_with("small_cvmp_2_steps.csv"));
        assert!(artifacts.summary_path.exists());
        assert!(artifacts.events_path.as_ref().unwrap().exists());
        let csv = fs::read_to_string(&artifacts.steps_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,total_vehicles,total_queued,total_spillover,V_lyapunov"
        );
        assert_eq!(csv.lines().count(), 61);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&artifacts.summary_path).unwrap()).unwrap();
        for key in [
            "avg_delay_s",
            "max_vehicles",
            "max_queue",
            "max_spillover",
            "avg_cv_delay_s",
            "avg_nv_delay_s",
            "admissibility",
            "nc_events",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let scenario = small_scenario();
        let a = run_scenario(&scenario, "small", dir1.path(), false).unwrap();
        let b = run_scenario(&scenario, "small", dir2.path(), false).unwrap();
        assert_eq!(
            fs::read(&a.steps_path).unwrap(),
            fs::read(&b.steps_path).unwrap()
        );
        assert_eq!(
            fs::read(&a.summary_path).unwrap(),
            fs::read(&b.summary_path).unwrap()
        );
    }

    #[test]
    fn sweep_cardinality_and_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let mut scenario = small_scenario();
        scenario.sim.horizon_s = 200.0;
        let result = sweep(
            &scenario,
            "small",
            &[ControllerKind::Qmp, ControllerKind::Cvmp, ControllerKind::Pwmp],
            &[0.2, 0.5, 1.0],
            &[1, 2, 3, 4, 5],
            dir.path(),
        )
        .unwrap();
        assert_eq!(result.cells.len(), 45);
        assert!(result.cells.iter().all(|c| c.status == "ok"));
        assert_eq!(result.aggregates.len(), 9);
        for agg in &result.aggregates {
            assert_eq!(agg.runs, 5);
        }
        assert!(dir.path().join("sweep_results.csv").exists());
    }

    #[test]
    fn sweep_rejects_empty_axes() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = small_scenario();
        assert!(sweep(&scenario, "s", &[], &[0.5], &[1], dir.path()).is_err());
        assert!(
            sweep(&scenario, "s", &[ControllerKind::Cvmp], &[0.5], &[], dir.path()).is_err()
        );
    }

    #[test]
    fn sweep_aggregate_recomputes_from_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut scenario = small_scenario();
        scenario.sim.horizon_s = 200.0;
        let result = sweep(
            &scenario,
            "small",
            &[ControllerKind::Qmp],
            &[1.0],
            &[1, 2, 3],
            dir.path(),
        )
        .unwrap();
        let delays: Vec<f64> = result
            .cells
            .iter()
            .filter_map(|c| c.summary.as_ref().and_then(|s| s.avg_delay_s))
            .collect();
        let mean = delays.iter().sum::<f64>() / delays.len() as f64;
        assert!((result.aggregates[0].avg_delay_mean.unwrap() - mean).abs() < 1e-12);
    }
}

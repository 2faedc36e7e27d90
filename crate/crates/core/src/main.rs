//! Command-line entry point: single runs, sweep grids, admissibility checks
//! and weight audits over scenario documents.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvmp::controller::{audit_weights, WeightKind};
use cvmp::harness::{run_scenario, sweep};
use cvmp::network::build_network;
use cvmp::scenario::{ControllerKind, Scenario};
use cvmp::stability::{check_admissible, routed_demand};
use cvmp::Result;

#[derive(Parser)]
#[command(
    name = "cvmp",
    about = "Mesoscopic signalized-network simulator and pressure-controller laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario document (JSON).
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario and emit step CSV, summary JSON and optional
    /// event log.
    Run {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Override the scenario's controller type.
        #[arg(long)]
        controller: Option<ControllerKind>,
        /// Override the RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Penetration overrides, `default=0.5` or `<od_id>=0.3`; repeatable.
        #[arg(long = "penetration")]
        penetration: Vec<String>,
        /// Multiply all demand rates.
        #[arg(long)]
        demand_scale: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write a per-vehicle event log.
        #[arg(long)]
        events: bool,
    },
    /// Run the controllers × penetrations × seeds grid and aggregate.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Comma-separated controller types.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<ControllerKind>,
        /// Comma-separated homogeneous penetration rates.
        #[arg(long, value_delimiter = ',')]
        penetrations: Vec<f64>,
        /// Comma-separated seeds or an inclusive range `a..b`.
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Report the demand admissibility margin and witness green split.
    CheckAdmissible {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        demand_scale: Option<f64>,
    },
    /// Audit the controller's weight function over a full trajectory.
    AuditWeights {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        controller: Option<ControllerKind>,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = |t: &str| {
        cvmp::Error::InvalidScenario(format!("cannot parse seed list `{t}`"))
    };
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(text))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(text))?;
        if a > b {
            return Err(bad(text));
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad(text)))
        .collect()
}

fn scenario_stem(path: &PathBuf) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string())
}

fn apply_penetration_overrides(scenario: &mut Scenario, overrides: &[String]) -> Result<()> {
    for entry in overrides {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            cvmp::Error::InvalidScenario(format!(
                "penetration override `{entry}` is not key=value"
            ))
        })?;
        let xi: f64 = value.parse().map_err(|_| {
            cvmp::Error::InvalidScenario(format!("penetration value `{value}` is not a number"))
        })?;
        if key == "default" {
            scenario.penetration.default = xi;
        } else {
            scenario.penetration.od.insert(key.to_string(), xi);
        }
    }
    scenario.validate_basic()
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run {
            scenario: path,
            controller,
            seed,
            penetration,
            demand_scale,
            out,
            events,
        } => {
            let mut scenario = Scenario::from_path(&path.scenario)?;
            if let Some(kind) = controller {
                scenario.controller.kind = kind;
            }
            if let Some(seed) = seed {
                scenario.sim.seed = seed;
            }
            if let Some(scale) = demand_scale {
                scenario.sim.demand_scale = scale;
            }
            apply_penetration_overrides(&mut scenario, &penetration)?;
            let artifacts =
                run_scenario(&scenario, &scenario_stem(&path.scenario), &out, events)?;
            println!("{}", serde_json::to_string_pretty(&artifacts.summary)?);
            Ok(0)
        }
        Command::Sweep {
            scenario: path,
            controllers,
            penetrations,
            seeds,
            out,
        } => {
            let scenario = Scenario::from_path(&path.scenario)?;
            let seeds = parse_seeds(&seeds)?;
            let result = sweep(
                &scenario,
                &scenario_stem(&path.scenario),
                &controllers,
                &penetrations,
                &seeds,
                &out,
            )?;
            let failed = result.cells.iter().filter(|c| c.status != "ok").count();
            println!(
                "sweep: {} cells, {} failed; results in {}",
                result.cells.len(),
                failed,
                out.display()
            );
            Ok(u8::from(failed > 0))
        }
        Command::CheckAdmissible {
            scenario: path,
            demand_scale,
        } => {
            let mut scenario = Scenario::from_path(&path.scenario)?;
            if let Some(scale) = demand_scale {
                scenario.sim.demand_scale = scale;
            }
            let network = build_network(&scenario)?;
            let lambda = routed_demand(&network, &scenario);
            let report = check_admissible(&network, &lambda)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(u8::from(!report.feasible))
        }
        Command::AuditWeights {
            scenario: path,
            controller,
        } => {
            let mut scenario = Scenario::from_path(&path.scenario)?;
            if let Some(kind) = controller {
                scenario.controller.kind = kind;
            }
            let Some(kind) = WeightKind::from_controller(scenario.controller.kind) else {
                return Err(cvmp::Error::InvalidScenario(
                    "the actuated controller has no weight function to audit".into(),
                ));
            };
            let network = build_network(&scenario)?;
            let report =
                audit_weights(&scenario, &network, kind, scenario.controller.length_scaled)?;
            println!(
                "kind: {:?}\nsamples: {}\nnegative values: {}\nnonzero at entry: {}\n\
                 max y: {:.6}\ntau max: {:.6}\nmax |dtau|: {:.6}\ndtau bound ok: {}\n\
                 queue delta violations: {}\nposition delta violations: {}\nviolations: {}",
                report.kind,
                report.samples,
                report.negative_values,
                report.nonzero_at_entry,
                report.max_y,
                report.tau_max,
                report.max_dtau,
                report.dtau_bound_ok,
                report.q_delta_violations,
                report.pw_delta_violations,
                report.violations()
            );
            Ok(u8::from(report.violations() > 0))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Pressure-based signal control: pluggable per-vehicle weight functions, the
//! per-node argmax phase rule over the observed vehicle subset, the closed
//! simulation loop, and a trajectory audit of the weight-function conditions
//! that back the stability guarantee.

use crate::metrics::{MetricsSeries, StepRow};
use crate::network::Network;
use crate::observe::{observe, Observation, VehicleObs};
use crate::scenario::{ControllerKind, Scenario};
use crate::sim::{actuated_decide, step, SimState};
use crate::stability::{lyapunov, necessary_condition_monitor, NecessaryConditionEvent};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// y = 1, or 1/sqrt(L) when length-scaled, per counted vehicle.
    Queue,
    /// y = x/L incoming, 1 − x/L when acting as downstream congestion.
    Position,
    /// y = normalized link travel time τ.
    TravelTime,
    /// y = delay of the head-of-line vehicle only.
    HolDelay,
    /// y = delay of every counted vehicle.
    TotalDelay,
}

impl WeightKind {
    /// None for the actuated baseline, which carries no pressure weight.
    pub fn from_controller(kind: ControllerKind) -> Option<WeightKind> {
        match kind {
            ControllerKind::Qmp => Some(WeightKind::Queue),
            ControllerKind::Pwmp => Some(WeightKind::Position),
            ControllerKind::Cvmp => Some(WeightKind::TravelTime),
            ControllerKind::Holmp => Some(WeightKind::HolDelay),
            ControllerKind::Tdmp => Some(WeightKind::TotalDelay),
            ControllerKind::Actuated => None,
        }
    }
}

/// Which vehicle subset a weighted sum ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsSet {
    Cv,
    All,
}

/// Per-vehicle weight in the incoming (upstream) role. Zero for vehicles not
/// yet counted (x = 0 on a real link).
pub fn weight_in(
    kind: WeightKind,
    length_scaled: bool,
    network: &Network,
    movement: usize,
    v: &VehicleObs,
    set: ObsSet,
) -> f64 {
    let m = &network.movements[movement];
    if m.is_source {
        return 1.0;
    }
    if !v.counted {
        return 0.0;
    }
    let length = network.links[m.incoming].length_m;
    match kind {
        WeightKind::Queue => {
            if length_scaled {
                1.0 / length.sqrt()
            } else {
                1.0
            }
        }
        WeightKind::Position => v.x / length,
        WeightKind::TravelTime => v.tau,
        WeightKind::HolDelay => {
            let hol = match set {
                ObsSet::Cv => v.is_hol_cv,
                ObsSet::All => v.is_hol_all,
            };
            if hol {
                v.d
            } else {
                0.0
            }
        }
        WeightKind::TotalDelay => v.d,
    }
}

/// Per-vehicle weight in the outgoing (downstream congestion) role; identical
/// to the incoming role except for the position weight, which inverts.
pub fn weight_out(
    kind: WeightKind,
    length_scaled: bool,
    network: &Network,
    movement: usize,
    v: &VehicleObs,
    set: ObsSet,
) -> f64 {
    let m = &network.movements[movement];
    if m.is_source || !v.counted {
        return weight_in(kind, length_scaled, network, movement, v, set);
    }
    match kind {
        WeightKind::Position => 1.0 - v.x / network.links[m.incoming].length_m,
        _ => weight_in(kind, length_scaled, network, movement, v, set),
    }
}

/// Weighted traffic state of one movement at a decision instant: sums over
/// the observed CV subset, plus the all-vehicle sums kept as a diagnostic
/// oracle. Source movements report their backlog count.
#[derive(Debug, Clone, Copy, Default)]
pub struct MovementTrafficState {
    pub w_cv: f64,
    pub w_all: f64,
    pub w_cv_out: f64,
    pub w_all_out: f64,
    pub z: usize,
    pub z_cv: usize,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub movements: Vec<MovementTrafficState>,
}

pub fn movement_state(
    obs: &Observation,
    network: &Network,
    movement: usize,
    kind: WeightKind,
    length_scaled: bool,
) -> MovementTrafficState {
    let mo = &obs.movements[movement];
    let mut state = MovementTrafficState {
        z: mo.z,
        z_cv: mo.z_cv,
        ..Default::default()
    };
    for v in &mo.vehicles {
        state.w_all += weight_in(kind, length_scaled, network, movement, v, ObsSet::All);
        state.w_all_out += weight_out(kind, length_scaled, network, movement, v, ObsSet::All);
        if v.is_cv {
            state.w_cv += weight_in(kind, length_scaled, network, movement, v, ObsSet::Cv);
            state.w_cv_out += weight_out(kind, length_scaled, network, movement, v, ObsSet::Cv);
        }
    }
    state
}

pub fn snapshot(
    obs: &Observation,
    network: &Network,
    kind: WeightKind,
    length_scaled: bool,
) -> Snapshot {
    Snapshot {
        t: obs.t,
        movements: (0..network.movements.len())
            .map(|mi| movement_state(obs, network, mi, kind, length_scaled))
            .collect(),
    }
}

/// Signed pressure of a real movement: c·(w_in − Σ_downstream r·w_out).
/// Movements exiting the network carry no downstream term.
pub fn pressure(snap: &Snapshot, network: &Network, movement: usize, set: ObsSet) -> f64 {
    let m = &network.movements[movement];
    let pick_in = |s: &MovementTrafficState| match set {
        ObsSet::Cv => s.w_cv,
        ObsSet::All => s.w_all,
    };
    let pick_out = |s: &MovementTrafficState| match set {
        ObsSet::Cv => s.w_cv_out,
        ObsSet::All => s.w_all_out,
    };
    let w_in = pick_in(&snap.movements[movement]);
    let downstream: f64 = m
        .downstream
        .iter()
        .map(|&d| network.movements[d].turning_ratio * pick_out(&snap.movements[d]))
        .sum();
    m.saturation_flow_vps * (w_in - downstream)
}

/// Argmax over the node's phases of summed member pressures; ties go to the
/// lowest phase index. Reads only movements incident to this node.
pub fn decide(snap: &Snapshot, network: &Network, node: usize, set: ObsSet) -> usize {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (pi, phase) in network.nodes[node].phases.iter().enumerate() {
        let score: f64 = phase
            .movements
            .iter()
            .map(|&mi| pressure(snap, network, mi, set))
            .sum();
        if score > best_score {
            best_score = score;
            best = pi;
        }
    }
    best
}

pub struct RunOutput {
    pub series: MetricsSeries,
    pub nc_events: Vec<NecessaryConditionEvent>,
    pub state: SimState,
}

/// Closed loop: pressure decisions every `T0` (with the switching-step
/// saturation discount), or per-tick actuated logic, over the full horizon.
/// Metrics rows are sampled at every decision instant.
pub fn run_policy(scenario: &Scenario, network: &Network, log_events: bool) -> Result<RunOutput> {
    run_policy_with(scenario, network, log_events, |_| {})
}

/// `run_policy` with a per-tick probe invoked at every tick boundary,
/// including once at the horizon; used by the weight audit.
pub fn run_policy_with<F: FnMut(&SimState)>(
    scenario: &Scenario,
    network: &Network,
    log_events: bool,
    mut on_tick: F,
) -> Result<RunOutput> {
    let cfg = &scenario.controller;
    if cfg.tie_break != "lowest_phase" {
        return Err(Error::InvalidScenario(format!(
            "unsupported tie_break '{}'",
            cfg.tie_break
        )));
    }
    let dt = scenario.sim.dt_s;
    let n_ticks = (scenario.sim.horizon_s / dt).round() as usize;
    let ticks_per_t0 = (scenario.sim.t0_s / dt).round() as usize;
    let weight = WeightKind::from_controller(cfg.kind);
    // The Lyapunov diagnostic uses the controller's own weight; the actuated
    // baseline gets a plain vehicle count.
    let v_kind = weight.unwrap_or(WeightKind::Queue);
    let v_scaled = weight.is_some() && cfg.length_scaled;

    let mut state = SimState::new(network, scenario.sim.seed, log_events);
    state.detector_m = cfg.detector_m;
    let mut rows = Vec::with_capacity(n_ticks / ticks_per_t0 + 1);
    let mut nc_events = Vec::new();

    for k in 0..n_ticks {
        on_tick(&state);
        if k % ticks_per_t0 == 0 {
            let obs = observe(&state, network);
            if let Some(kind) = weight {
                let snap = snapshot(&obs, network, kind, cfg.length_scaled);
                for ni in 0..network.nodes.len() {
                    let new_phase = decide(&snap, network, ni, ObsSet::Cv);
                    let signal = &mut state.signals[ni];
                    signal.switching = new_phase != signal.phase;
                    if signal.switching {
                        signal.phase = new_phase;
                        signal.green_start = state.t;
                    }
                }
            }
            rows.push(StepRow {
                t: state.t,
                total_vehicles: state.on_network_total(network),
                total_queued: state.queued_total(network),
                total_spillover: state.backlog_total(network),
                v_lyapunov: lyapunov(&obs, network, v_kind, v_scaled),
            });
            nc_events.extend(necessary_condition_monitor(&state, network, &obs));
        }
        if weight.is_none() {
            for ni in 0..network.nodes.len() {
                if let Some(phase) = actuated_decide(&state, network, scenario, ni) {
                    let signal = &mut state.signals[ni];
                    signal.phase = phase;
                    signal.yellow_until = state.t + scenario.sim.ty_s;
                    signal.green_start = state.t + scenario.sim.ty_s;
                }
            }
        }
        step(&mut state, network, scenario, dt);
    }
    on_tick(&state);

    let incomplete = state.injected - state.exited;
    let series = MetricsSeries {
        rows,
        completed: state.completed.clone(),
        incomplete,
    };
    Ok(RunOutput {
        series,
        nc_events,
        state,
    })
}

/// Trajectory audit of the weight-function conditions behind the stability
/// guarantee: non-negativity, zero value at link entry, and bounded per-tick
/// change per weight kind.
#[derive(Debug, Clone)]
pub struct WeightAuditReport {
    pub kind: WeightKind,
    pub samples: usize,
    pub negative_values: usize,
    pub nonzero_at_entry: usize,
    pub max_y: f64,
    /// Largest normalized travel time seen anywhere in the run.
    pub tau_max: f64,
    /// Largest per-tick change of the travel-time weight.
    pub max_dtau: f64,
    /// max_dtau ≤ tau_max + Δt.
    pub dtau_bound_ok: bool,
    /// Queue weight must be constant while a vehicle stays counted on-link.
    pub q_delta_violations: usize,
    /// Position weight change per tick bounded by v·Δt/L on-link.
    pub pw_delta_violations: usize,
}

impl WeightAuditReport {
    pub fn violations(&self) -> usize {
        self.negative_values
            + self.nonzero_at_entry
            + self.q_delta_violations
            + self.pw_delta_violations
            + usize::from(!self.dtau_bound_ok)
    }
}

pub fn audit_weights(
    scenario: &Scenario,
    network: &Network,
    kind: WeightKind,
    length_scaled: bool,
) -> Result<WeightAuditReport> {
    let dt = scenario.sim.dt_s;
    let mut report = WeightAuditReport {
        kind,
        samples: 0,
        negative_values: 0,
        nonzero_at_entry: 0,
        max_y: 0.0,
        tau_max: 0.0,
        max_dtau: 0.0,
        dtau_bound_ok: true,
        q_delta_violations: 0,
        pw_delta_violations: 0,
    };
    // vehicle id -> (movement, x, y, tau) at the previous tick boundary.
    let mut prev: std::collections::BTreeMap<usize, (usize, f64, f64, f64)> =
        std::collections::BTreeMap::new();
    run_policy_with(scenario, network, false, |state| {
        let obs = observe(state, network);
        let mut current = std::collections::BTreeMap::new();
        for (mi, m) in network.movements.iter().enumerate() {
            if m.is_source {
                continue;
            }
            let link = &network.links[m.incoming];
            for v in &obs.movements[mi].vehicles {
                let y = weight_in(kind, length_scaled, network, mi, v, ObsSet::All);
                report.samples += 1;
                if y < 0.0 || !y.is_finite() {
                    report.negative_values += 1;
                }
                if v.x == 0.0 && y != 0.0 {
                    report.nonzero_at_entry += 1;
                }
                report.max_y = report.max_y.max(y);
                report.tau_max = report.tau_max.max(v.tau);
                if let Some(&(pm, _px, py, ptau)) = prev.get(&v.id) {
                    report.max_dtau = report.max_dtau.max((v.tau - ptau).abs());
                    if pm == mi && v.counted && py > 0.0 {
                        match kind {
                            WeightKind::Queue => {
                                if (y - py).abs() > 1e-12 {
                                    report.q_delta_violations += 1;
                                }
                            }
                            WeightKind::Position => {
                                let bound = link.free_flow_speed_mps * dt / link.length_m;
                                if (y - py).abs() > bound + 1e-9 {
                                    report.pw_delta_violations += 1;
                                }
                            }
                            _ => {}
                        }
                    }
                }
                current.insert(v.id, (mi, v.x, y, v.tau));
            }
        }
        prev = current;
    })?;
    report.dtau_bound_ok = report.max_dtau <= report.tau_max + dt + 1e-9;
    Ok(report)
}

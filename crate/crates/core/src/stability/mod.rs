//! Stability diagnostics: the admissible-demand feasibility program with its
//! uniform slack margin, a discrete Lyapunov trace with finite-difference
//! drift, and the monitor for the unobserved-at-capacity failure signature.

mod simplex;

use serde::Serialize;

use crate::controller::{weight_in, ObsSet, WeightKind};
use crate::network::Network;
use crate::observe::Observation;
use crate::scenario::Scenario;
use crate::sim::SimState;
use crate::{Error, Result};

pub use simplex::{solve as solve_lp, LpSolution};

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub feasible: bool,
    /// Largest uniform slack ε (veh/s) between routed demand and served
    /// capacity over all long-run green splits; negative when infeasible.
    pub epsilon: f64,
    /// Witness long-run green fraction per phase, per node.
    pub witness: Vec<NodeGreenSplit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeGreenSplit {
    pub node: String,
    pub phases: Vec<f64>,
}

/// Long-run demand rate routed onto every movement: each OD's average rate
/// pushed along its full movement chain, including the source movement.
pub fn routed_demand(network: &Network, scenario: &Scenario) -> Vec<f64> {
    let mut lambda = vec![0.0; network.movements.len()];
    for od in &network.ods {
        let rate = scenario.demand_profiles[od.profile].average_rate(scenario.sim.horizon_s)
            * scenario.sim.demand_scale;
        for &mi in &od.route_movements {
            lambda[mi] += rate;
        }
    }
    lambda
}

/// Maximize ε subject to λ_m ≤ c_m·s̄_m − ε for every movement, where s̄_m is
/// the movement's long-run green fraction under a per-node convex combination
/// of phases (source movements are always served, s̄ = 1).
pub fn check_admissible(network: &Network, lambda: &[f64]) -> Result<AdmissibilityReport> {
    assert_eq!(lambda.len(), network.movements.len());

    // Variables: one green fraction per (node, phase), then ε⁺, ε⁻, then one
    // slack per movement. ε = ε⁺ − ε⁻ keeps the standard form x ≥ 0 while
    // allowing a negative margin to be reported.
    let mut g_index = Vec::new(); // (node, phase) -> column
    let mut col = 0usize;
    for (ni, node) in network.nodes.iter().enumerate() {
        for pi in 0..node.phases.len() {
            g_index.push((ni, pi));
            col += 1;
        }
    }
    let eps_plus = col;
    let eps_minus = col + 1;
    let slack0 = col + 2;
    let n_vars = slack0 + network.movements.len();

    let mut a = Vec::new();
    let mut b = Vec::new();

    // Per-node simplex: Σ_p g = 1.
    for (ni, node) in network.nodes.iter().enumerate() {
        let mut row = vec![0.0; n_vars];
        for (j, &(gn, _)) in g_index.iter().enumerate() {
            if gn == ni {
                row[j] = 1.0;
            }
        }
        let _ = node;
        a.push(row);
        b.push(1.0);
    }

    // Per-movement service: c_m·s̄_m − ε − slack_m = λ_m.
    for (mi, m) in network.movements.iter().enumerate() {
        let mut row = vec![0.0; n_vars];
        let mut rhs = lambda[mi];
        if let Some(ni) = m.node {
            for (j, &(gn, gp)) in g_index.iter().enumerate() {
                if gn == ni && network.nodes[ni].phases[gp].movements.contains(&mi) {
                    row[j] = m.saturation_flow_vps;
                }
            }
        } else {
            // Source movement: served every step at full saturation flow.
            rhs -= m.saturation_flow_vps;
        }
        row[eps_plus] = -1.0;
        row[eps_minus] = 1.0;
        row[slack0 + mi] = -1.0;
        a.push(row);
        b.push(rhs);
    }

    let mut c = vec![0.0; n_vars];
    c[eps_plus] = 1.0;
    c[eps_minus] = -1.0;

    let sol = solve_lp(&a, &b, &c)?;
    let epsilon = sol.objective;
    let mut witness = Vec::new();
    for (ni, node) in network.nodes.iter().enumerate() {
        let mut phases = vec![0.0; node.phases.len()];
        for (j, &(gn, gp)) in g_index.iter().enumerate() {
            if gn == ni {
                phases[gp] = sol.x[j];
            }
        }
        witness.push(NodeGreenSplit {
            node: node.id.clone(),
            phases,
        });
    }
    Ok(AdmissibilityReport {
        feasible: epsilon >= 0.0,
        epsilon,
        witness,
    })
}

/// Discrete Lyapunov value at a decision instant: per real movement the
/// weighted double sum collapses to z·Σy over counted vehicles; per source
/// movement, half the squared backlog.
pub fn lyapunov(
    obs: &Observation,
    network: &Network,
    kind: WeightKind,
    length_scaled: bool,
) -> f64 {
    let mut v = 0.0;
    for (mi, m) in network.movements.iter().enumerate() {
        let mo = &obs.movements[mi];
        if m.is_source {
            let b = mo.z as f64;
            v += 0.5 * b * b;
        } else {
            let mut z = 0usize;
            let mut sum_y = 0.0;
            for veh in &mo.vehicles {
                if veh.counted {
                    z += 1;
                    sum_y += weight_in(kind, length_scaled, network, mi, veh, ObsSet::All);
                }
            }
            v += z as f64 * sum_y;
        }
    }
    v
}

#[derive(Debug, Clone, Copy)]
pub struct DriftPoint {
    pub t: f64,
    pub v: f64,
    pub sum_z: f64,
    pub dv_dt: f64,
}

/// Central-difference drift of V over decision steps,. Requires at least 100
/// steps; `sum_z` counts on-network vehicles plus source backlogs.
pub fn drift_points(rows: &[crate::metrics::StepRow]) -> Result<Vec<DriftPoint>> {
    if rows.len() < 100 {
        return Err(Error::SegmentTooShort {
            got: rows.len(),
            need: 100,
        });
    }
    let mut points = Vec::with_capacity(rows.len().saturating_sub(2));
    for i in 1..rows.len() - 1 {
        let dt = rows[i + 1].t - rows[i - 1].t;
        points.push(DriftPoint {
            t: rows[i].t,
            v: rows[i].v_lyapunov,
            sum_z: (rows[i].total_vehicles + rows[i].total_spillover) as f64,
            dv_dt: (rows[i + 1].v_lyapunov - rows[i - 1].v_lyapunov) / dt,
        });
    }
    Ok(points)
}

/// Fraction of high-occupancy decision steps with strictly negative drift.
/// The threshold defaults to the 75th percentile of Σz over the segment.
pub fn drift_negativity_test(
    rows: &[crate::metrics::StepRow],
    z_threshold: Option<f64>,
) -> Result<f64> {
    let points = drift_points(rows)?;
    let threshold = z_threshold.unwrap_or_else(|| {
        let mut zs: Vec<f64> = points.iter().map(|p| p.sum_z).collect();
        zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        zs[(zs.len() * 3) / 4]
    });
    let above: Vec<&DriftPoint> = points.iter().filter(|p| p.sum_z > threshold).collect();
    if above.is_empty() {
        return Ok(0.0);
    }
    let negative = above.iter().filter(|p| p.dv_dt < 0.0).count();
    Ok(negative as f64 / above.len() as f64)
}

/// A phase whose every member movement is simultaneously unobserved
/// (no connected vehicle) and fed by a link at storage capacity.
#[derive(Debug, Clone, Serialize)]
pub struct NecessaryConditionEvent {
    pub t: f64,
    pub node: String,
    pub phase: String,
    pub movements: Vec<String>,
}

pub fn necessary_condition_monitor(
    state: &SimState,
    network: &Network,
    obs: &Observation,
) -> Vec<NecessaryConditionEvent> {
    let mut events = Vec::new();
    for node in &network.nodes {
        for phase in &node.phases {
            let all_blind = phase.movements.iter().all(|&mi| {
                obs.movements[mi].z_cv == 0
                    && state.link_full(network, network.movements[mi].incoming)
            });
            if all_blind {
                events.push(NecessaryConditionEvent {
                    t: state.t,
                    node: node.id.clone(),
                    phase: phase.id.clone(),
                    movements: phase
                        .movements
                        .iter()
                        .map(|&mi| network.movements[mi].id.clone())
                        .collect(),
                });
            }
        }
    }
    events
}

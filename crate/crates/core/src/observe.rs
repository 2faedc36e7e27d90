//! Connected-vehicle observation layer: Bernoulli tagging at injection with
//! per-OD penetration rates, decision-instant snapshots of the observed
//! subset, and the resampling check that the observed traffic state is an
//! unbiased penetration-scaled estimate of the full state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::network::Network;
use crate::sim::SimState;

/// One vehicle as seen at a decision instant.
#[derive(Debug, Clone)]
pub struct VehicleObs {
    pub id: usize,
    pub x: f64,
    /// Normalized link travel time (t − t0)/τ̄.
    pub tau: f64,
    /// Delay d = (t − t0) − x/v on the current link, clamped at 0.
    pub d: f64,
    pub is_cv: bool,
    /// Contributes weight: x > 0 on a real link, or waiting in a source
    /// backlog.
    pub counted: bool,
    /// Head of the stopline queue among all vehicles.
    pub is_hol_all: bool,
    /// Front-most queued connected vehicle.
    pub is_hol_cv: bool,
    /// Turning intention: the movement the vehicle takes next, from its
    /// fixed route.
    pub next_movement: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MovementObs {
    /// In physical order: stopline queue front-to-back, then in-transit.
    pub vehicles: Vec<VehicleObs>,
    /// All vehicles on the movement (backlog for source movements).
    pub z: usize,
    /// Observed (connected) vehicles on the movement.
    pub z_cv: usize,
    /// True when the full and observed states agree on positivity.
    pub sign_match: bool,
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub t: f64,
    pub movements: Vec<MovementObs>,
}

/// Bernoulli(ξ) connectivity draw, fixed for the vehicle's lifetime.
pub fn tag_vehicle(penetration: f64, rng: &mut ChaCha8Rng) -> bool {
    rng.gen::<f64>() < penetration
}

/// Snapshot every movement's vehicle set with per-vehicle (τ, x, d) and the
/// CV flags assigned at injection. Pure in the simulation state.
pub fn observe(state: &SimState, network: &Network) -> Observation {
    let t = state.t;
    let mut movements = Vec::with_capacity(network.movements.len());
    for (mi, m) in network.movements.iter().enumerate() {
        let q = &state.queues[mi];
        let mut vehicles = Vec::with_capacity(q.stopline.len() + q.in_transit.len());
        let mut hol_all_seen = false;
        let mut hol_cv_seen = false;
        for &vid in q.stopline.iter().chain(q.in_transit.iter()) {
            let v = &state.vehicles[vid];
            let counted = m.is_source || v.x > 0.0;
            let tau = state.travel_time_tau(network, vid, t);
            let d = state.delay(network, vid, t).max(0.0);
            let is_hol_all = !m.is_source && !hol_all_seen && !q.stopline.is_empty();
            let is_hol_cv = !m.is_source && v.is_cv && !hol_cv_seen;
            hol_all_seen = hol_all_seen || is_hol_all;
            hol_cv_seen = hol_cv_seen || is_hol_cv;
            let next_movement = network.ods[v.od]
                .route_movements
                .get(v.route_pos + 1)
                .copied();
            vehicles.push(VehicleObs {
                id: vid,
                x: v.x,
                tau,
                d,
                is_cv: v.is_cv,
                counted,
                is_hol_all,
                is_hol_cv,
                next_movement,
            });
        }
        let z = vehicles.len();
        let z_cv = vehicles.iter().filter(|v| v.is_cv).count();
        let any_all = vehicles.iter().any(|v| v.counted);
        let any_cv = vehicles.iter().any(|v| v.counted && v.is_cv);
        movements.push(MovementObs {
            vehicles,
            z,
            z_cv,
            sign_match: any_all == any_cv,
        });
    }
    Observation { t, movements }
}

/// Relative error of the resampled observed state against the
/// penetration-scaled full state: resample the CV flags of a frozen snapshot
/// `n_samples` times and compare mean(w_cv) with ξ·w_all. Returns `None` when
/// w_all = 0.
pub fn expectation_check(
    weights: &[f64],
    xi: f64,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let w_all: f64 = weights.iter().sum();
    if w_all == 0.0 {
        return None;
    }
    let mut total = 0.0;
    for _ in 0..n_samples {
        let w_cv: f64 = weights
            .iter()
            .filter(|_| rng.gen::<f64>() < xi)
            .sum();
        total += w_cv;
    }
    let mean = total / n_samples as f64;
    Some((mean - xi * w_all).abs() / (xi * w_all))
}

//! Vehicle-resolved mesoscopic dynamics: free-flow advection into a stopline
//! FIFO queue per movement, saturation-limited discharge `min{c·s, μ}`,
//! turning-consistent transfer with spillback blocking, and unbounded source
//! backlogs.
//!
//! Discretization: fixed step `dt` (1 s default). A real link is an advection
//! segment plus a vertical stopline queue with finite storage
//! `N_max = L · lanes · ρ_jam`; queued vehicles occupy `1/ρ_jam` meters per
//! lane, so the queue back sits at `L − (n_q/lanes)·spacing`. Fractional
//! discharge capacity is carried in a per-movement accumulator so saturation
//! flows below one vehicle per tick are honored in the long run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::network::Network;
use crate::scenario::Scenario;

const POS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleState {
    /// Waiting on a fictitious source link (spillover).
    Backlog,
    InTransit,
    Queued,
    Exited,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: usize,
    pub od: usize,
    /// Index into the OD's movement chain; the current movement.
    pub route_pos: usize,
    pub is_cv: bool,
    pub created_at: f64,
    pub link_entry_time: f64,
    /// Distance traveled on the current link.
    pub x: f64,
    pub cumulative_delay_s: f64,
    pub state: VehicleState,
}

impl Vehicle {
    pub fn movement(&self, network: &Network) -> usize {
        network.ods[self.od].route_movements[self.route_pos]
    }
}

#[derive(Debug, Clone, Default)]
pub struct MovementQueue {
    /// Vehicles still moving toward the queue back, in entry order.
    pub in_transit: Vec<usize>,
    /// Stopline FIFO; for source movements this is the backlog.
    pub stopline: std::collections::VecDeque<usize>,
}

#[derive(Debug, Clone)]
pub struct SignalState {
    pub phase: usize,
    /// Saturation discount `(T0-Ty)/T0` applies to the current decision step.
    pub switching: bool,
    /// Actuated bookkeeping.
    pub green_start: f64,
    pub yellow_until: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CompletedVehicle {
    pub delay_s: f64,
    pub is_cv: bool,
    pub exit_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Inject,
    EnterLink,
    JoinQueue,
    Discharge,
    Exit,
    Blocked,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Inject => "inject",
            EventKind::EnterLink => "enter_link",
            EventKind::JoinQueue => "join_queue",
            EventKind::Discharge => "discharge",
            EventKind::Exit => "exit",
            EventKind::Blocked => "blocked",
        }
    }
}

pub struct SimState {
    pub t: f64,
    pub vehicles: Vec<Vehicle>,
    pub queues: Vec<MovementQueue>,
    /// Per link: queued vehicle ids in join order, across the link's movements.
    pub link_queue: Vec<Vec<usize>>,
    /// Vehicles currently on each real link (transit + queued).
    pub link_count: Vec<usize>,
    pub signals: Vec<SignalState>,
    /// Fractional discharge capacity per movement.
    pub accumulator: Vec<f64>,
    /// Last detector crossing per movement (actuated control).
    pub detector_last_cross: Vec<f64>,
    /// Virtual detector offset upstream of the stop line.
    pub detector_m: f64,
    pub injected: u64,
    pub exited: u64,
    pub completed: Vec<CompletedVehicle>,
    pub rng_demand: ChaCha8Rng,
    pub rng_tag: ChaCha8Rng,
    /// Line-delimited event log, populated only when enabled.
    pub event_log: Option<Vec<String>>,
}

impl SimState {
    pub fn new(network: &Network, seed: u64, log_events: bool) -> Self {
        // Tagging draws come from an independent stream so penetration sweeps
        // keep arrival realizations fixed.
        let rng_demand = ChaCha8Rng::seed_from_u64(seed);
        let rng_tag = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        SimState {
            t: 0.0,
            vehicles: Vec::new(),
            queues: vec![MovementQueue::default(); network.movements.len()],
            link_queue: vec![Vec::new(); network.links.len()],
            link_count: vec![0; network.links.len()],
            signals: network
                .nodes
                .iter()
                .map(|_| SignalState {
                    phase: 0,
                    switching: false,
                    green_start: 0.0,
                    yellow_until: 0.0,
                })
                .collect(),
            accumulator: vec![0.0; network.movements.len()],
            detector_last_cross: vec![f64::NEG_INFINITY; network.movements.len()],
            detector_m: 30.0,
            injected: 0,
            exited: 0,
            completed: Vec::new(),
            rng_demand,
            rng_tag,
            event_log: if log_events { Some(Vec::new()) } else { None },
        }
    }

    fn log(&mut self, t: f64, vehicle: usize, kind: EventKind) {
        if let Some(log) = &mut self.event_log {
            log.push(format!("{t:.0},{vehicle},{}", kind.as_str()));
        }
    }

    pub fn backlog_total(&self, network: &Network) -> usize {
        network
            .source_movements
            .iter()
            .map(|&m| self.queues[m].stopline.len())
            .sum()
    }

    pub fn on_network_total(&self, network: &Network) -> usize {
        self.link_count
            .iter()
            .zip(&network.links)
            .filter(|(_, l)| !l.is_source && !l.is_sink)
            .map(|(c, _)| *c)
            .sum()
    }

    pub fn queued_total(&self, network: &Network) -> usize {
        network
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_source && !l.is_sink)
            .map(|(li, _)| self.link_queue[li].len())
            .sum()
    }

    /// Vehicles of a movement currently counted in its traffic state
    /// (on-link for real movements, backlog for source movements).
    pub fn movement_vehicle_count(&self, movement: usize) -> usize {
        self.queues[movement].in_transit.len() + self.queues[movement].stopline.len()
    }

    /// Remaining storage of a link in whole vehicles.
    pub fn link_space(&self, network: &Network, link: usize) -> usize {
        let cap = network.links[link].capacity();
        if cap.is_infinite() {
            usize::MAX
        } else {
            let cap = cap.floor() as usize;
            cap.saturating_sub(self.link_count[link])
        }
    }

    /// A link is at storage capacity when it cannot accept one more vehicle.
    pub fn link_full(&self, network: &Network, link: usize) -> bool {
        self.link_space(network, link) == 0
    }

    /// Normalized link travel time (t − t_j^0)/τ̄ of a vehicle on its current
    /// movement. Contract: `t >= link_entry_time`.
    pub fn travel_time_tau(&self, network: &Network, vehicle: usize, t: f64) -> f64 {
        let v = &self.vehicles[vehicle];
        debug_assert!(t >= v.link_entry_time, "tau queried before link entry");
        let movement = v.movement(network);
        (t - v.link_entry_time) / network.movements[movement].free_flow_tt_s
    }

    /// Vehicle delay d_j(t) = (t − t_j^0) − x_j/v_j on the current link.
    pub fn delay(&self, network: &Network, vehicle: usize, t: f64) -> f64 {
        let v = &self.vehicles[vehicle];
        let movement = v.movement(network);
        let m = &network.movements[movement];
        if m.is_source {
            return t - v.link_entry_time;
        }
        let speed = network.links[m.incoming].free_flow_speed_mps;
        (t - v.link_entry_time) - v.x / speed
    }

    /// Exact conservation: injected = on-network + source backlog + exited.
    pub fn assert_conservation(&self, network: &Network) {
        let on_network = self.on_network_total(network) as u64;
        let backlog = self.backlog_total(network) as u64;
        assert_eq!(
            self.injected,
            on_network + backlog + self.exited,
            "vehicle conservation breached at t={}",
            self.t
        );
    }
}

/// Poisson arrivals per OD, appended to the source-link backlog. Backlogs may
/// grow without bound.
pub fn inject_demand(state: &mut SimState, network: &Network, scenario: &Scenario, dt: f64) {
    let t = state.t;
    for (od_idx, od) in network.ods.iter().enumerate() {
        let rate = scenario.demand_profiles[od.profile].rate_at(t) * scenario.sim.demand_scale;
        if rate <= 0.0 {
            continue;
        }
        let poisson = Poisson::new(rate * dt).expect("positive poisson mean");
        let arrivals = poisson.sample(&mut state.rng_demand) as u64;
        for _ in 0..arrivals {
            let is_cv = state.rng_tag.gen::<f64>() < od.penetration;
            let id = state.vehicles.len();
            let source_movement = od.route_movements[0];
            state.vehicles.push(Vehicle {
                id,
                od: od_idx,
                route_pos: 0,
                is_cv,
                created_at: t,
                link_entry_time: t,
                x: 0.0,
                cumulative_delay_s: 0.0,
                state: VehicleState::Backlog,
            });
            state.queues[source_movement].stopline.push_back(id);
            state.injected += 1;
            state.log(t, id, EventKind::Inject);
        }
    }
}

/// Free-flow advection toward the back of the stopline queue, plus queue
/// compaction at up to free-flow speed. Vehicles reaching the queue back join
/// their movement's FIFO.
pub fn advance_vehicles(state: &mut SimState, network: &Network, dt: f64) {
    let t = state.t;
    for li in 0..network.links.len() {
        let link = &network.links[li];
        if link.is_source || link.is_sink {
            continue;
        }
        let spacing = link.queue_spacing_m();
        let lanes = link.lanes as f64;
        let length = link.length_m;
        let speed = link.free_flow_speed_mps;
        let detector_x = (length - state.detector_m).max(0.0);

        // Compact the standing queue toward the stopline.
        for rank in 0..state.link_queue[li].len() {
            let vid = state.link_queue[li][rank];
            let target = length - (rank as f64 / lanes) * spacing;
            let v = &mut state.vehicles[vid];
            let step = (speed * dt).min((target - v.x).max(0.0));
            let old_x = v.x;
            v.x += step;
            if old_x < detector_x && v.x >= detector_x {
                let movement = network.ods[v.od].route_movements[v.route_pos];
                state.detector_last_cross[movement] = t;
            }
        }

        // In-transit vehicles, farthest first so joins keep physical order.
        let mut moving: Vec<usize> = Vec::new();
        for &mi in network
            .movements
            .iter()
            .enumerate()
            .filter(|(_, m)| m.incoming == li)
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
            .iter()
        {
            moving.extend(state.queues[mi].in_transit.iter().copied());
        }
        moving.sort_by(|&a, &b| {
            let (va, vb) = (&state.vehicles[a], &state.vehicles[b]);
            vb.x.partial_cmp(&va.x)
                .unwrap()
                .then(va.link_entry_time.partial_cmp(&vb.link_entry_time).unwrap())
                .then(a.cmp(&b))
        });
        for vid in moving {
            let queue_back = length - (state.link_queue[li].len() as f64 / lanes) * spacing;
            let v = &mut state.vehicles[vid];
            let step = (speed * dt).min((queue_back - v.x).max(0.0));
            let old_x = v.x;
            v.x += step;
            let crossed = old_x < detector_x && v.x >= detector_x;
            let joins = v.x >= queue_back - POS_EPS;
            let movement = network.ods[v.od].route_movements[v.route_pos];
            if crossed {
                state.detector_last_cross[movement] = t;
            }
            if joins {
                state.vehicles[vid].state = VehicleState::Queued;
                state.queues[movement].in_transit.retain(|&id| id != vid);
                state.queues[movement].stopline.push_back(vid);
                state.link_queue[li].push(vid);
                state.log(t, vid, EventKind::JoinQueue);
            }
        }
    }
}

/// Release up to `min{floor_accum(c'·s·dt), queued, receiving space}` vehicles
/// per green movement, respecting spillback; `c' = c·(T0−Ty)/T0` on switching
/// decision steps. Source movements are always green at their own saturation
/// flow. Returns the number of vehicles transferred.
pub fn discharge(state: &mut SimState, network: &Network, scenario: &Scenario, dt: f64) -> usize {
    let discount = (scenario.sim.t0_s - scenario.sim.ty_s) / scenario.sim.t0_s;
    let mut transferred = 0;

    // Real nodes: current green phase only.
    for ni in 0..network.nodes.len() {
        if state.t < state.signals[ni].yellow_until {
            continue; // actuated yellow: node shows all-red
        }
        let phase = state.signals[ni].phase;
        let factor = if state.signals[ni].switching {
            discount
        } else {
            1.0
        };
        let member = network.nodes[ni].phases[phase].movements.clone();
        for mi in member {
            let c = network.movements[mi].saturation_flow_vps * factor;
            transferred += discharge_movement(state, network, mi, c, dt);
        }
    }

    // Source movements, always green.
    for &mi in &network.source_movements {
        let c = network.movements[mi].saturation_flow_vps;
        transferred += discharge_movement(state, network, mi, c, dt);
    }
    transferred
}

fn discharge_movement(
    state: &mut SimState,
    network: &Network,
    movement: usize,
    capacity_vps: f64,
    dt: f64,
) -> usize {
    let t = state.t;
    let m = &network.movements[movement];
    state.accumulator[movement] += capacity_vps * dt;
    let by_capacity = state.accumulator[movement].floor() as usize;
    let queued = state.queues[movement].stopline.len();
    let space = state.link_space(network, m.outgoing);
    let n = by_capacity.min(queued).min(space);
    state.accumulator[movement] -= n as f64;
    if n < by_capacity {
        // Unused whole-vehicle capacity is forfeited (queue empty or blocked).
        state.accumulator[movement] = state.accumulator[movement].fract();
        if space < by_capacity.min(queued) {
            if let Some(&front) = state.queues[movement].stopline.front() {
                state.log(t, front, EventKind::Blocked);
            }
        }
    }

    for _ in 0..n {
        let vid = state.queues[movement].stopline.pop_front().unwrap();
        let v = &mut state.vehicles[vid];
        // Finalize this link's delay: total traversal minus free-flow time.
        let free_flow = if m.is_source {
            0.0
        } else {
            network.links[m.incoming].length_m / network.links[m.incoming].free_flow_speed_mps
        };
        v.cumulative_delay_s += ((t - v.link_entry_time) - free_flow).max(0.0);
        state.log(t, vid, EventKind::Discharge);
        if !m.is_source {
            state.link_count[m.incoming] -= 1;
            let pos = state.link_queue[m.incoming]
                .iter()
                .position(|&id| id == vid)
                .expect("queued vehicle present in link queue");
            state.link_queue[m.incoming].remove(pos);
        }
        let v = &mut state.vehicles[vid];
        if m.exits {
            v.state = VehicleState::Exited;
            state.exited += 1;
            let record = CompletedVehicle {
                delay_s: state.vehicles[vid].cumulative_delay_s,
                is_cv: state.vehicles[vid].is_cv,
                exit_t: t,
            };
            state.completed.push(record);
            state.log(t, vid, EventKind::Exit);
        } else {
            v.route_pos += 1;
            v.link_entry_time = t;
            v.x = 0.0;
            v.state = VehicleState::InTransit;
            let next_movement = network.ods[v.od].route_movements[v.route_pos];
            debug_assert_eq!(network.movements[next_movement].incoming, m.outgoing);
            state.link_count[m.outgoing] += 1;
            state.queues[next_movement].in_transit.push(vid);
            state.log(t, vid, EventKind::EnterLink);
        }
    }
    n
}

/// One simulation tick: inject → advance → discharge, then advance the clock.
/// Bit-deterministic for a fixed seed; panics only on a conservation breach.
pub fn step(state: &mut SimState, network: &Network, scenario: &Scenario, dt: f64) {
    inject_demand(state, network, scenario, dt);
    advance_vehicles(state, network, dt);
    discharge(state, network, scenario, dt);
    state.assert_conservation(network);
    state.t += dt;
}

/// Fully actuated gap-out logic: hold the current phase until no green
/// movement saw a detector crossing within `gap_s` (after `min_green_s`), or
/// `max_green_s` is reached; then rotate with a `Ty` all-red yellow.
pub fn actuated_decide(
    state: &SimState,
    network: &Network,
    scenario: &Scenario,
    node: usize,
) -> Option<usize> {
    let cfg = &scenario.controller;
    let signal = &state.signals[node];
    let t = state.t;
    if t < signal.yellow_until {
        return None;
    }
    let green_elapsed = t - signal.green_start;
    if green_elapsed < cfg.min_green_s {
        return None;
    }
    let max_out = green_elapsed >= cfg.max_green_s;
    let gap_out = network.nodes[node].phases[signal.phase]
        .movements
        .iter()
        .all(|&mi| state.detector_last_cross[mi] <= t - cfg.gap_s);
    if max_out || gap_out {
        Some((signal.phase + 1) % network.nodes[node].phases.len())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;

    fn scenario_json(extra_sim: &str) -> String {
        format!(
            r#"{{
            "links": [
                {{"id": "src", "is_source": true}},
                {{"id": "A", "length_m": 400.0}},
                {{"id": "B", "length_m": 400.0}},
                {{"id": "out", "is_sink": true}}
            ],
            "movements": [
                {{"incoming": "src", "outgoing": "A", "saturation_flow_vps": 1.0, "turning_ratio": 1.0}},
                {{"incoming": "A", "outgoing": "B", "saturation_flow_vps": 0.5, "turning_ratio": 1.0}},
                {{"incoming": "B", "outgoing": "out", "saturation_flow_vps": 0.5, "turning_ratio": 1.0}}
            ],
            "nodes": [
                {{"id": "N1", "phases": [{{"id": "p", "movements": [["A", "B"]]}}]}},
                {{"id": "N2", "phases": [{{"id": "p", "movements": [["B", "out"]]}}]}}
            ],
            "od_pairs": [
                {{"id": "od", "route": ["src", "A", "B", "out"], "demand_profile": "flat"}}
            ],
            "demand_profiles": [
                {{"id": "flat", "breakpoints_s": [0.0], "rates_vps": [0.2]}}
            ],
            "controller": {{"type": "qmp"}},
            "sim": {{"dt_s": 1.0, "horizon_s": 1000.0, "t0_s": 10.0, "ty_s": 3.0, "seed": 7{extra_sim}}}
        }}"#
        )
    }

    fn setup(extra_sim: &str) -> (Scenario, Network, SimState) {
        let scenario = Scenario::from_str(&scenario_json(extra_sim)).unwrap();
        let network = build_network(&scenario).unwrap();
        let state = SimState::new(&network, scenario.sim.seed, false);
        (scenario, network, state)
    }

    fn push_vehicle(
        state: &mut SimState,
        network: &Network,
        od: usize,
        route_pos: usize,
        x: f64,
        entry: f64,
    ) -> usize {
        let id = state.vehicles.len();
        state.vehicles.push(Vehicle {
            id,
            od,
            route_pos,
            is_cv: true,
            created_at: entry,
            link_entry_time: entry,
            x,
            cumulative_delay_s: 0.0,
            state: VehicleState::InTransit,
        });
        let movement = network.ods[od].route_movements[route_pos];
        state.queues[movement].in_transit.push(id);
        state.link_count[network.movements[movement].incoming] += 1;
        state.injected += 1;
        id
    }

    #[test]
    fn zero_demand_leaves_state_unchanged() {
        let (mut scenario, network, mut state) = setup("");
        scenario.demand_profiles[0].rates_vps = vec![0.0];
        step(&mut state, &network, &scenario, 1.0);
        assert_eq!(state.injected, 0);
        assert_eq!(state.t, 1.0);
        assert_eq!(state.on_network_total(&network), 0);
    }

    #[test]
    fn poisson_rate_matches_over_many_steps() {
        let (scenario, network, mut state) = setup("");
        // single OD at 0.2 veh/s
        for _ in 0..100_000 {
            inject_demand(&mut state, &network, &scenario, 1.0);
        }
        let mean = state.injected as f64 / 100_000.0;
        assert!((mean - 0.2).abs() / 0.2 < 0.01, "mean {mean}");
    }

    #[test]
    fn free_flow_advance_is_v_dt() {
        let (_, network, mut state) = setup("");
        let vid = push_vehicle(&mut state, &network, 0, 1, 0.0, 0.0);
        advance_vehicles(&mut state, &network, 1.0);
        assert!((state.vehicles[vid].x - 13.89).abs() < 1e-9);
    }

    #[test]
    fn vehicle_near_queue_back_joins_this_step() {
        let (_, network, mut state) = setup("");
        // Build a 'queue back at 380' situation: enough queued vehicles.
        // spacing 7.5 => need (400-380)/7.5 = 2.67 -> approximate with
        // explicit queued vehicles; here we verify the join mechanics with a
        // short remaining distance instead.
        let vid = push_vehicle(&mut state, &network, 0, 1, 395.0, 0.0);
        advance_vehicles(&mut state, &network, 1.0);
        assert_eq!(state.vehicles[vid].state, VehicleState::Queued);
        assert_eq!(state.link_queue[network.link_idx("A").unwrap()].len(), 1);
    }

    #[test]
    fn queue_back_position_follows_jam_spacing() {
        let (_, network, mut state) = setup("");
        // 4 queued vehicles at 7.5 m spacing: queue back = 400 - 30 = 370.
        for k in 0..4 {
            let vid = push_vehicle(&mut state, &network, 0, 1, 399.0 - k as f64, 0.0);
            // let them join over a few ticks
            let _ = vid;
        }
        for _ in 0..5 {
            advance_vehicles(&mut state, &network, 1.0);
        }
        let li = network.link_idx("A").unwrap();
        assert_eq!(state.link_queue[li].len(), 4);
        let lanes = network.links[li].lanes as f64;
        let spacing = network.links[li].queue_spacing_m();
        let queue_back = 400.0 - (4.0 / lanes) * spacing;
        assert!((queue_back - 370.0).abs() < 1e-9);
        // next joiner target equals the computed queue back
        let vid = push_vehicle(&mut state, &network, 0, 1, 369.0, 5.0);
        advance_vehicles(&mut state, &network, 1.0);
        assert_eq!(state.vehicles[vid].state, VehicleState::Queued);
        assert!((state.vehicles[vid].x - 370.0).abs() < 1e-9);
    }

    #[test]
    fn discharge_respects_capacity_queue_and_space() {
        // c = 0.5 veh/s, dt aggregated over 10 ticks, 8 queued, plenty of
        // space -> 5 released.
        let (scenario, network, mut state) = setup("");
        let m_ab = network.movement_by_key("A->B").unwrap();
        for _ in 0..8 {
            let id = state.vehicles.len();
            state.vehicles.push(Vehicle {
                id,
                od: 0,
                route_pos: 1,
                is_cv: false,
                created_at: 0.0,
                link_entry_time: 0.0,
                x: 400.0,
                cumulative_delay_s: 0.0,
                state: VehicleState::Queued,
            });
            state.queues[m_ab].stopline.push_back(id);
            state.link_queue[network.link_idx("A").unwrap()].push(id);
            state.link_count[network.link_idx("A").unwrap()] += 1;
            state.injected += 1;
        }
        let mut released = 0;
        for _ in 0..10 {
            released += discharge_movement(&mut state, &network, m_ab, 0.5, 1.0);
        }
        let _ = &scenario;
        assert_eq!(released, 5);
    }

    #[test]
    fn switching_discount_scales_capacity() {
        // 0.5 veh/s * 0.7 * 10 s = 3.5 -> 3 released, 0.5 in the accumulator.
        let (_, network, mut state) = setup("");
        let m_ab = network.movement_by_key("A->B").unwrap();
        for _ in 0..8 {
            let id = state.vehicles.len();
            state.vehicles.push(Vehicle {
                id,
                od: 0,
                route_pos: 1,
                is_cv: false,
                created_at: 0.0,
                link_entry_time: 0.0,
                x: 400.0,
                cumulative_delay_s: 0.0,
                state: VehicleState::Queued,
            });
            state.queues[m_ab].stopline.push_back(id);
            state.link_queue[network.link_idx("A").unwrap()].push(id);
            state.link_count[network.link_idx("A").unwrap()] += 1;
            state.injected += 1;
        }
        let released = discharge_movement(&mut state, &network, m_ab, 0.5 * 0.7, 10.0);
        assert_eq!(released, 3);
        assert!((state.accumulator[m_ab] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn full_downstream_blocks_release() {
        let (_, network, mut state) = setup("");
        let m_ab = network.movement_by_key("A->B").unwrap();
        let li_b = network.link_idx("B").unwrap();
        // Fill B to capacity.
        let cap = network.links[li_b].capacity().floor() as usize;
        state.link_count[li_b] = cap;
        let id = state.vehicles.len();
        state.vehicles.push(Vehicle {
            id,
            od: 0,
            route_pos: 1,
            is_cv: false,
            created_at: 0.0,
            link_entry_time: 0.0,
            x: 400.0,
            cumulative_delay_s: 0.0,
            state: VehicleState::Queued,
        });
        state.queues[m_ab].stopline.push_back(id);
        state.link_queue[network.link_idx("A").unwrap()].push(id);
        state.link_count[network.link_idx("A").unwrap()] += 1;
        let released = discharge_movement(&mut state, &network, m_ab, 10.0, 10.0);
        assert_eq!(released, 0);
    }

    #[test]
    fn long_run_discharge_rate_matches_saturation_flow() {
        let (_, network, mut state) = setup("");
        let m_ab = network.movement_by_key("A->B").unwrap();
        let li_a = network.link_idx("A").unwrap();
        let mut released = 0usize;
        let c = 0.3;
        for _ in 0..2000 {
            // keep the queue continuously fed
            while state.queues[m_ab].stopline.len() < 5 {
                let id = state.vehicles.len();
                state.vehicles.push(Vehicle {
                    id,
                    od: 0,
                    route_pos: 1,
                    is_cv: false,
                    created_at: 0.0,
                    link_entry_time: 0.0,
                    x: 400.0,
                    cumulative_delay_s: 0.0,
                    state: VehicleState::Queued,
                });
                state.queues[m_ab].stopline.push_back(id);
                state.link_queue[li_a].push(id);
                state.link_count[li_a] += 1;
            }
            let n = discharge_movement(&mut state, &network, m_ab, c, 1.0);
            released += n;
            // drain B so space never binds
            state.link_count[network.link_idx("B").unwrap()] = 0;
            let m_bo = network.movement_by_key("B->out").unwrap();
            state.queues[m_bo].in_transit.clear();
        }
        let rate = released as f64 / 2000.0;
        assert!((rate - c).abs() / c < 0.01, "rate {rate}");
    }

    #[test]
    fn tau_arithmetic() {
        let (_, network, mut state) = setup("");
        // B has free-flow tt 400/13.89 ≈ 28.8 s; use explicit values.
        let vid = push_vehicle(&mut state, &network, 0, 1, 0.0, 100.0);
        let m = state.vehicles[vid].movement(&network);
        let tau_bar = network.movements[m].free_flow_tt_s;
        assert_eq!(state.travel_time_tau(&network, vid, 100.0), 0.0);
        let tau = state.travel_time_tau(&network, vid, 130.0);
        assert!((tau - 30.0 / tau_bar).abs() < 1e-12);
    }

    #[test]
    fn stopped_vehicle_tau_grows_linearly() {
        let (_, network, mut state) = setup("");
        let vid = push_vehicle(&mut state, &network, 0, 1, 395.0, 0.0);
        advance_vehicles(&mut state, &network, 1.0); // joins queue
        assert_eq!(state.vehicles[vid].state, VehicleState::Queued);
        let m = state.vehicles[vid].movement(&network);
        let tau_bar = network.movements[m].free_flow_tt_s;
        let t1 = state.travel_time_tau(&network, vid, 10.0);
        let t2 = state.travel_time_tau(&network, vid, 11.0);
        assert!(((t2 - t1) - 1.0 / tau_bar).abs() < 1e-12);
    }

    #[test]
    fn conservation_holds_over_run() {
        let (scenario, network, mut state) = setup("");
        for _ in 0..2000 {
            step(&mut state, &network, &scenario, 1.0);
        }
        // assert_conservation is called inside step; spot-check totals too.
        assert!(state.injected > 0);
        assert_eq!(
            state.injected,
            state.on_network_total(&network) as u64
                + state.backlog_total(&network) as u64
                + state.exited
        );
    }

    #[test]
    fn single_vehicle_traverses_in_free_flow_time() {
        let (mut scenario, network, mut state) = setup("");
        scenario.demand_profiles[0].rates_vps = vec![0.0];
        // Place one vehicle in the source backlog directly.
        let id = state.vehicles.len();
        state.vehicles.push(Vehicle {
            id,
            od: 0,
            route_pos: 0,
            is_cv: true,
            created_at: 0.0,
            link_entry_time: 0.0,
            x: 0.0,
            cumulative_delay_s: 0.0,
            state: VehicleState::Backlog,
        });
        let src_m = network.ods[0].route_movements[0];
        state.queues[src_m].stopline.push_back(id);
        state.injected += 1;
        let mut exit_t = None;
        for _ in 0..200 {
            step(&mut state, &network, &scenario, 1.0);
            if state.vehicles[id].state == VehicleState::Exited {
                exit_t = Some(state.completed[0].exit_t);
                break;
            }
        }
        // Two 400 m links at 13.89 m/s: ~57.6 s; allow ±2 ticks for the
        // discretized queue join and discharge.
        let expected = 2.0 * 400.0 / 13.89;
        let exit_t = exit_t.expect("vehicle exits");
        assert!(
            (exit_t - expected).abs() <= 3.0,
            "exit {exit_t}, expected {expected}"
        );
        assert!(state.completed[0].delay_s <= 3.0);
    }

    #[test]
    fn delay_is_nonnegative_throughout() {
        let (scenario, network, mut state) = setup("");
        for _ in 0..1500 {
            step(&mut state, &network, &scenario, 1.0);
            for v in &state.vehicles {
                if matches!(v.state, VehicleState::InTransit | VehicleState::Queued) {
                    let d = state.delay(&network, v.id, state.t);
                    assert!(d >= -1e-9, "negative delay {d} for vehicle {}", v.id);
                }
            }
        }
    }

    #[test]
    fn same_seed_replays_identically() {
        let (scenario, network, mut s1) = setup("");
        let mut s2 = SimState::new(&network, scenario.sim.seed, false);
        for _ in 0..1000 {
            step(&mut s1, &network, &scenario, 1.0);
            step(&mut s2, &network, &scenario, 1.0);
        }
        assert_eq!(s1.injected, s2.injected);
        assert_eq!(s1.exited, s2.exited);
        assert_eq!(s1.on_network_total(&network), s2.on_network_total(&network));
        let pos1: Vec<f64> = s1.vehicles.iter().map(|v| v.x).collect();
        let pos2: Vec<f64> = s2.vehicles.iter().map(|v| v.x).collect();
        assert_eq!(pos1, pos2);
    }

    #[test]
    fn fifo_head_of_line_has_max_delay() {
        let (scenario, network, mut state) = setup("");
        for _ in 0..1500 {
            step(&mut state, &network, &scenario, 1.0);
        }
        for (mi, q) in state.queues.iter().enumerate() {
            if network.movements[mi].is_source {
                continue;
            }
            let delays: Vec<f64> = q
                .stopline
                .iter()
                .map(|&vid| state.delay(&network, vid, state.t))
                .collect();
            if let Some(first) = delays.first() {
                for d in &delays[1..] {
                    assert!(d <= &(first + 1e-9), "FIFO delay ordering violated");
                }
            }
        }
    }
}

//! Static road network: links, movements, phases and the feasible signal
//! space. Built once from a scenario document, validated, then immutable.

use std::collections::BTreeMap;

use crate::scenario::{LinkCfg, MovementCfg, NodeCfg, PhaseCfg, Scenario};
use crate::{Error, Result};

const RATIO_SUM_TOL: f64 = 1e-9;
const ROUTE_TURN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub length_m: f64,
    pub lanes: usize,
    pub free_flow_speed_mps: f64,
    pub jam_density_veh_per_m_per_lane: f64,
    pub is_source: bool,
    pub is_sink: bool,
}

impl Link {
    /// Storage capacity N_max = L * lanes * rho_jam; unbounded for source and
    /// sink links.
    pub fn capacity(&self) -> f64 {
        if self.is_source || self.is_sink {
            f64::INFINITY
        } else {
            self.length_m * self.lanes as f64 * self.jam_density_veh_per_m_per_lane
        }
    }

    /// Longitudinal space one queued vehicle occupies per lane.
    pub fn queue_spacing_m(&self) -> f64 {
        1.0 / self.jam_density_veh_per_m_per_lane
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Movement {
    /// `"incoming->outgoing"`, the canonical movement key.
    pub id: String,
    pub incoming: usize,
    pub outgoing: usize,
    pub saturation_flow_vps: f64,
    pub turning_ratio: f64,
    /// Free-flow traversal time of the incoming link; 1 by convention for
    /// source movements.
    pub free_flow_tt_s: f64,
    /// Real node the movement belongs to; `None` for source movements.
    pub node: Option<usize>,
    /// Movements leaving the outgoing link; empty when the outgoing link is a
    /// sink.
    pub downstream: Vec<usize>,
    pub is_source: bool,
    pub exits: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub id: String,
    pub movements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub phases: Vec<Phase>,
    /// Union of all phase member movements, in first-appearance order.
    pub movements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub id: String,
    pub route_links: Vec<usize>,
    pub route_movements: Vec<usize>,
    pub profile: usize,
    pub penetration: f64,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub links: Vec<Link>,
    pub movements: Vec<Movement>,
    pub nodes: Vec<Node>,
    pub source_movements: Vec<usize>,
    pub ods: Vec<OdPair>,
    link_index: BTreeMap<String, usize>,
    movement_index: BTreeMap<(usize, usize), usize>,
}

impl Network {
    pub fn link_idx(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    pub fn movement_idx(&self, incoming: usize, outgoing: usize) -> Option<usize> {
        self.movement_index.get(&(incoming, outgoing)).copied()
    }

    pub fn movement_by_key(&self, key: &str) -> Option<usize> {
        let (a, b) = key.split_once("->")?;
        self.movement_idx(self.link_idx(a)?, self.link_idx(b)?)
    }

    /// Movements entering a given link, i.e. whose outgoing link is `link`.
    pub fn feeders_of_link(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
        self.movements
            .iter()
            .enumerate()
            .filter(move |(_, m)| m.outgoing == link)
            .map(|(i, _)| i)
    }

    /// One binary signal vector per phase, indexed over `node.movements`.
    pub fn feasible_signal_vectors(&self, node: usize) -> Vec<Vec<u8>> {
        let node = &self.nodes[node];
        node.phases
            .iter()
            .map(|phase| {
                node.movements
                    .iter()
                    .map(|m| u8::from(phase.movements.contains(m)))
                    .collect()
            })
            .collect()
    }

    /// Structural equality (ignores index maps, which are derived).
    pub fn structurally_equal(&self, other: &Network) -> bool {
        self.links == other.links
            && self.movements == other.movements
            && self.nodes == other.nodes
            && self.ods == other.ods
    }

    /// Re-emit the structural sections of a scenario document. Combined with
    /// the demand/controller sections of `base` this round-trips through
    /// [`build_network`].
    pub fn emit(&self, base: &Scenario) -> Scenario {
        let links = self
            .links
            .iter()
            .map(|l| LinkCfg {
                id: l.id.clone(),
                length_m: l.length_m,
                lanes: l.lanes,
                free_flow_speed_mps: l.free_flow_speed_mps,
                jam_density_veh_per_m_per_lane: l.jam_density_veh_per_m_per_lane,
                is_source: l.is_source,
                is_sink: l.is_sink,
            })
            .collect();
        let movements = self
            .movements
            .iter()
            .map(|m| MovementCfg {
                incoming: self.links[m.incoming].id.clone(),
                outgoing: self.links[m.outgoing].id.clone(),
                saturation_flow_vps: m.saturation_flow_vps,
                turning_ratio: m.turning_ratio,
            })
            .collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeCfg {
                id: n.id.clone(),
                phases: n
                    .phases
                    .iter()
                    .map(|p| PhaseCfg {
                        id: p.id.clone(),
                        movements: p
                            .movements
                            .iter()
                            .map(|&m| {
                                [
                                    self.links[self.movements[m].incoming].id.clone(),
                                    self.links[self.movements[m].outgoing].id.clone(),
                                ]
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Scenario {
            links,
            movements,
            nodes,
            od_pairs: base.od_pairs.clone(),
            demand_profiles: base.demand_profiles.clone(),
            penetration: base.penetration.clone(),
            controller: base.controller.clone(),
            sim: base.sim.clone(),
        }
    }
}

/// Build and validate the immutable network from a scenario document.
/// Deterministic: no RNG, stable ordering taken from the document.
pub fn build_network(scenario: &Scenario) -> Result<Network> {
    let mut link_index = BTreeMap::new();
    let mut links = Vec::with_capacity(scenario.links.len());
    for cfg in &scenario.links {
        if link_index.contains_key(&cfg.id) {
            return Err(Error::InvalidScenario(format!(
                "duplicate link id `{}`",
                cfg.id
            )));
        }
        if !cfg.is_source && !cfg.is_sink && cfg.length_m <= 0.0 {
            return Err(Error::ZeroLengthRealLink {
                link: cfg.id.clone(),
            });
        }
        if (cfg.is_source || cfg.is_sink) && cfg.length_m != 0.0 {
            return Err(Error::InvalidScenario(format!(
                "source/sink link `{}` must have length 0",
                cfg.id
            )));
        }
        if cfg.free_flow_speed_mps <= 0.0 || cfg.jam_density_veh_per_m_per_lane <= 0.0 {
            return Err(Error::InvalidScenario(format!(
                "link `{}`: speed and jam density must be > 0",
                cfg.id
            )));
        }
        if cfg.lanes == 0 {
            return Err(Error::InvalidScenario(format!(
                "link `{}`: lanes must be >= 1",
                cfg.id
            )));
        }
        link_index.insert(cfg.id.clone(), links.len());
        links.push(Link {
            id: cfg.id.clone(),
            length_m: cfg.length_m,
            lanes: cfg.lanes,
            free_flow_speed_mps: cfg.free_flow_speed_mps,
            jam_density_veh_per_m_per_lane: cfg.jam_density_veh_per_m_per_lane,
            is_source: cfg.is_source,
            is_sink: cfg.is_sink,
        });
    }

    let resolve_link = |id: &str| -> Result<usize> {
        link_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::DanglingReference {
                kind: "link",
                id: id.to_string(),
            })
    };

    let mut movement_index = BTreeMap::new();
    let mut movements = Vec::with_capacity(scenario.movements.len());
    for cfg in &scenario.movements {
        let incoming = resolve_link(&cfg.incoming)?;
        let outgoing = resolve_link(&cfg.outgoing)?;
        let key = (incoming, outgoing);
        if movement_index.contains_key(&key) {
            return Err(Error::InvalidScenario(format!(
                "duplicate movement `{}->{}`",
                cfg.incoming, cfg.outgoing
            )));
        }
        if links[incoming].is_sink {
            return Err(Error::InvalidScenario(format!(
                "movement `{}->{}`: incoming link is a sink",
                cfg.incoming, cfg.outgoing
            )));
        }
        if links[outgoing].is_source {
            return Err(Error::InvalidScenario(format!(
                "movement `{}->{}`: outgoing link is a source",
                cfg.incoming, cfg.outgoing
            )));
        }
        if cfg.saturation_flow_vps <= 0.0 {
            return Err(Error::InvalidScenario(format!(
                "movement `{}->{}`: saturation flow must be > 0",
                cfg.incoming, cfg.outgoing
            )));
        }
        if !(0.0..=1.0).contains(&cfg.turning_ratio) {
            return Err(Error::InvalidScenario(format!(
                "movement `{}->{}`: turning ratio outside [0,1]",
                cfg.incoming, cfg.outgoing
            )));
        }
        let is_source = links[incoming].is_source;
        let free_flow_tt_s = if is_source {
            1.0
        } else {
            links[incoming].length_m / links[incoming].free_flow_speed_mps
        };
        movement_index.insert(key, movements.len());
        movements.push(Movement {
            id: format!("{}->{}", cfg.incoming, cfg.outgoing),
            incoming,
            outgoing,
            saturation_flow_vps: cfg.saturation_flow_vps,
            turning_ratio: cfg.turning_ratio,
            free_flow_tt_s,
            node: None,
            downstream: Vec::new(),
            is_source,
            exits: links[outgoing].is_sink,
        });
    }

    // Turning ratios out of each link must sum to 1.
    for (li, link) in links.iter().enumerate() {
        if link.is_sink {
            continue;
        }
        let out: Vec<&Movement> = movements.iter().filter(|m| m.incoming == li).collect();
        if out.is_empty() {
            return Err(Error::InvalidScenario(format!(
                "link `{}` has no outgoing movements and is not a sink",
                link.id
            )));
        }
        let sum: f64 = out.iter().map(|m| m.turning_ratio).sum();
        if (sum - 1.0).abs() > RATIO_SUM_TOL {
            return Err(Error::TurningRatioSum {
                link: link.id.clone(),
                sum,
            });
        }
        if link.is_source && out.len() != 1 {
            return Err(Error::InvalidScenario(format!(
                "source link `{}` must have exactly one movement",
                link.id
            )));
        }
    }

    // Downstream adjacency.
    for mi in 0..movements.len() {
        let outgoing = movements[mi].outgoing;
        movements[mi].downstream = movements
            .iter()
            .enumerate()
            .filter(|(_, m)| m.incoming == outgoing)
            .map(|(k, _)| k)
            .collect();
    }

    // Nodes and phases; assigns each real movement to exactly one node.
    let mut nodes = Vec::with_capacity(scenario.nodes.len());
    for cfg in &scenario.nodes {
        let mut phases = Vec::with_capacity(cfg.phases.len());
        let mut node_movements: Vec<usize> = Vec::new();
        for phase_cfg in &cfg.phases {
            if phase_cfg.movements.is_empty() {
                return Err(Error::EmptyPhase {
                    node: cfg.id.clone(),
                    phase: phase_cfg.id.clone(),
                });
            }
            let mut member = Vec::with_capacity(phase_cfg.movements.len());
            for [inc, out] in &phase_cfg.movements {
                let mi = movement_index
                    .get(&(resolve_link(inc)?, resolve_link(out)?))
                    .copied()
                    .ok_or_else(|| Error::DanglingReference {
                        kind: "movement",
                        id: format!("{inc}->{out}"),
                    })?;
                if movements[mi].is_source {
                    return Err(Error::InvalidScenario(format!(
                        "source movement `{}` cannot appear in node phases",
                        movements[mi].id
                    )));
                }
                match movements[mi].node {
                    None => movements[mi].node = Some(nodes.len()),
                    Some(n) if n == nodes.len() => {}
                    Some(_) => {
                        return Err(Error::InvalidScenario(format!(
                            "movement `{}` appears in phases of more than one node",
                            movements[mi].id
                        )))
                    }
                }
                if !node_movements.contains(&mi) {
                    node_movements.push(mi);
                }
                member.push(mi);
            }
            phases.push(Phase {
                id: phase_cfg.id.clone(),
                movements: member,
            });
        }
        // Pairwise-distinct phases.
        for a in 0..phases.len() {
            for b in a + 1..phases.len() {
                if phases[a].movements == phases[b].movements {
                    return Err(Error::InvalidScenario(format!(
                        "node `{}`: phases `{}` and `{}` are identical",
                        cfg.id, phases[a].id, phases[b].id
                    )));
                }
            }
        }
        nodes.push(Node {
            id: cfg.id.clone(),
            phases,
            movements: node_movements,
        });
    }

    // Every real movement must be covered by some node's phases.
    for m in &movements {
        if !m.is_source && m.node.is_none() {
            return Err(Error::OrphanMovement {
                movement: m.id.clone(),
            });
        }
    }
    // A link's movements may not straddle two nodes.
    for li in 0..links.len() {
        let mut seen: Option<usize> = None;
        for m in movements.iter().filter(|m| m.incoming == li && !m.is_source) {
            match (seen, m.node) {
                (None, n) => seen = n,
                (Some(a), Some(b)) if a != b => {
                    return Err(Error::InvalidScenario(format!(
                        "movements out of link `{}` belong to different nodes",
                        links[li].id
                    )))
                }
                _ => {}
            }
        }
    }

    let source_movements: Vec<usize> = movements
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_source)
        .map(|(i, _)| i)
        .collect();

    // OD routes resolved to movement chains.
    let mut ods = Vec::with_capacity(scenario.od_pairs.len());
    for cfg in &scenario.od_pairs {
        if cfg.route.len() < 2 {
            return Err(Error::InvalidScenario(format!(
                "OD `{}`: route needs at least a source and a sink link",
                cfg.id
            )));
        }
        let route_links: Vec<usize> = cfg
            .route
            .iter()
            .map(|id| resolve_link(id))
            .collect::<Result<_>>()?;
        if !links[route_links[0]].is_source {
            return Err(Error::InvalidScenario(format!(
                "OD `{}`: route must start at a source link",
                cfg.id
            )));
        }
        if !links[*route_links.last().unwrap()].is_sink {
            return Err(Error::InvalidScenario(format!(
                "OD `{}`: route must end at a sink link",
                cfg.id
            )));
        }
        let route_movements: Vec<usize> = route_links
            .windows(2)
            .map(|w| {
                movement_index
                    .get(&(w[0], w[1]))
                    .copied()
                    .ok_or_else(|| Error::DanglingReference {
                        kind: "movement",
                        id: format!("{}->{}", links[w[0]].id, links[w[1]].id),
                    })
            })
            .collect::<Result<_>>()?;
        let profile = scenario
            .demand_profiles
            .iter()
            .position(|p| p.id == cfg.demand_profile)
            .ok_or_else(|| Error::DanglingReference {
                kind: "demand profile",
                id: cfg.demand_profile.clone(),
            })?;
        ods.push(OdPair {
            id: cfg.id.clone(),
            route_links,
            route_movements,
            profile,
            penetration: scenario.penetration_for_od(&cfg.id),
        });
    }

    let network = Network {
        links,
        movements,
        nodes,
        source_movements,
        ods,
        link_index,
        movement_index,
    };
    validate_route_turn_fractions(&network, scenario)?;
    Ok(network)
}

/// Average-demand-weighted turn fractions induced by the route table must
/// match the configured turning ratios.
fn validate_route_turn_fractions(network: &Network, scenario: &Scenario) -> Result<()> {
    let horizon = scenario.sim.horizon_s;
    let mut flow = vec![0.0f64; network.movements.len()];
    for od in &network.ods {
        let rate = scenario.demand_profiles[od.profile].average_rate(horizon);
        for &mi in &od.route_movements {
            flow[mi] += rate;
        }
    }
    for li in 0..network.links.len() {
        let out: Vec<usize> = (0..network.movements.len())
            .filter(|&mi| network.movements[mi].incoming == li)
            .collect();
        let through: f64 = out.iter().map(|&mi| flow[mi]).sum();
        if through <= 0.0 {
            continue;
        }
        for &mi in &out {
            let induced = flow[mi] / through;
            let configured = network.movements[mi].turning_ratio;
            if (induced - configured).abs() > ROUTE_TURN_TOL {
                return Err(Error::RouteTurnMismatch {
                    movement: network.movements[mi].id.clone(),
                    induced,
                    configured,
                });
            }
        }
    }
    Ok(())
}

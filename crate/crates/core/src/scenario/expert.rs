//! Scripted demonstrator: pure-pursuit steering along a sampled route and
//! a headway-keeping speed controller, both quantised to the action grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentKind, AgentState, RunSegment, SignalState, TrafficLight, DEFAULT_STEP_DT};
use crate::dynamics::{obb_overlap, step_discrete, DiscreteAction, WHEELBASE_FRACTION};
use crate::error::{Error, Result};
use crate::geom::{to_local, Polyline, Vec2};
use crate::rng::{purpose, stream, StreamRng};
use crate::roadgraph::{Roadgraph, SegmentId, DEFAULT_MAX_ROUTES, DEFAULT_MAX_ROUTE_LENGTH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertParams {
    /// Per-agent cruise speed range, m/s.
    pub target_speed: (f64, f64),
    /// Bumper-to-bumper distance below which a leader triggers braking.
    pub headway: f64,
    /// Centre-to-centre spawn spacing range along the lane.
    pub spawn_gap: (f64, f64),
    /// Distance of the front agent before the end of the entry lane.
    pub front_offset: (f64, f64),
    /// Probability of each enumerated route; uniform when `None`.
    pub route_weights: Option<Vec<f64>>,
    pub lookahead_min: f64,
    pub lookahead_gain: f64,
    pub vehicle_length: (f64, f64),
    pub vehicle_width: (f64, f64),
    pub max_attempts: usize,
    pub step_dt: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        ExpertParams {
            target_speed: (8.0, 14.0),
            headway: 10.0,
            spawn_gap: (12.0, 20.0),
            front_offset: (10.0, 25.0),
            route_weights: None,
            lookahead_min: 6.0,
            lookahead_gain: 0.8,
            vehicle_length: (4.2, 5.0),
            vehicle_width: (1.8, 2.0),
            max_attempts: 10,
            step_dt: DEFAULT_STEP_DT,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ScriptedExpert {
    pub params: ExpertParams,
}

struct Driver {
    path: Polyline,
    target_speed: f64,
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn pick_weighted(rng: &mut StreamRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

impl ScriptedExpert {
    pub fn new(params: ExpertParams) -> Self {
        ScriptedExpert { params }
    }

    /// Simulates `n_agents` vehicles for `steps` states. Attempts that end
    /// in a collision or leave the road are regenerated from a fresh stream.
    pub fn rollout(&self, rg: &Roadgraph, n_agents: usize, steps: usize, seed: u64) -> Result<RunSegment> {
        if n_agents == 0 || steps == 0 {
            return Err(Error::InvalidSegment("expert rollout needs agents and steps".into()));
        }
        let attempts = self.params.max_attempts.max(1);
        for attempt in 0..attempts {
            let mut rng = stream(seed, &[purpose::EXPERT, attempt as u64]);
            let Some(agents) = self.try_rollout(rg, n_agents, steps, &mut rng)? else {
                continue;
            };
            if self.is_clean(rg, &agents) {
                return Ok(RunSegment {
                    id: seed,
                    roadgraph: rg.clone(),
                    dynamic_features: traffic_lights(rg, steps, self.params.step_dt),
                    kinds: vec![AgentKind::Vehicle; n_agents],
                    agents,
                    ego_index: 0,
                    step_dt: self.params.step_dt,
                });
            }
        }
        Err(Error::SpawnFailed(attempts))
    }

    fn is_clean(&self, rg: &Roadgraph, agents: &[Vec<AgentState>]) -> bool {
        let steps = agents[0].len();
        (0..steps).all(|t| {
            agents.iter().all(|row| rg.is_on_road(row[t].position))
                && (0..agents.len())
                    .all(|i| (i + 1..agents.len()).all(|j| !obb_overlap(&agents[i][t], &agents[j][t])))
        })
    }

    fn try_rollout(
        &self,
        rg: &Roadgraph,
        n_agents: usize,
        steps: usize,
        rng: &mut StreamRng,
    ) -> Result<Option<Vec<Vec<AgentState>>>> {
        let p = &self.params;
        let entries: Vec<SegmentId> = rg.segments().filter(|s| s.ancestors.is_empty()).map(|s| s.id).collect();
        if entries.is_empty() {
            return Err(Error::InvalidRoadgraph("no entry lane".into()));
        }
        let entry = entries[rng.random_range(0..entries.len())];
        let routes = rg.enumerate_routes(entry, DEFAULT_MAX_ROUTES, DEFAULT_MAX_ROUTE_LENGTH)?;
        let paths = routes
            .iter()
            .map(|r| rg.route_polyline(r))
            .collect::<Result<Vec<_>>>()?;
        let weights = match &p.route_weights {
            Some(w) => {
                let mut w: Vec<f64> = w.iter().take(routes.len()).map(|x| x.max(0.0)).collect();
                w.resize(routes.len(), 0.0);
                if w.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::Config("route weights must have positive mass".into()));
                }
                w
            }
            None => vec![1.0; routes.len()],
        };

        let entry_len = rg.segment(entry)?.length();
        let shortest = paths.iter().map(Polyline::length).fold(f64::INFINITY, f64::min);
        let needed = p.target_speed.1 * p.step_dt * steps as f64 + 10.0;
        let front = (entry_len - uniform(rng, p.front_offset)).min(shortest - needed);
        let mut arcs = vec![front];
        for _ in 1..n_agents {
            let prev = *arcs.last().unwrap();
            arcs.push(prev - uniform(rng, p.spawn_gap));
        }
        if *arcs.last().unwrap() < 1.0 {
            return Ok(None);
        }
        // the ego sits behind the front vehicle whenever there is one
        let ego_slot = usize::from(n_agents > 1);
        let mut slots: Vec<usize> = (0..n_agents).filter(|&s| s != ego_slot).collect();
        slots.insert(0, ego_slot);

        let mut drivers = Vec::with_capacity(n_agents);
        let mut states = Vec::with_capacity(n_agents);
        for &slot in &slots {
            let route = pick_weighted(rng, &weights);
            let target_speed = uniform(rng, p.target_speed);
            let (pos, tangent, _) = paths[route].sample(arcs[slot]);
            let speed = target_speed * rng.random_range(0.8..1.0);
            let heading = tangent.angle();
            states.push(AgentState {
                position: pos,
                heading,
                velocity: Vec2::from_angle(heading) * speed,
                length: uniform(rng, p.vehicle_length),
                width: uniform(rng, p.vehicle_width),
                valid: true,
            });
            drivers.push(Driver {
                path: paths[route].clone(),
                target_speed,
            });
        }

        let mut rows: Vec<Vec<AgentState>> = states.iter().map(|s| vec![*s]).collect();
        for _ in 1..steps {
            let current: Vec<AgentState> = rows.iter().map(|r| *r.last().unwrap()).collect();
            for (i, row) in rows.iter_mut().enumerate() {
                let a = self.control(&drivers[i], &current, i);
                row.push(step_discrete(&current[i], a, p.step_dt));
            }
        }
        Ok(Some(rows))
    }

    fn control(&self, driver: &Driver, states: &[AgentState], me: usize) -> DiscreteAction {
        let p = &self.params;
        let s = &states[me];
        let speed = s.speed();

        let lookahead = p.lookahead_min.max(p.lookahead_gain * speed);
        let proj = driver.path.project(s.position);
        let ahead = proj.arc + lookahead;
        let (mut target, tangent, _) = driver.path.sample(ahead);
        if ahead > driver.path.length() {
            target = target + tangent * (ahead - driver.path.length());
        }
        let local = to_local(target, s.position, s.heading);
        let wheelbase = WHEELBASE_FRACTION * s.length;
        let alpha = local.y.atan2(local.x);
        let steer = (2.0 * wheelbase * alpha.sin() / local.norm().max(1e-6)).atan();

        let mut desired = driver.target_speed;
        for (j, o) in states.iter().enumerate() {
            if j == me || !o.valid {
                continue;
            }
            let rel = to_local(o.position, s.position, s.heading);
            if rel.x <= 0.0 || rel.y.abs() > 2.5 {
                continue;
            }
            let gap = rel.x - 0.5 * (s.length + o.length);
            if gap < p.headway {
                let follow = o.speed() + 0.8 * (gap - 0.6 * p.headway);
                desired = desired.min(follow.max(0.0));
            }
        }
        let accel = 1.5 * (desired - speed);
        DiscreteAction::quantize(accel, steer)
    }
}

/// Expert demonstration with default parameters.
pub fn scripted_expert_rollout(rg: &Roadgraph, n_agents: usize, steps: usize, seed: u64) -> Result<RunSegment> {
    ScriptedExpert::default().rollout(rg, n_agents, steps, seed)
}

/// Inert signal records at the end of every lane feeding three or more
/// connectors, alternating between two phase groups.
fn traffic_lights(rg: &Roadgraph, steps: usize, dt: f64) -> Vec<Vec<TrafficLight>> {
    let stops: Vec<(SegmentId, Vec2)> = rg
        .segments()
        .filter(|s| s.descendants.len() >= 3)
        .map(|s| (s.id, *s.polyline.last().unwrap()))
        .collect();
    if stops.is_empty() {
        return Vec::new();
    }
    let cycle = 20.0;
    (0..steps)
        .map(|t| {
            stops
                .iter()
                .enumerate()
                .map(|(k, &(lane, position))| {
                    let phase = (t as f64 * dt + (k % 2) as f64 * cycle / 2.0) % cycle;
                    let state = if phase < 8.0 {
                        SignalState::Green
                    } else if phase < 10.0 {
                        SignalState::Yellow
                    } else {
                        SignalState::Red
                    };
                    TrafficLight { position, lane, state }
                })
                .collect()
        })
        .collect()
}

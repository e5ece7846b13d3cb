//! Run segments, datasets and demonstration generation.

mod dataset;
mod expert;
mod io;
mod world;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_discrete, DiscreteAction};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::roadgraph::{Roadgraph, SegmentId};

pub use dataset::{generate_dataset, DatasetSpec};
pub use expert::{scripted_expert_rollout, ExpertParams, ScriptedExpert};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_SCHEMA};
pub use world::{generate_world, WorldKind, WorldParams};

pub const DEFAULT_STEP_DT: f64 = 0.2;
pub const DEFAULT_MOVING_THRESHOLD: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    pub length: f64,
    pub width: f64,
    pub valid: bool,
}

impl AgentState {
    /// Zero-padded placeholder for an agent absent at a step.
    pub fn invalid() -> Self {
        AgentState::default()
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.valid {
            let finite = self.position.is_finite() && self.velocity.is_finite() && self.heading.is_finite();
            if !finite || !(self.length > 0.0) || !(self.width > 0.0) {
                return Err("valid state must be finite with positive extent".into());
            }
        } else if *self != AgentState::invalid() {
            return Err("invalid state must be zero-padded".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Vehicle,
    Pedestrian,
    Cyclist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Unknown,
    Red,
    Yellow,
    Green,
}

impl SignalState {
    pub fn code(self) -> f64 {
        match self {
            SignalState::Unknown => 0.0,
            SignalState::Red => 1.0,
            SignalState::Yellow => 0.5,
            SignalState::Green => -1.0,
        }
    }
}

/// Per-step dynamic scene feature. Carried as data only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub position: Vec2,
    pub lane: SegmentId,
    pub state: SignalState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSegment {
    pub id: u64,
    pub roadgraph: Roadgraph,
    /// Traffic-light records per step.
    pub dynamic_features: Vec<Vec<TrafficLight>>,
    /// `agents[i][t]`; every row has the same length.
    pub agents: Vec<Vec<AgentState>>,
    pub kinds: Vec<AgentKind>,
    pub ego_index: usize,
    pub step_dt: f64,
}

impl RunSegment {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_steps(&self) -> usize {
        self.agents.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.num_steps() as f64 * self.step_dt
    }

    pub fn state(&self, agent: usize, t: usize) -> &AgentState {
        &self.agents[agent][t]
    }

    /// States of all agents at step `t`.
    pub fn snapshot(&self, t: usize) -> Vec<AgentState> {
        self.agents.iter().map(|row| row[t]).collect()
    }

    pub fn lights_at(&self, t: usize) -> &[TrafficLight] {
        self.dynamic_features.get(t).map_or(&[], Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSegment(format!("segment {}: {m}", self.id)));
        let steps = self.num_steps();
        if self.agents.iter().any(|r| r.len() != steps) {
            return bad("agent rows differ in length".into());
        }
        if self.kinds.len() != self.agents.len() {
            return bad("kinds and agents differ in length".into());
        }
        if !self.dynamic_features.is_empty() && self.dynamic_features.len() != steps {
            return bad("dynamic features do not cover every step".into());
        }
        if !(self.step_dt > 0.0) {
            return bad("step_dt must be positive".into());
        }
        if self.ego_index >= self.agents.len() || !self.agents[self.ego_index][0].valid {
            return bad("ego must be valid at t=0".into());
        }
        for (i, row) in self.agents.iter().enumerate() {
            for (t, s) in row.iter().enumerate() {
                if let Err(m) = s.check() {
                    return bad(format!("agent {i} step {t}: {m}"));
                }
            }
        }
        Ok(())
    }

    /// Path length an agent covers in the reference trajectory.
    pub fn traveled_distance(&self, agent: usize) -> f64 {
        self.agents[agent]
            .windows(2)
            .filter(|w| w[0].valid && w[1].valid)
            .map(|w| w[0].position.distance(w[1].position))
            .sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<RunSegment>,
    pub test: Vec<RunSegment>,
    pub seed: u64,
    /// Hash of the configuration that produced the dataset.
    #[serde(default)]
    pub config_hash: String,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let train: std::collections::BTreeSet<u64> = self.train.iter().map(|s| s.id).collect();
        if let Some(s) = self.test.iter().find(|s| train.contains(&s.id)) {
            return Err(Error::InvalidSegment(format!("segment id {} is in both splits", s.id)));
        }
        self.train.iter().chain(&self.test).try_for_each(RunSegment::validate)
    }
}

/// Ego plus the vehicles nearest to it at `t = 0` that move more than
/// `moving_threshold` metres over the reference trajectory.
pub fn select_interactive(seg: &RunSegment, n_interactive: usize, moving_threshold: f64) -> Result<Vec<usize>> {
    let ego = seg.ego_index;
    let ego_pos = seg.agents[ego][0].position;
    let mut candidates: Vec<(f64, usize)> = (0..seg.num_agents())
        .filter(|&i| i != ego)
        .filter(|&i| seg.agents[i][0].valid && seg.kinds[i] == AgentKind::Vehicle)
        .filter(|&i| seg.traveled_distance(i) > moving_threshold)
        .map(|i| (seg.agents[i][0].position.distance(ego_pos), i))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let need = n_interactive.saturating_sub(1);
    if n_interactive == 0 || candidates.len() < need {
        return Err(Error::NotEnoughAgents {
            need: n_interactive,
            found: candidates.len() + 1,
        });
    }
    Ok(std::iter::once(ego).chain(candidates.into_iter().take(need).map(|(_, i)| i)).collect())
}

/// Greedy per-step fit of grid actions to a logged trajectory.
///
/// Each step picks the action whose one-step prediction from the logged
/// state lands closest to the next logged position. Exact ties prefer the
/// action nearest the neutral command, then the smaller index. Steps where
/// either endpoint is invalid yield the neutral action.
pub fn fit_reference_actions(seg: &RunSegment, agent: usize) -> Vec<DiscreteAction> {
    seg.agents[agent]
        .windows(2)
        .map(|w| {
            if !(w[0].valid && w[1].valid) {
                return DiscreteAction::NEUTRAL;
            }
            best_fitting_action(&w[0], w[1].position, seg.step_dt)
        })
        .collect()
}

fn best_fitting_action(from: &AgentState, target: Vec2, dt: f64) -> DiscreteAction {
    let mut best = DiscreteAction::NEUTRAL;
    let mut best_err = f64::INFINITY;
    for a in DiscreteAction::all() {
        let err = step_discrete(from, a, dt).position.distance(target);
        let better = err < best_err
            || (err == best_err && a.distance_from_neutral() < best.distance_from_neutral());
        if better {
            best = a;
            best_err = err;
        }
    }
    best
}

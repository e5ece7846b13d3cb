//! Candidate routes and goal choices for the interactive agents of a segment.

use serde::{Deserialize, Serialize};

use super::features::GoalPath;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::roadgraph::{Route, DEFAULT_MAX_ROUTES, DEFAULT_MAX_ROUTE_LENGTH};
use crate::scenario::{select_interactive, RunSegment};

/// Where the goal of a rollout comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalSource {
    /// The route that best matches the reference trajectory.
    Truth,
    /// Straight continuation from the starting lane.
    Default,
    /// Drawn from the goal generator.
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentPlan {
    pub agent: usize,
    pub routes: Vec<Route>,
    pub paths: Vec<GoalPath>,
    /// Index of the route closest to the reference trajectory.
    pub truth: usize,
    pub default: GoalPath,
}

impl AgentPlan {
    pub fn new(seg: &RunSegment, agent: usize) -> Result<Self> {
        let rg = &seg.roadgraph;
        let start = seg.agents[agent][0];
        if !start.valid {
            return Err(Error::InvalidAgent(agent));
        }
        let (first, _, _) = rg.nearest_segment(start.position)?;
        let routes = rg.enumerate_routes(first, DEFAULT_MAX_ROUTES, DEFAULT_MAX_ROUTE_LENGTH)?;
        if routes.is_empty() {
            return Err(Error::NoFeasibleRoutes);
        }
        let track: Vec<Vec2> = seg.agents[agent].iter().filter(|s| s.valid).map(|s| s.position).collect();
        let mut truth = 0;
        let mut best = f64::INFINITY;
        for (i, r) in routes.iter().enumerate() {
            let err = rg.route_displacement_error(r, &track)?;
            if err < best {
                best = err;
                truth = i;
            }
        }
        let paths = routes
            .iter()
            .map(|r| GoalPath::new(rg, r.clone()))
            .collect::<Result<Vec<_>>>()?;
        let default = GoalPath::new(rg, rg.straight_continuation(first, DEFAULT_MAX_ROUTE_LENGTH)?)?;
        Ok(AgentPlan {
            agent,
            routes,
            paths,
            truth,
            default,
        })
    }

    /// Goal used while learning: the true route when a goal generator is
    /// part of the model, otherwise the straight continuation.
    pub fn training_goal(&self, hierarchy: bool) -> (&GoalPath, GoalSource) {
        if hierarchy {
            (&self.paths[self.truth], GoalSource::Truth)
        } else {
            (&self.default, GoalSource::Default)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPlan {
    pub interactive: Vec<usize>,
    pub agents: Vec<AgentPlan>,
}

impl SegmentPlan {
    pub fn new(seg: &RunSegment, n_interactive: usize, moving_threshold: f64) -> Result<Self> {
        let interactive = select_interactive(seg, n_interactive, moving_threshold)?;
        let agents = interactive
            .iter()
            .map(|&a| AgentPlan::new(seg, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentPlan { interactive, agents })
    }

    pub fn training_goals(&self, hierarchy: bool) -> Vec<&GoalPath> {
        self.agents.iter().map(|a| a.training_goal(hierarchy).0).collect()
    }
}

//! Agent-relative observation features and their state Jacobians.
//!
//! Every spatial quantity is expressed in the subject agent's frame. The
//! `*_vjp` methods pull a feature gradient back to gradients with respect to
//! the `(px, py, vx, vy, heading)` state of each agent in the scene.

use crate::dynamics::STATE_DIM;
use crate::error::{Error, Result};
use crate::geom::{to_local, Polyline, Projection, Vec2};
use crate::roadgraph::{Roadgraph, Route};
use crate::scenario::{AgentKind, AgentState, TrafficLight};

pub const MAX_OBJECTS: usize = 16;
pub const MAX_POINTS: usize = 32;
pub const MAX_NEAR: usize = 48;
pub const DISC_RADIUS: f64 = 20.0;
pub const GOAL_POINTS: usize = 16;
pub const GOAL_SPACING: f64 = 4.0;
/// Goal sample whose bearing forms the goal-direction feature.
pub const GOAL_HEADING_INDEX: usize = 3;

pub const SELF_DIM: usize = 6;
pub const GOAL_DIM: usize = 2 * GOAL_POINTS;
pub const POLICY_DENSE: usize = SELF_DIM + GOAL_DIM;
pub const GOALGEN_DENSE: usize = 3;
pub const OBJECT_DIM: usize = 11;
pub const POINT_DIM: usize = 7;
pub const NEAR_DIM: usize = 14;

const POS_SCALE: f64 = 20.0;
const VEL_SCALE: f64 = 10.0;
const SPEED_SCALE: f64 = 10.0;
const LATERAL_SCALE: f64 = 2.0;
const LENGTH_SCALE: f64 = 5.0;
const WIDTH_SCALE: f64 = 2.0;

pub type StateGrad = [f64; STATE_DIM];

/// Everything an encoder may look at for one time step.
#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub roadgraph: &'a Roadgraph,
    pub states: &'a [AgentState],
    pub kinds: &'a [AgentKind],
    pub lights: &'a [TrafficLight],
}

/// A route resampled at fixed spacing, extended past its end along the
/// final tangent so look-ahead windows never run out.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalPath {
    pub route: Route,
    line: Polyline,
    samples: Vec<Vec2>,
}

impl GoalPath {
    pub fn new(rg: &Roadgraph, route: Route) -> Result<Self> {
        let line = rg.route_polyline(&route)?;
        let len = line.length();
        let n = (len / GOAL_SPACING).ceil() as usize + GOAL_POINTS + 2;
        let (end, end_tangent, _) = line.sample(len);
        let samples = (0..n)
            .map(|k| {
                let s = k as f64 * GOAL_SPACING;
                if s <= len {
                    line.sample(s).0
                } else {
                    end + end_tangent * (s - len)
                }
            })
            .collect();
        Ok(GoalPath { route, line, samples })
    }

    pub fn polyline(&self) -> &Polyline {
        &self.line
    }

    fn window(&self, p: Vec2) -> (Projection, &[Vec2]) {
        let proj = self.line.project(p);
        let first = ((proj.arc / GOAL_SPACING).floor() as usize + 1).min(self.samples.len() - GOAL_POINTS);
        (proj, &self.samples[first..first + GOAL_POINTS])
    }
}

fn kind_onehot(kind: AgentKind) -> [f64; 3] {
    match kind {
        AgentKind::Vehicle => [1.0, 0.0, 0.0],
        AgentKind::Pedestrian => [0.0, 1.0, 0.0],
        AgentKind::Cyclist => [0.0, 0.0, 1.0],
    }
}

/// Where a set row came from, with the unscaled quantities its Jacobian needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowSource {
    Agent(usize),
    Lane { rel: Vec2, dir: Vec2 },
    Light { rel: Vec2 },
}

/// Variable-length feature set stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowSet {
    pub dim: usize,
    pub data: Vec<f64>,
    pub sources: Vec<RowSource>,
}

impl RowSet {
    fn new(dim: usize) -> Self {
        RowSet {
            dim,
            ..RowSet::default()
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows zero-padded to `cap`, with a mask marking real entries.
    pub fn padded(&self, cap: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        (0..cap)
            .map(|i| {
                if i < self.len() {
                    (self.row(i).to_vec(), true)
                } else {
                    (vec![0.0; self.dim], false)
                }
            })
            .unzip()
    }

    fn push(&mut self, row: &[f64], src: RowSource) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
        self.sources.push(src);
    }
}

/// Policy observation: self and goal features plus object and point sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub agent: usize,
    pub dense: Vec<f64>,
    pub objects: RowSet,
    pub points: RowSet,
    goal: GoalMeta,
}

/// Goal generator observation; carries no goal.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalObservation {
    pub dense: Vec<f64>,
    pub objects: RowSet,
    pub points: RowSet,
}

/// Discriminator observation: self and goal features plus one set of
/// everything within [`DISC_RADIUS`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscObservation {
    pub agent: usize,
    pub dense: Vec<f64>,
    pub near: RowSet,
    goal: GoalMeta,
}

#[derive(Clone, Debug, PartialEq)]
struct GoalMeta {
    heading_rel: Vec2,
    tangent: Vec2,
    rels: Vec<Vec2>,
}

fn subject<'a>(scene: &Scene<'a>, agent: usize) -> Result<&'a AgentState> {
    match scene.states.get(agent) {
        Some(s) if s.valid => Ok(s),
        _ => Err(Error::InvalidAgent(agent)),
    }
}

fn self_and_goal(s: &AgentState, goal: &GoalPath) -> (Vec<f64>, GoalMeta) {
    let (proj, window) = goal.window(s.position);
    let rels: Vec<Vec2> = window.iter().map(|&g| to_local(g, s.position, s.heading)).collect();
    let heading_rel = rels[GOAL_HEADING_INDEX];
    let dir = if heading_rel.norm() > 1e-9 {
        heading_rel.normalized()
    } else {
        Vec2::new(1.0, 0.0)
    };
    let lateral = proj.tangent.cross(s.position - proj.point);
    let mut dense = Vec::with_capacity(POLICY_DENSE);
    dense.extend([
        s.speed() / SPEED_SCALE,
        dir.x,
        dir.y,
        lateral / LATERAL_SCALE,
        s.length / LENGTH_SCALE,
        s.width / WIDTH_SCALE,
    ]);
    for r in &rels {
        dense.extend([r.x / POS_SCALE, r.y / POS_SCALE]);
    }
    let meta = GoalMeta {
        heading_rel,
        tangent: proj.tangent,
        rels,
    };
    (dense, meta)
}

/// Other valid agents ordered by distance, ties by index.
fn others_by_distance(scene: &Scene<'_>, agent: usize, radius: f64) -> Vec<(f64, usize)> {
    let me = scene.states[agent].position;
    let mut out: Vec<(f64, usize)> = scene
        .states
        .iter()
        .enumerate()
        .filter(|&(j, o)| j != agent && o.valid)
        .map(|(j, o)| (o.position.distance(me), j))
        .filter(|&(d, _)| d <= radius)
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

fn agent_row(s: &AgentState, o: &AgentState, kind: AgentKind) -> [f64; 11] {
    let rel = to_local(o.position, s.position, s.heading);
    let relvel = (o.velocity - s.velocity).rotate(-s.heading);
    let dh = o.heading - s.heading;
    let k = kind_onehot(kind);
    [
        rel.x / POS_SCALE,
        rel.y / POS_SCALE,
        relvel.x / VEL_SCALE,
        relvel.y / VEL_SCALE,
        dh.cos(),
        dh.sin(),
        o.length / LENGTH_SCALE,
        o.width / WIDTH_SCALE,
        k[0],
        k[1],
        k[2],
    ]
}

enum PointItem {
    Lane(usize),
    Light(usize),
}

/// Lane samples and signal records ordered by distance; lane points come
/// before lights on exact ties, then by index.
fn points_by_distance(scene: &Scene<'_>, p: Vec2, radius: f64, cap: usize) -> Vec<PointItem> {
    let mut items: Vec<(f64, usize, usize)> = scene
        .roadgraph
        .lane_points()
        .iter()
        .enumerate()
        .map(|(i, lp)| ((lp.position - p).norm_sq(), 0, i))
        .chain(scene.lights.iter().enumerate().map(|(i, l)| ((l.position - p).norm_sq(), 1, i)))
        .filter(|&(d, _, _)| d <= radius * radius)
        .collect();
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2));
    if items.len() > cap {
        items.select_nth_unstable_by(cap, cmp);
        items.truncate(cap);
    }
    items.sort_by(cmp);
    items
        .into_iter()
        .map(|(_, kind, i)| if kind == 0 { PointItem::Lane(i) } else { PointItem::Light(i) })
        .collect()
}

fn point_rows(scene: &Scene<'_>, s: &AgentState, radius: f64, cap: usize, near_layout: bool) -> RowSet {
    let mut set = RowSet::new(if near_layout { NEAR_DIM } else { POINT_DIM });
    for item in points_by_distance(scene, s.position, radius, cap) {
        match item {
            PointItem::Lane(i) => {
                let lp = &scene.roadgraph.lane_points()[i];
                let rel = to_local(lp.position, s.position, s.heading);
                let dir = lp.direction.rotate(-s.heading);
                let (rx, ry) = (rel.x / POS_SCALE, rel.y / POS_SCALE);
                if near_layout {
                    set.push(
                        &[rx, ry, 0.0, 0.0, dir.x, dir.y, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                        RowSource::Lane { rel, dir },
                    );
                } else {
                    set.push(&[rx, ry, dir.x, dir.y, 1.0, 0.0, 0.0], RowSource::Lane { rel, dir });
                }
            }
            PointItem::Light(i) => {
                let l = &scene.lights[i];
                let rel = to_local(l.position, s.position, s.heading);
                let (rx, ry, code) = (rel.x / POS_SCALE, rel.y / POS_SCALE, l.state.code());
                if near_layout {
                    set.push(
                        &[rx, ry, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, code],
                        RowSource::Light { rel },
                    );
                } else {
                    set.push(&[rx, ry, 0.0, 0.0, 0.0, 1.0, code], RowSource::Light { rel });
                }
            }
        }
    }
    set
}

fn object_rows(scene: &Scene<'_>, agent: usize) -> RowSet {
    let s = &scene.states[agent];
    let mut set = RowSet::new(OBJECT_DIM);
    for (_, j) in others_by_distance(scene, agent, f64::INFINITY).into_iter().take(MAX_OBJECTS) {
        set.push(&agent_row(s, &scene.states[j], scene.kinds[j]), RowSource::Agent(j));
    }
    set
}

pub fn encode_observation(scene: &Scene<'_>, agent: usize, goal: &GoalPath) -> Result<Observation> {
    let s = subject(scene, agent)?;
    let (dense, goal_meta) = self_and_goal(s, goal);
    Ok(Observation {
        agent,
        dense,
        objects: object_rows(scene, agent),
        points: point_rows(scene, s, f64::INFINITY, MAX_POINTS, false),
        goal: goal_meta,
    })
}

pub fn encode_goal_observation(scene: &Scene<'_>, agent: usize) -> Result<GoalObservation> {
    let s = subject(scene, agent)?;
    Ok(GoalObservation {
        dense: vec![s.speed() / SPEED_SCALE, s.length / LENGTH_SCALE, s.width / WIDTH_SCALE],
        objects: object_rows(scene, agent),
        points: point_rows(scene, s, f64::INFINITY, MAX_POINTS, false),
    })
}

pub fn encode_disc_observation(scene: &Scene<'_>, agent: usize, goal: &GoalPath) -> Result<DiscObservation> {
    let s = subject(scene, agent)?;
    let (dense, goal_meta) = self_and_goal(s, goal);
    let mut near = RowSet::new(NEAR_DIM);
    let agents = others_by_distance(scene, agent, DISC_RADIUS);
    for &(_, j) in agents.iter().take(MAX_NEAR) {
        let r = agent_row(s, &scene.states[j], scene.kinds[j]);
        let mut row = [0.0; NEAR_DIM];
        row[..OBJECT_DIM].copy_from_slice(&r);
        near.push(&row, RowSource::Agent(j));
    }
    let room = MAX_NEAR.saturating_sub(near.len());
    let pts = point_rows(scene, s, DISC_RADIUS, room, true);
    near.data.extend(pts.data);
    near.sources.extend(pts.sources);
    Ok(DiscObservation {
        agent,
        dense,
        near,
        goal: goal_meta,
    })
}

fn add_pos_heading(g: &mut StateGrad, s: &AgentState, g_rel: Vec2, rel: Vec2) {
    let world = g_rel.rotate(s.heading);
    g[0] -= world.x;
    g[1] -= world.y;
    g[4] += g_rel.x * rel.y - g_rel.y * rel.x;
}

fn self_goal_vjp(meta: &GoalMeta, s: &AgentState, me: usize, g: &[f64], out: &mut [StateGrad]) {
    let speed = s.speed();
    if speed > 0.0 {
        let k = g[0] / SPEED_SCALE / speed;
        out[me][2] += k * s.velocity.x;
        out[me][3] += k * s.velocity.y;
    }
    let n = meta.heading_rel.norm();
    if n > 1e-9 {
        let u = meta.heading_rel * (1.0 / n);
        let gu = Vec2::new(g[1], g[2]);
        let g_rel = (gu - u * u.dot(gu)) * (1.0 / n);
        add_pos_heading(&mut out[me], s, g_rel, meta.heading_rel);
    }
    let lat = meta.tangent.perp() * (g[3] / LATERAL_SCALE);
    out[me][0] += lat.x;
    out[me][1] += lat.y;
    for (k, rel) in meta.rels.iter().enumerate() {
        let g_rel = Vec2::new(g[SELF_DIM + 2 * k], g[SELF_DIM + 2 * k + 1]) * (1.0 / POS_SCALE);
        add_pos_heading(&mut out[me], s, g_rel, *rel);
    }
}

/// Pulls row gradients back to agent states. `dir_col` is the column of
/// the lane direction pair in this layout.
fn rows_vjp(set: &RowSet, grad: &[f64], dir_col: usize, me: usize, states: &[AgentState], out: &mut [StateGrad]) {
    let s = &states[me];
    for (r, src) in set.sources.iter().enumerate() {
        let g = &grad[r * set.dim..(r + 1) * set.dim];
        let g_rel = Vec2::new(g[0], g[1]) * (1.0 / POS_SCALE);
        match *src {
            RowSource::Agent(j) => {
                let o = &states[j];
                let rel = to_local(o.position, s.position, s.heading);
                let relvel = (o.velocity - s.velocity).rotate(-s.heading);
                let g_vel = Vec2::new(g[2], g[3]) * (1.0 / VEL_SCALE);
                let (sn, cs) = (o.heading - s.heading).sin_cos();
                let (gc, gs) = (g[4], g[5]);
                let wp = g_rel.rotate(s.heading);
                let wv = g_vel.rotate(s.heading);
                out[me][0] -= wp.x;
                out[me][1] -= wp.y;
                out[j][0] += wp.x;
                out[j][1] += wp.y;
                out[me][2] -= wv.x;
                out[me][3] -= wv.y;
                out[j][2] += wv.x;
                out[j][3] += wv.y;
                let dh_pair = gc * sn - gs * cs;
                out[me][4] += g_rel.x * rel.y - g_rel.y * rel.x + g_vel.x * relvel.y - g_vel.y * relvel.x + dh_pair;
                out[j][4] -= dh_pair;
            }
            RowSource::Lane { rel, dir } => {
                add_pos_heading(&mut out[me], s, g_rel, rel);
                out[me][4] += g[dir_col] * dir.y - g[dir_col + 1] * dir.x;
            }
            RowSource::Light { rel } => add_pos_heading(&mut out[me], s, g_rel, rel),
        }
    }
}

impl Observation {
    /// Gradient with respect to every agent's state given gradients of the
    /// dense features and of each row.
    pub fn state_vjp(&self, states: &[AgentState], g_dense: &[f64], g_objects: &[f64], g_points: &[f64]) -> Vec<StateGrad> {
        let mut out = vec![[0.0; STATE_DIM]; states.len()];
        let s = &states[self.agent];
        self_goal_vjp(&self.goal, s, self.agent, g_dense, &mut out);
        rows_vjp(&self.objects, g_objects, 0, self.agent, states, &mut out);
        rows_vjp(&self.points, g_points, 2, self.agent, states, &mut out);
        out
    }
}

impl DiscObservation {
    pub fn state_vjp(&self, states: &[AgentState], g_dense: &[f64], g_near: &[f64]) -> Vec<StateGrad> {
        let mut out = vec![[0.0; STATE_DIM]; states.len()];
        let s = &states[self.agent];
        self_goal_vjp(&self.goal, s, self.agent, g_dense, &mut out);
        rows_vjp(&self.near, g_near, 4, self.agent, states, &mut out);
        out
    }
}

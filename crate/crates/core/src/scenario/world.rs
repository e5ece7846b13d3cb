//! Procedural roadgraphs.

use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::rng::{purpose, stream};
use crate::roadgraph::{Roadgraph, SegmentId, DEFAULT_LANE_HALF_WIDTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldKind {
    Straight,
    Curve,
    Fork,
    Merge,
    FourWay,
}

impl FromStr for WorldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(WorldKind::Straight),
            "curve" => Ok(WorldKind::Curve),
            "fork" => Ok(WorldKind::Fork),
            "merge" => Ok(WorldKind::Merge),
            "four-way" => Ok(WorldKind::FourWay),
            other => Err(Error::InvalidWorldParams(format!("unknown world kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    /// Length of the single lane in `straight` worlds.
    pub length: f64,
    /// Length of approach and exit arms; at least 50 m.
    pub arm_length: f64,
    /// Base radius of curved lanes; at least 20 m.
    pub curve_radius: f64,
    /// Radii are drawn from `[r, r * (1 + radius_jitter)]`.
    pub radius_jitter: f64,
    /// Heading change of the turning branch in fork and merge worlds.
    pub turn_angle_deg: f64,
    pub point_spacing: f64,
    pub lane_half_width: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            length: 200.0,
            arm_length: 100.0,
            curve_radius: 30.0,
            radius_jitter: 0.5,
            turn_angle_deg: 60.0,
            point_spacing: 4.0,
            lane_half_width: DEFAULT_LANE_HALF_WIDTH,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidWorldParams(m.into()));
        if !(self.curve_radius >= 20.0) {
            return bad("curve radius must be at least 20 m");
        }
        if !(self.arm_length >= 50.0) {
            return bad("arm length must be at least 50 m");
        }
        if !(self.length >= 10.0) {
            return bad("straight length must be at least 10 m");
        }
        if !(0.0..=2.0).contains(&self.radius_jitter) {
            return bad("radius jitter must lie in [0, 2]");
        }
        if !(self.turn_angle_deg > 0.0 && self.turn_angle_deg < 180.0) {
            return bad("turn angle must lie in (0, 180) degrees");
        }
        if !(self.point_spacing > 0.1 && self.point_spacing <= 10.0) {
            return bad("point spacing must lie in (0.1, 10] m");
        }
        if !(self.lane_half_width > 0.0 && self.lane_half_width < 10.0) {
            return bad("lane half-width must lie in (0, 10) m");
        }
        Ok(())
    }
}

/// Deterministic in `(kind, params, seed)`.
pub fn generate_world(kind: WorldKind, params: &WorldParams, seed: u64) -> Result<Roadgraph> {
    params.validate()?;
    let mut rng = stream(seed, &[purpose::WORLD]);
    let mut radius = || params.curve_radius * (1.0 + params.radius_jitter * rng.random::<f64>());
    let sp = params.point_spacing;
    let arm = params.arm_length;
    let turn = params.turn_angle_deg.to_radians();
    let (lines, edges): (Vec<(SegmentId, Vec<Vec2>)>, Vec<(SegmentId, SegmentId)>) = match kind {
        WorldKind::Straight => (
            vec![(0, straight(Vec2::ZERO, 0.0, params.length, sp))],
            vec![],
        ),
        WorldKind::Curve => {
            let r = radius();
            let approach = straight(Vec2::new(-arm, 0.0), 0.0, arm, sp);
            let bend = arc(Vec2::ZERO, 0.0, r, FRAC_PI_2, sp);
            let end = *bend.last().unwrap();
            let exit = straight(end, FRAC_PI_2, arm, sp);
            (vec![(0, approach), (1, bend), (2, exit)], vec![(0, 1), (1, 2)])
        }
        WorldKind::Fork => {
            let r = radius();
            let approach = straight(Vec2::new(-arm, 0.0), 0.0, arm, sp);
            let branch_len = r * turn;
            let through = straight(Vec2::ZERO, 0.0, branch_len, sp);
            let bend = arc(Vec2::ZERO, 0.0, r, -turn, sp);
            let through_end = *through.last().unwrap();
            let bend_end = *bend.last().unwrap();
            (
                vec![
                    (0, approach),
                    (1, through),
                    (2, bend),
                    (3, straight(through_end, 0.0, arm, sp)),
                    (4, straight(bend_end, -turn, arm, sp)),
                ],
                vec![(0, 1), (0, 2), (1, 3), (2, 4)],
            )
        }
        WorldKind::Merge => {
            let r = radius();
            // ramp arc ends tangent to the main lane at the origin
            let start_heading = turn;
            let ramp_start = Vec2::new(-r * turn.sin(), r * turn.cos() - r);
            let ramp_arc = arc(ramp_start, start_heading, r, -turn, sp);
            let lead_origin = ramp_start - Vec2::from_angle(start_heading) * arm;
            (
                vec![
                    (0, straight(Vec2::new(-arm, 0.0), 0.0, arm, sp)),
                    (1, ramp_arc),
                    (2, straight(lead_origin, start_heading, arm, sp)),
                    (3, straight(Vec2::ZERO, 0.0, arm, sp)),
                ],
                vec![(0, 3), (2, 1), (1, 3)],
            )
        }
        WorldKind::FourWay => four_way(params, sp),
    };
    Roadgraph::from_links(lines, &edges, params.lane_half_width)
}

fn straight(origin: Vec2, heading: f64, length: f64, spacing: f64) -> Vec<Vec2> {
    let n = (length / spacing).ceil().max(1.0) as usize;
    let dir = Vec2::from_angle(heading);
    (0..=n).map(|i| origin + dir * (length * i as f64 / n as f64)).collect()
}

/// Circular arc starting at `origin` with `heading`, turning by `sweep`
/// radians (positive = left).
fn arc(origin: Vec2, heading: f64, radius: f64, sweep: f64, spacing: f64) -> Vec<Vec2> {
    let n = (radius * sweep.abs() / spacing).ceil().max(2.0) as usize;
    let side = sweep.signum();
    let centre = origin + Vec2::from_angle(heading).perp() * (radius * side);
    (0..=n)
        .map(|i| {
            let h = heading + sweep * i as f64 / n as f64;
            centre - Vec2::from_angle(h).perp() * (radius * side)
        })
        .collect()
}

fn bezier(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, spacing: f64) -> Vec<Vec2> {
    let eval = |t: f64| {
        let u = 1.0 - t;
        p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
    };
    let approx_len = p0.distance(p1) + p1.distance(p2) + p2.distance(p3);
    let n = (approx_len / spacing).ceil().max(2.0) as usize;
    (0..=n).map(|i| eval(i as f64 / n as f64)).collect()
}

/// Single-lane-per-direction intersection. Arm `k` points along bearing
/// `k * 90deg`; inbound lanes are `10 + k`, outbound `20 + k`, and the
/// connector from inbound `i` to outbound `j` is `100 + 10 i + j`.
fn four_way(params: &WorldParams, sp: f64) -> (Vec<(SegmentId, Vec<Vec2>)>, Vec<(SegmentId, SegmentId)>) {
    let h = params.lane_half_width;
    let box_half = 2.0 * h + 4.0;
    let arm = params.arm_length;
    let right_of = |heading: f64| -Vec2::from_angle(heading).perp();
    let mut lines = Vec::new();
    let mut edges = Vec::new();
    let mut inbound_end = [Vec2::ZERO; 4];
    let mut outbound_start = [Vec2::ZERO; 4];
    for k in 0..4u32 {
        let bearing = k as f64 * FRAC_PI_2;
        let out_dir = Vec2::from_angle(bearing);
        let in_heading = bearing + PI;
        let in_start = out_dir * (box_half + arm) + right_of(in_heading) * h;
        let inbound = straight(in_start, in_heading, arm, sp);
        inbound_end[k as usize] = *inbound.last().unwrap();
        lines.push((10 + k, inbound));
        let out_start = out_dir * box_half + right_of(bearing) * h;
        outbound_start[k as usize] = out_start;
        lines.push((20 + k, straight(out_start, bearing, arm, sp)));
    }
    for i in 0..4u32 {
        let in_heading = i as f64 * FRAC_PI_2 + PI;
        for j in 0..4u32 {
            if i == j {
                continue;
            }
            let out_heading = j as f64 * FRAC_PI_2;
            let p0 = inbound_end[i as usize];
            let p3 = outbound_start[j as usize];
            let reach = 0.55 * p0.distance(p3);
            let p1 = p0 + Vec2::from_angle(in_heading) * reach;
            let p2 = p3 - Vec2::from_angle(out_heading) * reach;
            let id = 100 + 10 * i + j;
            lines.push((id, bezier(p0, p1, p2, p3, sp)));
            edges.push((10 + i, id));
            edges.push((id, 20 + j));
        }
    }
    (lines, edges)
}

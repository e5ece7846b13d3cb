//! Transition functions and collision geometry.
//!
//! Two action spaces drive agents: a 7x21 grid of accelerations and steering
//! angles fed through a kinematic bicycle, and free x-y displacements whose
//! transition is differentiable almost everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::scenario::AgentState;

pub const ACCEL_LEVELS: usize = 7;
pub const STEER_LEVELS: usize = 21;
pub const NUM_DISCRETE_ACTIONS: usize = ACCEL_LEVELS * STEER_LEVELS;
pub const MAX_ACCEL: f64 = 8.0;
pub const MAX_STEER: f64 = 0.3;
pub const MAX_SPEED: f64 = 30.0;
pub const WHEELBASE_FRACTION: f64 = 0.6;
/// Displacements shorter than this keep the previous heading.
pub const HEADING_HOLD_DISTANCE: f64 = 0.05;

/// Length of the kinematic state used for gradients: `[px, py, vx, vy, heading]`.
pub const STATE_DIM: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiscreteAction {
    pub accel_index: u8,
    pub steer_index: u8,
}

impl DiscreteAction {
    pub const NEUTRAL: DiscreteAction = DiscreteAction {
        accel_index: (ACCEL_LEVELS / 2) as u8,
        steer_index: (STEER_LEVELS / 2) as u8,
    };

    pub fn new(accel_index: usize, steer_index: usize) -> Option<Self> {
        (accel_index < ACCEL_LEVELS && steer_index < STEER_LEVELS).then_some(DiscreteAction {
            accel_index: accel_index as u8,
            steer_index: steer_index as u8,
        })
    }

    /// Flat class index in `0..147`, accel-major.
    pub fn index(self) -> usize {
        self.accel_index as usize * STEER_LEVELS + self.steer_index as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        DiscreteAction::new(i / STEER_LEVELS, i % STEER_LEVELS)
    }

    pub fn accel(self) -> f64 {
        -MAX_ACCEL + 2.0 * MAX_ACCEL * self.accel_index as f64 / (ACCEL_LEVELS - 1) as f64
    }

    pub fn steer(self) -> f64 {
        -MAX_STEER + 2.0 * MAX_STEER * self.steer_index as f64 / (STEER_LEVELS - 1) as f64
    }

    /// Grid action closest to a continuous (accel, steer) command.
    pub fn quantize(accel: f64, steer: f64) -> Self {
        let ai = ((accel + MAX_ACCEL) / (2.0 * MAX_ACCEL) * (ACCEL_LEVELS - 1) as f64)
            .round()
            .clamp(0.0, (ACCEL_LEVELS - 1) as f64);
        let si = ((steer + MAX_STEER) / (2.0 * MAX_STEER) * (STEER_LEVELS - 1) as f64)
            .round()
            .clamp(0.0, (STEER_LEVELS - 1) as f64);
        DiscreteAction {
            accel_index: ai as u8,
            steer_index: si as u8,
        }
    }

    /// Grid distance to the neutral action; used to break fitting ties.
    pub fn distance_from_neutral(self) -> usize {
        let n = DiscreteAction::NEUTRAL;
        (self.accel_index as isize - n.accel_index as isize).unsigned_abs()
            + (self.steer_index as isize - n.steer_index as isize).unsigned_abs()
    }

    pub fn all() -> impl Iterator<Item = DiscreteAction> {
        (0..NUM_DISCRETE_ACTIONS).map(|i| DiscreteAction::from_index(i).unwrap())
    }
}

/// One-step displacement in world coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContinuousAction {
    pub dx: f64,
    pub dy: f64,
}

impl ContinuousAction {
    /// Rotates an agent-frame displacement into the world frame.
    pub fn from_local(local: Vec2, heading: f64) -> Self {
        let w = local.rotate(heading);
        ContinuousAction { dx: w.x, dy: w.y }
    }

    pub fn as_vec(self) -> Vec2 {
        Vec2::new(self.dx, self.dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(DiscreteAction),
    Continuous(ContinuousAction),
}

pub fn step(s: &AgentState, a: Action, dt: f64) -> AgentState {
    match a {
        Action::Discrete(d) => step_discrete(s, d, dt),
        Action::Continuous(c) => step_continuous(s, c, dt),
    }
}

/// Kinematic bicycle update with wheelbase `0.6 * length`.
///
/// Position advances with the mean of old and new speed along the mean of
/// old and new heading, so both action components affect the next position.
pub fn step_discrete(s: &AgentState, a: DiscreteAction, dt: f64) -> AgentState {
    let speed = s.speed();
    let wheelbase = WHEELBASE_FRACTION * s.length;
    let new_speed = (speed + a.accel() * dt).clamp(0.0, MAX_SPEED);
    let new_heading = s.heading + speed / wheelbase * a.steer().tan() * dt;
    let mean_heading = 0.5 * (s.heading + new_heading);
    let travel = 0.5 * (speed + new_speed) * dt;
    AgentState {
        position: s.position + Vec2::from_angle(mean_heading) * travel,
        heading: new_heading,
        velocity: Vec2::from_angle(new_heading) * new_speed,
        ..*s
    }
}

pub fn step_continuous(s: &AgentState, a: ContinuousAction, dt: f64) -> AgentState {
    let d = a.as_vec();
    let heading = if d.norm() > HEADING_HOLD_DISTANCE {
        d.angle()
    } else {
        s.heading
    };
    AgentState {
        position: s.position + d,
        heading,
        velocity: d * (1.0 / dt),
        ..*s
    }
}

/// `d(px, py, vx, vy, heading)' / d(dx, dy)` as five rows of two columns.
pub type ContinuousJacobian = [[f64; 2]; STATE_DIM];

pub fn jacobian_continuous(_s: &AgentState, a: ContinuousAction, dt: f64) -> Result<ContinuousJacobian> {
    let r2 = a.dx * a.dx + a.dy * a.dy;
    if r2.sqrt() <= HEADING_HOLD_DISTANCE {
        return Err(Error::NondifferentiableRegion);
    }
    Ok([
        [1.0, 0.0],
        [0.0, 1.0],
        [1.0 / dt, 0.0],
        [0.0, 1.0 / dt],
        [-a.dy / r2, a.dx / r2],
    ])
}

/// Corners of an agent's oriented bounding box, counter-clockwise.
pub fn obb_corners(s: &AgentState) -> [Vec2; 4] {
    let f = Vec2::from_angle(s.heading) * (0.5 * s.length);
    let l = Vec2::from_angle(s.heading).perp() * (0.5 * s.width);
    let c = s.position;
    [c + f + l, c - f + l, c - f - l, c + f - l]
}

/// Separating-axis test on two oriented rectangles; touching counts.
pub fn obb_overlap(a: &AgentState, b: &AgentState) -> bool {
    let ca = obb_corners(a);
    let cb = obb_corners(b);
    let axes = [
        Vec2::from_angle(a.heading),
        Vec2::from_angle(a.heading).perp(),
        Vec2::from_angle(b.heading),
        Vec2::from_angle(b.heading).perp(),
    ];
    axes.iter().all(|&ax| {
        let (amin, amax) = extent(&ca, ax);
        let (bmin, bmax) = extent(&cb, ax);
        amin <= bmax && bmin <= amax
    })
}

fn extent(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let p = c.dot(axis);
        (lo.min(p), hi.max(p))
    })
}

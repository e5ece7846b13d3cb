//! Planar geometry: vectors, agent-frame transforms and polylines with
//! arc-length parameterisation.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Expresses `q` in the frame of an agent at `origin` with heading `heading`.
pub fn to_local(q: Vec2, origin: Vec2, heading: f64) -> Vec2 {
    (q - origin).rotate(-heading)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    } else if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub distance: f64,
    /// Arc length of the foot point from the polyline start.
    pub arc: f64,
    pub point: Vec2,
    /// Unit direction of the polyline piece containing the foot point.
    pub tangent: Vec2,
    pub piece: usize,
    /// False when the foot point was clamped to a piece endpoint.
    pub interior: bool,
}

/// Distance and foot point of `p` on the segment `a`-`b`.
pub fn project_onto_segment(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64, bool) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return (p.distance(a), 0.0, false);
    }
    let u = (p - a).dot(ab) / len_sq;
    let (u, interior) = if u <= 0.0 {
        (0.0, false)
    } else if u >= 1.0 {
        (1.0, false)
    } else {
        (u, true)
    };
    let foot = a + ab * u;
    (p.distance(foot), u, interior)
}

/// Point-to-polyline distance, brute force over pieces.
pub fn distance_to_points(points: &[Vec2], p: Vec2) -> f64 {
    match points.len() {
        0 => f64::INFINITY,
        1 => p.distance(points[0]),
        _ => points
            .windows(2)
            .map(|w| project_onto_segment(p, w[0], w[1]).0)
            .fold(f64::INFINITY, f64::min),
    }
}

/// An open polyline with cumulative arc lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline, dropping points closer than 1e-9 m to their predecessor.
    pub fn new(raw: impl IntoIterator<Item = Vec2>) -> Self {
        let mut points: Vec<Vec2> = Vec::new();
        for p in raw {
            if points.last().is_none_or(|q| q.distance(p) > 1e-9) {
                points.push(p);
            }
        }
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += p.distance(points[i - 1]);
            }
            cum.push(acc);
        }
        Polyline { points, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn project(&self, p: Vec2) -> Projection {
        if self.points.len() == 1 {
            return Projection {
                distance: p.distance(self.points[0]),
                arc: 0.0,
                point: self.points[0],
                tangent: Vec2::new(1.0, 0.0),
                piece: 0,
                interior: false,
            };
        }
        let mut best: Option<Projection> = None;
        for (i, w) in self.points.windows(2).enumerate() {
            let (d, u, interior) = project_onto_segment(p, w[0], w[1]);
            if best.is_none_or(|b| d < b.distance) {
                let seg = w[1] - w[0];
                best = Some(Projection {
                    distance: d,
                    arc: self.cum[i] + u * (self.cum[i + 1] - self.cum[i]),
                    point: w[0] + seg * u,
                    tangent: seg.normalized(),
                    piece: i,
                    interior,
                });
            }
        }
        best.expect("polyline with at least two points")
    }

    /// Point and unit tangent at arc length `s`; `s` is clamped to the
    /// polyline, and the flag reports whether clamping happened.
    pub fn sample(&self, s: f64) -> (Vec2, Vec2, bool) {
        let n = self.points.len();
        if n == 1 {
            return (self.points[0], Vec2::new(1.0, 0.0), true);
        }
        let len = self.length();
        let (s, clamped) = if s <= 0.0 {
            (0.0, s < 0.0)
        } else if s >= len {
            (len, s > len)
        } else {
            (s, false)
        };
        let i = match self.cum.partition_point(|&c| c <= s) {
            0 => 0,
            k => (k - 1).min(n - 2),
        };
        let seg = self.points[i + 1] - self.points[i];
        let piece_len = self.cum[i + 1] - self.cum[i];
        let u = if piece_len > 0.0 {
            (s - self.cum[i]) / piece_len
        } else {
            0.0
        };
        (self.points[i] + seg * u, seg.normalized(), clamped)
    }
}

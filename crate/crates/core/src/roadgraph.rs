//! Lane-graph world model.
//!
//! A [`Roadgraph`] is a directed graph of lane segments. Each segment carries
//! a centreline polyline; descendant links describe legal continuations.
//! The graph is immutable after construction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{distance_to_points, Polyline, Vec2};

pub type SegmentId = u32;

pub const MAX_ROADGRAPH_POINTS: usize = 10_000;
pub const DEFAULT_LANE_HALF_WIDTH: f64 = 1.85;
pub const DEFAULT_MAX_ROUTES: usize = 200;
pub const DEFAULT_MAX_ROUTE_LENGTH: f64 = 500.0;

const MIN_POINT_SEPARATION: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub id: SegmentId,
    pub polyline: Vec<Vec2>,
    pub ancestors: Vec<SegmentId>,
    pub descendants: Vec<SegmentId>,
    pub left_neighbour: Option<SegmentId>,
    pub right_neighbour: Option<SegmentId>,
}

impl LaneSegment {
    /// Segment with no links; connect with [`Roadgraph::from_links`].
    pub fn new(id: SegmentId, polyline: Vec<Vec2>) -> Self {
        LaneSegment {
            id,
            polyline,
            ancestors: Vec::new(),
            descendants: Vec::new(),
            left_neighbour: None,
            right_neighbour: None,
        }
    }

    pub fn length(&self) -> f64 {
        self.polyline.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    fn start_direction(&self) -> Vec2 {
        (self.polyline[1] - self.polyline[0]).normalized()
    }

    fn end_direction(&self) -> Vec2 {
        let n = self.polyline.len();
        (self.polyline[n - 1] - self.polyline[n - 2]).normalized()
    }
}

/// A lane centreline sample used by observation encoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanePoint {
    pub position: Vec2,
    pub direction: Vec2,
    pub segment: SegmentId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Route {
    pub segment_ids: Vec<SegmentId>,
}

#[derive(Serialize, Deserialize)]
struct RoadgraphRecord {
    lane_half_width: f64,
    segments: Vec<LaneSegment>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RoadgraphRecord", into = "RoadgraphRecord")]
pub struct Roadgraph {
    segments: BTreeMap<SegmentId, LaneSegment>,
    lane_half_width: f64,
    lane_points: Vec<LanePoint>,
    centrelines: Vec<Polyline>,
}

impl PartialEq for Roadgraph {
    fn eq(&self, other: &Self) -> bool {
        self.segments == other.segments && self.lane_half_width == other.lane_half_width
    }
}

impl TryFrom<RoadgraphRecord> for Roadgraph {
    type Error = Error;
    fn try_from(r: RoadgraphRecord) -> Result<Self> {
        Roadgraph::new(r.segments, r.lane_half_width)
    }
}

impl From<Roadgraph> for RoadgraphRecord {
    fn from(rg: Roadgraph) -> Self {
        RoadgraphRecord {
            lane_half_width: rg.lane_half_width,
            segments: rg.segments.into_values().collect(),
        }
    }
}

impl Roadgraph {
    /// Validates and freezes a set of fully linked segments.
    pub fn new(segments: Vec<LaneSegment>, lane_half_width: f64) -> Result<Self> {
        if !(lane_half_width > 0.0 && lane_half_width.is_finite()) {
            return Err(Error::InvalidRoadgraph(format!(
                "lane half-width {lane_half_width} must be positive"
            )));
        }
        let mut map = BTreeMap::new();
        for seg in segments {
            if map.contains_key(&seg.id) {
                return Err(Error::InvalidRoadgraph(format!("duplicate id {}", seg.id)));
            }
            map.insert(seg.id, seg);
        }
        let total: usize = map.values().map(|s| s.polyline.len()).sum();
        if total > MAX_ROADGRAPH_POINTS {
            return Err(Error::InvalidRoadgraph(format!(
                "{total} points exceeds {MAX_ROADGRAPH_POINTS}"
            )));
        }
        for seg in map.values() {
            if seg.polyline.len() < 2 {
                return Err(Error::InvalidRoadgraph(format!(
                    "segment {} has fewer than 2 points",
                    seg.id
                )));
            }
            for w in seg.polyline.windows(2) {
                if !(w[0].is_finite() && w[1].is_finite()) || w[0].distance(w[1]) <= MIN_POINT_SEPARATION {
                    return Err(Error::InvalidRoadgraph(format!(
                        "segment {} has repeated or non-finite points",
                        seg.id
                    )));
                }
            }
            let links = seg
                .ancestors
                .iter()
                .chain(&seg.descendants)
                .chain(seg.left_neighbour.iter())
                .chain(seg.right_neighbour.iter());
            for id in links {
                if !map.contains_key(id) {
                    return Err(Error::InvalidRoadgraph(format!(
                        "segment {} links to missing segment {id}",
                        seg.id
                    )));
                }
            }
            for d in &seg.descendants {
                if !map[d].ancestors.contains(&seg.id) {
                    return Err(Error::InvalidRoadgraph(format!(
                        "{d} is a descendant of {} but does not list it as ancestor",
                        seg.id
                    )));
                }
            }
            for a in &seg.ancestors {
                if !map[a].descendants.contains(&seg.id) {
                    return Err(Error::InvalidRoadgraph(format!(
                        "{a} is an ancestor of {} but does not list it as descendant",
                        seg.id
                    )));
                }
            }
        }
        let lane_points = map
            .values()
            .flat_map(|seg| {
                let n = seg.polyline.len();
                (0..n).map(move |i| {
                    let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
                    LanePoint {
                        position: seg.polyline[i],
                        direction: (seg.polyline[b] - seg.polyline[a]).normalized(),
                        segment: seg.id,
                    }
                })
            })
            .collect();
        let centrelines = map
            .values()
            .map(|s| Polyline::new(s.polyline.iter().copied()))
            .collect();
        Ok(Roadgraph {
            segments: map,
            lane_half_width,
            lane_points,
            centrelines,
        })
    }

    /// Builds a graph from polylines and descendant edges, filling in the
    /// matching ancestor lists.
    pub fn from_links(
        polylines: Vec<(SegmentId, Vec<Vec2>)>,
        edges: &[(SegmentId, SegmentId)],
        lane_half_width: f64,
    ) -> Result<Self> {
        let mut segs: BTreeMap<SegmentId, LaneSegment> = polylines
            .into_iter()
            .map(|(id, pl)| (id, LaneSegment::new(id, pl)))
            .collect();
        for &(a, b) in edges {
            if !segs.contains_key(&a) {
                return Err(Error::UnknownSegment(a));
            }
            if !segs.contains_key(&b) {
                return Err(Error::UnknownSegment(b));
            }
            segs.get_mut(&a).unwrap().descendants.push(b);
            segs.get_mut(&b).unwrap().ancestors.push(a);
        }
        Roadgraph::new(segs.into_values().collect(), lane_half_width)
    }

    pub fn segment(&self, id: SegmentId) -> Result<&LaneSegment> {
        self.segments.get(&id).ok_or(Error::UnknownSegment(id))
    }

    pub fn segments(&self) -> impl Iterator<Item = &LaneSegment> {
        self.segments.values()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn lane_half_width(&self) -> f64 {
        self.lane_half_width
    }

    pub fn point_count(&self) -> usize {
        self.lane_points.len()
    }

    pub fn lane_points(&self) -> &[LanePoint] {
        &self.lane_points
    }

    /// Same graph with a different lane half-width.
    pub fn with_half_width(&self, lane_half_width: f64) -> Result<Self> {
        Roadgraph::new(self.segments.values().cloned().collect(), lane_half_width)
    }

    /// Segment minimising point-to-polyline distance; returns the id, the
    /// arc length of the foot point along that segment and the distance.
    pub fn nearest_segment(&self, p: Vec2) -> Result<(SegmentId, f64, f64)> {
        let mut best: Option<(SegmentId, f64, f64)> = None;
        for (seg, line) in self.segments.values().zip(&self.centrelines) {
            let pr = line.project(p);
            // strict comparison keeps the smaller id on ties
            if best.is_none_or(|(_, _, d)| pr.distance < d) {
                best = Some((seg.id, pr.arc, pr.distance));
            }
        }
        best.ok_or(Error::EmptyRoadgraph)
    }

    /// Distance from `p` to the closest lane centreline.
    pub fn distance_to_lanes(&self, p: Vec2) -> f64 {
        self.segments
            .values()
            .map(|s| distance_to_points(&s.polyline, p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_on_road(&self, p: Vec2) -> bool {
        self.distance_to_lanes(p) <= self.lane_half_width
    }

    /// Depth-first enumeration of descendant paths from `start`.
    ///
    /// A route stops growing when its last segment has no descendants or
    /// its cumulative length exceeds `max_length`. Children are visited in
    /// id order so route indices are stable.
    pub fn enumerate_routes(
        &self,
        start: SegmentId,
        max_routes: usize,
        max_length: f64,
    ) -> Result<Vec<Route>> {
        let first = self.segment(start)?;
        let mut out = Vec::new();
        let mut path = vec![start];
        self.expand(first, first.length(), &mut path, &mut out, max_routes, max_length);
        Ok(out)
    }

    fn expand(
        &self,
        seg: &LaneSegment,
        length: f64,
        path: &mut Vec<SegmentId>,
        out: &mut Vec<Route>,
        max_routes: usize,
        max_length: f64,
    ) {
        if out.len() >= max_routes {
            return;
        }
        if seg.descendants.is_empty() || length > max_length {
            out.push(Route {
                segment_ids: path.clone(),
            });
            return;
        }
        let mut children = seg.descendants.clone();
        children.sort_unstable();
        children.dedup();
        for c in children {
            if out.len() >= max_routes {
                return;
            }
            let child = &self.segments[&c];
            path.push(c);
            self.expand(child, length + child.length(), path, out, max_routes, max_length);
            path.pop();
        }
    }

    /// Route that always takes the descendant whose entry direction deviates
    /// least from the current exit direction.
    pub fn straight_continuation(&self, start: SegmentId, max_length: f64) -> Result<Route> {
        let mut seg = self.segment(start)?;
        let mut ids = vec![start];
        let mut length = seg.length();
        while !seg.descendants.is_empty() && length <= max_length {
            let exit = seg.end_direction();
            let mut children = seg.descendants.clone();
            children.sort_unstable();
            let next = children
                .iter()
                .map(|c| &self.segments[c])
                .fold(None::<(&LaneSegment, f64)>, |best, c| {
                    let dev = exit.cross(c.start_direction()).atan2(exit.dot(c.start_direction())).abs();
                    match best {
                        Some((_, d)) if d <= dev => best,
                        _ => Some((c, dev)),
                    }
                })
                .expect("non-empty descendants")
                .0;
            ids.push(next.id);
            length += next.length();
            seg = next;
        }
        Ok(Route { segment_ids: ids })
    }

    pub fn validate_route(&self, route: &Route) -> Result<()> {
        if route.segment_ids.is_empty() {
            return Err(Error::InvalidRoute("empty route".into()));
        }
        for id in &route.segment_ids {
            self.segment(*id)?;
        }
        for w in route.segment_ids.windows(2) {
            if !self.segments[&w[0]].descendants.contains(&w[1]) {
                return Err(Error::InvalidRoute(format!("{} is not a descendant of {}", w[1], w[0])));
            }
        }
        Ok(())
    }

    /// Concatenated centreline of a route.
    pub fn route_polyline(&self, route: &Route) -> Result<Polyline> {
        let mut pts = Vec::new();
        for id in &route.segment_ids {
            pts.extend(self.segment(*id)?.polyline.iter().copied());
        }
        Ok(Polyline::new(pts))
    }

    /// Mean distance of `positions` to the route centreline.
    pub fn route_displacement_error(&self, route: &Route, positions: &[Vec2]) -> Result<f64> {
        let pl = self.route_polyline(route)?;
        if positions.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = positions.iter().map(|&p| distance_to_points(pl.points(), p)).sum();
        Ok(total / positions.len() as f64)
    }

    /// Segments with at least one ancestor that has two or more descendants.
    pub fn branching_regions(&self) -> BTreeSet<SegmentId> {
        self.segments
            .values()
            .filter(|s| s.ancestors.iter().any(|a| self.segments[a].descendants.len() >= 2))
            .map(|s| s.id)
            .collect()
    }
}

/// Mean signed Menger curvature over interior vertices; left turns positive.
pub fn segment_curvature(seg: &LaneSegment) -> f64 {
    polyline_curvature(&seg.polyline)
}

pub fn polyline_curvature(points: &[Vec2]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let total: f64 = points.windows(3).map(|w| menger(w[0], w[1], w[2])).sum();
    total / (points.len() - 2) as f64
}

fn menger(p0: Vec2, p1: Vec2, p2: Vec2) -> f64 {
    let a = p1 - p0;
    let b = p2 - p1;
    let c = p2 - p0;
    let cross = a.cross(b);
    let denom = a.norm() * b.norm() * c.norm();
    if denom == 0.0 || cross.abs() <= 1e-9 * a.norm() * b.norm() {
        return 0.0;
    }
    2.0 * cross / denom
}

//! Naive recomputations of the metric suite on random mini-scenes.

use rand::Rng;
use symphony::dynamics::obb_corners;
use symphony::geom::Vec2;
use symphony::metrics::{SegmentRollouts, CURVATURE_BINS};
use symphony::rng::{stream, StreamRng};
use symphony::roadgraph::segment_curvature;
use symphony::scenario::{generate_world, AgentKind, AgentState, RunSegment, WorldKind, WorldParams};

pub const KINDS: [WorldKind; 5] = [
    WorldKind::Straight,
    WorldKind::Curve,
    WorldKind::Fork,
    WorldKind::Merge,
    WorldKind::FourWay,
];

pub fn random_state(rng: &mut StreamRng, anchors: &[Vec2]) -> AgentState {
    if rng.random_bool(0.1) {
        return AgentState::invalid();
    }
    let a = anchors[rng.random_range(0..anchors.len())];
    AgentState {
        position: a + Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
        heading: rng.random_range(-3.1..3.1),
        velocity: Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
        length: rng.random_range(3.0..5.0),
        width: rng.random_range(1.5..2.2),
        valid: true,
    }
}

/// A small random scene on a generated world, with `m` random rollouts.
pub struct MiniScene {
    pub segment: RunSegment,
    pub interactive: Vec<usize>,
    pub rollouts: Vec<Vec<Vec<AgentState>>>,
}

pub fn mini_scene(seed: u64, m: usize) -> MiniScene {
    let mut rng = stream(seed, &[0]);
    let kind = KINDS[rng.random_range(0..KINDS.len())];
    let rg = generate_world(kind, &WorldParams::default(), seed).unwrap();
    let pts: Vec<Vec2> = rg.lane_points().iter().map(|p| p.position).collect();
    let anchors: Vec<Vec2> = (0..3).map(|_| pts[rng.random_range(0..pts.len())]).collect();
    let n = rng.random_range(2..5);
    let steps = rng.random_range(3..9);
    let agents: Vec<Vec<AgentState>> = (0..n)
        .map(|_| (0..steps).map(|_| random_state(&mut rng, &anchors)).collect())
        .collect();
    let interactive: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    let interactive = if interactive.is_empty() { vec![0] } else { interactive };
    let rollouts = (0..m)
        .map(|_| {
            (0..steps)
                .map(|_| (0..n).map(|_| random_state(&mut rng, &anchors)).collect())
                .collect()
        })
        .collect();
    MiniScene {
        segment: RunSegment {
            id: seed,
            roadgraph: rg,
            dynamic_features: Vec::new(),
            agents,
            kinds: vec![AgentKind::Vehicle; n],
            ego_index: 0,
            step_dt: 0.2,
        },
        interactive,
        rollouts,
    }
}

pub fn as_sets(scenes: &[MiniScene]) -> Vec<SegmentRollouts<'_>> {
    scenes
        .iter()
        .map(|s| SegmentRollouts {
            segment: &s.segment,
            interactive: &s.interactive,
            rollouts: s.rollouts.clone(),
        })
        .collect()
}

pub fn scenes(count: u64, base: u64) -> Vec<MiniScene> {
    (0..count).map(|i| mini_scene(base + i, 1 + (i as usize % 5))).collect()
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>().abs() / 2.0
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
pub fn clip(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let inside = |p: Vec2| (b - a).cross(p - a) >= 0.0;
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let cross_at = |p: Vec2, q: Vec2| {
                let d = q - p;
                let t = (b - a).cross(a - p) / (b - a).cross(d);
                p + d * t
            };
            match (inside(p), inside(q)) {
                (true, true) => out.push(q),
                (true, false) => out.push(cross_at(p, q)),
                (false, true) => {
                    out.push(cross_at(p, q));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

pub fn ccw(s: &AgentState) -> Vec<Vec2> {
    let mut c = obb_corners(s).to_vec();
    if polygon_signed_area(&c) < 0.0 {
        c.reverse();
    }
    c
}

pub fn polygon_signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() / 2.0
}

pub fn boxes_intersect(a: &AgentState, b: &AgentState) -> bool {
    let inter = clip(&ccw(a), &ccw(b));
    inter.len() >= 3 && polygon_area(&inter) > 1e-9
}

pub fn oracle_collision_rate(scenes: &[MiniScene]) -> f64 {
    let (mut hit, mut total) = (0.0, 0.0);
    for s in scenes {
        for r in &s.rollouts {
            total += 1.0;
            let mut any = false;
            for states in r {
                for &i in &s.interactive {
                    for j in 0..states.len() {
                        if j != i && states[i].valid && states[j].valid && boxes_intersect(&states[i], &states[j]) {
                            any = true;
                        }
                    }
                }
            }
            if any {
                hit += 1.0;
            }
        }
    }
    100.0 * hit / total
}

pub fn oracle_offroad(scenes: &[MiniScene]) -> f64 {
    let (mut off, mut total) = (0.0, 0.0);
    for s in scenes {
        let rg = &s.segment.roadgraph;
        for r in &s.rollouts {
            for &i in &s.interactive {
                for states in r {
                    if states[i].valid {
                        let d = rg
                            .segments()
                            .flat_map(|seg| seg.polyline.windows(2).map(|w| (w[0], w[1])))
                            .map(|(a, b)| point_segment_distance(states[i].position, a, b))
                            .fold(f64::INFINITY, f64::min);
                        total += 1.0;
                        if d > rg.lane_half_width() {
                            off += 1.0;
                        }
                    }
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        100.0 * off / total
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// `ades[segment][rollout]` by direct summation.
pub fn oracle_scene_ades(scenes: &[MiniScene]) -> Vec<Vec<f64>> {
    scenes
        .iter()
        .map(|s| {
            s.rollouts
                .iter()
                .map(|r| {
                    let mut sum = 0.0;
                    let mut n = 0.0;
                    for &i in &s.interactive {
                        for (t, states) in r.iter().enumerate() {
                            let reference = s.segment.agents[i][t];
                            if reference.valid {
                                let d = states[i].position - reference.position;
                                sum += (d.x * d.x + d.y * d.y).sqrt();
                                n += 1.0;
                            }
                        }
                    }
                    if n == 0.0 {
                        0.0
                    } else {
                        sum / n
                    }
                })
                .collect()
        })
        .collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}

pub fn oracle_jsd(p: &[f64], q: &[f64]) -> f64 {
    let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    entropy(&mid) - 0.5 * (entropy(p) + entropy(q))
}

pub fn oracle_bin(v: f64) -> usize {
    let v = v.clamp(-1.0, 1.0);
    (0..CURVATURE_BINS)
        .min_by(|&a, &b| {
            let ca = -1.0 + 0.01 * a as f64;
            let cb = -1.0 + 0.01 * b as f64;
            (v - ca).abs().total_cmp(&(v - cb).abs())
        })
        .unwrap()
}

pub fn oracle_histogram(values: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; CURVATURE_BINS];
    if values.is_empty() {
        return vec![1.0 / CURVATURE_BINS as f64; CURVATURE_BINS];
    }
    for &v in values {
        h[oracle_bin(v)] += 1.0 / values.len() as f64;
    }
    h
}

/// Region visits recounted per (rollout, agent) with the region set built
/// from the raw links.
pub fn oracle_visits(rg: &symphony::roadgraph::Roadgraph, traj: &[Vec<AgentState>], interactive: &[usize]) -> Vec<f64> {
    let forks: Vec<_> = rg.segments().filter(|s| s.descendants.len() >= 2).map(|s| s.id).collect();
    let mut out = Vec::new();
    for &i in interactive {
        let mut seen = Vec::new();
        for states in traj.iter().filter(|st| st[i].valid) {
            let (id, _, _) = rg.nearest_segment(states[i].position).unwrap();
            let seg = rg.segment(id).unwrap();
            if seg.ancestors.iter().any(|a| forks.contains(a)) && !seen.contains(&id) {
                seen.push(id);
                out.push(segment_curvature(seg));
            }
        }
    }
    out
}

//! Realism and diversity metrics over simulated rollouts, and the
//! multi-rollout evaluation protocol.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agents::{GoalPath, Models, PolicyActor, Scene, SegmentPlan};
use crate::beam::{rollout_beams, BeamConfig, BeamJob};
use crate::dynamics::obb_overlap;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, purpose, stream, StreamRng};
use crate::roadgraph::{segment_curvature, Roadgraph, SegmentId};
use crate::scenario::{AgentState, RunSegment};

pub const REPORT_SCHEMA: u32 = 1;
pub const CURVATURE_BINS: usize = 201;

/// Joint trajectories simulated from one segment, `rollouts[r][t][agent]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRollouts<'a> {
    pub segment: &'a RunSegment,
    pub interactive: &'a [usize],
    pub rollouts: Vec<Vec<Vec<AgentState>>>,
}

impl<'a> SegmentRollouts<'a> {
    /// The reference trajectory itself as a single rollout.
    pub fn reference(segment: &'a RunSegment, interactive: &'a [usize]) -> Self {
        let traj = (0..segment.num_steps()).map(|t| segment.snapshot(t)).collect();
        SegmentRollouts {
            segment,
            interactive,
            rollouts: vec![traj],
        }
    }
}

/// Whether any interactive agent overlaps any other valid agent at any step.
pub fn rollout_collides(traj: &[Vec<AgentState>], interactive: &[usize]) -> bool {
    traj.iter().any(|states| {
        interactive.iter().any(|&i| {
            states[i].valid
                && states
                    .iter()
                    .enumerate()
                    .any(|(j, o)| j != i && o.valid && obb_overlap(&states[i], o))
        })
    })
}

/// Percentage of rollouts with at least one collision.
pub fn collision_rate(sets: &[SegmentRollouts<'_>]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for s in sets {
        for r in &s.rollouts {
            hit += usize::from(rollout_collides(r, s.interactive));
            total += 1;
        }
    }
    percent(hit, total)
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn offroad_counts(rg: &Roadgraph, traj: &[Vec<AgentState>], interactive: &[usize]) -> (usize, usize) {
    let (mut off, mut total) = (0, 0);
    for states in traj {
        for &i in interactive {
            if states[i].valid {
                off += usize::from(!rg.is_on_road(states[i].position));
                total += 1;
            }
        }
    }
    (off, total)
}

/// Percentage of (interactive agent, step) pairs whose centre is off the road.
pub fn offroad_time(sets: &[SegmentRollouts<'_>]) -> f64 {
    let (mut off, mut total) = (0, 0);
    for s in sets {
        for r in &s.rollouts {
            let (o, t) = offroad_counts(&s.segment.roadgraph, r, s.interactive);
            off += o;
            total += t;
        }
    }
    percent(off, total)
}

/// Mean distance between simulated and reference interactive agents over
/// steps where the reference is valid.
pub fn scene_ade(reference: &RunSegment, traj: &[Vec<AgentState>], interactive: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, states) in traj.iter().enumerate() {
        for &i in interactive {
            let r = &reference.agents[i][t];
            if r.valid {
                sum += states[i].position.distance(r.position);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn per_segment_ades(s: &SegmentRollouts<'_>) -> Vec<f64> {
    s.rollouts.iter().map(|r| scene_ade(s.segment, r, s.interactive)).collect()
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        0.0
    } else {
        v.sum::<f64>() / n as f64
    }
}

/// Mean over segments of the mean scene ADE over rollouts.
pub fn ade(sets: &[SegmentRollouts<'_>]) -> f64 {
    mean(sets.iter().map(|s| {
        let a = per_segment_ades(s);
        mean(a.into_iter())
    }))
}

/// Mean over segments of the smallest scene ADE among the rollouts.
pub fn min_sade(sets: &[SegmentRollouts<'_>]) -> f64 {
    mean(sets.iter().map(|s| per_segment_ades(s).into_iter().fold(f64::INFINITY, f64::min)))
}

/// Curvatures of the branching regions one trajectory visits, each region
/// counted once per agent.
pub fn region_visits(rg: &Roadgraph, traj: &[Vec<AgentState>], interactive: &[usize]) -> Result<Vec<f64>> {
    let regions = rg.branching_regions();
    let mut out = Vec::new();
    for &i in interactive {
        let mut seen: BTreeSet<SegmentId> = BTreeSet::new();
        for states in traj {
            if !states[i].valid {
                continue;
            }
            let (id, _, _) = rg.nearest_segment(states[i].position)?;
            if regions.contains(&id) && seen.insert(id) {
                out.push(segment_curvature(rg.segment(id)?));
            }
        }
    }
    Ok(out)
}

/// Bin of a curvature value: `floor((v + 1.005) / 0.01)` after clamping.
pub fn curvature_bin(v: f64) -> usize {
    let v = v.clamp(-1.0, 1.0);
    (((v + 1.005) / 0.01).floor() as usize).min(CURVATURE_BINS - 1)
}

/// Normalised histogram; uniform when there are no values.
pub fn curvature_histogram(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return vec![1.0 / CURVATURE_BINS as f64; CURVATURE_BINS];
    }
    let mut h = vec![0.0; CURVATURE_BINS];
    for &v in values {
        h[curvature_bin(v)] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

/// Jensen-Shannon divergence with base-2 logarithms.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (2.0 * x / (x + y)).log2())
            .sum()
    };
    (0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureJsd {
    pub value: f64,
    pub policy_visits: usize,
    pub reference_visits: usize,
}

/// Divergence between branching-region curvatures visited in simulation and
/// in the reference trajectories.
pub fn curvature_jsd(sets: &[SegmentRollouts<'_>]) -> Result<CurvatureJsd> {
    let mut sim = Vec::new();
    let mut reference = Vec::new();
    for s in sets {
        let rg = &s.segment.roadgraph;
        for r in &s.rollouts {
            sim.extend(region_visits(rg, r, s.interactive)?);
        }
        let own = SegmentRollouts::reference(s.segment, s.interactive);
        reference.extend(region_visits(rg, &own.rollouts[0], s.interactive)?);
    }
    Ok(CurvatureJsd {
        value: jensen_shannon(&curvature_histogram(&sim), &curvature_histogram(&reference)),
        policy_visits: sim.len(),
        reference_visits: reference.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub id: u64,
    pub colliding_rollouts: usize,
    pub offroad_time: f64,
    pub ade: f64,
    pub min_sade: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub config_hash: String,
    pub collision_rate: f64,
    pub offroad_time: f64,
    pub ade: f64,
    pub min_sade: f64,
    pub curvature_jsd: f64,
    pub policy_region_visits: usize,
    pub reference_region_visits: usize,
    pub rollouts: usize,
    pub seeds: Vec<u64>,
    pub segments: Vec<SegmentReport>,
}

impl EvalReport {
    /// Checkpoint-selection criterion.
    pub fn safety_score(&self) -> f64 {
        self.collision_rate + self.offroad_time
    }
}

pub fn report(sets: &[SegmentRollouts<'_>], seeds: Vec<u64>) -> Result<EvalReport> {
    let jsd = curvature_jsd(sets)?;
    let segments = sets
        .iter()
        .map(|s| {
            let one = std::slice::from_ref(s);
            SegmentReport {
                id: s.segment.id,
                colliding_rollouts: s.rollouts.iter().filter(|r| rollout_collides(r, s.interactive)).count(),
                offroad_time: offroad_time(one),
                ade: ade(one),
                min_sade: min_sade(one),
            }
        })
        .collect();
    let r = EvalReport {
        schema: REPORT_SCHEMA,
        config_hash: String::new(),
        collision_rate: collision_rate(sets),
        offroad_time: offroad_time(sets),
        ade: ade(sets),
        min_sade: min_sade(sets),
        curvature_jsd: jsd.value,
        policy_region_visits: jsd.policy_visits,
        reference_region_visits: jsd.reference_visits,
        rollouts: sets.iter().map(|s| s.rollouts.len()).max().unwrap_or(0),
        seeds,
        segments,
    };
    assert!(r.min_sade <= r.ade + 1e-12, "min over rollouts exceeds their mean");
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollouts per segment.
    pub rollouts: usize,
    /// One pruned tree per segment instead of independent rollouts.
    pub beam: bool,
    /// Draw goals from the goal generator instead of straight continuation.
    pub hierarchy: bool,
    pub prune_every: usize,
    /// Segments simulated per batch.
    pub chunk: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(beam: bool, hierarchy: bool, seed: u64) -> Self {
        EvalConfig {
            rollouts: 16,
            beam,
            hierarchy,
            prune_every: 10,
            chunk: 16,
            seed,
        }
    }
}

/// Goals for every tree: one draw per tree when searching, one per rollout
/// otherwise. Returns `goals[segment][branch][slot]`.
pub fn inference_goals<'p>(
    models: &Models,
    segments: &[RunSegment],
    plans: &'p [SegmentPlan],
    cfg: &EvalConfig,
) -> Result<Vec<Vec<Vec<&'p GoalPath>>>> {
    let draws = if cfg.beam { 1 } else { cfg.rollouts };
    if !cfg.hierarchy {
        return Ok(plans
            .iter()
            .map(|p| vec![p.agents.iter().map(|a| &a.default).collect(); cfg.rollouts])
            .collect());
    }
    let mut queries = Vec::new();
    let mut rngs: Vec<StreamRng> = Vec::new();
    let snapshots: Vec<Vec<AgentState>> = segments.iter().map(|s| s.snapshot(0)).collect();
    for (k, (seg, plan)) in segments.iter().zip(plans).enumerate() {
        let scene = Scene {
            roadgraph: &seg.roadgraph,
            states: &snapshots[k],
            kinds: &seg.kinds,
            lights: seg.lights_at(0),
        };
        for r in 0..draws {
            for (slot, a) in plan.agents.iter().enumerate() {
                queries.push((scene, a.agent, a.routes.len()));
                rngs.push(stream(cfg.seed, &[purpose::GOAL, seg.id, r as u64, slot as u64]));
            }
        }
    }
    let picks = models.goal_gen.sample(&queries, &mut rngs)?;
    let mut it = picks.into_iter();
    Ok(plans
        .iter()
        .map(|plan| {
            let per_draw: Vec<Vec<&GoalPath>> = (0..draws)
                .map(|_| plan.agents.iter().map(|a| &a.paths[it.next().expect("one pick per query").0]).collect())
                .collect();
            (0..cfg.rollouts).map(|r| per_draw[r % draws].clone()).collect()
        })
        .collect())
}

/// Simulates `cfg.rollouts` joint rollouts of every segment.
pub fn simulate<'a>(models: &Models, segments: &'a [RunSegment], plans: &'a [SegmentPlan], cfg: &EvalConfig) -> Result<Vec<SegmentRollouts<'a>>> {
    if segments.len() != plans.len() {
        return Err(Error::Config("one plan per segment required".into()));
    }
    let goals = inference_goals(models, segments, plans, cfg)?;
    let beam = BeamConfig {
        branches: cfg.rollouts,
        prune_every: cfg.prune_every,
        prune: cfg.beam,
        seed: derive_seed(cfg.seed, &[purpose::EVAL]),
    };
    let actor = PolicyActor {
        policy: &models.policy,
        dt: segments.first().map_or(0.2, |s| s.step_dt),
        greedy: false,
    };
    let mut out = Vec::with_capacity(segments.len());
    for start in (0..segments.len()).step_by(cfg.chunk.max(1)) {
        let end = (start + cfg.chunk.max(1)).min(segments.len());
        let jobs: Vec<BeamJob> = (start..end)
            .map(|k| BeamJob {
                segment: &segments[k],
                interactive: &plans[k].interactive,
                goals: goals[k].clone(),
                key: segments[k].id,
            })
            .collect();
        let scorer = cfg.beam.then_some(&models.disc);
        let results = rollout_beams(&jobs, &actor, scorer, &beam)?;
        for (k, res) in (start..end).zip(results) {
            out.push(SegmentRollouts {
                segment: &segments[k],
                interactive: &plans[k].interactive,
                rollouts: res.branches.into_iter().map(|b| b.states).collect(),
            });
        }
    }
    Ok(out)
}

pub fn evaluate(models: &Models, segments: &[RunSegment], plans: &[SegmentPlan], cfg: &EvalConfig) -> Result<EvalReport> {
    let sets = simulate(models, segments, plans, cfg)?;
    report(&sets, vec![cfg.seed])
}

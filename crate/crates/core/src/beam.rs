//! Parallel beam search over closed-loop rollouts.
//!
//! Every branch of a run segment is advanced in lockstep. Interactive agents
//! act through an [`Actor`]; all other agents replay the reference. States
//! are scored as they are reached, and at the end of every window the half
//! of the branches with the highest aggregate score is discarded and the
//! rest duplicated.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agents::{Actor, AgentQuery, GoalPath, Scene, Scorer};
use crate::dynamics::{step, Action};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream, StreamRng};
use crate::scenario::{AgentState, RunSegment};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub branches: usize,
    pub prune_every: usize,
    pub prune: bool,
    pub seed: u64,
}

impl BeamConfig {
    pub fn training(seed: u64) -> Self {
        BeamConfig {
            branches: 4,
            prune_every: 10,
            prune: true,
            seed,
        }
    }

    pub fn inference(seed: u64) -> Self {
        BeamConfig {
            branches: 16,
            ..BeamConfig::training(seed)
        }
    }

    /// `n` independent rollouts with no pruning.
    pub fn independent(n: usize, seed: u64) -> Self {
        BeamConfig {
            branches: n,
            prune_every: 10,
            prune: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 || self.prune_every == 0 {
            return Err(Error::Config("beam needs at least one branch and a positive window".into()));
        }
        if self.prune && (self.branches < 2 || self.branches % 2 != 0) {
            return Err(Error::Config(format!("pruning needs an even branch count >= 2, got {}", self.branches)));
        }
        Ok(())
    }
}

/// Window of scores indexed `[segment, agent, step, branch]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor {
    shape: [usize; 4],
    data: Vec<f64>,
    recorded: Vec<bool>,
}

impl ScoreTensor {
    pub fn new(segments: usize, agents: usize, steps: usize, branches: usize) -> Self {
        ScoreTensor {
            shape: [segments, agents, steps, branches],
            data: vec![0.0; segments * agents * steps * branches],
            recorded: vec![false; steps],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    fn offset(&self, b: usize, i: usize, t: usize, s: usize) -> usize {
        let [_, ni, nt, ns] = self.shape;
        ((b * ni + i) * nt + t) * ns + s
    }

    pub fn get(&self, b: usize, i: usize, t: usize, s: usize) -> f64 {
        self.data[self.offset(b, i, t, s)]
    }

    pub fn set(&mut self, b: usize, i: usize, t: usize, s: usize, v: f64) {
        let k = self.offset(b, i, t, s);
        self.data[k] = v;
    }

    /// Marks window step `t` as complete.
    pub fn mark(&mut self, t: usize) {
        self.recorded[t] = true;
    }

    /// Fills step `t` from `values[b][i][s]` and marks it.
    pub fn record(&mut self, t: usize, values: &[Vec<Vec<f64>>]) {
        for (b, per_agent) in values.iter().enumerate() {
            for (i, per_branch) in per_agent.iter().enumerate() {
                for (s, &v) in per_branch.iter().enumerate() {
                    self.set(b, i, t, s, v);
                }
            }
        }
        self.mark(t);
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
        self.recorded.fill(false);
    }
}

/// `out[b][s] = sum_i max_t win[b, i, t, s]`.
pub fn aggregate_scores(win: &ScoreTensor) -> Result<Vec<Vec<f64>>> {
    let [nb, ni, nt, ns] = win.shape;
    let recorded = win.recorded.iter().filter(|&&r| r).count();
    if recorded < nt {
        return Err(Error::IncompleteWindow { recorded, window: nt });
    }
    Ok((0..nb)
        .map(|b| {
            (0..ns)
                .map(|s| {
                    (0..ni)
                        .map(|i| (0..nt).map(|t| win.get(b, i, t, s)).fold(f64::NEG_INFINITY, f64::max))
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// Indices of the lower half of `aggregates`, ties to the lower index,
/// returned in ascending index order.
pub fn surviving_indices(aggregates: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..aggregates.len()).collect();
    order.sort_by(|&a, &b| aggregates[a].total_cmp(&aggregates[b]).then(a.cmp(&b)));
    let mut keep = order[..aggregates.len() / 2].to_vec();
    keep.sort_unstable();
    keep
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Identifier keying this branch's random streams.
    pub lineage: u64,
    /// Lineages this branch was copied from, oldest first.
    pub ancestry: Vec<u64>,
    /// Index of the initial branch, which fixes its goals.
    pub origin: usize,
    /// `states[t][agent]` for every agent in the segment.
    pub states: Vec<Vec<AgentState>>,
    /// `actions[t][slot]` taken from `states[t]`.
    pub actions: Vec<Vec<Action>>,
    /// `scores[t][slot]` of `states[t]`; empty without a scorer.
    pub scores: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    /// Last state index of the window.
    pub step: usize,
    pub aggregates: Vec<f64>,
    pub survivors: Vec<usize>,
    /// Lineages after tiling, in branch order.
    pub lineages: Vec<u64>,
}

/// Keeps the lower-scoring half and appends one copy of each survivor,
/// which receives a fresh lineage.
pub fn prune_and_tile(branches: Vec<Branch>, aggregates: &[f64], next_lineage: &mut u64) -> (Vec<Branch>, Vec<usize>) {
    assert_eq!(branches.len(), aggregates.len());
    let keep = surviving_indices(aggregates);
    let mut slots: Vec<Option<Branch>> = branches.into_iter().map(Some).collect();
    let survivors: Vec<Branch> = keep.iter().map(|&k| slots[k].take().expect("distinct survivors")).collect();
    let copies: Vec<Branch> = survivors
        .iter()
        .map(|b| {
            let mut c = b.clone();
            c.ancestry.push(b.lineage);
            c.lineage = *next_lineage;
            *next_lineage += 1;
            c
        })
        .collect();
    (survivors.into_iter().chain(copies).collect(), keep)
}

/// One search tree: a segment, its interactive agents and their goals.
#[derive(Clone, Debug)]
pub struct BeamJob<'a> {
    pub segment: &'a RunSegment,
    pub interactive: &'a [usize],
    /// `goals[branch][slot]` for the initial branches.
    pub goals: Vec<Vec<&'a GoalPath>>,
    /// Key separating the random streams of jobs on the same segment.
    pub key: u64,
}

impl<'a> BeamJob<'a> {
    /// Tree whose branches all share `goals[slot]`.
    pub fn shared(segment: &'a RunSegment, interactive: &'a [usize], goals: Vec<&'a GoalPath>, branches: usize) -> Self {
        BeamJob {
            segment,
            interactive,
            goals: vec![goals; branches],
            key: segment.id,
        }
    }

    fn check(&self, cfg: &BeamConfig) -> Result<()> {
        let seg = self.segment;
        if self.goals.len() != cfg.branches || self.goals.iter().any(|g| g.len() != self.interactive.len()) {
            return Err(Error::Config("one goal per interactive agent and branch required".into()));
        }
        if seg.num_steps() == 0 {
            return Err(Error::InvalidSegment(format!("segment {} has no steps", seg.id)));
        }
        for &i in self.interactive {
            if i >= seg.num_agents() || !seg.agents[i][0].valid {
                return Err(Error::InvalidAgent(i));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamResult {
    pub branches: Vec<Branch>,
    pub prunes: Vec<PruneEvent>,
}

/// Random stream for one action draw.
pub fn action_stream(seed: u64, key: u64, lineage: u64, t: usize, slot: usize) -> StreamRng {
    stream(seed, &[purpose::ROLLOUT, key, lineage, t as u64, slot as u64])
}

struct Tree {
    branches: Vec<Branch>,
    prunes: Vec<PruneEvent>,
    window: ScoreTensor,
    next_lineage: u64,
}

fn scene_at<'s>(job: &BeamJob<'s>, branch: &'s Branch, t: usize) -> Scene<'s> {
    Scene {
        roadgraph: &job.segment.roadgraph,
        states: &branch.states[t],
        kinds: &job.segment.kinds,
        lights: job.segment.lights_at(t),
    }
}

fn queries_at<'s>(jobs: &'s [BeamJob<'s>], trees: &'s [Tree], t: usize) -> Vec<AgentQuery<'s>> {
    let mut out = Vec::new();
    for (job, tree) in jobs.iter().zip(trees) {
        for branch in &tree.branches {
            for (slot, &agent) in job.interactive.iter().enumerate() {
                out.push(AgentQuery {
                    scene: scene_at(job, branch, t),
                    agent,
                    goal: job.goals[branch.origin][slot],
                });
            }
        }
    }
    out
}

/// Runs every job's tree over the full segment horizon. All queries of a
/// step go to the actor and scorer as one batch.
pub fn rollout_beams<A, S>(jobs: &[BeamJob<'_>], actor: &A, scorer: Option<&S>, cfg: &BeamConfig) -> Result<Vec<BeamResult>>
where
    A: Actor + ?Sized,
    S: Scorer + ?Sized,
{
    cfg.validate()?;
    if cfg.prune && scorer.is_none() {
        return Err(Error::Config("pruning needs a scorer".into()));
    }
    for job in jobs {
        job.check(cfg)?;
    }
    let mut trees: Vec<Tree> = jobs
        .iter()
        .map(|job| Tree {
            branches: (0..cfg.branches)
                .map(|s| Branch {
                    lineage: s as u64,
                    ancestry: Vec::new(),
                    origin: s,
                    states: vec![job.segment.snapshot(0)],
                    actions: Vec::new(),
                    scores: Vec::new(),
                })
                .collect(),
            prunes: Vec::new(),
            window: ScoreTensor::new(1, job.interactive.len(), cfg.prune_every, cfg.branches),
            next_lineage: cfg.branches as u64,
        })
        .collect();
    let horizon = jobs.first().map_or(0, |j| j.segment.num_steps());
    if jobs.iter().any(|j| j.segment.num_steps() != horizon) {
        return Err(Error::Config("jobs in one batch must share a horizon".into()));
    }
    for t in 0..horizon {
        if let Some(scorer) = scorer {
            score_step(jobs, &mut trees, scorer, cfg, t)?;
        }
        if t + 1 == horizon {
            break;
        }
        let queries = queries_at(jobs, &trees, t);
        let mut rngs = Vec::with_capacity(queries.len());
        for (job, tree) in jobs.iter().zip(&trees) {
            for branch in &tree.branches {
                for slot in 0..job.interactive.len() {
                    rngs.push(action_stream(cfg.seed, job.key, branch.lineage, t, slot));
                }
            }
        }
        let actions = actor.act(&queries, &mut rngs)?;
        drop(queries);
        let mut k = 0;
        for (job, tree) in jobs.iter().zip(trees.iter_mut()) {
            let n = job.interactive.len();
            for branch in &mut tree.branches {
                advance(job, branch, actions[k..k + n].to_vec(), t);
                k += n;
            }
        }
    }
    Ok(trees
        .into_iter()
        .map(|t| BeamResult {
            branches: t.branches,
            prunes: t.prunes,
        })
        .collect())
}

fn advance(job: &BeamJob<'_>, branch: &mut Branch, actions: Vec<Action>, t: usize) {
    let seg = job.segment;
    let mut next = seg.snapshot(t + 1);
    for (&agent, &a) in job.interactive.iter().zip(&actions) {
        next[agent] = step(&branch.states[t][agent], a, seg.step_dt);
    }
    branch.states.push(next);
    branch.actions.push(actions);
}

fn score_step<S: Scorer + ?Sized>(jobs: &[BeamJob<'_>], trees: &mut [Tree], scorer: &S, cfg: &BeamConfig, t: usize) -> Result<()> {
    let scores = scorer.score(&queries_at(jobs, trees, t))?;
    let w = t % cfg.prune_every;
    let mut k = 0;
    for (job, tree) in jobs.iter().zip(trees.iter_mut()) {
        let n = job.interactive.len();
        for (s, branch) in tree.branches.iter_mut().enumerate() {
            let row = scores[k..k + n].to_vec();
            k += n;
            for (i, &v) in row.iter().enumerate() {
                tree.window.set(0, i, w, s, v);
            }
            branch.scores.push(row);
        }
        tree.window.mark(w);
        if (t + 1) % cfg.prune_every != 0 {
            continue;
        }
        if cfg.prune {
            let aggregates = aggregate_scores(&tree.window)?.remove(0);
            let branches = std::mem::take(&mut tree.branches);
            let (tiled, survivors) = prune_and_tile(branches, &aggregates, &mut tree.next_lineage);
            tree.branches = tiled;
            tree.prunes.push(PruneEvent {
                step: t,
                aggregates,
                survivors,
                lineages: tree.branches.iter().map(|b| b.lineage).collect(),
            });
            debug_assert_eq!(tree.branches.len(), cfg.branches);
        }
        tree.window.clear();
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceRecord<'a> {
    Header {
        schema: u32,
        config_hash: &'a str,
        segment: u64,
        interactive: &'a [usize],
        beam: &'a BeamConfig,
    },
    Prune(&'a PruneEvent),
    Branch {
        lineage: u64,
        ancestry: &'a [u64],
        /// `[slot][t] = [x, y]`
        positions: Vec<Vec<[f64; 2]>>,
        headings: Vec<Vec<f64>>,
        scores: Vec<Vec<f64>>,
    },
}

/// Line-delimited record of a tree: header, prune events, final branches.
pub fn write_trace<W: Write>(
    mut w: W,
    config_hash: &str,
    job: &BeamJob<'_>,
    cfg: &BeamConfig,
    result: &BeamResult,
) -> Result<()> {
    let mut emit = |rec: &TraceRecord| -> Result<()> {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io("<trace stream>", e))
    };
    emit(&TraceRecord::Header {
        schema: TRACE_SCHEMA,
        config_hash,
        segment: job.segment.id,
        interactive: job.interactive,
        beam: cfg,
    })?;
    for p in &result.prunes {
        emit(&TraceRecord::Prune(p))?;
    }
    for b in &result.branches {
        let per_slot = |f: &dyn Fn(&AgentState) -> f64| -> Vec<Vec<f64>> {
            job.interactive.iter().map(|&a| b.states.iter().map(|s| f(&s[a])).collect()).collect()
        };
        emit(&TraceRecord::Branch {
            lineage: b.lineage,
            ancestry: &b.ancestry,
            positions: job
                .interactive
                .iter()
                .map(|&a| b.states.iter().map(|s| s[a].position.into()).collect())
                .collect(),
            headings: per_slot(&|s| s.heading),
            scores: (0..job.interactive.len()).map(|i| b.scores.iter().map(|r| r[i]).collect()).collect(),
        })?;
    }
    w.flush().map_err(|e| Error::io("<trace stream>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn aggregate_examples() {
        let mut win = ScoreTensor::new(1, 1, 3, 2);
        win.record(0, &[vec![vec![0.5, 0.5]]]);
        win.record(1, &[vec![vec![0.5, 0.5]]]);
        assert!(matches!(aggregate_scores(&win), Err(Error::IncompleteWindow { recorded: 2, window: 3 })));
        win.record(2, &[vec![vec![0.5, 0.5]]]);
        assert_eq!(aggregate_scores(&win).unwrap(), vec![vec![0.5, 0.5]]);

        let mut win = ScoreTensor::new(1, 2, 2, 1);
        win.record(0, &[vec![vec![0.9], vec![0.1]]]);
        win.record(1, &[vec![vec![0.3], vec![0.2]]]);
        assert!((aggregate_scores(&win).unwrap()[0][0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn survivor_examples() {
        assert_eq!(surviving_indices(&[0.1, 0.9, 0.2, 0.8]), vec![0, 2]);
        assert_eq!(surviving_indices(&[0.4; 4]), vec![0, 1]);
        assert_eq!(surviving_indices(&[0.7, 0.3]), vec![1]);
    }

    fn dummy(lineage: u64) -> Branch {
        Branch {
            lineage,
            ancestry: Vec::new(),
            origin: lineage as usize,
            states: Vec::new(),
            actions: Vec::new(),
            scores: Vec::new(),
        }
    }

    #[test]
    fn tiling_duplicates_each_survivor_once() {
        let mut next = 4;
        let (out, keep) = prune_and_tile((0..4).map(dummy).collect(), &[0.1, 0.9, 0.2, 0.8], &mut next);
        assert_eq!(keep, vec![0, 2]);
        let lineages: Vec<u64> = out.iter().map(|b| b.lineage).collect();
        assert_eq!(lineages, vec![0, 2, 4, 5]);
        assert_eq!(out[2].ancestry, vec![0]);
        assert_eq!(out[3].origin, 2);
        assert_eq!(next, 6);
        let (out, _) = prune_and_tile(vec![dummy(0), dummy(1)], &[0.5, 0.5], &mut next);
        assert_eq!(out.iter().map(|b| b.origin).collect::<Vec<_>>(), vec![0, 0]);
    }

    #[test]
    fn aggregate_matches_loop_on_random_tensors() {
        let mut rng = stream(31, &[]);
        for _ in 0..20 {
            let (b, i, t, s) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
            let mut win = ScoreTensor::new(b, i, t, s);
            for tt in 0..t {
                for bb in 0..b {
                    for ii in 0..i {
                        for ss in 0..s {
                            win.set(bb, ii, tt, ss, rng.random());
                        }
                    }
                }
                win.mark(tt);
            }
            let agg = aggregate_scores(&win).unwrap();
            for bb in 0..b {
                for ss in 0..s {
                    let mut total = 0.0;
                    for ii in 0..i {
                        let mut m = f64::NEG_INFINITY;
                        for tt in 0..t {
                            m = m.max(win.get(bb, ii, tt, ss));
                        }
                        total += m;
                    }
                    assert_eq!(agg[bb][ss], total);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(BeamConfig::training(0).validate().is_ok());
        assert!(BeamConfig { branches: 3, ..BeamConfig::training(0) }.validate().is_err());
        assert!(BeamConfig::independent(1, 0).validate().is_ok());
        assert!(BeamConfig { prune_every: 0, ..BeamConfig::independent(1, 0) }.validate().is_err());
    }
}

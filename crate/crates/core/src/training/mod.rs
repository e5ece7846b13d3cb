//! Learning rules, the joint training loop, checkpoints and checkpoint
//! selection.

mod mgail;
mod rules;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mgail::{mgail_loss, mgail_loss_and_grad, mgail_rollout, MgailItem, MgailOutcome, MgailRollout};
pub use rules::{
    bc_loss_and_grad, bc_update, disc_loss_and_grad, discriminator_update, goal_loss_and_grad, goal_update, GoalSample,
    Labeled, Target,
};

use crate::agents::{
    encode_disc_observation, encode_goal_observation, encode_observation, ActionSpace, DiscObservation, GoalPath,
    Models, NetSizes, PolicyActor, Scene, SegmentPlan,
};
use crate::beam::{rollout_beams, BeamConfig, BeamJob, BeamResult};
use crate::config::config_hash;
use crate::dynamics::{Action, ContinuousAction};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig, EvalReport};
use crate::neural::{export, import, Adam, ParamMap};
use crate::rng::{derive_seed, purpose, stream};
use crate::scenario::{AgentState, RunSegment, DEFAULT_MOVING_THRESHOLD};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Bc,
    Mgail,
}

impl Algorithm {
    pub fn action_space(self) -> ActionSpace {
        match self {
            Algorithm::Bc => ActionSpace::Discrete,
            Algorithm::Mgail => ActionSpace::Continuous,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub tree_search: bool,
    pub hierarchy: bool,
    pub steps: usize,
    pub batch: usize,
    pub branches: usize,
    pub prune_every: usize,
    pub checkpoint_every: usize,
    pub learning_rate: f64,
    /// Timesteps drawn per segment and agent for each policy sample set.
    pub samples_per_segment: usize,
    /// Timesteps drawn per segment and agent for each discriminator sample set.
    pub disc_samples_per_segment: usize,
    /// Weight of beam-search samples relative to expert samples.
    pub distill_weight: f64,
    pub interactive: usize,
    pub moving_threshold: f64,
    /// Transitions differentiated through per adversarial update.
    pub mgail_horizon: usize,
    pub nets: NetSizes,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Bc,
            tree_search: false,
            hierarchy: false,
            steps: 5000,
            batch: 16,
            branches: 4,
            prune_every: 10,
            checkpoint_every: 2000,
            learning_rate: 3e-4,
            samples_per_segment: 4,
            disc_samples_per_segment: 64,
            distill_weight: 1.0,
            interactive: 2,
            moving_threshold: DEFAULT_MOVING_THRESHOLD,
            mgail_horizon: 49,
            nets: NetSizes::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.steps == 0 || self.batch == 0 || self.checkpoint_every == 0 {
            return bad("steps, batch and checkpoint_every must be positive");
        }
        if self.samples_per_segment == 0 || self.disc_samples_per_segment == 0 || self.interactive == 0 {
            return bad("sample counts and interactive must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.distill_weight >= 0.0) {
            return bad("learning_rate must be positive and distill_weight non-negative");
        }
        if self.tree_search {
            self.beam(0).validate()?;
        }
        Ok(())
    }

    pub fn beam(&self, seed: u64) -> BeamConfig {
        BeamConfig {
            branches: self.branches,
            prune_every: self.prune_every,
            prune: true,
            seed,
        }
    }

    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            prune_every: self.prune_every,
            ..EvalConfig::new(self.tree_search, self.hierarchy, seed)
        }
    }

    /// Short variant label such as `bc-ts-h`.
    pub fn label(&self) -> String {
        let mut s = match self.algorithm {
            Algorithm::Bc => "bc".to_string(),
            Algorithm::Mgail => "mgail".to_string(),
        };
        if self.tree_search {
            s.push_str("-ts");
        }
        if self.hierarchy {
            s.push_str("-h");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimisers {
    pub goal_gen: Adam,
    pub policy: Adam,
    pub disc: Adam,
}

impl Optimisers {
    pub fn new(lr: f64) -> Self {
        Optimisers {
            goal_gen: Adam::new(lr),
            policy: Adam::new(lr),
            disc: Adam::new(lr),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: u32,
    pub config_hash: String,
    pub step: usize,
    pub config: TrainConfig,
    pub params: ParamMap,
    pub optimisers: Optimisers,
}

impl Checkpoint {
    pub fn models(&self) -> Result<Models> {
        let mut m = Models::new(self.config.algorithm.action_space(), &self.config.nets, &mut stream(0, &[]));
        import(&mut m, &self.params)?;
        Ok(m)
    }

    pub fn file_name(&self) -> String {
        format!("ckpt_{}.json", self.step)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes)?;
        match raw.get("schema").and_then(|v| v.as_u64()) {
            Some(s) if s == u64::from(CHECKPOINT_SCHEMA) => Ok(serde_json::from_value(raw)?),
            other => Err(Error::UnsupportedSchema(format!(
                "{}: checkpoint schema {other:?}, expected {CHECKPOINT_SCHEMA}",
                path.display()
            ))),
        }
    }
}

/// Losses of one training step; `None` where a rule did not run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub goal: Option<f64>,
    pub disc: Option<f64>,
    pub policy: f64,
    pub held_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<StepLog>,
}

/// A training segment with its interactive plan and fitted expert actions.
#[derive(Clone, Debug)]
pub struct Prepared<'a> {
    pub segment: &'a RunSegment,
    pub plan: SegmentPlan,
    /// `actions[slot][t]` reproducing the reference in the policy's action space.
    pub actions: Vec<Vec<Action>>,
}

/// Plans every segment that has enough moving agents; others are skipped.
pub fn prepare<'a>(segments: &'a [RunSegment], cfg: &TrainConfig) -> Result<Vec<Prepared<'a>>> {
    let out: Vec<Option<Prepared>> = segments
        .par_iter()
        .map(|seg| {
            let plan = match SegmentPlan::new(seg, cfg.interactive, cfg.moving_threshold) {
                Ok(p) => p,
                Err(Error::NotEnoughAgents { .. }) | Err(Error::NoFeasibleRoutes) => return Ok(None),
                Err(e) => return Err(e),
            };
            let actions = plan
                .interactive
                .iter()
                .map(|&a| expert_actions(seg, a, cfg.algorithm.action_space()))
                .collect();
            Ok(Some(Prepared {
                segment: seg,
                plan,
                actions,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

fn expert_actions(seg: &RunSegment, agent: usize, space: ActionSpace) -> Vec<Action> {
    match space {
        ActionSpace::Discrete => crate::scenario::fit_reference_actions(seg, agent)
            .into_iter()
            .map(Action::Discrete)
            .collect(),
        ActionSpace::Continuous => seg.agents[agent]
            .windows(2)
            .map(|w| {
                let d = w[1].position - w[0].position;
                Action::Continuous(ContinuousAction { dx: d.x, dy: d.y })
            })
            .collect(),
    }
}

fn scene_of<'s>(seg: &'s RunSegment, states: &'s [AgentState], t: usize) -> Scene<'s> {
    Scene {
        roadgraph: &seg.roadgraph,
        states,
        kinds: &seg.kinds,
        lights: seg.lights_at(t),
    }
}

/// Expert (observation, action) pairs at random reference steps.
fn expert_samples(batch: &[&Prepared<'_>], cfg: &TrainConfig, step: usize) -> Result<Vec<Labeled>> {
    let jobs = sample_plan(batch, cfg, step, 0, |p| p.segment.num_steps() - 1, 0);
    jobs.par_iter()
        .map(|&(b, slot, t, _)| {
            let p = batch[b];
            let states = p.segment.snapshot(t);
            let agent = p.plan.interactive[slot];
            let goal = p.plan.agents[slot].training_goal(cfg.hierarchy).0;
            Ok(Labeled {
                obs: encode_observation(&scene_of(p.segment, &states, t), agent, goal)?,
                target: Target::from_action(p.actions[slot][t], &states[agent]),
            })
        })
        .collect()
}

/// `(batch index, slot, t, branch)` draws; `t` uniform in `lo..hi(p)` and
/// the branch uniform in `0..branches` when positive.
fn sample_plan(
    batch: &[&Prepared<'_>],
    cfg: &TrainConfig,
    step: usize,
    kind: u64,
    hi: impl Fn(&Prepared<'_>) -> usize,
    branches: usize,
) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for (b, p) in batch.iter().enumerate() {
        let mut rng = stream(cfg.seed, &[purpose::SAMPLES, step as u64, b as u64, kind]);
        let lo = usize::from(kind >= 2);
        let count = if kind >= 2 { cfg.disc_samples_per_segment } else { cfg.samples_per_segment };
        let top = hi(p);
        for slot in 0..p.plan.interactive.len() {
            for _ in 0..count {
                let t = rng.random_range(lo..top.max(lo + 1));
                let br = if branches > 0 { rng.random_range(0..branches) } else { 0 };
                out.push((b, slot, t, br));
            }
        }
    }
    out
}

/// Beam-search (observation, action) pairs from surviving branches.
fn distill_samples(batch: &[&Prepared<'_>], trees: &[BeamResult], cfg: &TrainConfig, step: usize) -> Result<Vec<Labeled>> {
    let jobs = sample_plan(batch, cfg, step, 1, |p| p.segment.num_steps() - 1, cfg.branches);
    jobs.par_iter()
        .map(|&(b, slot, t, br)| {
            let p = batch[b];
            let branch = &trees[b].branches[br];
            let states = &branch.states[t];
            let agent = p.plan.interactive[slot];
            let goal = p.plan.agents[slot].training_goal(cfg.hierarchy).0;
            Ok(Labeled {
                obs: encode_observation(&scene_of(p.segment, states, t), agent, goal)?,
                target: Target::from_action(branch.actions[t][slot], &states[agent]),
            })
        })
        .collect()
}

fn disc_samples(
    batch: &[&Prepared<'_>],
    cfg: &TrainConfig,
    step: usize,
    kind: u64,
    trajectories: Option<&[Vec<Vec<Vec<AgentState>>>]>,
) -> Result<Vec<DiscObservation>> {
    let n_traj = trajectories.map_or(0, |t| t[0].len());
    let jobs = sample_plan(batch, cfg, step, kind, |p| p.segment.num_steps(), n_traj);
    jobs.par_iter()
        .map(|&(b, slot, t, br)| {
            let p = batch[b];
            let reference;
            let states: &[AgentState] = match trajectories {
                Some(tr) => &tr[b][br][t],
                None => {
                    reference = p.segment.snapshot(t);
                    &reference
                }
            };
            let goal = p.plan.agents[slot].training_goal(cfg.hierarchy).0;
            encode_disc_observation(&scene_of(p.segment, states, t), p.plan.interactive[slot], goal)
        })
        .collect()
}

fn goal_samples(batch: &[&Prepared<'_>]) -> Result<Vec<GoalSample>> {
    let mut out = Vec::new();
    for p in batch {
        let states = p.segment.snapshot(0);
        let scene = scene_of(p.segment, &states, 0);
        for a in &p.plan.agents {
            out.push(GoalSample {
                obs: encode_goal_observation(&scene, a.agent)?,
                routes: a.routes.len(),
                label: a.truth,
            });
        }
    }
    Ok(out)
}

fn training_goals<'p>(p: &'p Prepared<'_>, hierarchy: bool) -> Vec<&'p GoalPath> {
    p.plan.training_goals(hierarchy)
}

/// Initial models and optimisers for `cfg`.
pub fn initial_state(cfg: &TrainConfig) -> (Models, Optimisers) {
    let models = Models::new(cfg.algorithm.action_space(), &cfg.nets, &mut stream(cfg.seed, &[purpose::INIT]));
    (models, Optimisers::new(cfg.learning_rate))
}

/// Joint training over `segments`. `on_step` sees every step's losses.
pub fn train(cfg: &TrainConfig, segments: &[RunSegment], mut on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prepared = prepare(segments, cfg)?;
    if prepared.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hash = config_hash(cfg);
    let (mut models, mut opts) = initial_state(cfg);
    let space = cfg.algorithm.action_space();
    let mut checkpoints = Vec::new();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut rng = stream(cfg.seed, &[purpose::BATCH, step as u64]);
        let picks: Vec<usize> = if prepared.len() >= cfg.batch {
            sample_indices(&mut rng, prepared.len(), cfg.batch).into_vec()
        } else {
            (0..cfg.batch).map(|_| rng.random_range(0..prepared.len())).collect()
        };
        let batch: Vec<&Prepared> = picks.iter().map(|&i| &prepared[i]).collect();
        let mut entry = StepLog {
            step,
            ..StepLog::default()
        };

        if cfg.hierarchy {
            entry.goal = Some(goal_update(&mut models.goal_gen, &mut opts.goal_gen, &goal_samples(&batch)?)?);
        }

        let trees = if cfg.tree_search {
            let actor = PolicyActor {
                policy: &models.policy,
                dt: batch[0].segment.step_dt,
                greedy: false,
            };
            let jobs: Vec<BeamJob> = batch
                .iter()
                .map(|p| BeamJob::shared(p.segment, &p.plan.interactive, training_goals(p, cfg.hierarchy), cfg.branches))
                .collect();
            let beam = cfg.beam(derive_seed(cfg.seed, &[purpose::ROLLOUT, step as u64]));
            Some(rollout_beams(&jobs, &actor, Some(&models.disc), &beam)?)
        } else {
            None
        };

        let noise_seed = derive_seed(cfg.seed, &[purpose::MGAIL, step as u64]);
        let items: Vec<MgailItem> = batch
            .iter()
            .enumerate()
            .map(|(b, p)| MgailItem {
                segment: p.segment,
                interactive: &p.plan.interactive,
                goals: training_goals(p, cfg.hierarchy),
                key: b as u64,
            })
            .collect();
        let horizon = batch.iter().map(|p| p.segment.num_steps() - 1).min().unwrap_or(0).min(cfg.mgail_horizon);

        let policy_states: Option<Vec<Vec<Vec<Vec<AgentState>>>>> = match (&trees, cfg.algorithm) {
            (Some(trees), _) => Some(
                trees
                    .iter()
                    .map(|t| t.branches.iter().map(|b| b.states.clone()).collect())
                    .collect(),
            ),
            (None, Algorithm::Mgail) => {
                let roll = mgail_rollout(&items, &models.policy, horizon, noise_seed)?;
                Some(roll.states.into_iter().map(|s| vec![s]).collect())
            }
            (None, Algorithm::Bc) => None,
        };
        if let Some(states) = &policy_states {
            let expert = disc_samples(&batch, cfg, step, 2, None)?;
            let policy = disc_samples_clamped(&batch, cfg, step, states)?;
            entry.disc = Some(discriminator_update(&mut models.disc, &mut opts.disc, &expert, &policy)?);
        }

        entry.policy = match cfg.algorithm {
            Algorithm::Bc => {
                let expert = expert_samples(&batch, cfg, step)?;
                let distill = match &trees {
                    Some(t) if cfg.distill_weight != 0.0 => distill_samples(&batch, t, cfg, step)?,
                    _ => Vec::new(),
                };
                let dt = batch[0].segment.step_dt;
                rules::bc_update(&mut models.policy, &mut opts.policy, &expert, &distill, cfg.distill_weight, dt)?
            }
            Algorithm::Mgail => {
                let out = mgail_loss_and_grad(&items, &models.policy, &models.disc, horizon, noise_seed)?;
                opts.policy.update(&mut models.policy, &out.grads)?;
                entry.held_steps = out.held;
                out.loss
            }
        };
        debug_assert_eq!(models.policy.space, space);

        on_step(&entry);
        log.push(entry);
        if step % cfg.checkpoint_every == 0 || step == cfg.steps {
            checkpoints.push(Checkpoint {
                schema: CHECKPOINT_SCHEMA,
                config_hash: hash.clone(),
                step,
                config: cfg.clone(),
                params: export(&models),
                optimisers: opts.clone(),
            });
        }
    }
    Ok(TrainOutcome { checkpoints, log })
}

/// Policy-side discriminator samples; times beyond a short rollout are
/// clamped to its last state.
fn disc_samples_clamped(
    batch: &[&Prepared<'_>],
    cfg: &TrainConfig,
    step: usize,
    states: &[Vec<Vec<Vec<AgentState>>>],
) -> Result<Vec<DiscObservation>> {
    let n_traj = states[0].len();
    let jobs = sample_plan(batch, cfg, step, 3, |p| p.segment.num_steps(), n_traj);
    jobs.par_iter()
        .map(|&(b, slot, t, br)| {
            let p = batch[b];
            let traj = &states[b][br];
            let t = t.min(traj.len() - 1);
            let goal = p.plan.agents[slot].training_goal(cfg.hierarchy).0;
            encode_disc_observation(&scene_of(p.segment, &traj[t], t), p.plan.interactive[slot], goal)
        })
        .collect()
}

/// Index of the smallest `collision + off-road` score; earliest on ties.
pub fn select_by_scores(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Evaluates a checkpoint on every plannable segment of `segments`.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, segments: &[RunSegment], eval: &EvalConfig) -> Result<EvalReport> {
    let prepared = prepare(segments, &ckpt.config)?;
    let kept: Vec<RunSegment> = prepared.iter().map(|p| p.segment.clone()).collect();
    let plans: Vec<SegmentPlan> = prepared.into_iter().map(|p| p.plan).collect();
    let models = ckpt.models()?;
    let mut r = evaluate(&models, &kept, &plans, eval)?;
    r.config_hash = ckpt.config_hash.clone();
    Ok(r)
}

/// Evaluates every checkpoint on `validation` and returns the safest one
/// together with all reports.
pub fn select_checkpoint<'c>(
    checkpoints: &'c [Checkpoint],
    validation: &[RunSegment],
    seed: u64,
) -> Result<(&'c Checkpoint, Vec<EvalReport>)> {
    if checkpoints.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let reports = checkpoints
        .iter()
        .map(|c| evaluate_checkpoint(c, validation, &c.config.eval_config(seed)))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = reports.iter().map(EvalReport::safety_score).collect();
    let best = select_by_scores(&scores).expect("at least one checkpoint");
    Ok((&checkpoints[best], reports))
}

/// Writes every checkpoint into `dir` and returns the paths.
pub fn save_checkpoints(checkpoints: &[Checkpoint], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoints
        .iter()
        .map(|c| {
            let path = dir.join(c.file_name());
            c.save(&path)?;
            Ok(path)
        })
        .collect()
}

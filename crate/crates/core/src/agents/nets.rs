//! The three learned functions and their batched inference.

use ndarray::{Array2, ArrayView1, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{
    encode_disc_observation, encode_goal_observation, encode_observation, DiscObservation, GoalObservation, GoalPath,
    Observation, RowSet, Scene, GOALGEN_DENSE, NEAR_DIM, OBJECT_DIM, POINT_DIM, POLICY_DENSE,
};
use crate::dynamics::{Action, ContinuousAction, DiscreteAction, NUM_DISCRETE_ACTIONS};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::neural::{clamped_sigmoid, log_softmax_masked, EncoderNet, EncoderShape, NetInput, Parameters, SetBatch};
use crate::rng::StreamRng;
use crate::roadgraph::DEFAULT_MAX_ROUTES;
use crate::scenario::AgentState;

/// Logit slots of the goal generator.
pub const MAX_ROUTES: usize = DEFAULT_MAX_ROUTES;
/// Exploration noise of the continuous policy, metres per step.
pub const CONTINUOUS_SIGMA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSizes {
    pub set_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl Default for NetSizes {
    fn default() -> Self {
        NetSizes {
            set_hidden: vec![32],
            head_hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSpace {
    #[default]
    Discrete,
    Continuous,
}

fn build(sizes: &NetSizes, dense: usize, sets: &[usize], out: usize, rng: &mut StreamRng) -> EncoderNet {
    let mut net = EncoderNet::new(
        EncoderShape {
            dense,
            sets,
            set_hidden: &sizes.set_hidden,
            head_hidden: &sizes.head_hidden,
            out,
        },
        rng,
    );
    net.head.zero_output_layer();
    net
}

fn stack_sets<'a>(sets: impl Iterator<Item = &'a RowSet>, width: usize) -> SetBatch {
    let mut data = Vec::new();
    let mut offsets = vec![0];
    for s in sets {
        data.extend_from_slice(&s.data);
        offsets.push(offsets.last().unwrap() + s.len());
    }
    let n = *offsets.last().unwrap();
    SetBatch {
        rows: Array2::from_shape_vec((n, width), data).expect("rows match width"),
        offsets,
    }
}

fn stack_dense<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((data.len() / width, width), data).expect("dense rows match width")
}

pub fn policy_input(obs: &[Observation]) -> NetInput {
    NetInput {
        dense: stack_dense(obs.iter().map(|o| o.dense.as_slice()), POLICY_DENSE),
        sets: vec![
            stack_sets(obs.iter().map(|o| &o.objects), OBJECT_DIM),
            stack_sets(obs.iter().map(|o| &o.points), POINT_DIM),
        ],
    }
}

pub fn goal_input(obs: &[GoalObservation]) -> NetInput {
    NetInput {
        dense: stack_dense(obs.iter().map(|o| o.dense.as_slice()), GOALGEN_DENSE),
        sets: vec![
            stack_sets(obs.iter().map(|o| &o.objects), OBJECT_DIM),
            stack_sets(obs.iter().map(|o| &o.points), POINT_DIM),
        ],
    }
}

pub fn disc_input(obs: &[DiscObservation]) -> NetInput {
    NetInput {
        dense: stack_dense(obs.iter().map(|o| o.dense.as_slice()), POLICY_DENSE),
        sets: vec![stack_sets(obs.iter().map(|o| &o.near), NEAR_DIM)],
    }
}

/// Draws from the categorical over the first `valid` entries of `log_probs`.
/// Returns the index and its log-probability.
pub fn sample_categorical<R: Rng + ?Sized>(log_probs: ArrayView1<f64>, valid: usize, rng: &mut R) -> (usize, f64) {
    let valid = valid.min(log_probs.len());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for i in 0..valid {
        acc += log_probs[i].exp();
        if u < acc {
            return (i, log_probs[i]);
        }
    }
    // Rounding left `acc` just below one; take the last class with mass.
    let last = (0..valid).rev().find(|&i| log_probs[i] > f64::NEG_INFINITY).unwrap_or(0);
    (last, log_probs[last])
}

/// Highest-probability index, lowest index on ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Route proposal network `h(g | s_1)` over enumerated route indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalGenerator {
    pub net: EncoderNet,
}

impl GoalGenerator {
    pub fn new(sizes: &NetSizes, rng: &mut StreamRng) -> Self {
        GoalGenerator {
            net: build(sizes, GOALGEN_DENSE, &[OBJECT_DIM, POINT_DIM], MAX_ROUTES, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GoalGenerator {
            net: self.net.zeros_like(),
        }
    }

    pub fn logits(&self, obs: &[GoalObservation]) -> Result<Array2<f64>> {
        self.net.predict(&goal_input(obs))
    }

    /// Masked log-probabilities for one agent with `n_routes` candidates.
    pub fn log_probs(&self, scene: &Scene<'_>, agent: usize, n_routes: usize) -> Result<Vec<f64>> {
        check_route_count(n_routes)?;
        let obs = encode_goal_observation(scene, agent)?;
        let logits = self.logits(std::slice::from_ref(&obs))?;
        Ok(log_softmax_masked(logits.row(0), n_routes).to_vec())
    }

    /// Samples a route index for every `(scene, agent, route count)` query.
    pub fn sample(&self, queries: &[(Scene<'_>, usize, usize)], rngs: &mut [StreamRng]) -> Result<Vec<(usize, f64)>> {
        for &(_, _, n) in queries {
            check_route_count(n)?;
        }
        let obs = queries
            .par_iter()
            .map(|(scene, agent, _)| encode_goal_observation(scene, *agent))
            .collect::<Result<Vec<_>>>()?;
        let logits = self.logits(&obs)?;
        Ok(queries
            .iter()
            .zip(rngs.iter_mut())
            .enumerate()
            .map(|(k, (&(_, _, n), rng))| sample_categorical(log_softmax_masked(logits.row(k), n).view(), n, rng))
            .collect())
    }
}

fn check_route_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::NoFeasibleRoutes);
    }
    if n > MAX_ROUTES {
        return Err(Error::Config(format!("{n} routes exceed the {MAX_ROUTES} goal slots")));
    }
    Ok(())
}

pub fn sample_goal(h: &GoalGenerator, scene: &Scene<'_>, agent: usize, n_routes: usize, rng: &mut StreamRng) -> Result<(usize, f64)> {
    Ok(h.sample(&[(*scene, agent, n_routes)], std::slice::from_mut(rng))?[0])
}

/// Goal-conditional controller `pi(a | s, g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub space: ActionSpace,
    pub net: EncoderNet,
}

impl Policy {
    pub fn new(space: ActionSpace, sizes: &NetSizes, rng: &mut StreamRng) -> Self {
        let out = match space {
            ActionSpace::Discrete => NUM_DISCRETE_ACTIONS,
            ActionSpace::Continuous => 2,
        };
        Policy {
            space,
            net: build(sizes, POLICY_DENSE, &[OBJECT_DIM, POINT_DIM], out, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Policy {
            space: self.space,
            net: self.net.zeros_like(),
        }
    }

    pub fn outputs(&self, obs: &[Observation]) -> Result<Array2<f64>> {
        self.net.predict(&policy_input(obs))
    }
}

/// World-frame mean displacement: constant-velocity motion plus a learned
/// correction expressed in the agent frame.
pub fn continuous_mean(s: &AgentState, out: [f64; 2], dt: f64) -> Vec2 {
    s.velocity * dt + Vec2::new(out[0], out[1]).rotate(s.heading)
}

pub fn sample_action_discrete<R: Rng + ?Sized>(logits: ArrayView1<f64>, rng: &mut R) -> (DiscreteAction, f64) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = w.iter().rposition(|&wi| wi > 0.0).unwrap_or(0);
    for (i, &wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            pick = i;
            break;
        }
    }
    let lp = logits[pick] - m - total.ln();
    (DiscreteAction::from_index(pick).expect("index within grid"), lp)
}

pub fn greedy_action_discrete(logits: ArrayView1<f64>) -> DiscreteAction {
    DiscreteAction::from_index(argmax(logits)).expect("index within grid")
}

/// Reparameterised draw `mean + sigma * eps`; also returns `eps`.
pub fn sample_action_continuous<R: Rng + ?Sized>(mean: Vec2, sigma: f64, rng: &mut R) -> (ContinuousAction, Vec2) {
    let eps = Vec2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
    let d = mean + eps * sigma;
    (ContinuousAction { dx: d.x, dy: d.y }, eps)
}

/// Goal-conditioned realism classifier `D(s | g)`; high means policy-like.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: EncoderNet,
}

impl Discriminator {
    pub fn new(sizes: &NetSizes, rng: &mut StreamRng) -> Self {
        Discriminator {
            net: build(sizes, POLICY_DENSE, &[NEAR_DIM], 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Discriminator {
            net: self.net.zeros_like(),
        }
    }

    pub fn logits(&self, obs: &[DiscObservation]) -> Result<Vec<f64>> {
        Ok(self.net.predict(&disc_input(obs))?.column(0).to_vec())
    }
}

pub fn discriminator_score(d: &Discriminator, scene: &Scene<'_>, agent: usize, goal: &GoalPath) -> Result<f64> {
    let obs = encode_disc_observation(scene, agent, goal)?;
    Ok(clamped_sigmoid(d.logits(&[obs])?[0]).0)
}

/// One agent to act for or score.
#[derive(Clone, Copy, Debug)]
pub struct AgentQuery<'a> {
    pub scene: Scene<'a>,
    pub agent: usize,
    pub goal: &'a GoalPath,
}

/// Batched action selection; query `k` draws only from `rngs[k]`.
pub trait Actor: Sync {
    fn act(&self, queries: &[AgentQuery<'_>], rngs: &mut [StreamRng]) -> Result<Vec<Action>>;
}

/// Batched per-state realism score; higher is less realistic.
pub trait Scorer: Sync {
    fn score(&self, queries: &[AgentQuery<'_>]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyActor<'a> {
    pub policy: &'a Policy,
    pub dt: f64,
    pub greedy: bool,
}

pub fn encode_queries(queries: &[AgentQuery<'_>]) -> Result<Vec<Observation>> {
    queries
        .par_iter()
        .map(|q| encode_observation(&q.scene, q.agent, q.goal))
        .collect()
}

impl Actor for PolicyActor<'_> {
    fn act(&self, queries: &[AgentQuery<'_>], rngs: &mut [StreamRng]) -> Result<Vec<Action>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.policy.outputs(&encode_queries(queries)?)?;
        Ok(queries
            .iter()
            .zip(rngs.iter_mut())
            .enumerate()
            .map(|(k, (q, rng))| match self.policy.space {
                ActionSpace::Discrete if self.greedy => Action::Discrete(greedy_action_discrete(out.row(k))),
                ActionSpace::Discrete => Action::Discrete(sample_action_discrete(out.row(k), rng).0),
                ActionSpace::Continuous => {
                    let mean = continuous_mean(&q.scene.states[q.agent], [out[[k, 0]], out[[k, 1]]], self.dt);
                    let sigma = if self.greedy { 0.0 } else { CONTINUOUS_SIGMA };
                    Action::Continuous(sample_action_continuous(mean, sigma, rng).0)
                }
            })
            .collect())
    }
}

impl Scorer for Discriminator {
    fn score(&self, queries: &[AgentQuery<'_>]) -> Result<Vec<f64>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let obs = queries
            .par_iter()
            .map(|q| encode_disc_observation(&q.scene, q.agent, q.goal))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.logits(&obs)?.into_iter().map(|z| clamped_sigmoid(z).0).collect())
    }
}

/// All learned parameters of one agent model.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub goal_gen: GoalGenerator,
    pub policy: Policy,
    pub disc: Discriminator,
}

impl Models {
    pub fn new(space: ActionSpace, sizes: &NetSizes, rng: &mut StreamRng) -> Self {
        Models {
            goal_gen: GoalGenerator::new(sizes, rng),
            policy: Policy::new(space, sizes, rng),
            disc: Discriminator::new(sizes, rng),
        }
    }
}

macro_rules! named_params {
    ($ty:ty, $prefix:literal) => {
        impl Parameters for $ty {
            fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
                self.net.named_blocks($prefix)
            }
            fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
                self.net.named_blocks_mut($prefix)
            }
        }
    };
}

named_params!(GoalGenerator, "goal_gen");
named_params!(Policy, "policy");
named_params!(Discriminator, "disc");

impl Parameters for Models {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = self.goal_gen.blocks();
        out.extend(self.policy.blocks());
        out.extend(self.disc.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = self.goal_gen.blocks_mut();
        out.extend(self.policy.blocks_mut());
        out.extend(self.disc.blocks_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::features::encode_observation;
    use crate::geom::Vec2;
    use crate::neural::{export, import};
    use crate::roadgraph::{Roadgraph, Route};
    use crate::rng::stream;
    use crate::scenario::AgentKind;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn road() -> Roadgraph {
        let pts: Vec<Vec2> = (0..=50).map(|i| Vec2::new(-40.0 + 4.0 * i as f64, 0.0)).collect();
        Roadgraph::from_links(vec![(0, pts)], &[], 1.85).unwrap()
    }

    fn car(x: f64, y: f64) -> AgentState {
        AgentState {
            position: Vec2::new(x, y),
            heading: 0.0,
            velocity: Vec2::new(8.0, 0.0),
            length: 4.6,
            width: 1.9,
            valid: true,
        }
    }

    fn chi2_p(counts: &[usize], probs: &[f64]) -> f64 {
        let n: usize = counts.iter().sum();
        let mut stat = 0.0;
        let mut dof = 0;
        for (&c, &p) in counts.iter().zip(probs) {
            if p > 0.0 {
                let e = p * n as f64;
                stat += (c as f64 - e).powi(2) / e;
                dof += 1;
            }
        }
        1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn untrained_goal_sampling_is_uniform_and_masked() {
        let rg = road();
        let states = [car(0.0, 0.0)];
        let kinds = [AgentKind::Vehicle];
        let scene = Scene {
            roadgraph: &rg,
            states: &states,
            kinds: &kinds,
            lights: &[],
        };
        let h = GoalGenerator::new(&NetSizes::default(), &mut stream(1, &[]));
        let mut rng = stream(2, &[]);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let (i, lp) = sample_goal(&h, &scene, 0, 4, &mut rng).unwrap();
            assert!((lp - 0.25f64.ln()).abs() < 1e-12);
            counts[i] += 1;
        }
        assert!(chi2_p(&counts, &[0.25; 4]) > 0.01, "{counts:?}");
        assert_eq!(sample_goal(&h, &scene, 0, 1, &mut rng).unwrap(), (0, 0.0));
        assert!(matches!(sample_goal(&h, &scene, 0, 0, &mut rng), Err(Error::NoFeasibleRoutes)));
    }

    #[test]
    fn masked_classes_are_never_sampled() {
        let mut rng = stream(3, &[]);
        let logits = ndarray::Array1::from_shape_fn(10, |i| i as f64);
        let lp = log_softmax_masked(logits.view(), 3);
        for _ in 0..10_000 {
            assert!(sample_categorical(lp.view(), 3, &mut rng).0 < 3);
        }
    }

    #[test]
    fn discrete_sampling_matches_softmax() {
        let mut rng = stream(4, &[]);
        let logits = ndarray::Array1::from_shape_fn(NUM_DISCRETE_ACTIONS, |i| ((i * 37) % 11) as f64 * 0.4 - 2.0);
        let lp = log_softmax_masked(logits.view(), NUM_DISCRETE_ACTIONS);
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let mut counts = vec![0usize; NUM_DISCRETE_ACTIONS];
        for _ in 0..10_000 {
            counts[sample_action_discrete(logits.view(), &mut rng).0.index()] += 1;
        }
        // Pool sparse classes so expected counts stay large enough.
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let mut pooled_c = Vec::new();
        let mut pooled_p = Vec::new();
        let (mut c, mut p) = (0, 0.0);
        for k in 0..NUM_DISCRETE_ACTIONS {
            c += counts[k];
            p += probs[k];
            if p * 10_000.0 >= 20.0 {
                pooled_c.push(c);
                pooled_p.push(p);
                c = 0;
                p = 0.0;
            }
        }
        *pooled_c.last_mut().unwrap() += c;
        *pooled_p.last_mut().unwrap() += p;
        assert!(chi2_p(&pooled_c, &pooled_p) > 0.01);
        assert_eq!(greedy_action_discrete(logits.view()).index(), argmax(logits.view()));
    }

    #[test]
    fn continuous_sampling() {
        let mut rng = stream(5, &[]);
        let mean = Vec2::new(1.6, -0.2);
        assert_eq!(sample_action_continuous(mean, 0.0, &mut rng).0.as_vec(), mean);
        let n = 10_000;
        let mut acc = Vec2::ZERO;
        for _ in 0..n {
            let (a, eps) = sample_action_continuous(mean, CONTINUOUS_SIGMA, &mut rng);
            assert!((a.as_vec() - (mean + eps * CONTINUOUS_SIGMA)).norm() < 1e-15);
            acc += a.as_vec();
        }
        let avg = acc * (1.0 / n as f64);
        let tol = 3.0 * CONTINUOUS_SIGMA / (n as f64).sqrt();
        assert!((avg.x - mean.x).abs() < tol && (avg.y - mean.y).abs() < tol);
    }

    #[test]
    fn action_moves_one_for_one_with_mean() {
        let shift = Vec2::new(0.3, -0.1);
        let a = sample_action_continuous(Vec2::new(1.0, 0.0), CONTINUOUS_SIGMA, &mut stream(6, &[])).0;
        let b = sample_action_continuous(Vec2::new(1.0, 0.0) + shift, CONTINUOUS_SIGMA, &mut stream(6, &[])).0;
        let d = b.as_vec() - a.as_vec();
        assert!((d - shift).norm() < 1e-12);
    }

    #[test]
    fn untrained_discriminator_scores_half() {
        let rg = road();
        let goal = GoalPath::new(&rg, Route { segment_ids: vec![0] }).unwrap();
        let states = [car(0.0, 0.0), car(10.0, 1.0)];
        let kinds = [AgentKind::Vehicle; 2];
        let scene = Scene {
            roadgraph: &rg,
            states: &states,
            kinds: &kinds,
            lights: &[],
        };
        let d = Discriminator::new(&NetSizes::default(), &mut stream(7, &[]));
        assert_eq!(discriminator_score(&d, &scene, 0, &goal).unwrap(), 0.5);
    }

    #[test]
    fn moving_an_object_inside_the_radius_changes_the_score() {
        let rg = road();
        let goal = GoalPath::new(&rg, Route { segment_ids: vec![0] }).unwrap();
        let kinds = [AgentKind::Vehicle; 2];
        let mut d = Discriminator::new(&NetSizes::default(), &mut stream(8, &[]));
        let mut rng = stream(9, &[]);
        for (_, mut b) in d.blocks_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let score = |x: f64| {
            let states = [car(0.0, 0.0), car(x, 0.0)];
            let scene = Scene {
                roadgraph: &rg,
                states: &states,
                kinds: &kinds,
                lights: &[],
            };
            discriminator_score(&d, &scene, 0, &goal).unwrap()
        };
        assert_eq!(score(25.0), score(30.0));
        assert_ne!(score(25.0), score(15.0));
    }

    #[test]
    fn batched_actions_match_single_queries() {
        let rg = road();
        let goal = GoalPath::new(&rg, Route { segment_ids: vec![0] }).unwrap();
        let states = [car(0.0, 0.0), car(12.0, 0.5), car(-9.0, -0.3)];
        let kinds = [AgentKind::Vehicle; 3];
        let scene = Scene {
            roadgraph: &rg,
            states: &states,
            kinds: &kinds,
            lights: &[],
        };
        let mut policy = Policy::new(ActionSpace::Discrete, &NetSizes::default(), &mut stream(10, &[]));
        let mut rng = stream(11, &[]);
        for (_, mut b) in policy.blocks_mut() {
            b.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
        }
        let actor = PolicyActor {
            policy: &policy,
            dt: 0.2,
            greedy: false,
        };
        let queries: Vec<AgentQuery> = (0..3).map(|agent| AgentQuery { scene, agent, goal: &goal }).collect();
        let mut rngs: Vec<StreamRng> = (0..3).map(|k| stream(12, &[k])).collect();
        let batched = actor.act(&queries, &mut rngs).unwrap();
        for k in 0..3 {
            let single = actor.act(&queries[k..k + 1], &mut [stream(12, &[k as u64])]).unwrap();
            assert_eq!(single[0], batched[k]);
        }
        let obs = encode_observation(&scene, 1, &goal).unwrap();
        assert_eq!(policy.outputs(&[obs]).unwrap().nrows(), 1);
    }

    #[test]
    fn checkpoint_block_names_are_prefixed() {
        let m = Models::new(ActionSpace::Continuous, &NetSizes::default(), &mut stream(13, &[]));
        let map = export(&m);
        assert!(map.keys().any(|k| k.starts_with("goal_gen/")));
        assert!(map.keys().any(|k| k.starts_with("policy/")));
        assert!(map.keys().any(|k| k.starts_with("disc/")));
        assert!(map.keys().all(|k| ["goal_gen/", "policy/", "disc/"].iter().any(|p| k.starts_with(p))));
        let mut other = Models::new(ActionSpace::Continuous, &NetSizes::default(), &mut stream(14, &[]));
        import(&mut other, &map).unwrap();
        assert_eq!(other, m);
    }
}

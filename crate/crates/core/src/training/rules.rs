//! Likelihood-based learning rules: behaviour cloning, goal matching and
//! discriminator fitting.

use ndarray::Array2;

use crate::agents::{
    continuous_mean, disc_input, goal_input, policy_input, ActionSpace, DiscObservation, Discriminator, GoalGenerator,
    GoalObservation, Observation, Policy, CONTINUOUS_SIGMA,
};
use crate::dynamics::Action;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::neural::{bce, softmax_nll, softmax_nll_masked, Adam};
use crate::scenario::AgentState;

/// Action target of one imitation sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Discrete(usize),
    /// World-frame displacement taken from `state`.
    Continuous { displacement: Vec2, state: AgentState },
}

impl Target {
    pub fn from_action(a: Action, state: &AgentState) -> Self {
        match a {
            Action::Discrete(d) => Target::Discrete(d.index()),
            Action::Continuous(c) => Target::Continuous {
                displacement: c.as_vec(),
                state: *state,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub obs: Observation,
    pub target: Target,
}

/// Negative log-likelihood of one target and its gradient with respect to
/// the policy output row.
fn action_nll(space: ActionSpace, out: ndarray::ArrayView1<f64>, target: &Target, dt: f64) -> Result<(f64, Vec<f64>)> {
    match (space, target) {
        (ActionSpace::Discrete, Target::Discrete(label)) => {
            let (l, g) = softmax_nll(out, *label)?;
            Ok((l, g.to_vec()))
        }
        (ActionSpace::Continuous, Target::Continuous { displacement, state }) => {
            let mean = continuous_mean(state, [out[0], out[1]], dt);
            let r = *displacement - mean;
            let var = CONTINUOUS_SIGMA * CONTINUOUS_SIGMA;
            let loss = r.norm_sq() / (2.0 * var) + (2.0 * std::f64::consts::PI * var).ln();
            let g_world = r * (-1.0 / var);
            let g = g_world.rotate(-state.heading);
            Ok((loss, vec![g.x, g.y]))
        }
        _ => Err(Error::Config("target does not match the policy's action space".into())),
    }
}

/// `mean NLL(expert) + weight * mean NLL(distill)` and its parameter gradient.
/// The distillation term is skipped entirely when `weight` is zero or no
/// distillation samples are given.
pub fn bc_loss_and_grad(policy: &Policy, expert: &[Labeled], distill: &[Labeled], weight: f64, dt: f64) -> Result<(f64, Policy)> {
    if expert.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let use_distill = weight != 0.0 && !distill.is_empty();
    let samples: Vec<&Labeled> = if use_distill {
        expert.iter().chain(distill).collect()
    } else {
        expert.iter().collect()
    };
    let obs: Vec<Observation> = samples.iter().map(|s| s.obs.clone()).collect();
    let (out, tape) = policy.net.forward(&policy_input(&obs))?;
    let mut upstream = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let scale = if k < expert.len() {
            1.0 / expert.len() as f64
        } else {
            weight / distill.len() as f64
        };
        let (l, g) = action_nll(policy.space, out.row(k), &s.target, dt)?;
        loss += scale * l;
        for (j, gj) in g.into_iter().enumerate() {
            upstream[[k, j]] = scale * gj;
        }
    }
    let (grads, _) = policy.net.backward(&tape, upstream.view())?;
    Ok((
        loss,
        Policy {
            space: policy.space,
            net: grads,
        },
    ))
}

pub fn bc_update(policy: &mut Policy, opt: &mut Adam, expert: &[Labeled], distill: &[Labeled], weight: f64, dt: f64) -> Result<f64> {
    let (loss, grads) = bc_loss_and_grad(policy, expert, distill, weight, dt)?;
    opt.update(policy, &grads)?;
    Ok(loss)
}

/// Initial-state observation, candidate count and true route index.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSample {
    pub obs: GoalObservation,
    pub routes: usize,
    pub label: usize,
}

pub fn goal_loss_and_grad(h: &GoalGenerator, samples: &[GoalSample]) -> Result<(f64, GoalGenerator)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let obs: Vec<GoalObservation> = samples.iter().map(|s| s.obs.clone()).collect();
    let (logits, tape) = h.net.forward(&goal_input(&obs))?;
    let n = samples.len() as f64;
    let mut upstream = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let (l, g) = softmax_nll_masked(logits.row(k), s.routes, s.label)?;
        loss += l / n;
        upstream.row_mut(k).assign(&(g / n));
    }
    let (grads, _) = h.net.backward(&tape, upstream.view())?;
    Ok((loss, GoalGenerator { net: grads }))
}

pub fn goal_update(h: &mut GoalGenerator, opt: &mut Adam, samples: &[GoalSample]) -> Result<f64> {
    let (loss, grads) = goal_loss_and_grad(h, samples)?;
    opt.update(h, &grads)?;
    Ok(loss)
}

/// `mean[-log D(policy)] + mean[-log(1 - D(expert))]` and its gradient.
pub fn disc_loss_and_grad(d: &Discriminator, expert: &[DiscObservation], policy: &[DiscObservation]) -> Result<(f64, Discriminator)> {
    if expert.is_empty() || policy.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let obs: Vec<DiscObservation> = policy.iter().chain(expert).cloned().collect();
    let (logits, tape) = d.net.forward(&disc_input(&obs))?;
    let mut upstream = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for k in 0..obs.len() {
        let (target, n) = if k < policy.len() {
            (1.0, policy.len())
        } else {
            (0.0, expert.len())
        };
        let (l, g) = bce(logits[[k, 0]], target);
        loss += l / n as f64;
        upstream[[k, 0]] = g / n as f64;
    }
    let (grads, _) = d.net.backward(&tape, upstream.view())?;
    Ok((loss, Discriminator { net: grads }))
}

pub fn discriminator_update(d: &mut Discriminator, opt: &mut Adam, expert: &[DiscObservation], policy: &[DiscObservation]) -> Result<f64> {
    let (loss, grads) = disc_loss_and_grad(d, expert, policy)?;
    opt.update(d, &grads)?;
    Ok(loss)
}

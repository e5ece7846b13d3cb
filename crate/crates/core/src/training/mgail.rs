//! Policy gradients obtained by differentiating the discriminator through
//! the displacement dynamics over whole rollouts.

use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::agents::{
    continuous_mean, disc_input, encode_disc_observation, encode_observation, policy_input, ActionSpace,
    DiscObservation, Discriminator, GoalPath, Observation, Policy, Scene, StateGrad, CONTINUOUS_SIGMA,
};
use crate::dynamics::{jacobian_continuous, step_continuous, ContinuousAction, STATE_DIM};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::neural::{log_clamped_sigmoid, Parameters};
use crate::rng::{purpose, stream};
use crate::scenario::{AgentState, RunSegment};

/// One differentiable rollout: a segment, its interactive agents and goals.
#[derive(Clone, Debug)]
pub struct MgailItem<'a> {
    pub segment: &'a RunSegment,
    pub interactive: &'a [usize],
    pub goals: Vec<&'a GoalPath>,
    pub key: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MgailRollout {
    /// `states[item][t][agent]` for `t = 0..=horizon`.
    pub states: Vec<Vec<Vec<AgentState>>>,
    /// `actions[item][t][slot]`.
    pub actions: Vec<Vec<Vec<ContinuousAction>>>,
}

#[derive(Clone, Debug)]
pub struct MgailOutcome {
    pub loss: f64,
    pub grads: Policy,
    /// Steps whose displacement fell in the heading-hold region.
    pub held: usize,
    pub rollout: MgailRollout,
}

fn noise(seed: u64, key: u64, t: usize, slot: usize) -> Vec2 {
    let mut rng = stream(seed, &[purpose::MGAIL, key, t as u64, slot as u64]);
    Vec2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
}

fn scene<'s>(item: &MgailItem<'s>, states: &'s [AgentState], t: usize) -> Scene<'s> {
    Scene {
        roadgraph: &item.segment.roadgraph,
        states,
        kinds: &item.segment.kinds,
        lights: item.segment.lights_at(t),
    }
}

fn policy_obs(items: &[MgailItem<'_>], states: &[Vec<Vec<AgentState>>], t: usize) -> Result<Vec<Observation>> {
    let pairs: Vec<(usize, usize)> = items
        .iter()
        .enumerate()
        .flat_map(|(i, it)| (0..it.interactive.len()).map(move |s| (i, s)))
        .collect();
    pairs
        .par_iter()
        .map(|&(i, s)| encode_observation(&scene(&items[i], &states[i][t], t), items[i].interactive[s], items[i].goals[s]))
        .collect()
}

fn disc_obs(items: &[MgailItem<'_>], states: &[Vec<Vec<AgentState>>], t: usize) -> Result<Vec<DiscObservation>> {
    let pairs: Vec<(usize, usize)> = items
        .iter()
        .enumerate()
        .flat_map(|(i, it)| (0..it.interactive.len()).map(move |s| (i, s)))
        .collect();
    pairs
        .par_iter()
        .map(|&(i, s)| encode_disc_observation(&scene(&items[i], &states[i][t], t), items[i].interactive[s], items[i].goals[s]))
        .collect()
}

fn check(items: &[MgailItem<'_>], policy: &Policy, horizon: usize) -> Result<()> {
    if policy.space != ActionSpace::Continuous {
        return Err(Error::Config("adversarial updates need the continuous policy".into()));
    }
    if items.is_empty() || items.iter().all(|it| it.interactive.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    for it in items {
        if it.goals.len() != it.interactive.len() {
            return Err(Error::Config("one goal per interactive agent required".into()));
        }
        if horizon == 0 || horizon >= it.segment.num_steps() {
            return Err(Error::Config(format!(
                "horizon {horizon} outside 1..{} for segment {}",
                it.segment.num_steps(),
                it.segment.id
            )));
        }
    }
    Ok(())
}

/// Reparameterised rollout with noise keyed by `(seed, item key, t, slot)`.
pub fn mgail_rollout(items: &[MgailItem<'_>], policy: &Policy, horizon: usize, seed: u64) -> Result<MgailRollout> {
    check(items, policy, horizon)?;
    let mut states: Vec<Vec<Vec<AgentState>>> = items.iter().map(|it| vec![it.segment.snapshot(0)]).collect();
    let mut actions: Vec<Vec<Vec<ContinuousAction>>> = vec![Vec::new(); items.len()];
    for t in 0..horizon {
        let out = policy.outputs(&policy_obs(items, &states, t)?)?;
        let mut k = 0;
        for (i, it) in items.iter().enumerate() {
            let cur = &states[i][t];
            let mut next = it.segment.snapshot(t + 1);
            let mut acts = Vec::with_capacity(it.interactive.len());
            for (slot, &a) in it.interactive.iter().enumerate() {
                let mean = continuous_mean(&cur[a], [out[[k, 0]], out[[k, 1]]], it.segment.step_dt);
                let d = mean + noise(seed, it.key, t, slot) * CONTINUOUS_SIGMA;
                let action = ContinuousAction { dx: d.x, dy: d.y };
                next[a] = step_continuous(&cur[a], action, it.segment.step_dt);
                acts.push(action);
                k += 1;
            }
            states[i].push(next);
            actions[i].push(acts);
        }
    }
    Ok(MgailRollout { states, actions })
}

/// Mean of `log D(s_t | g)` over items, interactive agents and `t = 1..=horizon`.
pub fn mgail_loss(items: &[MgailItem<'_>], policy: &Policy, disc: &Discriminator, horizon: usize, seed: u64) -> Result<f64> {
    let roll = mgail_rollout(items, policy, horizon, seed)?;
    let count = items.iter().map(|it| it.interactive.len()).sum::<usize>() * horizon;
    let mut total = 0.0;
    for t in 1..=horizon {
        let logits = disc.logits(&disc_obs(items, &roll.states, t)?)?;
        total += logits.iter().map(|&z| log_clamped_sigmoid(z).0).sum::<f64>();
    }
    Ok(total / count as f64)
}

/// Splits a stacked set-row gradient back into per-observation slices.
fn split_rows(g: ArrayView2<f64>, lens: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
    let mut at = 0;
    lens.map(|n| {
        let part = g.slice(s![at..at + n, ..]).iter().copied().collect();
        at += n;
        part
    })
    .collect()
}

fn add_interactive(dst: &mut [Vec<StateGrad>], items: &[MgailItem<'_>], item: usize, src: &[StateGrad]) {
    for &a in items[item].interactive {
        for k in 0..STATE_DIM {
            dst[item][a][k] += src[a][k];
        }
    }
}

/// Loss of [`mgail_loss`] and its exact gradient with respect to the policy
/// parameters, by reverse accumulation through every step.
pub fn mgail_loss_and_grad(items: &[MgailItem<'_>], policy: &Policy, disc: &Discriminator, horizon: usize, seed: u64) -> Result<MgailOutcome> {
    let roll = mgail_rollout(items, policy, horizon, seed)?;
    let count = items.iter().map(|it| it.interactive.len()).sum::<usize>() * horizon;
    let scale = 1.0 / count as f64;
    let mut grads = policy.zeros_like();
    let mut held = 0;
    let mut loss = 0.0;
    let zero = |it: &MgailItem| vec![[0.0; STATE_DIM]; it.segment.num_agents()];
    let mut g_state: Vec<Vec<StateGrad>> = items.iter().map(zero).collect();
    for t in (1..=horizon).rev() {
        // Discriminator term at t.
        let dobs = disc_obs(items, &roll.states, t)?;
        let (logits, tape) = disc.net.forward(&disc_input(&dobs))?;
        let mut up = Array2::zeros(logits.raw_dim());
        for k in 0..dobs.len() {
            let (lp, dlp) = log_clamped_sigmoid(logits[[k, 0]]);
            loss += scale * lp;
            up[[k, 0]] = scale * dlp;
        }
        let (_, gin) = disc.net.backward(&tape, up.view())?;
        let near = split_rows(gin.sets[0].view(), dobs.iter().map(|o| o.near.len()));
        let mut k = 0;
        for (i, it) in items.iter().enumerate() {
            for _ in it.interactive {
                let g = dobs[k].state_vjp(&roll.states[i][t], &gin.dense.row(k).to_vec(), &near[k]);
                add_interactive(&mut g_state, items, i, &g);
                k += 1;
            }
        }

        // Step from t-1 to t, then the policy output at t-1.
        let mut g_prev: Vec<Vec<StateGrad>> = items.iter().map(zero).collect();
        let pobs = policy_obs(items, &roll.states, t - 1)?;
        let (out, ptape) = policy.net.forward(&policy_input(&pobs))?;
        let mut g_out = Array2::zeros(out.raw_dim());
        let mut k = 0;
        for (i, it) in items.iter().enumerate() {
            let dt = it.segment.step_dt;
            for (slot, &a) in it.interactive.iter().enumerate() {
                let prev = &roll.states[i][t - 1][a];
                let action = roll.actions[i][t - 1][slot];
                let g = g_state[i][a];
                let jac = match jacobian_continuous(prev, action, dt) {
                    Ok(j) => j,
                    Err(Error::NondifferentiableRegion) => {
                        held += 1;
                        g_prev[i][a][4] += g[4];
                        [[1.0, 0.0], [0.0, 1.0], [1.0 / dt, 0.0], [0.0, 1.0 / dt], [0.0, 0.0]]
                    }
                    Err(e) => return Err(e),
                };
                let mut g_d = Vec2::ZERO;
                for (row, gr) in jac.iter().zip(g.iter()) {
                    g_d += Vec2::new(row[0], row[1]) * *gr;
                }
                g_prev[i][a][0] += g[0];
                g_prev[i][a][1] += g[1];
                g_prev[i][a][2] += dt * g_d.x;
                g_prev[i][a][3] += dt * g_d.y;
                let o = Vec2::new(out[[k, 0]], out[[k, 1]]);
                g_prev[i][a][4] += g_d.dot(o.rotate(prev.heading).perp());
                let go = g_d.rotate(-prev.heading);
                g_out[[k, 0]] = go.x;
                g_out[[k, 1]] = go.y;
                k += 1;
            }
        }
        let (g_params, gin) = policy.net.backward(&ptape, g_out.view())?;
        grads.net.add_scaled(&g_params, 1.0);
        let objects = split_rows(gin.sets[0].view(), pobs.iter().map(|o| o.objects.len()));
        let points = split_rows(gin.sets[1].view(), pobs.iter().map(|o| o.points.len()));
        let mut k = 0;
        for (i, it) in items.iter().enumerate() {
            for _ in it.interactive {
                let g = pobs[k].state_vjp(&roll.states[i][t - 1], &gin.dense.row(k).to_vec(), &objects[k], &points[k]);
                add_interactive(&mut g_prev, items, i, &g);
                k += 1;
            }
        }
        g_state = g_prev;
    }
    Ok(MgailOutcome {
        loss,
        grads,
        held,
        rollout: roll,
    })
}

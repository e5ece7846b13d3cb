mod common;

use common::grad::*;
use rand::Rng;
use symphony::agents::{
    encode_disc_observation, encode_goal_observation, encode_observation, ActionSpace, DiscObservation, Discriminator,
    GoalGenerator, Models, NetSizes, Policy, Scene,
};
use symphony::neural::{Adam, Parameters};
use symphony::rng::stream;
use symphony::scenario::{AgentState, RunSegment, WorldKind};
use symphony::training::{
    bc_loss_and_grad, bc_update, disc_loss_and_grad, discriminator_update, goal_loss_and_grad, mgail_loss,
    mgail_loss_and_grad, prepare, train, Algorithm, Checkpoint, GoalSample, Labeled, Target,
    TrainConfig,
};
use symphony::Error;

fn mgail_check(horizon: usize, tol: f64) {
    let err = mgail_gradient_error(horizon);
    assert!(err < tol, "relative error {err}");
}

#[test]
fn one_step_adversarial_gradient_matches_finite_differences() {
    mgail_check(1, 1e-4);
}

#[test]
fn ten_step_adversarial_gradient_matches_finite_differences() {
    mgail_check(10, 1e-3);
}

#[test]
fn constant_discriminator_gives_zero_policy_gradient() {
    let segs = segments(WorldKind::Fork, 2, 12);
    let plans = plans(&segs);
    let items = items(&segs, &plans);
    let mut m = continuous_models(4);
    m.disc = Discriminator::new(&NetSizes::default(), &mut stream(0, &[]));
    let out = mgail_loss_and_grad(&items, &m.policy, &m.disc, 5, 1).unwrap();
    assert!((out.loss - 0.5f64.ln()).abs() < 1e-12);
    for (_, b) in out.grads.blocks() {
        assert!(b.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn adversarial_updates_need_the_continuous_policy() {
    let segs = segments(WorldKind::Fork, 1, 13);
    let plans = plans(&segs);
    let items = items(&segs, &plans);
    let m = Models::new(ActionSpace::Discrete, &NetSizes::default(), &mut stream(0, &[]));
    assert!(matches!(mgail_loss(&items, &m.policy, &m.disc, 3, 0), Err(Error::Config(_))));
    let m = continuous_models(1);
    assert!(matches!(mgail_loss(&items, &m.policy, &m.disc, 50, 0), Err(Error::Config(_))));
}

fn scene_at<'a>(seg: &'a RunSegment, states: &'a [AgentState], t: usize) -> Scene<'a> {
    Scene {
        roadgraph: &seg.roadgraph,
        states,
        kinds: &seg.kinds,
        lights: seg.lights_at(t),
    }
}

/// Every (observation, reference action) pair of the interactive agents.
fn labeled(segs: &[RunSegment], space: ActionSpace) -> Vec<Labeled> {
    let cfg = TrainConfig {
        algorithm: match space {
            ActionSpace::Discrete => Algorithm::Bc,
            ActionSpace::Continuous => Algorithm::Mgail,
        },
        ..TrainConfig::default()
    };
    let mut out = Vec::new();
    for p in prepare(segs, &cfg).unwrap() {
        for (slot, &a) in p.plan.interactive.iter().enumerate() {
            let goal = p.plan.agents[slot].training_goal(false).0;
            for t in 0..p.segment.num_steps() - 1 {
                let states = p.segment.snapshot(t);
                out.push(Labeled {
                    obs: encode_observation(&scene_at(p.segment, &states, t), a, goal).unwrap(),
                    target: Target::from_action(p.actions[slot][t], &states[a]),
                });
            }
        }
    }
    out
}

#[test]
fn behaviour_cloning_halves_the_loss_on_straight_roads() {
    let segs = segments(WorldKind::Straight, 50, 21);
    let data = labeled(&segs, ActionSpace::Discrete);
    let mut policy = Policy::new(ActionSpace::Discrete, &NetSizes::default(), &mut stream(1, &[]));
    let mut opt = Adam::new(3e-4);
    let initial = bc_loss_and_grad(&policy, &data, &[], 0.0, 0.2).unwrap().0;
    assert!((initial - 147f64.ln()).abs() < 1e-9);
    let mut rng = stream(2, &[]);
    for _ in 0..500 {
        let batch: Vec<Labeled> = (0..64).map(|_| data[rng.random_range(0..data.len())].clone()).collect();
        bc_update(&mut policy, &mut opt, &batch, &[], 0.0, 0.2).unwrap();
    }
    let fin = bc_loss_and_grad(&policy, &data, &[], 0.0, 0.2).unwrap().0;
    assert!(fin < 0.5 * initial, "{initial} -> {fin}");
}

#[test]
fn zero_distillation_weight_is_plain_cloning() {
    let segs = segments(WorldKind::Fork, 3, 22);
    let data = labeled(&segs, ActionSpace::Discrete);
    let (expert, distill) = data.split_at(data.len() / 2);
    let mut policy = Policy::new(ActionSpace::Discrete, &NetSizes::default(), &mut stream(1, &[]));
    jitter(&mut policy, 0.05, 1);
    let plain = bc_loss_and_grad(&policy, expert, &[], 1.0, 0.2).unwrap();
    let zero = bc_loss_and_grad(&policy, expert, distill, 0.0, 0.2).unwrap();
    assert_eq!(plain.0, zero.0);
    assert_eq!(plain.1, zero.1);
    let mixed = bc_loss_and_grad(&policy, expert, distill, 1.0, 0.2).unwrap();
    assert_ne!(plain.0, mixed.0);
}

#[test]
fn cloning_gradients_match_finite_differences() {
    let segs = segments(WorldKind::Fork, 2, 23);
    for space in [ActionSpace::Discrete, ActionSpace::Continuous] {
        let data = labeled(&segs, space);
        let (expert, distill) = data.split_at(data.len() - 10);
        let mut policy = Policy::new(space, &NetSizes::default(), &mut stream(4, &[]));
        jitter(&mut policy, 0.05, 2);
        let (_, g) = bc_loss_and_grad(&policy, expert, distill, 0.7, 0.2).unwrap();
        let err = worst_relative_error(&policy, &g, 8, 1e-6, 3, |p| {
            bc_loss_and_grad(p, expert, distill, 0.7, 0.2).unwrap().0
        });
        assert!(err < 1e-5, "{space:?}: {err}");
    }
}

#[test]
fn mismatched_targets_are_rejected() {
    let segs = segments(WorldKind::Fork, 1, 24);
    let data = labeled(&segs, ActionSpace::Discrete);
    let policy = Policy::new(ActionSpace::Continuous, &NetSizes::default(), &mut stream(4, &[]));
    assert!(matches!(bc_loss_and_grad(&policy, &data, &[], 0.0, 0.2), Err(Error::Config(_))));
    assert!(matches!(bc_loss_and_grad(&policy, &[], &data, 1.0, 0.2), Err(Error::EmptyBatch)));
}

/// Discriminator observations of the reference and of the same scenes with
/// the interactive agents shifted sideways by `offset` metres.
fn disc_sets(segs: &[RunSegment], offset: f64) -> (Vec<DiscObservation>, Vec<DiscObservation>) {
    let (mut expert, mut shifted) = (Vec::new(), Vec::new());
    for p in prepare(segs, &TrainConfig::default()).unwrap() {
        for (slot, &a) in p.plan.interactive.iter().enumerate() {
            let goal = p.plan.agents[slot].training_goal(true).0;
            for t in (0..p.segment.num_steps()).step_by(5) {
                let states = p.segment.snapshot(t);
                expert.push(encode_disc_observation(&scene_at(p.segment, &states, t), a, goal).unwrap());
                let mut moved = states.clone();
                let s = &mut moved[a];
                s.position += symphony::geom::Vec2::new(-s.heading.sin(), s.heading.cos()) * offset;
                shifted.push(encode_disc_observation(&scene_at(p.segment, &moved, t), a, goal).unwrap());
            }
        }
    }
    (expert, shifted)
}

#[test]
fn discriminator_separates_displaced_states() {
    let segs = segments(WorldKind::Fork, 20, 25);
    let (expert, policy) = disc_sets(&segs, 3.0);
    let mut d = Discriminator::new(&NetSizes::default(), &mut stream(5, &[]));
    let mut opt = Adam::new(3e-3);
    for _ in 0..400 {
        discriminator_update(&mut d, &mut opt, &expert, &policy).unwrap();
    }
    let hits = d.logits(&policy).unwrap().iter().filter(|&&z| z > 0.0).count()
        + d.logits(&expert).unwrap().iter().filter(|&&z| z < 0.0).count();
    let acc = hits as f64 / (expert.len() + policy.len()) as f64;
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn identical_sets_cost_two_ln_two() {
    let segs = segments(WorldKind::Fork, 4, 26);
    let (expert, _) = disc_sets(&segs, 0.0);
    let mut d = Discriminator::new(&NetSizes::default(), &mut stream(5, &[]));
    let (loss, _) = disc_loss_and_grad(&d, &expert, &expert).unwrap();
    assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
    let mut opt = Adam::new(1e-3);
    for _ in 0..50 {
        discriminator_update(&mut d, &mut opt, &expert, &expert).unwrap();
    }
    let (loss, _) = disc_loss_and_grad(&d, &expert, &expert).unwrap();
    assert!(loss >= 2.0 * 2f64.ln() - 1e-9);
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let segs = segments(WorldKind::Fork, 3, 27);
    let (expert, policy) = disc_sets(&segs, 1.0);
    let mut d = Discriminator::new(&NetSizes::default(), &mut stream(6, &[]));
    jitter(&mut d, 0.1, 3);
    let (_, g) = disc_loss_and_grad(&d, &expert, &policy).unwrap();
    let err = worst_relative_error(&d, &g, 8, 1e-6, 4, |p| disc_loss_and_grad(p, &expert, &policy).unwrap().0);
    assert!(err < 1e-5, "{err}");
}

fn goal_samples(segs: &[RunSegment]) -> Vec<GoalSample> {
    let mut out = Vec::new();
    for p in prepare(segs, &TrainConfig::default()).unwrap() {
        let states = p.segment.snapshot(0);
        for a in &p.plan.agents {
            out.push(GoalSample {
                obs: encode_goal_observation(&scene_at(p.segment, &states, 0), a.agent).unwrap(),
                routes: a.routes.len(),
                label: a.truth,
            });
        }
    }
    out
}

#[test]
fn untrained_goal_generator_is_uniform_over_routes() {
    for (world, seed) in [(WorldKind::FourWay, 31), (WorldKind::Fork, 32), (WorldKind::Straight, 33)] {
        let samples = goal_samples(&segments(world, 4, seed));
        let h = GoalGenerator::new(&NetSizes::default(), &mut stream(1, &[]));
        let (loss, _) = goal_loss_and_grad(&h, &samples).unwrap();
        let expected = samples.iter().map(|s| (s.routes as f64).ln()).sum::<f64>() / samples.len() as f64;
        assert!((loss - expected).abs() < 1e-12, "{world:?}");
        if world == WorldKind::Straight {
            assert_eq!(loss, 0.0);
        }
    }
}

#[test]
fn goal_gradients_match_finite_differences() {
    let samples = goal_samples(&segments(WorldKind::FourWay, 4, 34));
    let mut h = GoalGenerator::new(&NetSizes::default(), &mut stream(1, &[]));
    jitter(&mut h, 0.1, 5);
    let (_, g) = goal_loss_and_grad(&h, &samples).unwrap();
    let err = worst_relative_error(&h, &g, 8, 1e-6, 5, |p| goal_loss_and_grad(p, &samples).unwrap().0);
    assert!(err < 1e-5, "{err}");
}

fn tiny(algorithm: Algorithm, tree_search: bool, hierarchy: bool) -> TrainConfig {
    TrainConfig {
        algorithm,
        tree_search,
        hierarchy,
        steps: 3,
        batch: 2,
        checkpoint_every: 2,
        samples_per_segment: 2,
        mgail_horizon: 4,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn every_variant_trains_and_checkpoints() {
    let segs = segments(WorldKind::Fork, 4, 41);
    for alg in [Algorithm::Bc, Algorithm::Mgail] {
        for (ts, h) in [(false, false), (true, false), (true, true)] {
            let cfg = tiny(alg, ts, h);
            let out = train(&cfg, &segs, |_| {}).unwrap();
            let steps: Vec<usize> = out.checkpoints.iter().map(|c| c.step).collect();
            assert_eq!(steps, vec![2, 3]);
            assert_eq!(out.log.len(), 3);
            let l = &out.log[2];
            assert_eq!(l.goal.is_some(), h);
            assert_eq!(l.disc.is_some(), ts || alg == Algorithm::Mgail);
            assert!(l.policy.is_finite());
        }
    }
}

#[test]
fn training_is_independent_of_worker_count() {
    let segs = segments(WorldKind::Fork, 4, 42);
    let cfg = tiny(Algorithm::Bc, true, true);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&cfg, &segs, |_| {}).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.checkpoints, b.checkpoints);
    let json = |c: &Checkpoint| serde_json::to_string(c).unwrap();
    assert_eq!(json(&a.checkpoints[1]), json(&b.checkpoints[1]));
}

#[test]
fn checkpoints_round_trip_and_check_their_schema() {
    let segs = segments(WorldKind::Fork, 3, 43);
    let out = train(&tiny(Algorithm::Mgail, false, false), &segs, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = &out.checkpoints[0];
    let path = dir.path().join(ckpt.file_name());
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(&back, ckpt);
    assert_eq!(back.models().unwrap(), {
        let mut m = Models::new(ActionSpace::Continuous, &NetSizes::default(), &mut stream(0, &[]));
        symphony::neural::import(&mut m, &ckpt.params).unwrap();
        m
    });

    let mut raw: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    raw["schema"] = serde_json::json!(99);
    std::fs::write(&path, raw.to_string()).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::UnsupportedSchema(_))));
    let missing = dir.path().join("nope.json");
    match Checkpoint::load(&missing) {
        Err(e) => assert!(e.to_string().contains("nope.json")),
        Ok(_) => panic!("loaded a missing file"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let segs = segments(WorldKind::Fork, 2, 44);
    let mut cfg = tiny(Algorithm::Bc, true, false);
    cfg.branches = 3;
    assert!(train(&cfg, &segs, |_| {}).is_err());
    let mut cfg = tiny(Algorithm::Bc, false, false);
    cfg.learning_rate = 0.0;
    assert!(matches!(train(&cfg, &segs, |_| {}), Err(Error::Config(_))));
}

//! Finite-difference helpers and the adversarial-gradient fixture.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use symphony::agents::{ActionSpace, Models, NetSizes, SegmentPlan};
use symphony::neural::Parameters;
use symphony::rng::stream;
use symphony::scenario::{generate_dataset, DatasetSpec, RunSegment, WorldKind};
use symphony::training::{mgail_loss, mgail_loss_and_grad, MgailItem};

pub fn segments(world: WorldKind, n: usize, seed: u64) -> Vec<RunSegment> {
    let spec = DatasetSpec {
        world,
        num_segments: n,
        agents: 3,
        test_fraction: 0.0,
        seed,
        ..DatasetSpec::default()
    };
    generate_dataset(&spec).unwrap().train
}

pub fn jitter<P: Parameters>(p: &mut P, scale: f64, seed: u64) {
    let mut rng = stream(seed, &[99]);
    for (_, mut b) in p.blocks_mut() {
        b.mapv_inplace(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + scale * z
        });
    }
}

pub fn get(p: &impl Parameters, flat: usize) -> f64 {
    p.blocks().into_iter().flat_map(|(_, b)| b.iter().copied().collect::<Vec<_>>()).nth(flat).unwrap()
}

pub fn nudged<P: Parameters + Clone>(p: &P, flat: usize, delta: f64) -> P {
    let mut q = p.clone();
    let mut left = flat;
    for (_, mut b) in q.blocks_mut() {
        if left < b.len() {
            *b.iter_mut().nth(left).unwrap() += delta;
            return q;
        }
        left -= b.len();
    }
    panic!("parameter index out of range");
}

/// Relative error of `analytic` against central differences of `f` at
/// `count` random parameters with non-negligible gradient; infinite when
/// too few parameters carry gradient.
pub fn worst_relative_error<P: Parameters + Clone>(
    p: &P,
    grads: &P,
    count: usize,
    eps: f64,
    seed: u64,
    f: impl Fn(&P) -> f64,
) -> f64 {
    let n = p.num_parameters();
    let mut rng = stream(seed, &[7]);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..20 * n {
        if checked == count {
            break;
        }
        let k = rng.random_range(0..n);
        let a = get(grads, k);
        if a.abs() < 1e-7 {
            continue;
        }
        let fd = (f(&nudged(p, k, eps)) - f(&nudged(p, k, -eps))) / (2.0 * eps);
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()));
        checked += 1;
    }
    if checked < count {
        return f64::INFINITY;
    }
    worst
}

pub fn continuous_models(seed: u64) -> Models {
    let mut m = Models::new(ActionSpace::Continuous, &NetSizes::default(), &mut stream(seed, &[]));
    jitter(&mut m.policy, 0.05, seed);
    jitter(&mut m.disc, 0.1, seed + 1);
    m
}

pub fn plans(segs: &[RunSegment]) -> Vec<SegmentPlan> {
    segs.iter().map(|s| SegmentPlan::new(s, 2, 2.0).unwrap()).collect()
}

pub fn items<'a>(segs: &'a [RunSegment], plans: &'a [SegmentPlan]) -> Vec<MgailItem<'a>> {
    segs.iter()
        .zip(plans)
        .enumerate()
        .map(|(k, (s, p))| MgailItem {
            segment: s,
            interactive: &p.interactive,
            goals: p.training_goals(true),
            key: k as u64,
        })
        .collect()
}

/// Worst relative error of the adversarial policy gradient over a
/// `horizon`-step rollout on two fork segments.
pub fn mgail_gradient_error(horizon: usize) -> f64 {
    let segs = segments(WorldKind::Fork, 2, 11);
    let plans = plans(&segs);
    let items = items(&segs, &plans);
    let m = continuous_models(3);
    let out = mgail_loss_and_grad(&items, &m.policy, &m.disc, horizon, 5).unwrap();
    let direct = mgail_loss(&items, &m.policy, &m.disc, horizon, 5).unwrap();
    assert!((out.loss - direct).abs() < 1e-12);
    worst_relative_error(&m.policy, &out.grads, 5, 1e-6, horizon as u64, |p| {
        mgail_loss(&items, p, &m.disc, horizon, 5).unwrap()
    })
}

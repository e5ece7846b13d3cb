mod common;

use common::metric_oracles::*;
use proptest::prelude::*;
use symphony::geom::Vec2;
use symphony::metrics::{
    ade, collision_rate, curvature_bin, curvature_histogram, curvature_jsd, jensen_shannon, min_sade,
    offroad_time, region_visits, report, SegmentRollouts, CURVATURE_BINS,
};
use symphony::scenario::{generate_dataset, AgentState, DatasetSpec, WorldKind};

#[test]
fn metrics_match_naive_oracles_on_random_scenes() {
    let scenes = scenes(50, 1000);
    let sets = as_sets(&scenes);

    let c = collision_rate(&sets);
    assert!((c - oracle_collision_rate(&scenes)).abs() < 1e-12);
    assert!(c > 0.0 && c < 100.0, "scenes should mix colliding and clean rollouts: {c}");

    let o = offroad_time(&sets);
    assert!((o - oracle_offroad(&scenes)).abs() < 1e-12);
    assert!(o > 0.0 && o < 100.0, "{o}");

    let ades = oracle_scene_ades(&scenes);
    let mean_ade = ades.iter().map(|a| a.iter().sum::<f64>() / a.len() as f64).sum::<f64>() / ades.len() as f64;
    let mean_min =
        ades.iter().map(|a| a.iter().copied().fold(f64::INFINITY, f64::min)).sum::<f64>() / ades.len() as f64;
    assert!((ade(&sets) - mean_ade).abs() < 1e-12);
    assert!((min_sade(&sets) - mean_min).abs() < 1e-12);
    assert!(min_sade(&sets) <= ade(&sets));

    let (mut sim, mut reference) = (Vec::new(), Vec::new());
    for s in &scenes {
        for r in &s.rollouts {
            let v = oracle_visits(&s.segment.roadgraph, r, &s.interactive);
            assert_eq!(v, region_visits(&s.segment.roadgraph, r, &s.interactive).unwrap());
            sim.extend(v);
        }
        let own: Vec<Vec<AgentState>> = (0..s.segment.num_steps()).map(|t| s.segment.snapshot(t)).collect();
        reference.extend(oracle_visits(&s.segment.roadgraph, &own, &s.interactive));
    }
    assert!(!sim.is_empty() && !reference.is_empty());
    let j = curvature_jsd(&sets).unwrap();
    assert_eq!(j.policy_visits, sim.len());
    assert_eq!(j.reference_visits, reference.len());
    assert!((j.value - oracle_jsd(&oracle_histogram(&sim), &oracle_histogram(&reference))).abs() < 1e-12);
}

#[test]
fn single_rollout_min_sade_is_ade() {
    let scenes: Vec<MiniScene> = (0..50).map(|i| mini_scene(2000 + i, 1)).collect();
    let sets = as_sets(&scenes);
    assert_eq!(min_sade(&sets).to_bits(), ade(&sets).to_bits());
}

#[test]
fn trivial_cases() {
    let ds = generate_dataset(&DatasetSpec {
        num_segments: 4,
        test_fraction: 0.0,
        ..DatasetSpec::default()
    })
    .unwrap();
    let interactive = [0usize, 1];
    let sets: Vec<SegmentRollouts> = ds.train.iter().map(|s| SegmentRollouts::reference(s, &interactive)).collect();
    assert_eq!(collision_rate(&sets), 0.0);
    assert_eq!(offroad_time(&sets), 0.0);
    assert_eq!(ade(&sets), 0.0);
    assert_eq!(min_sade(&sets), 0.0);
    assert_eq!(curvature_jsd(&sets).unwrap().value, 0.0);

    // One agent shifted by 2 m everywhere.
    let shifted: Vec<Vec<AgentState>> = (0..ds.train[0].num_steps())
        .map(|t| {
            let mut s = ds.train[0].snapshot(t);
            s[0].position += Vec2::new(0.0, 2.0);
            s
        })
        .collect();
    let one = [0usize];
    let set = SegmentRollouts {
        segment: &ds.train[0],
        interactive: &one,
        rollouts: vec![shifted.clone()],
    };
    assert!((ade(std::slice::from_ref(&set)) - 2.0).abs() < 1e-12);

    // A perfect rollout among several.
    let mut set = SegmentRollouts::reference(&ds.train[0], &one);
    set.rollouts.insert(0, shifted);
    assert_eq!(min_sade(std::slice::from_ref(&set)), 0.0);
    assert!((ade(std::slice::from_ref(&set)) - 1.0).abs() < 1e-12);

    // One of four segments collides at a single step.
    let mut sets: Vec<SegmentRollouts> = ds.train.iter().map(|s| SegmentRollouts::reference(s, &one)).collect();
    let t = 7;
    let other = sets[2].rollouts[0][t][1];
    sets[2].rollouts[0][t][0] = AgentState { valid: true, ..other };
    assert_eq!(collision_rate(&sets), 25.0);

    let r = report(&sets, vec![3]).unwrap();
    assert_eq!(r.collision_rate, 25.0);
    assert_eq!(r.segments[2].colliding_rollouts, 1);
    assert_eq!(r.seeds, vec![3]);
}

#[test]
fn offroad_five_of_fifty() {
    let ds = generate_dataset(&DatasetSpec {
        world: WorldKind::Straight,
        num_segments: 1,
        test_fraction: 0.0,
        ..DatasetSpec::default()
    })
    .unwrap();
    let seg = &ds.train[0];
    assert_eq!(seg.num_steps(), 50);
    let one = [0usize];
    let mut set = SegmentRollouts::reference(seg, &one);
    for t in 10..15 {
        set.rollouts[0][t][0].position += Vec2::new(0.0, 30.0);
    }
    assert!((offroad_time(std::slice::from_ref(&set)) - 10.0).abs() < 1e-12);
}

#[test]
fn bin_convention() {
    assert_eq!(curvature_bin(-1.0), 0);
    assert_eq!(curvature_bin(0.0), 100);
    assert_eq!(curvature_bin(1.0), 200);
    assert_eq!(curvature_histogram(&[]).len(), CURVATURE_BINS);
}

#[test]
fn jsd_extremes() {
    let a = curvature_histogram(&[0.2]);
    let b = curvature_histogram(&[-0.3]);
    assert_eq!(jensen_shannon(&a, &a), 0.0);
    assert!((jensen_shannon(&a, &b) - 1.0).abs() < 1e-15);
    let p = curvature_histogram(&[0.01, 0.02, 0.02]);
    let q = curvature_histogram(&[0.02, 0.03]);
    assert!((jensen_shannon(&p, &q) - oracle_jsd(&p, &q)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn bins_match_nearest_centre(v in -1.2f64..1.2) {
        let c = v.clamp(-1.0, 1.0);
        // away from bin edges the two conventions must agree
        let frac = ((c + 1.005) / 0.01).fract();
        prop_assume!(frac > 1e-6 && frac < 1.0 - 1e-6);
        prop_assert_eq!(curvature_bin(v), oracle_bin(v));
    }

    #[test]
    fn jsd_is_bounded_and_symmetric(
        xs in prop::collection::vec(-1.0f64..1.0, 0..30),
        ys in prop::collection::vec(-1.0f64..1.0, 0..30),
    ) {
        let p = curvature_histogram(&xs);
        let q = curvature_histogram(&ys);
        let j = jensen_shannon(&p, &q);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jensen_shannon(&q, &p));
        prop_assert!((j - oracle_jsd(&p, &q)).abs() < 1e-12);
        prop_assert_eq!(jensen_shannon(&p, &p), 0.0);
        if j == 0.0 {
            prop_assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn min_sade_never_exceeds_ade(seed in 0u64..10_000, m in 1usize..6) {
        let s = [mini_scene(seed, m)];
        let sets = as_sets(&s);
        prop_assert!(min_sade(&sets) <= ade(&sets));
    }
}

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, ExpertParams, ScriptedExpert, WorldKind, WorldParams};
use crate::config::config_hash;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, purpose, stream};
use crate::scenario::generate_world;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub world: WorldKind,
    pub world_params: WorldParams,
    pub expert: ExpertParams,
    pub num_segments: usize,
    pub agents: usize,
    pub duration_s: f64,
    /// Share of segments held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            world: WorldKind::Fork,
            world_params: WorldParams::default(),
            expert: ExpertParams::default(),
            num_segments: 200,
            agents: 4,
            duration_s: 10.0,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn steps(&self) -> usize {
        (self.duration_s / self.expert.step_dt).round() as usize
    }
}

/// Each segment draws its world and demonstration from seeds derived from
/// `(spec.seed, index)`, so the result does not depend on thread count.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.test_fraction) {
        return Err(Error::Config("test_fraction must lie in [0, 1]".into()));
    }
    let steps = spec.steps();
    if steps < 2 {
        return Err(Error::Config("duration must cover at least two steps".into()));
    }
    let expert = ScriptedExpert::new(spec.expert.clone());
    let segments = (0..spec.num_segments)
        .into_par_iter()
        .map(|i| {
            let world_seed = derive_seed(spec.seed, &[purpose::WORLD, i as u64]);
            let rg = generate_world(spec.world, &spec.world_params, world_seed)?;
            let expert_seed = derive_seed(spec.seed, &[purpose::EXPERT, i as u64]);
            let mut seg = expert.rollout(&rg, spec.agents, steps, expert_seed)?;
            seg.id = i as u64;
            Ok(seg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(&mut stream(spec.seed, &[purpose::SPLIT]));
    let n_test = (spec.test_fraction * segments.len() as f64).round() as usize;
    let mut is_test = vec![false; segments.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut ds = Dataset {
        seed: spec.seed,
        config_hash: config_hash(spec),
        ..Dataset::default()
    };
    for (seg, test) in segments.into_iter().zip(is_test) {
        if test {
            ds.test.push(seg);
        } else {
            ds.train.push(seg);
        }
    }
    Ok(ds)
}

//! Flat run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use symphony::agents::NetSizes;
use symphony::metrics::EvalConfig;
use symphony::scenario::{DatasetSpec, ExpertParams, WorldKind, WorldParams, DEFAULT_MOVING_THRESHOLD};
use symphony::training::{Algorithm, TrainConfig};
use symphony::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub world: WorldKind,
    pub segments: usize,
    pub agents: usize,
    pub duration_s: f64,
    pub test_fraction: f64,
    /// Route probabilities of the scripted expert; uniform when absent.
    pub route_weights: Option<Vec<f64>>,

    pub algorithm: Algorithm,
    pub tree_search: bool,
    pub hierarchy: bool,
    pub steps: usize,
    pub batch: usize,
    pub branches: usize,
    pub prune_every: usize,
    pub checkpoint_every: usize,
    pub learning_rate: f64,
    pub samples_per_segment: usize,
    pub disc_samples_per_segment: usize,
    pub distill_weight: f64,
    pub interactive: usize,
    pub moving_threshold: f64,
    pub mgail_horizon: usize,
    pub set_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    /// Training segments held out for checkpoint selection.
    pub validation_segments: usize,

    pub rollouts: usize,
    /// Pruned search at evaluation; follows `tree_search` when absent.
    pub beam: Option<bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            world: data.world,
            segments: data.num_segments,
            agents: data.agents,
            duration_s: data.duration_s,
            test_fraction: data.test_fraction,
            route_weights: None,
            algorithm: train.algorithm,
            tree_search: train.tree_search,
            hierarchy: train.hierarchy,
            steps: train.steps,
            batch: train.batch,
            branches: train.branches,
            prune_every: train.prune_every,
            checkpoint_every: train.checkpoint_every,
            learning_rate: train.learning_rate,
            samples_per_segment: train.samples_per_segment,
            disc_samples_per_segment: train.disc_samples_per_segment,
            distill_weight: train.distill_weight,
            interactive: train.interactive,
            moving_threshold: DEFAULT_MOVING_THRESHOLD,
            mgail_horizon: train.mgail_horizon,
            set_hidden: train.nets.set_hidden,
            head_hidden: train.nets.head_hidden,
            validation_segments: 20,
            rollouts: 16,
            beam: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            world: self.world,
            world_params: WorldParams::default(),
            expert: ExpertParams {
                route_weights: self.route_weights.clone(),
                ..ExpertParams::default()
            },
            num_segments: self.segments,
            agents: self.agents,
            duration_s: self.duration_s,
            test_fraction: self.test_fraction,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            algorithm: self.algorithm,
            tree_search: self.tree_search,
            hierarchy: self.hierarchy,
            steps: self.steps,
            batch: self.batch,
            branches: self.branches,
            prune_every: self.prune_every,
            checkpoint_every: self.checkpoint_every,
            learning_rate: self.learning_rate,
            samples_per_segment: self.samples_per_segment,
            disc_samples_per_segment: self.disc_samples_per_segment,
            distill_weight: self.distill_weight,
            interactive: self.interactive,
            moving_threshold: self.moving_threshold,
            mgail_horizon: self.mgail_horizon,
            nets: NetSizes {
                set_hidden: self.set_hidden.clone(),
                head_hidden: self.head_hidden.clone(),
            },
            seed: self.seed,
        }
    }

    /// Evaluation settings for a checkpoint trained with `trained`.
    pub fn eval_config(&self, trained: &TrainConfig) -> EvalConfig {
        EvalConfig {
            rollouts: self.rollouts,
            beam: self.beam.unwrap_or(trained.tree_search),
            prune_every: trained.prune_every,
            ..EvalConfig::new(trained.tree_search, trained.hierarchy, self.seed)
        }
    }
}

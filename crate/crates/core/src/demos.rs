//! Demonstration runs: play a plan with a scripted shepherd and turn each episode into samples.

use rayon::prelude::*;

use crate::curriculum::{spawn_scenario, SimSpec};
use crate::dataset::{record_episode, Sample, ZeroTicks};
use crate::episode::{run_recorded, EpisodeMetrics};
use crate::error::Result;
use crate::policy::Controller;
use crate::sim::SimParams;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoEpisode {
    pub spec: SimSpec,
    pub metrics: EpisodeMetrics,
    pub samples: Vec<Sample>,
}

impl DemoEpisode {
    /// Episodes that ran out of time are not used for training.
    pub fn timed_out(&self) -> bool {
        !self.metrics.success
    }
}

/// Run every simulation of `sims` in order (episodes themselves run in parallel).
pub fn generate(
    sims: &[SimSpec],
    demonstrator: &dyn Controller,
    params: &SimParams,
    zero_ticks: ZeroTicks,
) -> Result<Vec<DemoEpisode>> {
    sims.par_iter()
        .map(|spec| {
            let scenario = spawn_scenario(spec.lesson, spec.n, params, spec.seed)?;
            let (metrics, trajectory) = run_recorded(demonstrator, &scenario, params)?;
            let samples = record_episode(&trajectory, spec.n, spec.lesson, spec.sim_id, params, zero_ticks)?;
            Ok(DemoEpisode {
                spec: *spec,
                metrics,
                samples,
            })
        })
        .collect()
}

/// Samples of every episode that finished in time, in episode order.
pub fn training_pool(episodes: &[DemoEpisode]) -> Vec<Sample> {
    episodes
        .iter()
        .filter(|e| !e.timed_out())
        .flat_map(|e| e.samples.iter().copied())
        .collect()
}

//! Closed-loop episode execution.

use serde::{Deserialize, Serialize};

use crate::curriculum::ScenarioDraw;
use crate::dataset::RawObservation;
use crate::error::Result;
use crate::policy::{Controller, PolicyObservation, ShepherdCommand};
use crate::sim::{SimParams, WorldState};

/// Per-episode measurements, accumulated over every observed state including the first and last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Running minimum of the GCM-to-goal distance.
    pub min_gcm_to_goal: f64,
    /// Mean furthest-sheep-to-GCM distance.
    pub mean_furthest_to_gcm: f64,
    /// The scenario's termination predicate was met before the time limit.
    pub success: bool,
    /// Ticks simulated.
    pub duration: u64,
}

/// Running per-episode measurements; feed it every observed state, first and last included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsTracker {
    min_gcm_to_goal: f64,
    furthest_sum: f64,
    observed: u64,
}

impl Default for MetricsTracker {
    fn default() -> Self {
        Self {
            min_gcm_to_goal: f64::INFINITY,
            furthest_sum: 0.0,
            observed: 0,
        }
    }
}

impl MetricsTracker {
    pub fn observe(&mut self, obs: &PolicyObservation) {
        self.min_gcm_to_goal = self.min_gcm_to_goal.min(obs.gcm.distance(obs.goal));
        self.furthest_sum += obs.furthest_r;
        self.observed += 1;
    }

    pub fn finish(&self, success: bool, duration: u64) -> EpisodeMetrics {
        EpisodeMetrics {
            min_gcm_to_goal: self.min_gcm_to_goal,
            mean_furthest_to_gcm: if self.observed == 0 {
                0.0
            } else {
                self.furthest_sum / self.observed as f64
            },
            success,
            duration,
        }
    }
}

/// Run `controller` on `scenario` until its termination predicate holds or `t_max` ticks pass.
/// `on_tick` sees each observation together with the command applied to it.
pub fn simulate<F>(
    controller: &dyn Controller,
    scenario: &ScenarioDraw,
    params: &SimParams,
    mut on_tick: F,
) -> Result<(EpisodeMetrics, WorldState)>
where
    F: FnMut(&RawObservation, &ShepherdCommand),
{
    params.validate()?;
    let mut world = scenario.world.clone();
    let mut prev: Option<RawObservation> = None;
    let mut tracker = MetricsTracker::default();
    let success = loop {
        let obs = PolicyObservation::from_world(&world, prev.as_ref());
        tracker.observe(&obs);
        if scenario.termination.reached(&world, params) {
            break true;
        }
        if world.t >= params.t_max {
            break false;
        }
        let cmd = controller.command(&obs, params)?;
        let raw = obs.raw();
        on_tick(&raw, &cmd);
        world.step(cmd.direction, params)?;
        prev = Some(raw);
    };
    Ok((tracker.finish(success, world.t), world))
}

pub fn run_episode(controller: &dyn Controller, scenario: &ScenarioDraw, params: &SimParams) -> Result<EpisodeMetrics> {
    simulate(controller, scenario, params, |_, _| {}).map(|(m, _)| m)
}

/// Like [`run_episode`], also returning the observation/command trajectory.
pub fn run_recorded(
    controller: &dyn Controller,
    scenario: &ScenarioDraw,
    params: &SimParams,
) -> Result<(EpisodeMetrics, Vec<(RawObservation, ShepherdCommand)>)> {
    let mut trajectory = Vec::new();
    let (metrics, _) = simulate(controller, scenario, params, |o, c| trajectory.push((*o, *c)))?;
    Ok((metrics, trajectory))
}

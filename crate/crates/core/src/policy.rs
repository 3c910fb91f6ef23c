//! Shepherd decision-making.
//!
//! The scripted shepherd switches between two target points: the drive point behind the
//! herd relative to the goal when every sheep is within the switching distance of the GCM, and
//! the collect point behind the furthest sheep otherwise. It halts whenever a sheep is closer
//! than the stop radius. Learned shepherds replace the target computation with small networks;
//! the curriculum variant keeps the scripted switch and owns one network per behaviour.

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureVector, RawObservation};
use crate::error::{Error, Result};
use crate::learner::{AgentKind, AgentSpec};
use crate::sim::{switching_distance, SimParams, WorldState};
use crate::vec2::{Vec2, EPSILON};

/// Everything a shepherd policy may look at in one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyObservation {
    pub shepherd_pos: Vec2,
    /// Last non-zero command direction (zero before the first move).
    pub shepherd_heading: Vec2,
    pub goal: Vec2,
    pub gcm: Vec2,
    pub furthest_pos: Vec2,
    pub furthest_r: f64,
    pub n: usize,
    /// Units per timestep; zero on the first tick of an episode.
    pub gcm_velocity: Vec2,
    pub furthest_velocity: Vec2,
    pub nearest_sheep_dist: f64,
    pub t: u64,
}

impl PolicyObservation {
    /// Observe `world`; `prev` is the raw observation of the previous tick, if any.
    pub fn from_world(world: &WorldState, prev: Option<&RawObservation>) -> Self {
        let gcm = world.gcm();
        let (idx, furthest_r) = world.furthest();
        let furthest_pos = world.sheep[idx].pos;
        let (gcm_velocity, furthest_velocity) = match prev {
            Some(p) if world.t > p.t => {
                let dt = (world.t - p.t) as f64;
                ((gcm - p.gcm) / dt, (furthest_pos - p.furthest) / dt)
            }
            _ => (Vec2::ZERO, Vec2::ZERO),
        };
        Self {
            shepherd_pos: world.shepherd_pos,
            shepherd_heading: world.shepherd_heading,
            goal: world.goal,
            gcm,
            furthest_pos,
            furthest_r,
            n: world.n(),
            gcm_velocity,
            furthest_velocity,
            nearest_sheep_dist: world.nearest_sheep_distance(),
            t: world.t,
        }
    }

    pub fn raw(&self) -> RawObservation {
        RawObservation {
            t: self.t,
            goal: self.goal,
            shepherd: self.shepherd_pos,
            gcm: self.gcm,
            furthest: self.furthest_pos,
        }
    }

    pub fn features(&self, params: &SimParams) -> FeatureVector {
        FeatureVector::assemble(
            self.shepherd_pos,
            self.goal,
            self.gcm,
            self.furthest_pos,
            self.gcm_velocity,
            self.furthest_velocity,
            self.n,
            params,
        )
    }

    /// The scripted switch: true when the herd counts as collected and the shepherd should drive.
    pub fn herd_is_collected(&self, params: &SimParams) -> bool {
        let f = switching_distance(self.n.max(1), params.interaction_radius).unwrap_or(f64::INFINITY);
        self.furthest_r < f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Behaviour {
    Drive,
    Collect,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShepherdCommand {
    pub direction: Vec2,
    pub behaviour: Behaviour,
}

impl ShepherdCommand {
    pub fn stopped() -> Self {
        Self {
            direction: Vec2::ZERO,
            behaviour: Behaviour::Stopped,
        }
    }
}

/// How a demonstrator behaves when the stop rule fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopMode {
    /// Halt in place.
    #[default]
    Stop,
    /// Keep moving, turning a quarter circle counter-clockwise from the previous heading each tick.
    Circle,
}

/// Point `r_a * sqrt(N)` behind the GCM on the far side from the goal.
pub fn drive_point(gcm: Vec2, goal: Vec2, n: usize, interaction_radius: f64) -> Result<Vec2> {
    let away_from_goal = (gcm - goal)
        .try_unit()
        .ok_or_else(|| Error::domain("drive point undefined: GCM coincides with the goal"))?;
    Ok(gcm + away_from_goal * (interaction_radius * (n as f64).sqrt()))
}

/// Point `r_a` beyond the furthest sheep on the line from the GCM through it.
pub fn collect_point(gcm: Vec2, furthest_pos: Vec2, furthest_r: f64, interaction_radius: f64) -> Result<Vec2> {
    if furthest_r <= EPSILON {
        return Err(Error::domain("collect point undefined: furthest sheep sits on the GCM"));
    }
    let outward = (furthest_pos - gcm)
        .try_unit()
        .ok_or_else(|| Error::domain("collect point undefined: furthest sheep sits on the GCM"))?;
    Ok(gcm + outward * (furthest_r + interaction_radius))
}

fn head_towards(from: Vec2, target: Vec2, behaviour: Behaviour) -> ShepherdCommand {
    ShepherdCommand {
        direction: (target - from).unit_or_zero(),
        behaviour,
    }
}

/// The scripted shepherd used both as demonstrator and as the baseline controller.
pub fn oracle_direction(obs: &PolicyObservation, params: &SimParams) -> ShepherdCommand {
    if obs.nearest_sheep_dist < params.stop_radius() {
        return ShepherdCommand::stopped();
    }
    let r_a = params.interaction_radius;
    if obs.herd_is_collected(params) {
        match drive_point(obs.gcm, obs.goal, obs.n, r_a) {
            Ok(target) => head_towards(obs.shepherd_pos, target, Behaviour::Drive),
            // GCM already on the goal: nothing to push towards.
            Err(_) => ShepherdCommand {
                direction: Vec2::ZERO,
                behaviour: Behaviour::Drive,
            },
        }
    } else {
        match collect_point(obs.gcm, obs.furthest_pos, obs.furthest_r, r_a) {
            Ok(target) => head_towards(obs.shepherd_pos, target, Behaviour::Collect),
            Err(_) => ShepherdCommand {
                direction: Vec2::ZERO,
                behaviour: Behaviour::Collect,
            },
        }
    }
}

/// Scripted shepherd with a configurable reaction to the stop rule.
pub fn demonstration_direction(obs: &PolicyObservation, params: &SimParams, mode: StopMode) -> ShepherdCommand {
    let cmd = oracle_direction(obs, params);
    match (cmd.behaviour, mode) {
        (Behaviour::Stopped, StopMode::Circle) => {
            // Without a previous heading, start the circle moving away from the herd.
            let base = obs
                .shepherd_heading
                .try_unit()
                .or_else(|| (obs.shepherd_pos - obs.gcm).try_unit())
                .unwrap_or(Vec2::new(1.0, 0.0));
            ShepherdCommand {
                direction: base.perp(),
                behaviour: Behaviour::Stopped,
            }
        }
        _ => cmd,
    }
}

/// Learned shepherd. A curriculum agent evaluates exactly one of its two networks, chosen by
/// the scripted switch; a monolithic agent always evaluates its single network. Raw outputs
/// are normalised, and a sub-epsilon output reuses the previous heading.
pub fn neural_direction(agent: &AgentSpec, obs: &PolicyObservation, params: &SimParams) -> Result<ShepherdCommand> {
    let features = obs.features(params);
    let collected = obs.herd_is_collected(params);
    let behaviour = if collected {
        Behaviour::Drive
    } else {
        Behaviour::Collect
    };
    let raw = match &agent.kind {
        AgentKind::Curriculum { drive, collect } => {
            if collected {
                drive.forward(features.as_slice())?
            } else {
                collect.forward(features.as_slice())?
            }
        }
        AgentKind::Monolithic { net } => net.forward(features.as_slice())?,
    };
    Ok(ShepherdCommand {
        direction: raw.try_unit().unwrap_or(obs.shepherd_heading),
        behaviour,
    })
}

/// Anything that can steer the shepherd for a whole episode.
pub trait Controller: Sync {
    fn id(&self) -> &str;
    fn command(&self, obs: &PolicyObservation, params: &SimParams) -> Result<ShepherdCommand>;
}

/// The scripted shepherd, halting when the stop rule fires.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle;

impl Controller for Oracle {
    fn id(&self) -> &str {
        "oracle"
    }

    fn command(&self, obs: &PolicyObservation, params: &SimParams) -> Result<ShepherdCommand> {
        Ok(oracle_direction(obs, params))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Demonstrator {
    pub mode: StopMode,
}

impl Controller for Demonstrator {
    fn id(&self) -> &str {
        match self.mode {
            StopMode::Stop => "demonstrator-stop",
            StopMode::Circle => "demonstrator-circle",
        }
    }

    fn command(&self, obs: &PolicyObservation, params: &SimParams) -> Result<ShepherdCommand> {
        Ok(demonstration_direction(obs, params, self.mode))
    }
}

impl Controller for AgentSpec {
    fn id(&self) -> &str {
        &self.id
    }

    fn command(&self, obs: &PolicyObservation, params: &SimParams) -> Result<ShepherdCommand> {
        neural_direction(self, obs, params)
    }
}

/// Holds any controller still while it is within the stop radius of a sheep, as the scripted
/// shepherd does. Learned agents never see stop ticks in their training data, so without this
/// they walk into the herd and split it.
#[derive(Debug, Clone)]
pub struct StopGuard<C> {
    pub inner: C,
}

impl<C: Controller> Controller for StopGuard<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn command(&self, obs: &PolicyObservation, params: &SimParams) -> Result<ShepherdCommand> {
        if obs.nearest_sheep_dist < params.stop_radius() {
            return Ok(ShepherdCommand::stopped());
        }
        self.inner.command(obs, params)
    }
}

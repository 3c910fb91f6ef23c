//! Flock dynamics: sheep forces, world stepping, herd geometry and termination predicates.
//!
//! Sheep within detection range of the shepherd combine inertia, cohesion toward the
//! local centre of mass of their nearest neighbours, separation from close neighbours,
//! repulsion from the shepherd and angular noise into a new unit heading, then move a fixed
//! distance along it. Sheep out of range graze: with a small probability they take one step
//! in a random direction.
//!
//! All sheep are updated synchronously from the pre-step state, so the result of a tick does
//! not depend on the order agents are visited. Each sheep consumes exactly two uniform draws
//! per tick, in index order, which keeps the random stream aligned between runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::vec2::{Vec2, EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Agent-to-agent interaction distance.
    pub interaction_radius: f64,
    /// Distance at which a sheep starts reacting to the shepherd.
    pub detection_radius: f64,
    /// Cohesion neighbourhood size; capped at `N - 1` per herd.
    pub n_neighbors: usize,
    pub w_inertia: f64,
    pub w_cohesion: f64,
    pub w_separation: f64,
    pub w_shepherd: f64,
    pub w_noise: f64,
    /// Distance a sheep covers in one tick.
    pub sheep_speed: f64,
    /// Distance the shepherd covers in one tick at full command.
    pub shepherd_speed: f64,
    pub p_graze: f64,
    /// The scripted shepherd stops when a sheep is closer than this multiple of the interaction radius.
    pub stop_radius_factor: f64,
    pub goal_radius: f64,
    pub t_max: u64,
    /// Side of the square spawn region `[0, L] x [0, L]`. Positions are never clamped to it.
    pub field_size: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            interaction_radius: 2.0,
            detection_radius: 65.0,
            n_neighbors: 200,
            w_inertia: 0.5,
            w_cohesion: 1.05,
            w_separation: 2.0,
            w_shepherd: 1.0,
            w_noise: 0.3,
            sheep_speed: 1.0,
            shepherd_speed: 1.5,
            p_graze: 0.05,
            stop_radius_factor: 3.0,
            goal_radius: 15.0,
            t_max: 8000,
            field_size: 150.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("interaction_radius", self.interaction_radius),
            ("detection_radius", self.detection_radius),
            ("sheep_speed", self.sheep_speed),
            ("shepherd_speed", self.shepherd_speed),
            ("stop_radius_factor", self.stop_radius_factor),
            ("goal_radius", self.goal_radius),
            ("field_size", self.field_size),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {value}")));
            }
        }
        let weights = [
            ("w_inertia", self.w_inertia),
            ("w_cohesion", self.w_cohesion),
            ("w_separation", self.w_separation),
            ("w_shepherd", self.w_shepherd),
            ("w_noise", self.w_noise),
        ];
        for (name, value) in weights {
            if !value.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_graze) {
            return Err(Error::param("p_graze", format!("must lie in [0, 1], got {}", self.p_graze)));
        }
        if self.t_max < 1 {
            return Err(Error::param("t_max", "must be >= 1"));
        }
        if self.n_neighbors < 1 {
            return Err(Error::param("n_neighbors", "must be >= 1"));
        }
        Ok(())
    }

    /// Distance below which the scripted shepherd halts.
    pub fn stop_radius(&self) -> f64 {
        self.stop_radius_factor * self.interaction_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SheepState {
    pub pos: Vec2,
    /// Unit heading from the last active move, or zero before the first one.
    pub heading: Vec2,
}

impl SheepState {
    pub fn at(pos: Vec2) -> Self {
        Self {
            pos,
            heading: Vec2::ZERO,
        }
    }
}

/// Complete simulation state, including the generator that drives sheep noise.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub sheep: Vec<SheepState>,
    pub shepherd_pos: Vec2,
    /// Last non-zero shepherd command, or zero before the first move.
    pub shepherd_heading: Vec2,
    pub goal: Vec2,
    pub t: u64,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(sheep: Vec<Vec2>, shepherd_pos: Vec2, goal: Vec2, seed: u64) -> Result<Self> {
        if sheep.is_empty() {
            return Err(Error::domain("a world needs at least one sheep"));
        }
        Ok(Self {
            sheep: sheep.into_iter().map(SheepState::at).collect(),
            shepherd_pos,
            shepherd_heading: Vec2::ZERO,
            goal,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn n(&self) -> usize {
        self.sheep.len()
    }

    pub fn gcm(&self) -> Vec2 {
        // Non-empty by construction.
        gcm(&self.sheep).expect("world has at least one sheep")
    }

    /// Index and distance of the sheep furthest from the GCM.
    pub fn furthest(&self) -> (usize, f64) {
        furthest_sheep(&self.sheep, self.gcm()).expect("world has at least one sheep")
    }

    /// Distance from the shepherd to the nearest sheep.
    pub fn nearest_sheep_distance(&self) -> f64 {
        self.sheep
            .iter()
            .map(|s| s.pos.distance(self.shepherd_pos))
            .fold(f64::INFINITY, f64::min)
    }

    /// Translate every position (sheep, shepherd and goal) by `offset`.
    pub fn translate(&mut self, offset: Vec2) {
        for s in &mut self.sheep {
            s.pos += offset;
        }
        self.shepherd_pos += offset;
        self.goal += offset;
    }

    /// Advance one tick. The shepherd moves `shepherd_speed * dir`; every sheep reacts to the
    /// shepherd's pre-step position and to the pre-step positions of the other sheep.
    pub fn step(&mut self, shepherd_dir: Vec2, params: &SimParams) -> Result<()> {
        if !shepherd_dir.is_finite() {
            return Err(Error::domain("shepherd direction is not finite"));
        }
        if shepherd_dir.norm() > 1.0 + EPSILON {
            return Err(Error::domain(format!(
                "shepherd direction has norm {} > 1",
                shepherd_dir.norm()
            )));
        }
        let mut scratch = Vec::with_capacity(self.sheep.len());
        let mut next = Vec::with_capacity(self.sheep.len());
        for i in 0..self.sheep.len() {
            let draws = SheepDraws::sample(&mut self.rng);
            next.push(advance_sheep(
                i,
                &self.sheep,
                self.shepherd_pos,
                params,
                draws,
                &mut scratch,
            ));
        }
        self.sheep = next;
        self.shepherd_pos += shepherd_dir * params.shepherd_speed;
        if shepherd_dir.norm() > EPSILON {
            self.shepherd_heading = shepherd_dir;
        }
        self.t += 1;
        Ok(())
    }
}

/// Pure form of [`WorldState::step`].
pub fn world_step(world: &WorldState, shepherd_dir: Vec2, params: &SimParams) -> Result<WorldState> {
    let mut next = world.clone();
    next.step(shepherd_dir, params)?;
    Ok(next)
}

/// The two uniform draws each sheep consumes per tick.
#[derive(Debug, Clone, Copy)]
pub struct SheepDraws {
    /// Compared against `p_graze` on the grazing branch.
    pub graze_roll: f64,
    /// Angle of the grazing step, or of the noise vector on the active branch.
    pub angle: f64,
}

impl SheepDraws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let graze_roll = rng.random::<f64>();
        let angle = rng.random::<f64>() * TAU;
        Self { graze_roll, angle }
    }
}

/// Successor of sheep `i` given the current world. Consumes two draws from `rng`.
pub fn sheep_step<R: Rng + ?Sized>(
    i: usize,
    world: &WorldState,
    params: &SimParams,
    rng: &mut R,
) -> SheepState {
    let draws = SheepDraws::sample(rng);
    advance_sheep(i, &world.sheep, world.shepherd_pos, params, draws, &mut Vec::new())
}

fn advance_sheep(
    i: usize,
    sheep: &[SheepState],
    shepherd_pos: Vec2,
    params: &SimParams,
    draws: SheepDraws,
    scratch: &mut Vec<(f64, usize)>,
) -> SheepState {
    let me = sheep[i];
    let away_from_shepherd = me.pos - shepherd_pos;

    if away_from_shepherd.norm() > params.detection_radius {
        let mut pos = me.pos;
        if draws.graze_roll < params.p_graze {
            pos += Vec2::from_angle(draws.angle) * params.sheep_speed;
        }
        return SheepState {
            pos,
            heading: me.heading,
        };
    }

    let cohesion = local_centre_of_mass(i, sheep, params.n_neighbors, scratch)
        .map(|lcm| (lcm - me.pos).unit_or_zero())
        .unwrap_or(Vec2::ZERO);

    let mut push = Vec2::ZERO;
    for (j, other) in sheep.iter().enumerate() {
        if j != i && me.pos.distance(other.pos) < params.interaction_radius {
            push += (me.pos - other.pos).unit_or_zero();
        }
    }
    let separation = push.unit_or_zero();

    let combined = me.heading * params.w_inertia
        + cohesion * params.w_cohesion
        + separation * params.w_separation
        + away_from_shepherd.unit_or_zero() * params.w_shepherd
        + Vec2::from_angle(draws.angle) * params.w_noise;

    let heading = combined.try_unit().unwrap_or(me.heading);
    SheepState {
        pos: me.pos + heading * params.sheep_speed,
        heading,
    }
}

/// Mean position of the `k` nearest other sheep (`k` capped at `N - 1`); ties go to the lower index.
fn local_centre_of_mass(
    i: usize,
    sheep: &[SheepState],
    k: usize,
    scratch: &mut Vec<(f64, usize)>,
) -> Option<Vec2> {
    let others = sheep.len() - 1;
    let k = k.min(others);
    if k == 0 {
        return None;
    }
    let me = sheep[i].pos;
    if k == others {
        return Vec2::mean(
            sheep
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s.pos),
        );
    }
    scratch.clear();
    scratch.extend(
        sheep
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, s)| ((s.pos - me).norm_squared(), j)),
    );
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    scratch.select_nth_unstable_by(k - 1, by_distance);
    let nearest = &mut scratch[..k];
    nearest.sort_unstable_by_key(|&(_, j)| j);
    Vec2::mean(nearest.iter().map(|&(_, j)| sheep[j].pos))
}

/// Global centre of mass of the herd.
pub fn gcm(sheep: &[SheepState]) -> Result<Vec2> {
    Vec2::mean(sheep.iter().map(|s| s.pos)).ok_or_else(|| Error::domain("GCM of an empty herd"))
}

/// Index of the sheep furthest from `centre` and its distance. Ties go to the lowest index.
pub fn furthest_sheep(sheep: &[SheepState], centre: Vec2) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in sheep.iter().enumerate() {
        let d = s.pos.distance(centre);
        match best {
            Some((_, bd)) if d <= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.ok_or_else(|| Error::domain("furthest sheep of an empty herd"))
}

/// Herd radius above which the scripted shepherd collects instead of driving: `r_a * N^(2/3)`.
pub fn switching_distance(n: usize, interaction_radius: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain("switching distance needs N >= 1"));
    }
    // cbrt keeps perfect cubes exact.
    Ok(interaction_radius * (n as f64).cbrt().powi(2))
}

pub fn is_collected(world: &WorldState, params: &SimParams) -> bool {
    let (_, radius) = world.furthest();
    // N >= 1 is a WorldState invariant.
    radius < switching_distance(world.n(), params.interaction_radius).unwrap_or(f64::INFINITY)
}

pub fn is_success(world: &WorldState, params: &SimParams) -> bool {
    is_collected(world, params) && world.gcm().distance(world.goal) < params.goal_radius
}

//! Lesson definitions, spawn geometry and the curriculum sample allocation.
//!
//! Lessons come in three families: drive (1.x), collect (2.x) and open environment (3.x).
//! Each lesson fixes how the herd, goal and shepherd are placed and which predicate ends an
//! episode. Spawns are pure functions of `(lesson, N, params, seed)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::{collect_point, drive_point};
use crate::sim::{is_collected, is_success, switching_distance, SimParams, WorldState};
use crate::vec2::Vec2;

const SPAWN_STREAM: u64 = 0;
const DYNAMICS_STREAM: u64 = 1;
const MAX_ATTEMPTS: usize = 1000;

/// Radius of a "tightly collected" spawn cluster, as a fraction of the switching distance.
pub const COLLECTED_RADIUS_FACTOR: f64 = 0.75;
/// Stray distance range from the GCM, in switching distances.
pub const STRAY_RANGE: (f64, f64) = (1.25, 2.0);
/// Spread-herd annulus, in switching distances.
pub const SPREAD_ANNULUS: (f64, f64) = (0.5, 2.0);
/// A spread draw is redrawn unless its furthest sheep is beyond this many switching distances.
pub const SPREAD_MIN_FURTHEST: f64 = 1.05;
/// Inclusive population ranges of the three cluster-size tiers.
pub const POPULATION_TIERS: [(usize, usize); 3] = [(40, 60), (90, 110), (180, 200)];
/// Simulations per tier in one full lesson set (three tiers make a set of 30).
pub const SIMS_PER_TIER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LessonId {
    DriveStraight,
    DriveRandom,
    CollectStraight,
    CollectSingleRandom,
    CollectSpread,
    OpenCollected,
    OpenSingleSeparated,
    OpenSpread,
}

impl LessonId {
    pub const ALL: [LessonId; 8] = [
        LessonId::DriveStraight,
        LessonId::DriveRandom,
        LessonId::CollectStraight,
        LessonId::CollectSingleRandom,
        LessonId::CollectSpread,
        LessonId::OpenCollected,
        LessonId::OpenSingleSeparated,
        LessonId::OpenSpread,
    ];

    pub const OPEN: [LessonId; 3] = [LessonId::OpenCollected, LessonId::OpenSingleSeparated, LessonId::OpenSpread];

    pub fn code(self) -> &'static str {
        match self {
            LessonId::DriveStraight => "1.1",
            LessonId::DriveRandom => "1.2",
            LessonId::CollectStraight => "2.1",
            LessonId::CollectSingleRandom => "2.2",
            LessonId::CollectSpread => "2.3",
            LessonId::OpenCollected => "3.1",
            LessonId::OpenSingleSeparated => "3.2",
            LessonId::OpenSpread => "3.3",
        }
    }

    pub fn is_drive(self) -> bool {
        matches!(self, LessonId::DriveStraight | LessonId::DriveRandom)
    }

    pub fn is_collect(self) -> bool {
        matches!(
            self,
            LessonId::CollectStraight | LessonId::CollectSingleRandom | LessonId::CollectSpread
        )
    }

    pub fn is_open(self) -> bool {
        !self.is_drive() && !self.is_collect()
    }

    pub fn termination(self) -> Termination {
        if self.is_drive() {
            Termination::GoalReached
        } else if self.is_collect() {
            Termination::Collected
        } else {
            Termination::Success
        }
    }
}

impl fmt::Display for LessonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LessonId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LessonId::ALL
            .into_iter()
            .find(|l| l.code() == s.trim())
            .ok_or_else(|| Error::domain(format!("unknown lesson `{s}`")))
    }
}

impl TryFrom<String> for LessonId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LessonId> for String {
    fn from(l: LessonId) -> String {
        l.code().to_string()
    }
}

/// Predicate that ends an episode successfully.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// GCM within the goal radius.
    GoalReached,
    /// Every sheep within the switching distance of the GCM.
    Collected,
    /// Collected and at the goal.
    Success,
}

impl Termination {
    pub fn reached(self, world: &WorldState, params: &SimParams) -> bool {
        match self {
            Termination::GoalReached => world.gcm().distance(world.goal) < params.goal_radius,
            Termination::Collected => is_collected(world, params),
            Termination::Success => is_success(world, params),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDraw {
    pub lesson: LessonId,
    pub n: usize,
    pub seed: u64,
    pub world: WorldState,
    pub termination: Termination,
    /// Index of the planted stray in single-stray lessons.
    pub stray: Option<usize>,
}

/// Optional departures from a lesson's default geometry, used by difficulty sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpawnOverrides {
    /// Outer spawn radius of the herd: the disc of a collected cluster, or the annulus of a
    /// spread one (inner radius scaled in proportion). Disables the lesson's layout check.
    /// Stray lessons ignore it.
    pub cluster_radius: Option<f64>,
    /// Place the shepherd at `GCM + offset` instead of the lesson's rule.
    pub shepherd_offset: Option<Vec2>,
}

/// Three cluster sizes, one per tier, each uniform within its inclusive range.
pub fn population_schedule<R: Rng + ?Sized>(rng: &mut R) -> [usize; 3] {
    POPULATION_TIERS.map(|(lo, hi)| rng.random_range(lo..=hi))
}

fn field_point<R: Rng + ?Sized>(rng: &mut R, side: f64) -> Vec2 {
    Vec2::new(rng.random::<f64>() * side, rng.random::<f64>() * side)
}

/// Uniform by area in the annulus `[inner, outer]` about `centre`.
fn annulus_point<R: Rng + ?Sized>(rng: &mut R, centre: Vec2, inner: f64, outer: f64) -> Vec2 {
    let u = rng.random::<f64>();
    let r = (inner * inner + u * (outer * outer - inner * inner)).sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    centre + Vec2::from_angle(theta) * r
}

enum HerdShape {
    Collected,
    Stray,
    Spread,
}

fn herd_shape(lesson: LessonId) -> HerdShape {
    use LessonId::*;
    match lesson {
        DriveStraight | DriveRandom | OpenCollected => HerdShape::Collected,
        CollectStraight | CollectSingleRandom | OpenSingleSeparated => HerdShape::Stray,
        CollectSpread | OpenSpread => HerdShape::Spread,
    }
}

pub fn spawn_scenario(lesson: LessonId, n: usize, params: &SimParams, seed: u64) -> Result<ScenarioDraw> {
    spawn_with(lesson, n, params, seed, &SpawnOverrides::default())
}

pub fn spawn_with(
    lesson: LessonId,
    n: usize,
    params: &SimParams,
    seed: u64,
    overrides: &SpawnOverrides,
) -> Result<ScenarioDraw> {
    params.validate()?;
    if n < 1 {
        return Err(Error::Spawn("a herd needs at least one sheep".into()));
    }
    let shape = herd_shape(lesson);
    if !matches!(shape, HerdShape::Collected) && n < 2 {
        return Err(Error::Spawn(format!("lesson {lesson} needs at least two sheep")));
    }
    let f = switching_distance(n, params.interaction_radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPAWN_STREAM);

    for _ in 0..MAX_ATTEMPTS {
        if let Some(draw) = attempt(lesson, n, f, params, overrides, &mut rng)? {
            let (sheep, stray, shepherd, goal) = draw;
            let mut world = WorldState::new(sheep, shepherd, goal, 0)?;
            world.rng = ChaCha8Rng::seed_from_u64(seed);
            world.rng.set_stream(DYNAMICS_STREAM);
            return Ok(ScenarioDraw {
                lesson,
                n,
                seed,
                world,
                termination: lesson.termination(),
                stray,
            });
        }
    }
    Err(Error::Spawn(format!(
        "no valid layout for lesson {lesson} with N={n} after {MAX_ATTEMPTS} attempts"
    )))
}

type Layout = (Vec<Vec2>, Option<usize>, Vec2, Vec2);

fn attempt(
    lesson: LessonId,
    n: usize,
    f: f64,
    params: &SimParams,
    overrides: &SpawnOverrides,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Layout>> {
    let side = params.field_size;
    let centre = field_point(rng, side);
    let mut stray = None;
    let sheep: Vec<Vec2> = match herd_shape(lesson) {
        HerdShape::Collected => {
            let radius = overrides.cluster_radius.unwrap_or(COLLECTED_RADIUS_FACTOR * f);
            (0..n).map(|_| annulus_point(rng, centre, 0.0, radius)).collect()
        }
        HerdShape::Stray => {
            let mut pts: Vec<Vec2> = (0..n - 1)
                .map(|_| annulus_point(rng, centre, 0.0, COLLECTED_RADIUS_FACTOR * f))
                .collect();
            let cluster_mean = Vec2::mean(pts.iter().copied()).expect("n >= 2");
            let d = rng.random_range(STRAY_RANGE.0 * f..=STRAY_RANGE.1 * f);
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            // Offset from the cluster mean so the stray sits exactly `d` from the full-herd GCM.
            let scale = n as f64 / (n - 1) as f64;
            pts.push(cluster_mean + Vec2::from_angle(theta) * (d * scale));
            stray = Some(n - 1);
            pts
        }
        HerdShape::Spread => {
            let outer = overrides.cluster_radius.unwrap_or(SPREAD_ANNULUS.1 * f);
            let inner = outer * SPREAD_ANNULUS.0 / SPREAD_ANNULUS.1;
            (0..n).map(|_| annulus_point(rng, centre, inner, outer)).collect()
        }
    };
    let goal = field_point(rng, side);
    let probe = WorldState::new(sheep.clone(), Vec2::ZERO, goal, 0)?;
    let gcm = probe.gcm();
    let (far_idx, far_r) = probe.furthest();

    let geometry_ok = match herd_shape(lesson) {
        HerdShape::Collected => overrides.cluster_radius.is_some() || far_r < f,
        HerdShape::Stray => {
            let d = sheep[n - 1].distance(gcm);
            (far_r - d).abs() < 1e-9 && d >= STRAY_RANGE.0 * f && d <= STRAY_RANGE.1 * f
        }
        HerdShape::Spread => overrides.cluster_radius.is_some() || far_r >= SPREAD_MIN_FURTHEST * f,
    };
    if !geometry_ok || gcm.distance(goal) < 2.0 * params.goal_radius {
        return Ok(None);
    }

    let shepherd = if let Some(offset) = overrides.shepherd_offset {
        gcm + offset
    } else {
        match lesson {
            LessonId::DriveStraight => drive_point(gcm, goal, n, params.interaction_radius)?,
            LessonId::CollectStraight => collect_point(gcm, sheep[far_idx], far_r, params.interaction_radius)?,
            _ => {
                let clear = params.stop_radius();
                let found = (0..MAX_ATTEMPTS)
                    .map(|_| field_point(rng, side))
                    .find(|p| sheep.iter().all(|s| s.distance(*p) >= clear));
                match found {
                    Some(p) => p,
                    None => return Ok(None),
                }
            }
        }
    };
    Ok(Some((sheep, stray, shepherd, goal)))
}

/// A set of simulations of one lesson: `sims_per_tier` at each of the three cluster sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonSet {
    pub lesson: LessonId,
    pub sims_per_tier: usize,
}

impl LessonSet {
    pub fn simulations(&self) -> usize {
        self.sims_per_tier * POPULATION_TIERS.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub sets: Vec<LessonSet>,
}

/// One simulation of an expanded plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSpec {
    pub sim_id: u64,
    pub lesson: LessonId,
    pub n: usize,
    pub seed: u64,
}

/// The curriculum allocation: four drive sets and four collect sets of thirty simulations.
pub fn build_plan() -> CurriculumPlan {
    build_plan_scaled(SIMS_PER_TIER)
}

/// Same set structure as [`build_plan`] with `sims_per_tier` simulations per cluster size.
pub fn build_plan_scaled(sims_per_tier: usize) -> CurriculumPlan {
    use LessonId::*;
    let layout = [
        (DriveStraight, 1),
        (DriveRandom, 3),
        (CollectStraight, 1),
        (CollectSingleRandom, 2),
        (CollectSpread, 1),
    ];
    CurriculumPlan::from_layout(&layout, sims_per_tier)
}

/// Open-environment demonstrations for monolithic agents: as many sets as the curriculum,
/// spread over lessons 3.1, 3.2 and 3.3.
pub fn build_open_plan(sims_per_tier: usize) -> CurriculumPlan {
    use LessonId::*;
    let layout = [(OpenCollected, 3), (OpenSingleSeparated, 3), (OpenSpread, 2)];
    CurriculumPlan::from_layout(&layout, sims_per_tier)
}

impl CurriculumPlan {
    fn from_layout(layout: &[(LessonId, usize)], sims_per_tier: usize) -> Self {
        let sets = layout
            .iter()
            .flat_map(|&(lesson, count)| std::iter::repeat_n(LessonSet { lesson, sims_per_tier }, count))
            .collect();
        Self { sets }
    }

    pub fn total_simulations(&self) -> usize {
        self.sets.iter().map(LessonSet::simulations).sum()
    }

    pub fn set_count(&self, lesson: LessonId) -> usize {
        self.sets.iter().filter(|s| s.lesson == lesson).count()
    }

    /// Keep only sets of the listed lessons.
    pub fn restricted_to(&self, lessons: &[LessonId]) -> Self {
        Self {
            sets: self.sets.iter().copied().filter(|s| lessons.contains(&s.lesson)).collect(),
        }
    }

    pub fn extend(&mut self, other: &CurriculumPlan) {
        self.sets.extend_from_slice(&other.sets);
    }

    /// Enumerate simulations. Each set draws its own population schedule; every simulation
    /// gets its own spawn seed. Identifiers count up from `first_id`.
    pub fn expand(&self, seed: u64, first_id: u64) -> Vec<SimSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sims = Vec::with_capacity(self.total_simulations());
        let mut next_id = first_id;
        for set in &self.sets {
            let sizes = population_schedule(&mut rng);
            for n in sizes {
                for _ in 0..set.sims_per_tier {
                    sims.push(SimSpec {
                        sim_id: next_id,
                        lesson: set.lesson,
                        n,
                        seed: rng.next_u64(),
                    });
                    next_id += 1;
                }
            }
        }
        sims
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::furthest_sheep;

    #[test]
    fn lesson_codes_round_trip() {
        for l in LessonId::ALL {
            assert_eq!(l.code().parse::<LessonId>().unwrap(), l);
        }
        assert!("4.1".parse::<LessonId>().is_err());
        assert_eq!(serde_json::to_string(&LessonId::CollectSpread).unwrap(), "\"2.3\"");
    }

    #[test]
    fn population_tiers_in_range() {
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let [a, b, c] = population_schedule(&mut rng);
            assert!((40..=60).contains(&a));
            assert!((90..=110).contains(&b));
            assert!((180..=200).contains(&c));
        }
        let draw = |s| population_schedule(&mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(draw(0), draw(0));
    }

    #[test]
    fn full_plan_allocation() {
        let plan = build_plan();
        assert_eq!(plan.total_simulations(), 240);
        assert!(plan.sets.iter().all(|s| s.simulations() == 30 && s.sims_per_tier == 10));
        assert_eq!(plan.set_count(LessonId::DriveStraight), 1);
        assert_eq!(plan.set_count(LessonId::DriveRandom), 3);
        assert_eq!(plan.set_count(LessonId::CollectStraight), 1);
        assert_eq!(plan.set_count(LessonId::CollectSingleRandom), 2);
        assert_eq!(plan.set_count(LessonId::CollectSpread), 1);
        assert_eq!(plan, build_plan());
    }

    #[test]
    fn expansion_uses_three_sizes_per_set() {
        let sims = build_plan().expand(4, 0);
        assert_eq!(sims.len(), 240);
        for chunk in sims.chunks(30) {
            let mut sizes: Vec<usize> = chunk.iter().map(|s| s.n).collect();
            sizes.dedup();
            assert!(sizes.len() <= 3);
            assert!(chunk.iter().all(|s| s.lesson == chunk[0].lesson));
        }
        assert_eq!(sims, build_plan().expand(4, 0));
        assert!(sims.iter().enumerate().all(|(i, s)| s.sim_id == i as u64));
    }

    #[test]
    fn restricted_plan_filters_lessons() {
        let plan = build_plan().restricted_to(&[LessonId::DriveStraight]);
        assert_eq!(plan.total_simulations(), 30);
    }

    #[test]
    fn straight_drive_starts_on_drive_point() {
        let params = SimParams::default();
        for seed in 0..50 {
            let s = spawn_scenario(LessonId::DriveStraight, 50, &params, seed).unwrap();
            let pd = drive_point(s.world.gcm(), s.world.goal, 50, params.interaction_radius).unwrap();
            assert!(s.world.shepherd_pos.distance(pd) < 1e-9);
        }
    }

    #[test]
    fn straight_collect_starts_on_collect_point() {
        let params = SimParams::default();
        for seed in 0..50 {
            let s = spawn_scenario(LessonId::CollectStraight, 50, &params, seed).unwrap();
            let g = s.world.gcm();
            let (i, r) = furthest_sheep(&s.world.sheep, g).unwrap();
            let pc = collect_point(g, s.world.sheep[i].pos, r, params.interaction_radius).unwrap();
            assert!(s.world.shepherd_pos.distance(pc) < 1e-9);
        }
    }

    #[test]
    fn stray_distance_within_range() {
        let params = SimParams::default();
        let f = 27.144176165949066;
        for seed in 0..200 {
            let s = spawn_scenario(LessonId::CollectSingleRandom, 50, &params, seed).unwrap();
            let idx = s.stray.unwrap();
            let d = s.world.sheep[idx].pos.distance(s.world.gcm());
            assert!(1.25 * f - 1e-9 <= d && d <= 2.0 * f + 1e-9, "d={d}");
        }
    }

    #[test]
    fn open_collected_starts_collected() {
        let params = SimParams::default();
        for seed in 0..100 {
            let s = spawn_scenario(LessonId::OpenCollected, 50, &params, seed).unwrap();
            assert!(is_collected(&s.world, &params));
        }
    }

    #[test]
    fn deterministic_in_inputs() {
        let params = SimParams::default();
        for l in LessonId::ALL {
            let a = spawn_scenario(l, 20, &params, 77).unwrap();
            let b = spawn_scenario(l, 20, &params, 77).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn impossible_layouts_error() {
        let params = SimParams::default();
        assert!(spawn_scenario(LessonId::CollectSpread, 1, &params, 0).is_err());
        assert!(spawn_scenario(LessonId::OpenSingleSeparated, 1, &params, 0).is_err());
        assert!(spawn_scenario(LessonId::OpenCollected, 0, &params, 0).is_err());
        // A field too small to keep the goal two goal radii away from the herd.
        let cramped = SimParams {
            field_size: 1.0,
            ..SimParams::default()
        };
        assert!(matches!(
            spawn_scenario(LessonId::DriveRandom, 10, &cramped, 0),
            Err(Error::Spawn(_))
        ));
    }

    #[test]
    fn overrides_place_shepherd_relative_to_gcm() {
        let params = SimParams::default();
        let o = SpawnOverrides {
            cluster_radius: Some(5.0),
            shepherd_offset: Some(Vec2::new(-40.0, 0.0)),
        };
        let s = spawn_with(LessonId::OpenCollected, 30, &params, 1, &o).unwrap();
        assert!((s.world.shepherd_pos - s.world.gcm() - Vec2::new(-40.0, 0.0)).norm() < 1e-9);
        assert!(s.world.furthest().1 <= 10.0);
    }
}

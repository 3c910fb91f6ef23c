//! Summative and formative assessments, difficulty sweeps and the report tables.
//!
//! Every agent in an assessment runs the same list of scenarios, so differences between
//! rows come from the controllers alone. Episodes run in parallel; results are collected
//! in scenario order, which keeps every report a deterministic function of its inputs.

pub mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curriculum::{population_schedule, spawn_scenario, spawn_with, LessonId, ScenarioDraw, SpawnOverrides};
use crate::dataset::Sample;
use crate::episode::{run_episode, EpisodeMetrics};
use crate::error::{Error, Result};
use crate::learner::{assemble_agent, eligible_samples, AgentRecipe, TrainConfig};
use crate::policy::{Controller, Oracle, StopGuard};
use crate::sim::SimParams;
use crate::vec2::Vec2;

pub use stats::{ols_fit, significance, TestKind};

/// Cluster sizes for a generated test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Fixed(usize),
    /// Draw the three tiers from each scenario's seed and use tier `index % 3`.
    Schedule,
}

/// Open-environment test set: equal thirds of lessons 3.1, 3.2 and 3.3 (in that order), with
/// any remainder going to 3.1.
pub fn open_test_set(seeds: &[u64], population: Population, params: &SimParams) -> Result<Vec<ScenarioDraw>> {
    let third = seeds.len() / 3;
    let first = seeds.len() - 2 * third;
    seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let lesson = if i < first {
                LessonId::OpenCollected
            } else if i < first + third {
                LessonId::OpenSingleSeparated
            } else {
                LessonId::OpenSpread
            };
            let n = match population {
                Population::Fixed(n) => n,
                Population::Schedule => population_schedule(&mut ChaCha8Rng::seed_from_u64(seed))[i % 3],
            };
            spawn_scenario(lesson, n, params, seed)
        })
        .collect()
}

/// Hash of a scenario's initial positions; equal fingerprints mean identical starting worlds.
pub fn scenario_fingerprint(s: &ScenarioDraw) -> u64 {
    let mut h = DefaultHasher::new();
    let mut put = |v: Vec2| {
        v.x.to_bits().hash(&mut h);
        v.y.to_bits().hash(&mut h);
    };
    for sheep in &s.world.sheep {
        put(sheep.pos);
        put(sheep.heading);
    }
    put(s.world.shepherd_pos);
    put(s.world.goal);
    s.world.t.hash(&mut h);
    h.finish()
}

/// Run one controller over every scenario, in scenario order.
pub fn evaluate(controller: &dyn Controller, scenarios: &[ScenarioDraw], params: &SimParams) -> Result<Vec<EpisodeMetrics>> {
    scenarios
        .par_iter()
        .map(|s| run_episode(controller, s, params))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: stats::mean(xs),
            sd: stats::std_dev(xs),
        }
    }
}

/// p-values of one agent against the reference agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub driving: f64,
    pub collecting: f64,
    pub success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRow {
    pub id: String,
    pub min_gcm_to_goal: Summary,
    pub furthest_to_gcm: Summary,
    pub success_rate: f64,
    /// Binomial standard deviation of the success count, `sqrt(n p (1 - p))`.
    pub success_count_sd: f64,
    /// `None` for the reference agent itself.
    pub vs_reference: Option<Comparison>,
    pub episodes: Vec<EpisodeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    /// Absent when only one agent was assessed.
    pub reference: Option<String>,
    pub rows: Vec<AgentRow>,
}

fn column<F: Fn(&EpisodeMetrics) -> f64>(ms: &[EpisodeMetrics], f: F) -> Vec<f64> {
    ms.iter().map(f).collect()
}

fn successes(ms: &[EpisodeMetrics]) -> Vec<f64> {
    column(ms, |m| if m.success { 1.0 } else { 0.0 })
}

/// Run every agent on the shared scenarios and compare each one with `reference`
/// (the first agent when `None`).
pub fn summative(
    agents: &[&dyn Controller],
    scenarios: &[ScenarioDraw],
    params: &SimParams,
    reference: Option<&str>,
) -> Result<AssessmentReport> {
    if agents.is_empty() {
        return Err(Error::domain("summative assessment needs at least one agent"));
    }
    if scenarios.is_empty() {
        return Err(Error::domain("summative assessment needs at least one scenario"));
    }
    let runs: Vec<Vec<EpisodeMetrics>> = agents
        .iter()
        .map(|a| evaluate(*a, scenarios, params))
        .collect::<Result<_>>()?;
    let ref_idx = match reference {
        None => 0,
        Some(id) => agents
            .iter()
            .position(|a| a.id() == id)
            .ok_or_else(|| Error::domain(format!("reference agent `{id}` is not in the list")))?,
    };
    let compare = agents.len() > 1;
    let reference_runs = &runs[ref_idx];
    let mut rows = Vec::with_capacity(agents.len());
    for (i, (agent, ms)) in agents.iter().zip(&runs).enumerate() {
        let min_goal = column(ms, |m| m.min_gcm_to_goal);
        let furthest = column(ms, |m| m.mean_furthest_to_gcm);
        let wins = successes(ms);
        let rate = stats::mean(&wins);
        let vs_reference = if compare && i != ref_idx {
            Some(Comparison {
                driving: significance(&column(reference_runs, |m| m.min_gcm_to_goal), &min_goal, TestKind::Means)?,
                collecting: significance(
                    &column(reference_runs, |m| m.mean_furthest_to_gcm),
                    &furthest,
                    TestKind::Means,
                )?,
                success: significance(&successes(reference_runs), &wins, TestKind::Proportions)?,
            })
        } else {
            None
        };
        rows.push(AgentRow {
            id: agent.id().to_string(),
            min_gcm_to_goal: Summary::of(&min_goal),
            furthest_to_gcm: Summary::of(&furthest),
            success_rate: rate,
            success_count_sd: (ms.len() as f64 * rate * (1.0 - rate)).sqrt(),
            vs_reference,
            episodes: ms.clone(),
        });
    }
    Ok(AssessmentReport {
        reference: compare.then(|| agents[ref_idx].id().to_string()),
        rows,
    })
}

impl AssessmentReport {
    pub fn row(&self, id: &str) -> Option<&AgentRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    /// Comma-separated table with one row per agent. The p-value columns are left out
    /// when there is nothing to compare against.
    pub fn to_csv(&self) -> String {
        let with_p = self.reference.is_some();
        let mut out = String::new();
        let mut cols = vec!["shepherd_id", "mean_min_gcm_to_goal", "sd_min_gcm_to_goal"];
        if with_p {
            cols.push("driving_p_value");
        }
        cols.extend(["mean_furthest_to_gcm", "sd_furthest_to_gcm"]);
        if with_p {
            cols.push("collecting_p_value");
        }
        cols.extend(["success_rate", "success_rate_sd"]);
        if with_p {
            cols.push("success_p_value");
        }
        out.push_str(&cols.join(","));
        out.push('\n');
        let p = |v: Option<f64>| v.map_or_else(|| "N/A".to_string(), |x| x.to_string());
        for r in &self.rows {
            let c = r.vs_reference;
            let mut fields = vec![
                r.id.clone(),
                r.min_gcm_to_goal.mean.to_string(),
                r.min_gcm_to_goal.sd.to_string(),
            ];
            if with_p {
                fields.push(p(c.map(|c| c.driving)));
            }
            fields.push(r.furthest_to_gcm.mean.to_string());
            fields.push(r.furthest_to_gcm.sd.to_string());
            if with_p {
                fields.push(p(c.map(|c| c.collecting)));
            }
            fields.push(r.success_rate.to_string());
            fields.push(r.success_count_sd.to_string());
            if with_p {
                fields.push(p(c.map(|c| c.success)));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    MinGcmToGoal,
    MeanFurthestToGcm,
    SuccessRate,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MinGcmToGoal, Metric::MeanFurthestToGcm, Metric::SuccessRate];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MinGcmToGoal => "min-gcm-to-goal",
            Metric::MeanFurthestToGcm => "mean-furthest-to-gcm",
            Metric::SuccessRate => "success-rate",
        }
    }

    fn aggregate(self, ms: &[EpisodeMetrics]) -> f64 {
        match self {
            Metric::MinGcmToGoal => stats::mean(&column(ms, |m| m.min_gcm_to_goal)),
            Metric::MeanFurthestToGcm => stats::mean(&column(ms, |m| m.mean_furthest_to_gcm)),
            Metric::SuccessRate => stats::mean(&successes(ms)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub agent_id: String,
    pub metric: Metric,
    /// `(training samples, metric value)`.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
}

impl LearningCurve {
    pub fn fit(agent_id: impl Into<String>, metric: Metric, points: Vec<(f64, f64)>) -> Result<Self> {
        let (slope, intercept) = ols_fit(&points)?;
        Ok(Self {
            agent_id: agent_id.into(),
            metric,
            points,
            slope,
            intercept,
        })
    }

    pub fn points_csv(&self) -> String {
        let mut out = String::from("samples,value\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// Retrains an agent on a budget of demonstration samples.
pub trait AgentBuilder: Sync {
    fn id(&self) -> &str;
    /// Largest budget this builder can honour.
    fn pool_size(&self) -> usize;
    fn build(&self, samples: usize) -> Result<Box<dyn Controller>>;
}

/// Builds agents from a fixed recipe and sample pool by seeded subsampling.
pub struct PoolBuilder {
    pub id: String,
    pub recipe: AgentRecipe,
    pub pool: Vec<Sample>,
    pub config: TrainConfig,
    /// Wrap each trained agent in [`StopGuard`].
    pub stop_guard: bool,
}

impl AgentBuilder for PoolBuilder {
    fn id(&self) -> &str {
        &self.id
    }

    fn pool_size(&self) -> usize {
        let everything = AgentRecipe {
            sample_budget: None,
            ..self.recipe
        };
        eligible_samples(&everything, &self.pool, self.config.seed)
            .map(|(s, _)| s.len())
            .unwrap_or(0)
    }

    fn build(&self, samples: usize) -> Result<Box<dyn Controller>> {
        let available = self.pool_size();
        if samples > available {
            return Err(Error::domain(format!(
                "{}: budget of {samples} samples exceeds the pool of {available}",
                self.id
            )));
        }
        let recipe = AgentRecipe {
            sample_budget: Some(samples),
            ..self.recipe
        };
        let (agent, _) = assemble_agent(&self.id, &recipe, &self.pool, &self.config)?;
        Ok(if self.stop_guard {
            Box::new(StopGuard { inner: agent })
        } else {
            Box::new(agent)
        })
    }
}

/// For every builder and sample count, retrain, evaluate on `scenarios` and fit one line per
/// metric. Curves come out grouped by builder, in [`Metric::ALL`] order.
pub fn formative(
    builders: &[&dyn AgentBuilder],
    sample_counts: &[usize],
    scenarios: &[ScenarioDraw],
    params: &SimParams,
) -> Result<Vec<LearningCurve>> {
    if sample_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("sample counts must be strictly increasing"));
    }
    let mut curves = Vec::new();
    for builder in builders {
        if let Some(&largest) = sample_counts.last() {
            if largest > builder.pool_size() {
                return Err(Error::domain(format!(
                    "{}: sample count {largest} exceeds the pool of {}",
                    builder.id(),
                    builder.pool_size()
                )));
            }
        }
        let mut per_metric: Vec<Vec<(f64, f64)>> = vec![Vec::new(); Metric::ALL.len()];
        for &count in sample_counts {
            let agent = builder.build(count)?;
            let ms = evaluate(agent.as_ref(), scenarios, params)?;
            for (k, metric) in Metric::ALL.iter().enumerate() {
                per_metric[k].push((count as f64, metric.aggregate(&ms)));
            }
        }
        for (metric, points) in Metric::ALL.iter().zip(per_metric) {
            curves.push(LearningCurve::fit(builder.id(), *metric, points)?);
        }
    }
    Ok(curves)
}

/// Ratio of learning-curve slopes, curriculum over non-curriculum.
pub fn learning_ratio(curriculum: &LearningCurve, baseline: &LearningCurve) -> Result<f64> {
    if !curriculum.slope.is_finite() || !baseline.slope.is_finite() {
        return Err(Error::domain("learning ratio needs finite slopes"));
    }
    if baseline.slope == 0.0 {
        return Err(Error::domain("learning ratio undefined: baseline slope is zero"));
    }
    Ok(curriculum.slope / baseline.slope)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifficultyFactor {
    SheepNumber,
    /// Disc radius of the initial cluster.
    SheepRadius,
    /// Shepherd spawn offset along x from the GCM.
    ShepherdSpawnX,
    /// Distance at which sheep react to the shepherd.
    ShepherdRadius,
    ShepherdSpeed,
}

impl DifficultyFactor {
    pub const ALL: [DifficultyFactor; 5] = [
        DifficultyFactor::SheepNumber,
        DifficultyFactor::SheepRadius,
        DifficultyFactor::ShepherdSpawnX,
        DifficultyFactor::ShepherdRadius,
        DifficultyFactor::ShepherdSpeed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DifficultyFactor::SheepNumber => "sheep-number",
            DifficultyFactor::SheepRadius => "sheep-radius",
            DifficultyFactor::ShepherdSpawnX => "shepherd-spawn-x",
            DifficultyFactor::ShepherdRadius => "shepherd-radius",
            DifficultyFactor::ShepherdSpeed => "shepherd-speed",
        }
    }
}

impl std::str::FromStr for DifficultyFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DifficultyFactor::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown difficulty factor `{s}`")))
    }
}

/// The scenario family a sweep perturbs. Defaults to spread herds of 50, so that herd size
/// and spawn radius affect how much collecting is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepBase {
    pub lesson: LessonId,
    pub n: usize,
    pub params: SimParams,
}

impl Default for SweepBase {
    fn default() -> Self {
        Self {
            lesson: LessonId::OpenSpread,
            n: 50,
            params: SimParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub success_rate: f64,
    /// Mean episode length over all runs, successful or not.
    pub mean_completion_time: f64,
}

/// Scripted-shepherd runs for each factor value over the same seeds.
pub fn difficulty_sweep(
    factor: DifficultyFactor,
    values: &[f64],
    seeds: &[u64],
    base: &SweepBase,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::domain("a sweep needs at least one value"));
    }
    if seeds.is_empty() {
        return Err(Error::domain("a sweep needs at least one seed"));
    }
    values
        .iter()
        .map(|&value| {
            let mut params = base.params.clone();
            let mut n = base.n;
            let mut overrides = SpawnOverrides::default();
            match factor {
                DifficultyFactor::SheepNumber => {
                    if value < 1.0 || value.fract() != 0.0 {
                        return Err(Error::domain(format!("sheep number must be a positive integer, got {value}")));
                    }
                    n = value as usize;
                }
                DifficultyFactor::SheepRadius => overrides.cluster_radius = Some(value),
                DifficultyFactor::ShepherdSpawnX => overrides.shepherd_offset = Some(Vec2::new(value, 0.0)),
                DifficultyFactor::ShepherdRadius => params.detection_radius = value,
                DifficultyFactor::ShepherdSpeed => params.shepherd_speed = value,
            }
            let scenarios: Vec<ScenarioDraw> = seeds
                .iter()
                .map(|&seed| spawn_with(base.lesson, n, &params, seed, &overrides))
                .collect::<Result<_>>()?;
            let ms = evaluate(&Oracle, &scenarios, &params)?;
            Ok(SweepRow {
                value,
                success_rate: stats::mean(&successes(&ms)),
                mean_completion_time: stats::mean(&column(&ms, |m| m.duration as f64)),
            })
        })
        .collect()
}

pub fn sweep_csv(factor: DifficultyFactor, rows: &[SweepRow]) -> String {
    let mut out = format!("{},success_rate,mean_completion_time\n", factor.name());
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.value, r.success_rate, r.mean_completion_time);
    }
    out
}

//! Run configuration: one TOML file, every field optional, command-line flags win.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use shepherd_core::curriculum::{build_open_plan, build_plan_scaled, CurriculumPlan, LessonId, SIMS_PER_TIER};
use shepherd_core::evaluation::Population;
use shepherd_core::learner::TrainConfig;
use shepherd_core::policy::StopMode;
use shepherd_core::sim::SimParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    /// The eight drive and collect sets.
    #[default]
    Curriculum,
    /// Open-environment sets, the monolithic agents' data.
    Open,
    /// Both, curriculum first.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub plan: PlanKind,
    pub sims_per_tier: usize,
    /// Keep only these lessons; all when absent.
    pub lessons: Option<Vec<LessonId>>,
    pub stop_mode: StopMode,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            plan: PlanKind::Curriculum,
            sims_per_tier: SIMS_PER_TIER,
            lessons: None,
            stop_mode: StopMode::Stop,
        }
    }
}

impl DemoConfig {
    pub fn plan(&self) -> CurriculumPlan {
        let k = self.sims_per_tier;
        let mut plan = match self.plan {
            PlanKind::Curriculum => build_plan_scaled(k),
            PlanKind::Open => build_open_plan(k),
            PlanKind::All => {
                let mut p = build_plan_scaled(k);
                p.extend(&build_open_plan(k));
                p
            }
        };
        if let Some(lessons) = &self.lessons {
            plan = plan.restricted_to(lessons);
        }
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Summative scenarios.
    pub seeds: usize,
    /// Formative scenarios.
    pub formative_seeds: usize,
    /// Test seeds are `seed_offset..seed_offset + seeds`, away from the demonstration seeds.
    pub seed_offset: u64,
    pub population: Population,
    pub formative_counts: Vec<usize>,
    /// Agent every other one is compared against; the first listed when absent.
    pub reference: Option<String>,
    /// Hold learned agents still inside the stop radius, like the scripted shepherd.
    pub neural_stop_rule: bool,
    pub sweep_lesson: LessonId,
    pub sweep_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            formative_seeds: 50,
            seed_offset: 1_000_000,
            population: Population::Fixed(50),
            formative_counts: vec![2_000, 5_000, 10_000, 20_000],
            reference: None,
            neural_stop_rule: true,
            sweep_lesson: LessonId::OpenSpread,
            sweep_n: 50,
        }
    }
}

impl EvalConfig {
    pub fn summative_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed_offset + i).collect()
    }

    pub fn formative_seed_list(&self) -> Vec<u64> {
        (0..self.formative_seeds as u64).map(|i| self.seed_offset + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            models: "models".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub params: SimParams,
    pub train: TrainConfig,
    pub demos: DemoConfig,
    pub evaluation: EvalConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The file at `path`, or defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.train.validate()?;
        anyhow::ensure!(self.demos.sims_per_tier >= 1, "demos.sims_per_tier must be >= 1");
        anyhow::ensure!(self.evaluation.seeds >= 1, "evaluation.seeds must be >= 1");
        anyhow::ensure!(self.evaluation.formative_seeds >= 1, "evaluation.formative_seeds must be >= 1");
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

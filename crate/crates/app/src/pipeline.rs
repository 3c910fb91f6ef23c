//! Batch commands: demonstrations, training, assessments and replay. Every output is a
//! deterministic function of the run config and the input files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use shepherd_core::curriculum::{spawn_scenario, LessonId};
use shepherd_core::dataset::{read_dataset, write_dataset, EpisodeRecord, Manifest, Sample};
use shepherd_core::demos::{generate, DemoEpisode};
use shepherd_core::evaluation::{
    difficulty_sweep, formative, learning_ratio, open_test_set, summative, sweep_csv, AgentBuilder,
    AssessmentReport, DifficultyFactor, LearningCurve, Metric, PoolBuilder, SweepBase, SweepRow,
};
use shepherd_core::learner::{assemble_agent, preset, AgentFamily, AgentRecipe, AgentSpec, MlpModel, TrainConfig};
use shepherd_core::policy::{Controller, Demonstrator, Oracle, StopGuard};
use shepherd_core::sim::WorldState;
use shepherd_core::Vec2;

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPISODE_DIR: &str = "episodes";

/// Dataset file of one episode, relative to its manifest.
pub fn episode_file(sim_id: u64, lesson: LessonId) -> String {
    format!("{EPISODE_DIR}/{sim_id:05}_{lesson}.csv")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Run the configured plan with the scripted demonstrator and write one dataset file per
/// finished episode plus `manifest.json` into `out`. Timed-out episodes are listed in the
/// manifest's `excluded` and get no file.
pub fn gen_demos(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let plan = cfg.demos.plan();
    ensure!(plan.total_simulations() > 0, "the demonstration plan is empty");
    let sims = plan.expand(cfg.seed, 0);
    info!("running {} demonstration episodes", sims.len());
    let demonstrator = Demonstrator {
        mode: cfg.demos.stop_mode,
    };
    let episodes = generate(&sims, &demonstrator, &cfg.params, cfg.demos.stop_mode.into())?;

    create_dir(&out.join(EPISODE_DIR))?;
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for DemoEpisode { spec, metrics, samples } in &episodes {
        if !metrics.success {
            warn!(
                "simulation {} (lesson {}, n={}) timed out after {} ticks; excluded",
                spec.sim_id, spec.lesson, spec.n, metrics.duration
            );
            excluded.push(spec.sim_id);
            continue;
        }
        let file = episode_file(spec.sim_id, spec.lesson);
        write_dataset(samples, &out.join(&file))?;
        records.push(EpisodeRecord {
            sim_id: spec.sim_id,
            lesson: spec.lesson,
            n: spec.n,
            seed: spec.seed,
            file,
            duration: metrics.duration,
            success: metrics.success,
            samples: samples.len(),
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        params: cfg.params.clone(),
        demonstrator: demonstrator.id().to_string(),
        stop_mode: cfg.demos.stop_mode,
        plan,
        episodes: records,
        excluded,
        train: None,
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    info!(
        "wrote {} episodes ({} excluded) to {}",
        manifest.episodes.len(),
        manifest.excluded.len(),
        out.display()
    );
    Ok(manifest)
}

/// Samples of every listed manifest, concatenated in order.
pub fn load_pool(manifests: &[PathBuf]) -> Result<Vec<Sample>> {
    ensure!(!manifests.is_empty(), "no dataset manifest given");
    let mut pool = Vec::new();
    for path in manifests {
        let manifest = Manifest::load(path)?;
        pool.extend(manifest.load_samples(path)?);
    }
    Ok(pool)
}

/// The recipe for `--preset`, or one assembled from explicit flags.
pub fn resolve_recipe(
    preset_id: Option<&str>,
    family: Option<AgentFamily>,
    hidden: Option<usize>,
    budget: Option<usize>,
) -> Result<AgentRecipe> {
    let mut recipe = match preset_id {
        Some(id) => preset(id).with_context(|| format!("unknown preset `{id}`"))?,
        None => AgentRecipe {
            family: family.context("either a preset or a family is required")?,
            hidden: 10,
            sample_budget: None,
        },
    };
    if let Some(f) = family {
        recipe.family = f;
    }
    if let Some(h) = hidden {
        ensure!(h >= 1, "hidden layer needs at least one unit");
        recipe.hidden = h;
    }
    if budget.is_some() {
        recipe.sample_budget = budget;
    }
    Ok(recipe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFile {
    pub role: String,
    /// Relative to the descriptor.
    pub file: String,
    pub samples: usize,
}

/// `<id>.agent.json`: what was trained, how, and where the weights are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub id: String,
    pub recipe: AgentRecipe,
    pub train: TrainConfig,
    pub nets: Vec<NetFile>,
    /// Pool size used when it fell short of the budget.
    pub budget_shortfall: Option<usize>,
}

pub fn descriptor_path(models: &Path, id: &str) -> PathBuf {
    models.join(format!("{id}.agent.json"))
}

/// Train one agent and write its model files, descriptor and `<id>.train.csv` loss log.
/// Returns the descriptor path.
pub fn train(cfg: &RunConfig, id: &str, recipe: &AgentRecipe, pool: &[Sample], out: &Path) -> Result<PathBuf> {
    ensure!(
        !id.is_empty() && !id.contains(['/', '\\']),
        "agent id `{id}` is not usable as a file name"
    );
    if recipe.family == AgentFamily::Curriculum {
        let has = |f: fn(LessonId) -> bool| pool.iter().any(|s| f(s.lesson));
        ensure!(
            has(LessonId::is_drive) && has(LessonId::is_collect),
            "a curriculum agent needs both drive-lesson and collect-lesson samples"
        );
    }
    let (agent, report) = assemble_agent(id, recipe, pool, &cfg.train)?;
    if let Some(available) = report.budget_shortfall {
        warn!(
            "{id}: budget of {} samples exceeds the eligible pool; trained on all {available}",
            recipe.sample_budget.unwrap_or(0)
        );
    }
    create_dir(out)?;
    let mut nets = Vec::new();
    let mut log = String::from("role,epoch,loss\n");
    let models: Vec<&MlpModel> = match &agent.kind {
        shepherd_core::learner::AgentKind::Curriculum { drive, collect } => vec![drive, collect],
        shepherd_core::learner::AgentKind::Monolithic { net } => vec![net],
    };
    for (net, model) in report.nets.iter().zip(models) {
        let file = if recipe.family == AgentFamily::Monolithic {
            format!("{id}.json")
        } else {
            format!("{id}.{}.json", net.role)
        };
        model.save(&out.join(&file))?;
        for (epoch, loss) in net.loss_history.iter().enumerate() {
            let _ = writeln!(log, "{},{},{}", net.role, epoch + 1, loss);
        }
        info!("{id}: {} net trained on {} samples", net.role, net.samples);
        nets.push(NetFile {
            role: net.role.to_string(),
            file,
            samples: net.samples,
        });
    }
    write_text(&out.join(format!("{id}.train.csv")), &log)?;
    let descriptor = AgentDescriptor {
        id: id.to_string(),
        recipe: *recipe,
        train: cfg.train.clone(),
        nets,
        budget_shortfall: report.budget_shortfall,
    };
    let path = descriptor_path(out, id);
    write_text(&path, &(serde_json::to_string_pretty(&descriptor)? + "\n"))?;
    Ok(path)
}

pub fn load_descriptor(path: &Path) -> Result<AgentDescriptor> {
    let text = fs::read_to_string(path).with_context(|| format!("reading agent {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing agent {}", path.display()))
}

/// Read a descriptor and the model files it names.
pub fn load_agent(path: &Path) -> Result<(AgentDescriptor, AgentSpec)> {
    let descriptor = load_descriptor(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let net = |role: &str| -> Result<MlpModel> {
        let entry = descriptor
            .nets
            .iter()
            .find(|n| n.role == role)
            .with_context(|| format!("{}: no `{role}` network listed", path.display()))?;
        Ok(MlpModel::load(&dir.join(&entry.file))?)
    };
    let agent = match descriptor.recipe.family {
        AgentFamily::Curriculum => AgentSpec::curriculum(&descriptor.id, net("drive")?, net("collect")?),
        AgentFamily::Monolithic => AgentSpec::monolithic(&descriptor.id, net("monolithic")?),
    };
    Ok((descriptor, agent))
}

/// An agent named on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentRef {
    Oracle,
    Learned(PathBuf),
}

impl AgentRef {
    /// `oracle`, a descriptor path, or a bare id looked up in `models`.
    pub fn parse(s: &str, models: &Path) -> Self {
        if s.eq_ignore_ascii_case("oracle") {
            return AgentRef::Oracle;
        }
        let p = PathBuf::from(s);
        if p.extension().is_some() || p.exists() {
            AgentRef::Learned(p)
        } else {
            AgentRef::Learned(descriptor_path(models, s))
        }
    }
}

fn controllers(cfg: &RunConfig, agents: &[AgentRef]) -> Result<Vec<Box<dyn Controller>>> {
    agents
        .iter()
        .map(|a| -> Result<Box<dyn Controller>> {
            Ok(match a {
                AgentRef::Oracle => Box::new(Oracle),
                AgentRef::Learned(path) => {
                    let (_, agent) = load_agent(path)?;
                    if cfg.evaluation.neural_stop_rule {
                        Box::new(StopGuard { inner: agent })
                    } else {
                        Box::new(agent)
                    }
                }
            })
        })
        .collect()
}

/// Summative assessment on the configured open test set. Writes `summative.csv` and the
/// per-episode table `summative_episodes.csv` into `out`.
pub fn run_summative(cfg: &RunConfig, agents: &[AgentRef], out: &Path) -> Result<AssessmentReport> {
    cfg.validate()?;
    let ctrls = controllers(cfg, agents)?;
    let mut ids: Vec<&str> = ctrls.iter().map(|c| c.id()).collect();
    ids.sort_unstable();
    if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("agent `{}` listed twice", dup[0]);
    }
    let refs: Vec<&dyn Controller> = ctrls.iter().map(|c| c.as_ref()).collect();
    let scenarios = open_test_set(&cfg.evaluation.summative_seeds(), cfg.evaluation.population, &cfg.params)?;
    info!("summative: {} agents on {} scenarios", refs.len(), scenarios.len());
    let report = summative(&refs, &scenarios, &cfg.params, cfg.evaluation.reference.as_deref())?;

    create_dir(out)?;
    write_text(&out.join("summative.csv"), &report.to_csv())?;
    let mut episodes =
        String::from("shepherd_id,episode,lesson,n,seed,min_gcm_to_goal,mean_furthest_to_gcm,success,duration\n");
    for row in &report.rows {
        for (i, (m, s)) in row.episodes.iter().zip(&scenarios).enumerate() {
            let _ = writeln!(
                episodes,
                "{},{i},{},{},{},{},{},{},{}",
                row.id, s.lesson, s.n, s.seed, m.min_gcm_to_goal, m.mean_furthest_to_gcm, m.success, m.duration
            );
        }
    }
    write_text(&out.join("summative_episodes.csv"), &episodes)?;
    Ok(report)
}

/// Formative assessment: retrain each agent's recipe at every configured sample count and fit
/// learning curves. Writes `formative/<id>_<metric>.csv` per curve and `formative_summary.csv`
/// with slopes and slope ratios against the reference agent.
pub fn run_formative(cfg: &RunConfig, manifests: &[PathBuf], agents: &[PathBuf], out: &Path) -> Result<Vec<LearningCurve>> {
    cfg.validate()?;
    ensure!(!agents.is_empty(), "formative assessment needs at least one agent");
    let pool = load_pool(manifests)?;
    let builders: Vec<PoolBuilder> = agents
        .iter()
        .map(|path| -> Result<PoolBuilder> {
            let d = load_descriptor(path)?;
            Ok(PoolBuilder {
                id: d.id,
                recipe: d.recipe,
                pool: pool.clone(),
                config: d.train,
                stop_guard: cfg.evaluation.neural_stop_rule,
            })
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&dyn AgentBuilder> = builders.iter().map(|b| b as &dyn AgentBuilder).collect();
    let scenarios = open_test_set(&cfg.evaluation.formative_seed_list(), cfg.evaluation.population, &cfg.params)?;
    let counts = &cfg.evaluation.formative_counts;
    info!(
        "formative: {} agents x {} sample counts on {} scenarios",
        refs.len(),
        counts.len(),
        scenarios.len()
    );
    let curves = formative(&refs, counts, &scenarios, &cfg.params)?;

    let reference = match &cfg.evaluation.reference {
        Some(id) => {
            ensure!(builders.iter().any(|b| &b.id == id), "reference agent `{id}` is not in the list");
            id.clone()
        }
        None => builders[0].id.clone(),
    };
    let dir = out.join("formative");
    create_dir(&dir)?;
    let by_key: HashMap<(&str, Metric), &LearningCurve> =
        curves.iter().map(|c| ((c.agent_id.as_str(), c.metric), c)).collect();
    let mut summary = String::from("shepherd_id,metric,slope,intercept,ratio_vs_reference\n");
    for c in &curves {
        write_text(&dir.join(format!("{}_{}.csv", c.agent_id, c.metric.name())), &c.points_csv())?;
        let ratio = if c.agent_id == reference {
            "N/A".to_string()
        } else {
            learning_ratio(by_key[&(reference.as_str(), c.metric)], c)
                .map_or_else(|_| "N/A".to_string(), |r| r.to_string())
        };
        let _ = writeln!(summary, "{},{},{},{},{ratio}", c.agent_id, c.metric.name(), c.slope, c.intercept);
    }
    write_text(&out.join("formative_summary.csv"), &summary)?;
    Ok(curves)
}

/// Scripted-shepherd difficulty sweep over `seeds` seeds; writes `sweep_<factor>.csv`.
pub fn run_sweep(cfg: &RunConfig, factor: DifficultyFactor, values: &[f64], seeds: usize, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    ensure!(seeds >= 1, "a sweep needs at least one seed");
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| cfg.evaluation.seed_offset + i).collect();
    let base = SweepBase {
        lesson: cfg.evaluation.sweep_lesson,
        n: cfg.evaluation.sweep_n,
        params: cfg.params.clone(),
    };
    let rows = difficulty_sweep(factor, values, &seed_list, &base)?;
    create_dir(out)?;
    write_text(&out.join(format!("sweep_{}.csv", factor.name())), &sweep_csv(factor, &rows))?;
    Ok(rows)
}

/// Re-simulate a recorded episode from its spawn seed, applying the recorded labels as
/// shepherd commands (zero for ticks with no sample), and write every position at every tick
/// as `t,entity,index,x,y`. Returns the number of ticks replayed.
pub fn replay(manifest_path: &Path, sim_id: u64, out: &Path) -> Result<u64> {
    let manifest = Manifest::load(manifest_path)?;
    let record = manifest
        .episodes
        .iter()
        .find(|e| e.sim_id == sim_id)
        .with_context(|| format!("simulation {sim_id} is not in {}", manifest_path.display()))?;
    let samples = read_dataset(&manifest.episode_path(manifest_path, record))?;
    let labels: HashMap<u64, Vec2> = samples.iter().map(|s| (s.t, s.label)).collect();
    let scenario = spawn_scenario(record.lesson, record.n, &manifest.params, record.seed)?;
    let mut world = scenario.world;

    let mut text = String::from("t,entity,index,x,y\n");
    let dump = |w: &WorldState, text: &mut String| {
        let _ = writeln!(text, "{},shepherd,0,{},{}", w.t, w.shepherd_pos.x, w.shepherd_pos.y);
        let _ = writeln!(text, "{},goal,0,{},{}", w.t, w.goal.x, w.goal.y);
        for (i, s) in w.sheep.iter().enumerate() {
            let _ = writeln!(text, "{},sheep,{i},{},{}", w.t, s.pos.x, s.pos.y);
        }
    };
    dump(&world, &mut text);
    while world.t < record.duration {
        let dir = labels.get(&world.t).copied().unwrap_or(Vec2::ZERO);
        world.step(dir, &manifest.params)?;
        dump(&world, &mut text);
    }
    if scenario.termination.reached(&world, &manifest.params) != record.success {
        warn!("replay of simulation {sim_id} does not reproduce the recorded outcome");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &text)?;
    Ok(record.duration)
}

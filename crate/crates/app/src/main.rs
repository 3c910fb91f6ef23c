use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use shepherd_app::config::{PlanKind, RunConfig};
use shepherd_app::pipeline::{self, AgentRef};
use shepherd_app::server::{self, ServerState, DEFAULT_TICK_RATE};
use shepherd_core::curriculum::LessonId;
use shepherd_core::evaluation::DifficultyFactor;
use shepherd_core::learner::AgentFamily;
use shepherd_core::policy::StopMode;

#[derive(Parser)]
#[command(name = "shepherd", about = "Swarm shepherding simulator and imitation-learning pipeline")]
struct Cli {
    /// TOML run configuration; flags below take precedence over it.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted demonstrations for the configured plan.
    GenDemos(GenDemos),
    /// Train an agent from one or more demonstration datasets.
    Train(Train),
    /// Assess agents.
    Evaluate {
        #[command(subcommand)]
        mode: Evaluate,
    },
    /// Scripted-shepherd difficulty sweep (same as `evaluate sweep`).
    Sweep(Sweep),
    /// Serve live demo sessions over a WebSocket at /ws.
    Serve(Serve),
    /// Re-simulate a recorded episode into a trajectory file.
    Replay(Replay),
}

#[derive(Args)]
struct GenDemos {
    /// Output directory [default: paths.data].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    plan: Option<PlanKind>,
    #[arg(long)]
    sims_per_tier: Option<usize>,
    /// Only these lessons, e.g. `1.1,2.2`.
    #[arg(long, value_delimiter = ',')]
    lessons: Option<Vec<LessonId>>,
    #[arg(long, value_parser = parse_stop_mode)]
    stop_mode: Option<StopMode>,
}

#[derive(Args)]
struct Train {
    /// Dataset manifests to pool.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// One of C1, NC1, NC2, NC3, NC4.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = parse_family)]
    family: Option<AgentFamily>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Subsample the eligible pool to this many samples.
    #[arg(long)]
    budget: Option<usize>,
    /// Agent id [default: the preset name].
    #[arg(long)]
    id: Option<String>,
    /// Output directory [default: paths.models].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvalCommon {
    /// Report directory [default: paths.reports].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of test scenarios.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed_offset: Option<u64>,
    /// Fixed herd size for every scenario.
    #[arg(long)]
    n: Option<usize>,
    /// Agent the others are compared against.
    #[arg(long)]
    reference: Option<String>,
    /// Evaluate learned agents without the stop rule.
    #[arg(long)]
    no_stop_rule: bool,
}

#[derive(Subcommand)]
enum Evaluate {
    /// Fixed-seed comparison of trained agents.
    Summative {
        /// `oracle`, an agent id in paths.models, or a descriptor path. Repeatable.
        #[arg(long = "agent", required = true)]
        agents: Vec<String>,
        #[command(flatten)]
        common: EvalCommon,
    },
    /// Learning curves over training-sample budgets.
    Formative {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        /// Agent id in paths.models or descriptor path. Repeatable.
        #[arg(long = "agent", required = true)]
        agents: Vec<String>,
        /// Comma-separated sample counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[command(flatten)]
        common: EvalCommon,
    },
    Sweep(Sweep),
}

#[derive(Args)]
struct Sweep {
    #[arg(long, value_parser = parse_factor)]
    factor: DifficultyFactor,
    /// Comma-separated factor values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    seeds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Serve {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = DEFAULT_TICK_RATE)]
    tick_rate: f64,
    /// Where finished human episodes go [default: <paths.data>/human].
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Replay {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sim_id: u64,
    /// Trajectory CSV to write.
    #[arg(long)]
    out: PathBuf,
}

fn parse_stop_mode(s: &str) -> Result<StopMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("expected stop or circle, got `{s}`"))
}

fn parse_family(s: &str) -> Result<AgentFamily, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected curriculum or monolithic, got `{s}`"))
}

fn parse_factor(s: &str) -> Result<DifficultyFactor, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn apply_eval(cfg: &mut RunConfig, c: &EvalCommon) -> PathBuf {
    let e = &mut cfg.evaluation;
    if let Some(n) = c.n {
        e.population = shepherd_core::evaluation::Population::Fixed(n);
    }
    if let Some(o) = c.seed_offset {
        e.seed_offset = o;
    }
    if c.reference.is_some() {
        e.reference = c.reference.clone();
    }
    if c.no_stop_rule {
        e.neural_stop_rule = false;
    }
    c.out.clone().unwrap_or_else(|| cfg.paths.reports.clone())
}

fn sweep(cfg: &RunConfig, s: &Sweep) -> Result<()> {
    let out = s.out.clone().unwrap_or_else(|| cfg.paths.reports.clone());
    let rows = pipeline::run_sweep(cfg, s.factor, &s.values, s.seeds, &out)?;
    for r in rows {
        println!(
            "{}={}: success {:.3}, mean time {:.1}",
            s.factor.name(),
            r.value,
            r.success_rate,
            r.mean_completion_time
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenDemos(g) => {
            if let Some(p) = g.plan {
                cfg.demos.plan = p;
            }
            if let Some(k) = g.sims_per_tier {
                cfg.demos.sims_per_tier = k;
            }
            if g.lessons.is_some() {
                cfg.demos.lessons = g.lessons;
            }
            if let Some(m) = g.stop_mode {
                cfg.demos.stop_mode = m;
            }
            let out = g.out.unwrap_or_else(|| cfg.paths.data.clone());
            let m = pipeline::gen_demos(&cfg, &out)?;
            println!(
                "{} episodes written, {} excluded; manifest at {}",
                m.episodes.len(),
                m.excluded.len(),
                out.join(pipeline::MANIFEST_FILE).display()
            );
        }
        Command::Train(t) => {
            if let Some(e) = t.epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = t.learning_rate {
                cfg.train.learning_rate = lr;
            }
            if let Some(b) = t.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            cfg.validate()?;
            let recipe = pipeline::resolve_recipe(t.preset.as_deref(), t.family, t.hidden, t.budget)?;
            let id = t
                .id
                .or(t.preset)
                .context("--id is required when no preset is given")?;
            let pool = pipeline::load_pool(&t.manifests)?;
            let out = t.out.unwrap_or_else(|| cfg.paths.models.clone());
            let path = pipeline::train(&cfg, &id, &recipe, &pool, &out)?;
            println!("agent {id} written to {}", path.display());
        }
        Command::Evaluate { mode } => match mode {
            Evaluate::Summative { agents, common } => {
                if let Some(s) = common.seeds {
                    cfg.evaluation.seeds = s;
                }
                let out = apply_eval(&mut cfg, &common);
                let refs: Vec<AgentRef> = agents.iter().map(|a| AgentRef::parse(a, &cfg.paths.models)).collect();
                let report = pipeline::run_summative(&cfg, &refs, &out)?;
                print!("{}", report.to_csv());
            }
            Evaluate::Formative {
                manifests,
                agents,
                counts,
                common,
            } => {
                if let Some(s) = common.seeds {
                    cfg.evaluation.formative_seeds = s;
                }
                if let Some(c) = counts {
                    cfg.evaluation.formative_counts = c;
                }
                let out = apply_eval(&mut cfg, &common);
                let paths: Vec<PathBuf> = agents
                    .iter()
                    .map(|a| match AgentRef::parse(a, &cfg.paths.models) {
                        AgentRef::Learned(p) => Ok(p),
                        AgentRef::Oracle => anyhow::bail!("the scripted shepherd has no learning curve"),
                    })
                    .collect::<Result<_>>()?;
                pipeline::run_formative(&cfg, &manifests, &paths, &out)?;
                print!("{}", std::fs::read_to_string(out.join("formative_summary.csv"))?);
            }
            Evaluate::Sweep(s) => sweep(&cfg, &s)?,
        },
        Command::Sweep(s) => sweep(&cfg, &s)?,
        Command::Serve(s) => {
            let data_dir = s.data_dir.unwrap_or_else(|| cfg.paths.data.join("human"));
            let state = ServerState::new(cfg.params.clone(), s.tick_rate, &data_dir)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind((s.host.as_str(), s.port))
                    .await
                    .with_context(|| format!("binding {}:{}", s.host, s.port))?;
                server::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Replay(r) => {
            let ticks = pipeline::replay(&r.manifest, r.sim_id, &r.out)?;
            println!("{ticks} ticks replayed to {}", r.out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

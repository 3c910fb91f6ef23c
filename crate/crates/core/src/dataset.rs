//! Feature extraction, demonstration recording and the dataset file formats.
//!
//! A sample pairs the 17-scalar feature vector of one tick with the demonstrator's unit
//! direction for that tick. Datasets are comma-separated text with one row per sample;
//! floats are written in shortest round-trip form so reading a file back is lossless.

use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::curriculum::{CurriculumPlan, LessonId};
use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::policy::{ShepherdCommand, StopMode};
use crate::sim::{SimParams, WorldState};
use crate::vec2::Vec2;

/// Population scale used to bring the agent count into the unit range.
pub const POPULATION_SCALE: f64 = 200.0;

/// The positional quantities the learner is built from, as seen in one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub t: u64,
    pub goal: Vec2,
    pub shepherd: Vec2,
    pub gcm: Vec2,
    pub furthest: Vec2,
}

impl RawObservation {
    pub fn from_world(world: &WorldState) -> Self {
        let (idx, _) = world.furthest();
        Self {
            t: world.t,
            goal: world.goal,
            shepherd: world.shepherd_pos,
            gcm: world.gcm(),
            furthest: world.sheep[idx].pos,
        }
    }

    fn is_finite(&self) -> bool {
        [self.goal, self.shepherd, self.gcm, self.furthest]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Eight relative 2D vectors followed by the scaled agent count:
/// shepherd->goal, shepherd->GCM, shepherd->furthest, GCM->goal, furthest->goal,
/// furthest->GCM, GCM velocity, furthest velocity, N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; 17]);

impl FeatureVector {
    pub const DIM: usize = 17;

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        shepherd: Vec2,
        goal: Vec2,
        gcm: Vec2,
        furthest: Vec2,
        gcm_velocity: Vec2,
        furthest_velocity: Vec2,
        n: usize,
        params: &SimParams,
    ) -> Self {
        let l = params.field_size;
        let v = params.shepherd_speed;
        let pairs = [
            (goal - shepherd) / l,
            (gcm - shepherd) / l,
            (furthest - shepherd) / l,
            (goal - gcm) / l,
            (goal - furthest) / l,
            (gcm - furthest) / l,
            gcm_velocity / v,
            furthest_velocity / v,
        ];
        let mut out = [0.0; 17];
        for (k, p) in pairs.iter().enumerate() {
            out[2 * k] = p.x;
            out[2 * k + 1] = p.y;
        }
        out[16] = n as f64 / POPULATION_SCALE;
        Self(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The `k`-th (0-based) two-component feature.
    pub fn pair(&self, k: usize) -> Vec2 {
        Vec2::new(self.0[2 * k], self.0[2 * k + 1])
    }
}

/// Features for `curr`; velocities come from `prev` (zero when absent).
pub fn compute_features(
    curr: &RawObservation,
    prev: Option<&RawObservation>,
    n: usize,
    params: &SimParams,
) -> Result<FeatureVector> {
    if !curr.is_finite() {
        return Err(Error::domain("non-finite observation"));
    }
    let (gcm_velocity, furthest_velocity) = match prev {
        None => (Vec2::ZERO, Vec2::ZERO),
        Some(p) => {
            if !p.is_finite() {
                return Err(Error::domain("non-finite previous observation"));
            }
            if p.t >= curr.t {
                return Err(Error::domain(format!(
                    "previous observation at t={} is not before t={}",
                    p.t, curr.t
                )));
            }
            let dt = (curr.t - p.t) as f64;
            ((curr.gcm - p.gcm) / dt, (curr.furthest - p.furthest) / dt)
        }
    };
    Ok(FeatureVector::assemble(
        curr.shepherd,
        curr.goal,
        curr.gcm,
        curr.furthest,
        gcm_velocity,
        furthest_velocity,
        n,
        params,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub lesson: LessonId,
    pub sim_id: u64,
    pub t: u64,
    pub features: FeatureVector,
    /// Demonstrator direction: a unit vector, or zero for an idle human tick.
    pub label: Vec2,
}

/// What to do with ticks whose command direction is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroTicks {
    Drop,
    Keep,
}

impl From<StopMode> for ZeroTicks {
    fn from(mode: StopMode) -> Self {
        match mode {
            StopMode::Stop => ZeroTicks::Drop,
            StopMode::Circle => ZeroTicks::Keep,
        }
    }
}

/// Turn a time-ordered trajectory into samples. Velocities use the previous tick when it is
/// exactly one step earlier.
pub fn record_episode(
    trajectory: &[(RawObservation, ShepherdCommand)],
    n: usize,
    lesson: LessonId,
    sim_id: u64,
    params: &SimParams,
    zero_ticks: ZeroTicks,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(trajectory.len());
    let mut prev: Option<&RawObservation> = None;
    for (obs, cmd) in trajectory {
        if let Some(p) = prev {
            if obs.t <= p.t {
                return Err(Error::domain(format!(
                    "trajectory out of order: t={} follows t={}",
                    obs.t, p.t
                )));
            }
        }
        let adjacent = prev.filter(|p| p.t + 1 == obs.t);
        let features = compute_features(obs, adjacent, n, params)?;
        prev = Some(obs);
        if zero_ticks == ZeroTicks::Drop && cmd.direction.norm() == 0.0 {
            continue;
        }
        samples.push(Sample {
            lesson,
            sim_id,
            t: obs.t,
            features,
            label: cmd.direction,
        });
    }
    Ok(samples)
}

fn header() -> Vec<String> {
    let mut cols = vec!["lesson".to_string(), "sim_id".into(), "t".into()];
    for k in 1..=8 {
        cols.push(format!("f{k}x"));
        cols.push(format!("f{k}y"));
    }
    cols.extend(["n".to_string(), "label_x".into(), "label_y".into()]);
    cols
}

const COLUMNS: usize = 3 + FeatureVector::DIM + 2;

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header()).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(COLUMNS);
    for s in samples {
        row.clear();
        row.push(s.lesson.code().to_string());
        row.push(s.sim_id.to_string());
        row.push(s.t.to_string());
        row.extend(s.features.0.iter().map(|x| x.to_string()));
        row.push(s.label.x.to_string());
        row.push(s.label.y.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let expected = header();
    let got = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if got.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(1, "unexpected header".into()));
    }
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != COLUMNS {
            return Err(parse_err(
                line,
                format!("expected {COLUMNS} fields, found {}", record.len()),
            ));
        }
        let float = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {}: {e}", i + 1)))
        };
        let int = |i: usize| -> Result<u64> {
            record[i]
                .parse::<u64>()
                .map_err(|e| parse_err(line, format!("column {}: {e}", i + 1)))
        };
        let lesson: LessonId = record[0].parse().map_err(|e: Error| parse_err(line, e.to_string()))?;
        let mut features = [0.0; FeatureVector::DIM];
        for (k, slot) in features.iter_mut().enumerate() {
            *slot = float(3 + k)?;
        }
        samples.push(Sample {
            lesson,
            sim_id: int(1)?,
            t: int(2)?,
            features: FeatureVector(features),
            label: Vec2::new(float(COLUMNS - 2)?, float(COLUMNS - 1)?),
        });
    }
    Ok(samples)
}

/// One recorded episode of a generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub sim_id: u64,
    pub lesson: LessonId,
    pub n: usize,
    /// Spawn seed; with the run's params it reproduces the initial world exactly.
    pub seed: u64,
    /// Path of the episode's dataset file, relative to the manifest.
    pub file: String,
    pub duration: u64,
    pub success: bool,
    pub samples: usize,
}

/// Index of a generation run: what was simulated, with which settings, and where it went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub params: SimParams,
    pub demonstrator: String,
    pub stop_mode: StopMode,
    pub plan: CurriculumPlan,
    pub episodes: Vec<EpisodeRecord>,
    /// Simulations that hit the time limit and were left out of the dataset.
    pub excluded: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn episode_path(&self, manifest_path: &Path, record: &EpisodeRecord) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&record.file)
    }

    /// All samples of every episode, in manifest order.
    pub fn load_samples(&self, manifest_path: &Path) -> Result<Vec<Sample>> {
        let mut all = Vec::new();
        for record in &self.episodes {
            all.extend(read_dataset(&self.episode_path(manifest_path, record))?);
        }
        Ok(all)
    }
}

//! Single-hidden-layer perceptron trained by minibatch gradient descent, and assembly of
//! curriculum (two nets plus scripted switch) and monolithic (one net) agents.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::curriculum::LessonId;
use crate::dataset::{FeatureVector, Sample};
use crate::error::{Error, Result};
use crate::vec2::Vec2;

// Independent ChaCha streams drawn from one training seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const SUBSAMPLE_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// `y = W2 * tanh(W1 * x + b1) + b2`, with row-major weight matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// `hidden_dim x input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output_dim x hidden_dim`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter gradients, laid out exactly like the model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &MlpModel) -> Self {
        Self {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

impl MlpModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation: Activation::Tanh,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    /// Weights uniform in `[-init_scale / sqrt(fan_in), init_scale / sqrt(fan_in)]`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(input_dim, hidden_dim, output_dim);
        let bound1 = init_scale / (input_dim as f64).sqrt();
        for w in &mut m.w1 {
            *w = rng.random_range(-bound1..=bound1);
        }
        let bound2 = init_scale / (hidden_dim as f64).sqrt();
        for w in &mut m.w2 {
            *w = rng.random_range(-bound2..=bound2);
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = [
            (self.w1.len(), self.hidden_dim * self.input_dim),
            (self.b1.len(), self.hidden_dim),
            (self.w2.len(), self.output_dim * self.hidden_dim),
            (self.b2.len(), self.output_dim),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        if self.output_dim != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.output_dim,
            });
        }
        if !self.params().all(f64::is_finite) {
            return Err(Error::domain("model contains non-finite weights"));
        }
        Ok(())
    }

    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64], out: &mut [f64]) {
        for (h, slot) in out.iter_mut().enumerate() {
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.b1[h];
            *slot = z.tanh();
        }
    }

    fn output_from_hidden(&self, a: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let row = &self.w2[k * self.hidden_dim..(k + 1) * self.hidden_dim];
            *slot = row.iter().zip(a).map(|(w, ai)| w * ai).sum::<f64>() + self.b2[k];
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec2> {
        self.check_input(x)?;
        if self.output_dim != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.output_dim,
            });
        }
        let mut a = vec![0.0; self.hidden_dim];
        self.hidden(x, &mut a);
        let mut o = [0.0; 2];
        self.output_from_hidden(&a, &mut o);
        Ok(Vec2::new(o[0], o[1]))
    }

    /// Mean squared error over samples and both output components, with its gradient.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], Vec2)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let mut grads = Gradients::zeros_like(self);
        let scale = 1.0 / (batch.len() as f64 * self.output_dim as f64);
        let mut loss = 0.0;
        let mut a = vec![0.0; self.hidden_dim];
        let mut dz = vec![0.0; self.hidden_dim];
        let mut o = [0.0; 2];
        for &(x, target) in batch {
            self.check_input(x)?;
            self.hidden(x, &mut a);
            self.output_from_hidden(&a, &mut o);
            let err = [o[0] - target.x, o[1] - target.y];
            loss += (err[0] * err[0] + err[1] * err[1]) * scale;
            let d_out = [2.0 * scale * err[0], 2.0 * scale * err[1]];

            dz.iter_mut().for_each(|v| *v = 0.0);
            for (k, &dk) in d_out.iter().enumerate() {
                grads.b2[k] += dk;
                let row = k * self.hidden_dim;
                for h in 0..self.hidden_dim {
                    grads.w2[row + h] += dk * a[h];
                    dz[h] += dk * self.w2[row + h];
                }
            }
            for h in 0..self.hidden_dim {
                let d = dz[h] * (1.0 - a[h] * a[h]);
                grads.b1[h] += d;
                let row = &mut grads.w1[h * self.input_dim..(h + 1) * self.input_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        Ok((loss, grads))
    }

    fn descend(&mut self, grads: &Gradients, lr: f64) {
        let pairs = [
            (&mut self.w1, &grads.w1),
            (&mut self.b1, &grads.b1),
            (&mut self.w2, &grads.w2),
            (&mut self.b2, &grads.b2),
        ];
        for (w, g) in pairs {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: MlpModel = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Initial weight bound is `init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            init_scale: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be finite and > 0"));
        }
        if self.epochs < 1 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::param("init_scale", "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn as_examples(samples: &[Sample]) -> Vec<(&[f64], Vec2)> {
    samples
        .iter()
        .map(|s| (s.features.as_slice(), s.label))
        .collect()
}

/// Minibatch SGD, reshuffled every epoch. Returns the trained model and the full-dataset
/// loss measured after each epoch.
pub fn train(model: MlpModel, samples: &[Sample], config: &TrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    config.validate()?;
    model.validate()?;
    if samples.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let examples = as_examples(samples);
    let mut model = model;
    let mut rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (_, grads) = model.loss_and_gradient(&batch)?;
            model.descend(&grads, config.learning_rate);
        }
        let (loss, _) = model.loss_and_gradient(&examples)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentKind {
    Curriculum { drive: MlpModel, collect: MlpModel },
    Monolithic { net: MlpModel },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: String,
    pub kind: AgentKind,
}

impl AgentSpec {
    pub fn curriculum(id: impl Into<String>, drive: MlpModel, collect: MlpModel) -> Self {
        Self {
            id: id.into(),
            kind: AgentKind::Curriculum { drive, collect },
        }
    }

    pub fn monolithic(id: impl Into<String>, net: MlpModel) -> Self {
        Self {
            id: id.into(),
            kind: AgentKind::Monolithic { net },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentFamily {
    /// Drive net on drive-lesson samples, collect net on collect-lesson samples.
    Curriculum,
    /// One net on open-environment samples.
    Monolithic,
}

/// How to build one agent from a sample pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecipe {
    pub family: AgentFamily,
    pub hidden: usize,
    /// Subsample the eligible pool to this many samples; `None` uses all of it.
    pub sample_budget: Option<usize>,
}

/// The five agent variants compared in the summative assessment.
pub const PRESET_IDS: [&str; 5] = ["C1", "NC1", "NC2", "NC3", "NC4"];

pub fn preset(id: &str) -> Option<AgentRecipe> {
    let mono = |hidden, budget| AgentRecipe {
        family: AgentFamily::Monolithic,
        hidden,
        sample_budget: Some(budget),
    };
    match id {
        "C1" => Some(AgentRecipe {
            family: AgentFamily::Curriculum,
            hidden: 10,
            sample_budget: None,
        }),
        "NC1" => Some(mono(20, 54_629)),
        "NC2" => Some(mono(20, 107_986)),
        "NC3" => Some(mono(10, 54_629)),
        "NC4" => Some(mono(10, 107_986)),
        _ => None,
    }
}

/// Outcome of training one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetReport {
    pub role: &'static str,
    pub samples: usize,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyReport {
    pub nets: Vec<NetReport>,
    /// Pool size actually used when it fell short of the recipe's budget.
    pub budget_shortfall: Option<usize>,
}

/// Uniform subsample of `k` items without replacement, kept in pool order.
pub fn subsample<T: Clone>(pool: &[T], k: usize, seed: u64) -> Result<Vec<T>> {
    if k > pool.len() {
        return Err(Error::domain(format!(
            "requested {k} samples from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = stream_rng(seed, SUBSAMPLE_STREAM);
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pool[i].clone()).collect())
}

fn fit_net(
    role: &'static str,
    samples: &[Sample],
    hidden: usize,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<(MlpModel, NetReport)> {
    if samples.is_empty() {
        return Err(Error::domain(format!("no training samples for the {role} network")));
    }
    let mut rng = stream_rng(init_seed, INIT_STREAM);
    let model = MlpModel::init(FeatureVector::DIM, hidden, 2, config.init_scale, &mut rng);
    let (model, loss_history) = train(model, samples, config)?;
    Ok((
        model,
        NetReport {
            role,
            samples: samples.len(),
            loss_history,
        },
    ))
}

/// Select the samples a recipe may learn from, then apply its budget.
pub fn eligible_samples(recipe: &AgentRecipe, pool: &[Sample], seed: u64) -> Result<(Vec<Sample>, Option<usize>)> {
    let keep = |l: LessonId| match recipe.family {
        AgentFamily::Curriculum => l.is_drive() || l.is_collect(),
        AgentFamily::Monolithic => l.is_open(),
    };
    let eligible: Vec<Sample> = pool.iter().filter(|s| keep(s.lesson)).cloned().collect();
    match recipe.sample_budget {
        Some(budget) if budget < eligible.len() => Ok((subsample(&eligible, budget, seed)?, None)),
        Some(budget) if budget > eligible.len() => {
            let available = eligible.len();
            Ok((eligible, Some(available)))
        }
        _ => Ok((eligible, None)),
    }
}

/// Train the networks a recipe calls for on the relevant slice of `pool`.
pub fn assemble_agent(
    id: &str,
    recipe: &AgentRecipe,
    pool: &[Sample],
    config: &TrainConfig,
) -> Result<(AgentSpec, AssemblyReport)> {
    config.validate()?;
    let (samples, budget_shortfall) = eligible_samples(recipe, pool, config.seed)?;
    match recipe.family {
        AgentFamily::Curriculum => {
            let (drive_set, collect_set): (Vec<Sample>, Vec<Sample>) =
                samples.into_iter().partition(|s| s.lesson.is_drive());
            let (drive, drive_report) = fit_net("drive", &drive_set, recipe.hidden, config, config.seed)?;
            let (collect, collect_report) =
                fit_net("collect", &collect_set, recipe.hidden, config, config.seed.wrapping_add(1))?;
            Ok((
                AgentSpec::curriculum(id, drive, collect),
                AssemblyReport {
                    nets: vec![drive_report, collect_report],
                    budget_shortfall,
                },
            ))
        }
        AgentFamily::Monolithic => {
            let (net, report) = fit_net("monolithic", &samples, recipe.hidden, config, config.seed)?;
            Ok((
                AgentSpec::monolithic(id, net),
                AssemblyReport {
                    nets: vec![report],
                    budget_shortfall,
                },
            ))
        }
    }
}

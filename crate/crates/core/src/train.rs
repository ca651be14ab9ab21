//! Minibatch Adam training, evaluation and checkpoints.
//!
//! One graph is built per sample; gradients are summed over the batch,
//! scaled by `1/B` and applied with Adam. Everything runs on one worker, so a
//! fixed seed reproduces the loss trajectory bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_task, load_feature_bundle, FeatureBundle, Sample, SyntheticTaskSpec, Target, TaskKind};
use crate::diffcore::{Adam, Graph, ParamStore, Tensor};
use crate::hcrn::{round_half_away, AnswerTask, HcrnModel, ModelConfig, Prediction};
use crate::{Error, Result};

/// Environment variable that overrides [`RunConfig::seed`].
pub const SEED_ENV: &str = "CRNKIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub batch: usize,
    /// Halve the learning rate after every this many epochs.
    pub decay_every: usize,
    pub epochs: usize,
}

impl OptimizerConfig {
    /// Batch 32 from `1e-4`, halved every 5 epochs for counting and every
    /// 10 otherwise, 25 epochs.
    pub fn for_task(task: TaskKind) -> Self {
        Self {
            lr: 1e-4,
            batch: 32,
            decay_every: if task == TaskKind::Count { 5 } else { 10 },
            epochs: 25,
        }
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.decay_every.max(1)) as i32)
    }
}

/// Where samples come from: generated on the fly or read from bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        spec: SyntheticTaskSpec,
        eval_samples: usize,
    },
    Bundles {
        train: PathBuf,
        eval: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataSource,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and applies the seed override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)?.with_env_seed()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the seed with `CRNKIT_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if o.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if o.batch == 0 || o.decay_every == 0 {
            return Err(Error::Config("batch and decay_every must be positive".into()));
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", o.lr)));
        }
        let expected = match self.task {
            TaskKind::Count => matches!(self.model.answer, AnswerTask::Count),
            TaskKind::Transition => matches!(self.model.answer, AnswerTask::OpenEnded { .. }),
            TaskKind::LongformChoice => self.model.answer.is_multi_choice(),
        };
        if !expected {
            return Err(Error::Config(format!(
                "answer head {:?} does not fit task {}",
                self.model.answer, self.task
            )));
        }
        if let DataSource::Synthetic { spec, .. } = &self.data {
            if spec.kind != self.task {
                return Err(Error::Config(format!(
                    "synthetic spec generates {} but the task is {}",
                    spec.kind, self.task
                )));
            }
        }
        self.model.validate()
    }

    /// Train and eval bundles. Synthetic eval data uses split 1, which shares
    /// the task-level motifs with the training split.
    pub fn load_data(&self) -> Result<(FeatureBundle, FeatureBundle)> {
        match &self.data {
            DataSource::Synthetic { spec, eval_samples } => {
                let train = SyntheticTaskSpec { seed: self.seed, split: 0, ..spec.clone() };
                let eval = SyntheticTaskSpec { samples: *eval_samples, split: 1, ..train.clone() };
                Ok((gen_task(&train)?, gen_task(&eval)?))
            }
            DataSource::Bundles { train, eval } => Ok((load_feature_bundle(train)?, load_feature_bundle(eval)?)),
        }
    }
}

pub fn samples(bundle: &FeatureBundle) -> Result<Vec<Sample>> {
    (0..bundle.len()).map(|i| bundle.sample(i)).collect()
}

/// Metrics of one pass over an eval set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    /// Classification accuracy, or exact-count accuracy after rounding.
    pub accuracy: f64,
    /// Count only: squared error of the rounded prediction.
    pub mse: Option<f64>,
    /// Count only: squared error of the raw score.
    pub mse_raw: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval: EvalReport,
}

#[derive(Serialize, Deserialize)]
struct SavedParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    epoch: usize,
    params: Vec<SavedParam>,
}

/// A model, its parameters and the optimizer state.
pub struct Trainer {
    config: RunConfig,
    store: ParamStore,
    model: HcrnModel,
}

fn eval_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | i as u64);
    rng
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = HcrnModel::new(&mut store, config.model.clone(), &mut rng)?;
        Ok(Self { config, store, model })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &HcrnModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// One pass over `data` in a seeded shuffled order; returns the mean loss.
    pub fn train_epoch(&mut self, data: &[Sample], epoch: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let opt = self.config.optimizer.clone();
        let adam = Adam::with_lr(opt.lr_at(epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for batch in order.chunks(opt.batch) {
            self.store.zero_grad();
            for &i in batch {
                let grads = {
                    let mut g = Graph::with_params(&self.store);
                    let out = self.model.forward(&mut g, &data[i], &mut rng)?;
                    let loss = self.model.loss(&mut g, out, data[i].target)?;
                    total += g.value(loss).item();
                    g.backward(loss)?
                };
                self.store.accumulate(&grads);
            }
            self.store.scale_grads(1.0 / batch.len() as f64);
            adam.step(&mut self.store);
        }
        Ok(total / data.len() as f64)
    }

    /// Raw output row for sample `i` of an eval set.
    pub fn output(&self, sample: &Sample, i: usize) -> Result<(Tensor, f64)> {
        let mut g = Graph::with_params(&self.store);
        let out = self.model.forward(&mut g, sample, &mut eval_rng(self.config.seed, i))?;
        let loss = self.model.loss(&mut g, out, sample.target)?;
        Ok((g.value(out).clone(), g.value(loss).item()))
    }

    pub fn evaluate(&self, data: &[Sample]) -> Result<EvalReport> {
        if data.is_empty() {
            return Err(Error::Config("eval set is empty".into()));
        }
        let n = data.len() as f64;
        let (mut loss, mut hits, mut sq, mut sq_raw) = (0.0, 0.0, 0.0, 0.0);
        for (i, s) in data.iter().enumerate() {
            let (out, l) = self.output(s, i)?;
            loss += l;
            match (self.model.predict(&out), s.target) {
                (Prediction::Class(c), Target::Class(y)) => hits += f64::from(u8::from(c == y)),
                (Prediction::Count { score, rounded }, Target::Count(y)) => {
                    let y_int = round_half_away(y);
                    hits += f64::from(u8::from(rounded == y_int));
                    sq += (rounded as f64 - y).powi(2);
                    sq_raw += (score - y).powi(2);
                }
                (p, t) => return Err(Error::Contract(format!("prediction {p:?} does not fit target {t:?}"))),
            }
        }
        let count = matches!(self.config.model.answer, AnswerTask::Count);
        Ok(EvalReport {
            loss: loss / n,
            accuracy: hits / n,
            mse: count.then_some(sq / n),
            mse_raw: count.then_some(sq_raw / n),
        })
    }

    /// Trains for the configured epochs, evaluating after each one.
    pub fn fit(
        &mut self,
        train: &[Sample],
        eval: &[Sample],
        mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut history = Vec::with_capacity(self.config.optimizer.epochs);
        for epoch in 0..self.config.optimizer.epochs {
            let train_loss = self.train_epoch(train, epoch)?;
            let metrics = EpochMetrics {
                epoch,
                lr: self.config.optimizer.lr_at(epoch),
                train_loss,
                eval: self.evaluate(eval)?,
            };
            on_epoch(&metrics)?;
            history.push(metrics);
        }
        Ok(history)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, epoch: usize) -> Result<()> {
        let params = self
            .store
            .export()
            .into_iter()
            .map(|(name, t)| SavedParam { name, shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect();
        let text = serde_json::to_string(&Checkpoint { epoch, params })?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Loads parameter values; returns the epoch the checkpoint was taken at.
    pub fn load_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        let values = ck
            .params
            .into_iter()
            .map(|p| Ok((p.name, Tensor::new(p.shape, p.data)?)))
            .collect::<Result<Vec<_>>>()?;
        self.store.import(&values)?;
        Ok(ck.epoch)
    }
}

/// Full training run: writes `metrics.jsonl`, `config.json` and
/// `checkpoint.json` to the output directory when one is set.
pub fn run_training(config: RunConfig) -> Result<(Trainer, Vec<EpochMetrics>)> {
    let (train, eval) = config.load_data()?;
    let (train, eval) = (samples(&train)?, samples(&eval)?);
    let dir = config.output_dir.clone();
    let mut trainer = Trainer::new(config)?;
    let mut log = match &dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            fs::write(d.join("config.json"), trainer.config().to_json())?;
            Some(fs::File::create(d.join("metrics.jsonl"))?)
        }
        None => None,
    };
    let history = trainer.fit(&train, &eval, |m| {
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(m)?)?;
        }
        Ok(())
    })?;
    if let Some(d) = &dir {
        trainer.save_checkpoint(d.join("checkpoint.json"), history.len())?;
    }
    Ok((trainer, history))
}

#[cfg(test)]
mod tests;

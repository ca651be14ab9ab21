use std::cell::Cell;

use rand::Rng;

use super::decoder::Decoder;
use super::{AnswerTask, ChoiceLoss, ModelConfig, Prediction, TextualStream, VisualStream};
use crate::crn::ObjectArray;
use crate::data::{project_features, segment_clips, Sample, Target};
use crate::diffcore::{cross_entropy, hinge_pair, mse, BiLstm, Graph, Linear, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Conditioning features: the question and, for multi-choice, one answer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Question {
    pub q: Var,
    pub a: Option<Var>,
}

/// A complete question-answering model.
#[derive(Debug)]
pub struct HcrnModel {
    config: ModelConfig,
    appearance: Option<Linear>,
    motion: Option<Linear>,
    question_encoder: BiLstm,
    visual: Option<VisualStream>,
    textual: Option<TextualStream>,
    decoder: Decoder,
    motion_reads: Cell<usize>,
}

/// Decoded row per sample: class probabilities `[1, C]`, choice scores
/// `[1, A]` or a count score `[1, 1]`.
pub type ModelOutput = Var;

impl HcrnModel {
    pub fn new<R: Rng>(store: &mut ParamStore, config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let dual = config.answer.is_multi_choice();
        let question_encoder = BiLstm::new(store, "question", config.word_dim, d, rng)?;
        let (appearance, motion, visual) = match &config.visual {
            Some(v) => {
                let appearance = Linear::new(store, "proj.appearance", config.appearance_dim, d, false, rng);
                let stream = VisualStream::new(store, v, d, dual, rng)?;
                let motion = stream
                    .reads_motion()
                    .then(|| Linear::new(store, "proj.motion", config.motion_dim, d, false, rng));
                (Some(appearance), motion, Some(stream))
            }
            None => (None, None, None),
        };
        let textual = config
            .textual
            .as_ref()
            .map(|t| TextualStream::new(store, t, config.word_dim, d, dual, rng))
            .transpose()?;
        let decoder = Decoder::new(store, config.answer, d, visual.is_some(), textual.is_some(), rng);
        Ok(Self {
            config,
            appearance,
            motion,
            question_encoder,
            visual,
            textual,
            decoder,
            motion_reads: Cell::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn visual(&self) -> Option<&VisualStream> {
        self.visual.as_ref()
    }

    pub fn textual(&self) -> Option<&TextualStream> {
        self.textual.as_ref()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// How many forwards have read a sample's motion features.
    pub fn motion_reads(&self) -> usize {
        self.motion_reads.get()
    }

    /// Parameters grouped by component, in a stable order.
    pub fn param_groups(&self, store: &ParamStore) -> Vec<(String, Vec<ParamId>)> {
        crate::gradcheck::groups_by_prefix(store, 3)
    }

    fn encode_tokens(&self, g: &mut Graph, tokens: &Tensor) -> Result<Var> {
        let x = g.input(tokens.clone());
        Ok(self.question_encoder.encode(g, x)?.1)
    }

    fn clip_arrays(&self, g: &mut Graph, frames: &Tensor) -> Result<Vec<ObjectArray>> {
        let (lin, v) = match (&self.appearance, &self.visual) {
            (Some(l), Some(v)) => (l, v.config()),
            _ => return Ok(Vec::new()),
        };
        let raw = g.input(frames.clone());
        let w = g.param(lin.weight);
        let projected = project_features(g, raw, w)?;
        let l = frames.rows();
        let mut rows: Vec<Option<Var>> = vec![None; l];
        segment_clips(l, v.clips, v.clip_len)?
            .into_iter()
            .map(|clip| {
                let objects = clip
                    .into_iter()
                    .map(|f| match rows[f] {
                        Some(var) => Ok(var),
                        None => {
                            let var = g.slice_rows(projected, f, f + 1)?;
                            rows[f] = Some(var);
                            Ok(var)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                ObjectArray::new(g, objects)
            })
            .collect()
    }

    /// Builds the forward graph for one sample.
    ///
    /// Multi-choice samples reuse one random stream per choice, so every
    /// choice sees the same subsets.
    pub fn forward<R: Rng + Clone>(&self, g: &mut Graph, sample: &Sample, rng: &mut R) -> Result<ModelOutput> {
        let q = self.encode_tokens(g, &sample.question)?;

        let clips = match &self.visual {
            Some(_) => {
                let frames = sample
                    .frames
                    .as_ref()
                    .ok_or_else(|| Error::Config("the visual stream needs frame features".into()))?;
                self.clip_arrays(g, frames)?
            }
            None => Vec::new(),
        };
        let motions = match &self.motion {
            Some(lin) => {
                self.motion_reads.set(self.motion_reads.get() + 1);
                let m = sample
                    .motion
                    .as_ref()
                    .ok_or_else(|| Error::Config("motion units are enabled but the sample has no motion".into()))?;
                let raw = g.input(m.clone());
                let w = g.param(lin.weight);
                Some(project_features(g, raw, w)?)
            }
            None => None,
        };
        let passage = match &self.textual {
            Some(t) => {
                let s = sample
                    .subtitle
                    .as_ref()
                    .ok_or_else(|| Error::Config("the textual stream needs subtitles".into()))?;
                let x = g.input(s.clone());
                Some(t.encode_passage(g, x)?)
            }
            None => None,
        };

        let run = |g: &mut Graph, cond: Question, rng: &mut R| -> Result<Var> {
            let ov = match &self.visual {
                Some(v) => Some(v.forward(g, &clips, motions, &cond, rng)?),
                None => None,
            };
            let ot = match (&self.textual, &passage) {
                (Some(t), Some(p)) => Some(t.forward(g, p, &cond, rng)?),
                _ => None,
            };
            self.decoder.decode(g, ov, ot, &cond)
        };

        match self.config.answer {
            AnswerTask::MultiChoice { choices, .. } => {
                if sample.n_answers != choices {
                    return Err(Error::Config(format!(
                        "model expects {choices} choices, sample has {}",
                        sample.n_answers
                    )));
                }
                let start = rng.clone();
                let mut scores = Vec::with_capacity(choices);
                for i in 0..choices {
                    let a = self.encode_tokens(g, &sample.answer_tokens(i)?)?;
                    *rng = start.clone();
                    scores.push(run(g, Question { q, a: Some(a) }, rng)?);
                }
                g.concat_cols(&scores)
            }
            _ => run(g, Question { q, a: None }, rng),
        }
    }

    /// Training loss for one decoded row.
    pub fn loss(&self, g: &mut Graph, output: Var, target: Target) -> Result<Var> {
        let class = || {
            target
                .class()
                .ok_or_else(|| Error::Config("classification task given a count target".into()))
        };
        match self.config.answer {
            AnswerTask::OpenEnded { .. } => cross_entropy(g, output, class()?),
            AnswerTask::MultiChoice { choices, loss } => {
                let label = class()?;
                if label >= choices {
                    return Err(Error::Index { index: label, len: choices });
                }
                match loss {
                    ChoiceLoss::CrossEntropy => {
                        let p = g.softmax(output, crate::diffcore::Axis::Cols);
                        cross_entropy(g, p, label)
                    }
                    ChoiceLoss::Hinge => {
                        let pos = g.pick(output, label)?;
                        let terms = (0..choices)
                            .filter(|&j| j != label)
                            .map(|j| {
                                let neg = g.pick(output, j)?;
                                hinge_pair(g, pos, neg)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let row = g.concat_cols(&terms)?;
                        Ok(g.sum(row))
                    }
                }
            }
            AnswerTask::Count => {
                let t = g.input(Tensor::matrix(1, 1, vec![target.value()])?);
                mse(g, output, t)
            }
        }
    }

    pub fn predict(&self, output: &Tensor) -> Prediction {
        self.decoder.predict(output)
    }
}

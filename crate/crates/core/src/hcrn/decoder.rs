use rand::Rng;

use super::{AnswerTask, Question};
use crate::diffcore::{Axis, Graph, Linear, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Answer head shared by all tasks: `y = ELU(W_o [õ_v; õ_t; W_q q + b (; W_a a + b)] + b)`,
/// `y' = ELU(W_y y + b)`, then a task-specific output layer.
#[derive(Clone, Debug)]
pub struct Decoder {
    task: AnswerTask,
    visual: bool,
    textual: bool,
    question: Linear,
    answer: Option<Linear>,
    fuse: Linear,
    hidden: Linear,
    out: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Class(usize),
    Count { score: f64, rounded: i64 },
}

/// Rounds half away from zero.
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Decoder {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        task: AnswerTask,
        width: usize,
        visual: bool,
        textual: bool,
        rng: &mut R,
    ) -> Self {
        let dual = task.is_multi_choice();
        let slots = usize::from(visual) + usize::from(textual) + 1 + usize::from(dual);
        let outputs = match task {
            AnswerTask::OpenEnded { classes } => classes,
            AnswerTask::MultiChoice { .. } | AnswerTask::Count => 1,
        };
        Self {
            task,
            visual,
            textual,
            question: Linear::new(store, "dec.q", width, width, true, rng),
            answer: dual.then(|| Linear::new(store, "dec.a", width, width, true, rng)),
            fuse: Linear::new(store, "dec.fuse", slots * width, width, true, rng),
            hidden: Linear::new(store, "dec.hidden", width, width, true, rng),
            out: Linear::new(store, "dec.out", width, outputs, true, rng),
        }
    }

    pub fn task(&self) -> AnswerTask {
        self.task
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.question]
            .into_iter()
            .chain(&self.answer)
            .chain([&self.fuse, &self.hidden, &self.out])
            .flat_map(|l| std::iter::once(l.weight).chain(l.bias))
            .collect()
    }

    /// Raw output row for one question (or one question-choice pair):
    /// class probabilities, a choice score or a count score.
    pub fn decode(&self, g: &mut Graph, visual: Option<Var>, textual: Option<Var>, cond: &Question) -> Result<Var> {
        let missing = |name: &str| Error::Config(format!("decoder expects a {name} stream output"));
        let mut parts = Vec::with_capacity(4);
        match (self.visual, visual) {
            (true, Some(v)) => parts.push(v),
            (true, None) => return Err(missing("visual")),
            (false, _) => {}
        }
        match (self.textual, textual) {
            (true, Some(t)) => parts.push(t),
            (true, None) => return Err(missing("textual")),
            (false, _) => {}
        }
        parts.push(self.question.forward(g, cond.q)?);
        match (&self.answer, cond.a) {
            (Some(lin), Some(a)) => parts.push(lin.forward(g, a)?),
            (Some(_), None) => return Err(Error::Config("multi-choice decoding needs an answer".into())),
            (None, _) => {}
        }
        let x = g.concat_cols(&parts)?;
        let y = self.fuse.forward(g, x)?;
        let y = g.elu(y);
        let y = self.hidden.forward(g, y)?;
        let y = g.elu(y);
        let out = self.out.forward(g, y)?;
        Ok(match self.task {
            AnswerTask::OpenEnded { .. } => g.softmax(out, Axis::Cols),
            _ => out,
        })
    }

    /// Reads a prediction off a decoded row (probabilities, choice scores
    /// or the count score).
    pub fn predict(&self, output: &Tensor) -> Prediction {
        match self.task {
            AnswerTask::Count => {
                let score = output.data()[0];
                Prediction::Count {
                    score,
                    rounded: round_half_away(score),
                }
            }
            _ => Prediction::Class(argmax(output.data())),
        }
    }
}

use rand::Rng;

use super::Question;
use crate::diffcore::{Axis, Graph, Linear, ParamId, ParamStore, Var};
use crate::{Error, Result};

/// Question-guided weighted pooling of `[H', d]` rows into one `[1, d]` row.
///
/// `I = [o W; (o W) ⊙ (q W_q)]` (plus an answer slot for multi-choice),
/// `I' = ELU(I W_I + b)`, `γ = softmax_rows(I' w + b)`, `õ = γᵀ o`.
#[derive(Clone, Debug)]
pub struct AttentionReadout {
    pub proj: Linear,
    pub question: Linear,
    pub answer: Option<Linear>,
    pub fuse: Linear,
    pub score: Linear,
    pub width: usize,
}

impl AttentionReadout {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, dual: bool, rng: &mut R) -> Self {
        let slots = if dual { 3 } else { 2 };
        Self {
            proj: Linear::new(store, &format!("{name}.proj"), width, width, false, rng),
            question: Linear::new(store, &format!("{name}.q"), width, width, false, rng),
            answer: dual.then(|| Linear::new(store, &format!("{name}.a"), width, width, false, rng)),
            fuse: Linear::new(store, &format!("{name}.fuse"), slots * width, width, true, rng),
            score: Linear::new(store, &format!("{name}.score"), width, 1, true, rng),
            width,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.proj, &self.question]
            .into_iter()
            .chain(&self.answer)
            .chain([&self.fuse, &self.score])
            .flat_map(|l| std::iter::once(l.weight).chain(l.bias))
            .collect()
    }

    /// Returns `õ` (`[1, d]`) and the attention weights (`[H', 1]`).
    pub fn forward(&self, g: &mut Graph, o: Var, cond: &Question) -> Result<(Var, Var)> {
        if g.value(o).cols() != self.width {
            return Err(Error::Dimension {
                op: "attention readout",
                left: g.shape(o).to_vec(),
                right: vec![self.width],
            });
        }
        let projected = self.proj.forward(g, o)?;
        let wq = self.question.forward(g, cond.q)?;
        let mut parts = vec![projected, g.mul_row(projected, wq)?];
        match (&self.answer, cond.a) {
            (Some(lin), Some(a)) => {
                let wa = lin.forward(g, a)?;
                parts.push(g.mul_row(projected, wa)?);
            }
            (Some(_), None) => return Err(Error::Config("multi-choice readout needs an answer".into())),
            (None, _) => {}
        }
        let i = g.concat_cols(&parts)?;
        let fused = self.fuse.forward(g, i)?;
        let fused = g.elu(fused);
        let logits = self.score.forward(g, fused)?;
        let gamma = g.softmax(logits, Axis::Rows);
        let gamma_t = g.transpose(gamma);
        Ok((g.matmul(gamma_t, o)?, gamma))
    }
}

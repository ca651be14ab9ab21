use rand::Rng;

use super::{Question, TextualStreamConfig};
use crate::crn::{ConditioningContext, CrnUnit, GForm, ObjectArray};
use crate::data::segment_subtitles;
use crate::diffcore::{Axis, BiLstm, Graph, Linear, ParamId, ParamStore, Var};
use crate::{Error, Result};

/// Subtitle stream: BiLSTM encodings of the segments and of the whole
/// passage, question (and answer) pre-selection, one relation unit over the
/// segments and a final max-pool.
#[derive(Clone, Debug)]
pub struct TextualStream {
    config: TextualStreamConfig,
    encoder: BiLstm,
    segments: Linear,
    passage: Linear,
    unit: CrnUnit,
    width: usize,
}

/// Question-independent encodings of one passage.
#[derive(Clone, Debug)]
pub struct PassageEncoding {
    /// `U_i`, one `[len, d]` matrix per segment.
    pub segments: Vec<Var>,
    /// `H^s`, `[S, d]`.
    pub passage: Var,
}

impl TextualStream {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &TextualStreamConfig,
        word_dim: usize,
        width: usize,
        dual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let m = config.segments;
        if m < 3 {
            return Err(Error::Config(format!(
                "the textual stream needs at least 3 segments, got {m}"
            )));
        }
        let slots = if dual { 3 } else { 2 };
        let unit_cfg = config.k_max.unit(m, config.t, GForm::AveragePool, config.form);
        Ok(Self {
            config: config.clone(),
            encoder: BiLstm::new(store, "text.encoder", word_dim, width, rng)?,
            segments: Linear::new(store, "text.pre_u", slots * width, width, false, rng),
            passage: Linear::new(store, "text.pre_h", slots * width, width, false, rng),
            unit: CrnUnit::new(store, "text.crn", m, width, unit_cfg, rng)?,
            width,
        })
    }

    pub fn config(&self) -> &TextualStreamConfig {
        &self.config
    }

    pub fn unit(&self) -> &CrnUnit {
        &self.unit
    }

    pub fn params(&self) -> Vec<ParamId> {
        let lstm = [&self.encoder.forward, &self.encoder.backward]
            .into_iter()
            .flat_map(|l| [l.w_ih, l.w_hh, l.bias]);
        lstm.chain([self.segments.weight, self.passage.weight])
            .chain(self.unit.params())
            .collect()
    }

    /// Encodes a `[S, word_dim]` passage, truncated to `max_len` tokens.
    pub fn encode_passage(&self, g: &mut Graph, subtitle: Var) -> Result<PassageEncoding> {
        let s = g.value(subtitle).rows().min(self.config.max_len);
        let tokens = if s < g.value(subtitle).rows() { g.slice_rows(subtitle, 0, s)? } else { subtitle };
        let spans = segment_subtitles(s, self.config.segments)?;
        let (passage, _) = self.encoder.encode(g, tokens)?;
        let segments = spans
            .iter()
            .map(|&(start, len)| {
                let seg = g.slice_rows(tokens, start, start + len)?;
                Ok(self.encoder.encode(g, seg)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PassageEncoding { segments, passage })
    }

    fn preselect_with(&self, g: &mut Graph, map: &Linear, x: Var, cond: &Question) -> Result<Var> {
        let mut parts = vec![x, g.mul_row(x, cond.q)?];
        match (map.in_dim / self.width, cond.a) {
            (3, Some(a)) => parts.push(g.mul_row(x, a)?),
            (3, None) => return Err(Error::Config("multi-choice pre-selection needs an answer".into())),
            _ => {}
        }
        let stacked = g.concat_cols(&parts)?;
        map.forward(g, stacked)
    }

    /// `W^u [U; U⊙q (; U⊙a)]` for one segment.
    pub fn preselect_segment(&self, g: &mut Graph, u: Var, cond: &Question) -> Result<Var> {
        self.preselect_with(g, &self.segments, u, cond)
    }

    /// `W^h [H; H⊙q (; H⊙a)]` for the passage.
    pub fn preselect_passage(&self, g: &mut Graph, h: Var, cond: &Question) -> Result<Var> {
        self.preselect_with(g, &self.passage, h, cond)
    }

    /// `õ_t` (`[1, d]`).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        enc: &PassageEncoding,
        cond: &Question,
        rng: &mut R,
    ) -> Result<Var> {
        let objects = enc
            .segments
            .iter()
            .map(|&u| self.preselect_segment(g, u, cond))
            .collect::<Result<Vec<_>>>()?;
        let objects = ObjectArray::new(g, objects)?;
        let h = self.preselect_passage(g, enc.passage, cond)?;
        let c = g.max_pool(h, Axis::Rows);
        let out = self.unit.forward(g, &objects, &ConditioningContext::single(c), rng)?;
        let stacked = out.results.stack(g)?;
        Ok(g.max_pool(stacked, Axis::Rows))
    }
}

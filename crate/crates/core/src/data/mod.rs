//! Feature ingestion: segmentation index math, feature projection, the
//! on-disk bundle format and synthetic task generators.

mod bundle;
mod synth;

pub use bundle::{load_feature_bundle, save_feature_bundle, BundleEntry, FeatureBundle, ManifestEntry};
pub use synth::{
    gen_count_task, gen_longform_task, gen_task, gen_transition_task, oracle_label, SyntheticTaskSpec,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Subtitle passages longer than this are truncated.
pub const SUBTITLE_CAP: usize = 256;

/// Default number of subtitle segments.
pub const DEFAULT_SEGMENTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Regression: how many frames carry the motif.
    Count,
    /// Binary: did motif A precede motif B.
    Transition,
    /// Pick the candidate answer planted in the subtitles.
    LongformChoice,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Count => "count",
            TaskKind::Transition => "transition",
            TaskKind::LongformChoice => "longform-choice",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(TaskKind::Count),
            "transition" => Ok(TaskKind::Transition),
            "longform-choice" => Ok(TaskKind::LongformChoice),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// Ground truth of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Count(f64),
}

impl Target {
    pub fn class(self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(c),
            Target::Count(_) => None,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Target::Class(c) => c as f64,
            Target::Count(v) => v,
        }
    }
}

/// One decoded sample. Visual tensors are `[frames, D]` with frames laid out
/// clip after clip; `answers` holds `n_answers` equal-length token runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Option<Tensor>,
    pub motion: Option<Tensor>,
    pub question: Tensor,
    pub answers: Option<Tensor>,
    pub n_answers: usize,
    pub subtitle: Option<Tensor>,
    pub target: Target,
}

impl Sample {
    /// Token rows of candidate `i`.
    pub fn answer_tokens(&self, i: usize) -> Result<Tensor> {
        let answers = self
            .answers
            .as_ref()
            .ok_or_else(|| Error::Contract("sample has no candidate answers".into()))?;
        if i >= self.n_answers {
            return Err(Error::Index { index: i, len: self.n_answers });
        }
        let per = answers.rows() / self.n_answers;
        let cols = answers.cols();
        let data = answers.data()[i * per * cols..(i + 1) * per * cols].to_vec();
        Tensor::matrix(per, cols, data)
    }
}

/// Frame indices of `n` clips of `t` frames from an `l`-frame video.
///
/// Anchor `i` sits at `floor((i + 0.5) l / n)`; each clip is the window
/// `[anchor - floor(t/2), anchor + ceil(t/2))`, with out-of-range positions
/// repeating the first or last frame.
pub fn segment_clips(l: usize, n: usize, t: usize) -> Result<Vec<Vec<usize>>> {
    if l == 0 || n == 0 || t == 0 {
        return Err(Error::Segmentation(format!(
            "frame count, clip count and clip length must be positive (L={l}, N={n}, T={t})"
        )));
    }
    let clips = (0..n)
        .map(|i| {
            let anchor = ((2 * i + 1) * l / (2 * n)) as isize;
            let start = anchor - (t / 2) as isize;
            (0..t as isize)
                .map(|j| (start + j).clamp(0, l as isize - 1) as usize)
                .collect()
        })
        .collect();
    Ok(clips)
}

/// `(start, len)` spans of `m` overlapping subtitle segments.
///
/// `len = floor(s/m)`, stride `max(1, len/2)`, and the last span is pinned
/// to end at `s` so the tail of the passage is always covered. Passages
/// longer than [`SUBTITLE_CAP`] are truncated first.
pub fn segment_subtitles(s: usize, m: usize) -> Result<Vec<(usize, usize)>> {
    let s = s.min(SUBTITLE_CAP);
    if m == 0 || s < m {
        return Err(Error::Segmentation(format!(
            "cannot cut {s} tokens into {m} segments"
        )));
    }
    let len = s / m;
    let stride = (len / 2).max(1);
    let mut spans: Vec<(usize, usize)> = (0..m).map(|i| ((i * stride).min(s - len), len)).collect();
    spans[m - 1] = (s - len, len);
    Ok(spans)
}

/// Linear map of raw features `[.., D_raw]` to model width with `w: [D_raw, d]`.
pub fn project_features(g: &mut Graph, raw: Var, w: Var) -> Result<Var> {
    if g.shape(raw).last() != g.shape(w).first() || g.shape(w).len() != 2 {
        return Err(Error::Dimension {
            op: "project_features",
            left: g.shape(raw).to_vec(),
            right: g.shape(w).to_vec(),
        });
    }
    g.matmul(raw, w)
}

//! Hierarchical models built from relation units: the short-form visual
//! stream (1, 1.5, 2 or 3 levels), the long-form visual and textual streams,
//! attention readout and the answer decoders.

mod decoder;
mod model;
mod readout;
mod stage;
mod textual;

pub use decoder::{round_half_away, Decoder, Prediction};
pub use model::{HcrnModel, ModelOutput, Question};
pub use readout::AttentionReadout;
pub use stage::{Stage, VisualStream};
pub use textual::{PassageEncoding, TextualStream};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crn::{CrnConfig, GForm, HForm};
use crate::{Error, Result};

/// Depth of the visual hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Levels {
    /// Video-level units over clip key frames.
    #[serde(rename = "1")]
    One,
    /// Clip-level units, clip outputs mean-pooled.
    #[serde(rename = "1.5")]
    OneAndHalf,
    #[serde(rename = "2")]
    Two,
    /// Clips, then sub-videos of `Q` clips, then the video.
    #[serde(rename = "3")]
    Three,
}

impl fmt::Display for Levels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Levels::One => "1",
            Levels::OneAndHalf => "1.5",
            Levels::Two => "2",
            Levels::Three => "3",
        })
    }
}

/// How each unit picks `k_max` from its input length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMaxPolicy {
    /// `n - 1`: every unit shrinks its array by two.
    Full,
    /// `min(k, n - 1)`; `1` disables relations.
    Fixed(usize),
}

impl KMaxPolicy {
    pub fn k_max(self, n: usize) -> usize {
        let full = n.saturating_sub(1).max(1);
        match self {
            KMaxPolicy::Full => full,
            KMaxPolicy::Fixed(k) => k.clamp(1, full),
        }
    }

    /// Output length of a unit over `n` objects.
    pub fn output_len(self, n: usize) -> usize {
        if n <= 2 {
            return 1;
        }
        match self.k_max(n) {
            1 => 1,
            k => k - 1,
        }
    }

    pub(crate) fn unit(self, n: usize, t: usize, g_form: GForm, h_form: HForm) -> CrnConfig {
        CrnConfig {
            k_max: self.k_max(n),
            t,
            g_form,
            h_form,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualStreamConfig {
    pub levels: Levels,
    /// Clips per video (N).
    pub clips: usize,
    /// Frames per clip (T).
    pub clip_len: usize,
    /// `[P, Q]`: sub-videos and clips per sub-video, three levels only.
    #[serde(default)]
    pub grouping: Option<[usize; 2]>,
    pub clip_motion: bool,
    pub clip_question: bool,
    pub video_motion: bool,
    pub video_question: bool,
    /// Question-conditioned units only; motion is never read.
    #[serde(default)]
    pub long_form: bool,
    pub motion_form: HForm,
    pub question_form: HForm,
    pub g_form: GForm,
    pub k_max: KMaxPolicy,
    pub t: usize,
}

impl VisualStreamConfig {
    /// Two levels, every unit enabled, `k_max = n - 1`, `t = 2`.
    pub fn two_level(clips: usize, clip_len: usize) -> Self {
        Self {
            levels: Levels::Two,
            clips,
            clip_len,
            grouping: None,
            clip_motion: true,
            clip_question: true,
            video_motion: true,
            video_question: true,
            long_form: false,
            motion_form: HForm::Additive,
            question_form: HForm::Multiplicative,
            g_form: GForm::AveragePool,
            k_max: KMaxPolicy::Full,
            t: 2,
        }
    }

    pub fn three_level(p: usize, q: usize, clip_len: usize) -> Self {
        Self {
            levels: Levels::Three,
            grouping: Some([p, q]),
            ..Self::two_level(p * q, clip_len)
        }
    }

    pub fn long_form(clips: usize, clip_len: usize) -> Self {
        Self {
            long_form: true,
            clip_motion: false,
            video_motion: false,
            ..Self::two_level(clips, clip_len)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextualStreamConfig {
    /// Subtitle segments (M).
    pub segments: usize,
    /// Token cap on the passage.
    pub max_len: usize,
    pub form: HForm,
    pub k_max: KMaxPolicy,
    pub t: usize,
}

impl Default for TextualStreamConfig {
    fn default() -> Self {
        Self {
            segments: crate::data::DEFAULT_SEGMENTS,
            max_len: crate::data::SUBTITLE_CAP,
            form: HForm::Multiplicative,
            k_max: KMaxPolicy::Full,
            t: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceLoss {
    Hinge,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerTask {
    OpenEnded { classes: usize },
    MultiChoice { choices: usize, loss: ChoiceLoss },
    Count,
}

impl AnswerTask {
    pub fn is_multi_choice(self) -> bool {
        matches!(self, AnswerTask::MultiChoice { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Model width (d); must be even.
    pub width: usize,
    pub appearance_dim: usize,
    pub motion_dim: usize,
    pub word_dim: usize,
    pub visual: Option<VisualStreamConfig>,
    pub textual: Option<TextualStreamConfig>,
    pub answer: AnswerTask,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return bad(format!("model width must be even and positive, got {}", self.width));
        }
        if self.word_dim == 0 {
            return bad("word_dim must be positive".into());
        }
        match self.answer {
            AnswerTask::MultiChoice { choices, .. } if choices < 2 => {
                return bad(format!("multi-choice needs at least 2 choices, got {choices}"));
            }
            AnswerTask::OpenEnded { classes } if classes < 2 => {
                return bad(format!("open-ended needs at least 2 classes, got {classes}"));
            }
            _ => {}
        }
        if let Some(v) = &self.visual {
            if self.appearance_dim == 0 {
                return bad("appearance_dim must be positive".into());
            }
            let uses_motion = !v.long_form && (v.clip_motion || v.video_motion);
            if uses_motion && self.motion_dim == 0 {
                return bad("motion_dim must be positive when motion units are enabled".into());
            }
            if v.t == 0 {
                return bad("visual t must be positive".into());
            }
            if v.long_form && v.levels != Levels::Two {
                return bad(format!("the long-form visual stream has two levels, got {}", v.levels));
            }
            match (v.levels, v.grouping) {
                (Levels::Three, Some([p, q])) if p * q != v.clips => {
                    return bad(format!("three levels need N = P*Q, got N={} P={p} Q={q}", v.clips));
                }
                (Levels::Three, None) => return bad("three levels need a [P, Q] grouping".into()),
                _ => {}
            }
        }
        if let Some(t) = &self.textual {
            if t.segments < 3 {
                return bad(format!(
                    "the textual stream needs at least 3 segments, got {}",
                    t.segments
                ));
            }
            if t.max_len == 0 || t.t == 0 {
                return bad("textual max_len and t must be positive".into());
            }
        }
        Ok(())
    }
}

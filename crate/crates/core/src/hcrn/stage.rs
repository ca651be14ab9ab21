use rand::Rng;

use super::{AttentionReadout, KMaxPolicy, Levels, Question, VisualStreamConfig};
use crate::crn::{ConditioningContext, CrnUnit, HForm, ObjectArray};
use crate::diffcore::{Graph, Lstm, ParamId, ParamStore, Var};
use crate::{Error, Result};

/// A motion-conditioned unit followed by a question-conditioned unit; either
/// may be switched off.
#[derive(Clone, Debug)]
pub struct Stage {
    n: usize,
    motion: Option<CrnUnit>,
    question: Option<CrnUnit>,
}

pub(crate) struct StageSpec {
    pub motion: bool,
    pub question: bool,
    pub motion_form: HForm,
    pub question_form: HForm,
    pub policy: KMaxPolicy,
    pub t: usize,
    pub g_form: crate::crn::GForm,
}

impl Stage {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        width: usize,
        spec: &StageSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.motion && spec.question && spec.policy == KMaxPolicy::Full && n < 5 {
            return Err(Error::Config(format!(
                "{name}: a motion + question pair shrinks its input by 4, so it needs at least 5 objects, got {n}"
            )));
        }
        let mut len = n;
        let motion = if spec.motion {
            let cfg = spec.policy.unit(len, spec.t, spec.g_form, spec.motion_form);
            let unit = CrnUnit::new(store, &format!("{name}.motion"), len, width, cfg, rng)?;
            len = unit.output_len();
            Some(unit)
        } else {
            None
        };
        let question = if spec.question {
            let cfg = spec.policy.unit(len, spec.t, spec.g_form, spec.question_form);
            Some(CrnUnit::new(store, &format!("{name}.question"), len, width, cfg, rng)?)
        } else {
            None
        };
        Ok(Self { n, motion, question })
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_len(&self) -> usize {
        match (&self.motion, &self.question) {
            (_, Some(q)) => q.output_len(),
            (Some(m), None) => m.output_len(),
            (None, None) => self.n,
        }
    }

    pub fn has_motion(&self) -> bool {
        self.motion.is_some()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.motion.iter().chain(&self.question).flat_map(CrnUnit::params).collect()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        input: ObjectArray,
        motion: Option<Var>,
        cond: &Question,
        rng: &mut R,
    ) -> Result<ObjectArray> {
        let mut x = input;
        if let Some(unit) = &self.motion {
            let c = motion.ok_or_else(|| Error::Contract(format!("`{}` needs a motion feature", unit.name())))?;
            x = unit.forward(g, &x, &ConditioningContext::single(c), rng)?.results;
        }
        if let Some(unit) = &self.question {
            let ctx = ConditioningContext { c1: cond.q, c2: cond.a };
            x = unit.forward(g, &x, &ctx, rng)?.results;
        }
        Ok(x)
    }
}

/// The visual stream of one model.
#[derive(Clone, Debug)]
pub struct VisualStream {
    config: VisualStreamConfig,
    clip: Option<Stage>,
    sub: Option<Stage>,
    video: Option<Stage>,
    motion_lstm: Option<Lstm>,
    readout: AttentionReadout,
}

impl VisualStream {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &VisualStreamConfig,
        width: usize,
        dual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, t) = (config.clips, config.clip_len);
        let question_form = if dual { config.question_form.dual() } else { config.question_form };
        let long = config.long_form;
        let spec = |motion: bool, question: bool| StageSpec {
            motion: motion && !long,
            question,
            motion_form: config.motion_form,
            question_form,
            policy: config.k_max,
            t: config.t,
            g_form: config.g_form,
        };
        let clip_spec = spec(config.clip_motion, config.clip_question);
        let video_spec = spec(config.video_motion, config.video_question);
        let clip = match config.levels {
            Levels::One => None,
            _ => Some(Stage::new(store, "vis.clip", t, width, &clip_spec, rng)?),
        };
        let (sub, video) = match config.levels {
            Levels::OneAndHalf => (None, None),
            Levels::One | Levels::Two => (None, Some(Stage::new(store, "vis.video", n, width, &video_spec, rng)?)),
            Levels::Three => {
                let [p, q] = config
                    .grouping
                    .ok_or_else(|| Error::Config("three levels need a [P, Q] grouping".into()))?;
                if p * q != n {
                    return Err(Error::Config(format!(
                        "three levels need N = P*Q, got N={n} P={p} Q={q}"
                    )));
                }
                let sub = Stage::new(store, "vis.sub", q, width, &video_spec, rng)?;
                // Too few sub-videos for a shrink-by-4 pair: one question unit.
                let top_spec = if p >= 5 || config.k_max != KMaxPolicy::Full {
                    video_spec
                } else {
                    spec(false, true)
                };
                (Some(sub), Some(Stage::new(store, "vis.top", p, width, &top_spec, rng)?))
            }
        };
        let needs_lstm = sub.iter().chain(&video).any(Stage::has_motion);
        let motion_lstm = needs_lstm.then(|| Lstm::new(store, "vis.motion_lstm", width, width, rng));
        let readout = AttentionReadout::new(store, "vis.readout", width, dual, rng);
        Ok(Self {
            config: config.clone(),
            clip,
            sub,
            video,
            motion_lstm,
            readout,
        })
    }

    pub fn config(&self) -> &VisualStreamConfig {
        &self.config
    }

    pub fn readout(&self) -> &AttentionReadout {
        &self.readout
    }

    /// Whether any unit conditions on motion.
    pub fn reads_motion(&self) -> bool {
        self.clip.iter().chain(&self.sub).chain(&self.video).any(Stage::has_motion)
    }

    /// Rows of the array handed to the readout.
    pub fn attention_slots(&self) -> usize {
        let clip_rows = self.clip.as_ref().map_or(1, Stage::output_len);
        match self.config.levels {
            Levels::One => self.video.as_ref().map_or(0, Stage::output_len),
            Levels::OneAndHalf => clip_rows,
            Levels::Two => self.video.as_ref().map_or(0, Stage::output_len) * clip_rows,
            Levels::Three => {
                let sub = self.sub.as_ref().map_or(0, Stage::output_len);
                self.video.as_ref().map_or(0, Stage::output_len) * sub * clip_rows
            }
        }
    }

    /// Clip level: `T` frame objects to one array per clip.
    pub fn clip_encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        frames: &ObjectArray,
        clip_motion: Option<Var>,
        cond: &Question,
        rng: &mut R,
    ) -> Result<ObjectArray> {
        match &self.clip {
            Some(stage) => stage.forward(g, frames.clone(), clip_motion, cond, rng),
            None => Ok(frames.clone()),
        }
    }

    /// Final LSTM state over a `[n, d]` sequence of clip motions.
    pub fn video_motion_summary(&self, g: &mut Graph, motions: Var) -> Result<Var> {
        let lstm = self
            .motion_lstm
            .as_ref()
            .ok_or_else(|| Error::Contract("this stream has no motion summariser".into()))?;
        Ok(lstm.run(g, motions, false)?.1)
    }

    fn summary_if(&self, g: &mut Graph, stage: &Stage, motions: Option<Var>) -> Result<Option<Var>> {
        match (stage.has_motion(), motions) {
            (true, Some(m)) => self.video_motion_summary(g, m).map(Some),
            (true, None) => Err(Error::Contract("motion units enabled but no motion given".into())),
            (false, _) => Ok(None),
        }
    }

    /// Video level over one object per clip.
    pub fn video_encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        clips: &ObjectArray,
        motions: Option<Var>,
        cond: &Question,
        rng: &mut R,
    ) -> Result<ObjectArray> {
        let stage = self
            .video
            .as_ref()
            .ok_or_else(|| Error::Contract("this stream has no video level".into()))?;
        let motion = self.summary_if(g, stage, motions)?;
        stage.forward(g, clips.clone(), motion, cond, rng)
    }

    /// Sub-videos of `Q` clips, then the video over the `P` sub-video objects.
    pub fn hyperclip_encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        clips: &ObjectArray,
        motions: Option<Var>,
        cond: &Question,
        rng: &mut R,
    ) -> Result<ObjectArray> {
        let (Some(sub), Some(top), Some([p, q])) = (&self.sub, &self.video, self.config.grouping) else {
            return Err(Error::Contract("this stream has no sub-video level".into()));
        };
        if clips.len() != p * q {
            return Err(Error::Config(format!(
                "expected P*Q = {} clip objects, got {}",
                p * q,
                clips.len()
            )));
        }
        let mut subs = Vec::with_capacity(p);
        for j in 0..p {
            let members = ObjectArray::new(g, clips.objects()[j * q..(j + 1) * q].to_vec())?;
            let part = match motions {
                Some(m) if sub.has_motion() => Some(g.slice_rows(m, j * q, (j + 1) * q)?),
                _ => None,
            };
            let motion = self.summary_if(g, sub, part)?;
            let out = sub.forward(g, members, motion, cond, rng)?;
            subs.push(out.stack(g)?);
        }
        let subs = ObjectArray::new(g, subs)?;
        let motion = self.summary_if(g, top, motions)?;
        top.forward(g, subs, motion, cond, rng)
    }

    /// Runs every level and returns the array fed to the readout.
    ///
    /// `clips` holds `N` arrays of `T` frame objects; `motions` is `[N, d]`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        clips: &[ObjectArray],
        motions: Option<Var>,
        cond: &Question,
        rng: &mut R,
    ) -> Result<ObjectArray> {
        let n = self.config.clips;
        if clips.len() != n {
            return Err(Error::Contract(format!("expected {n} clips, got {}", clips.len())));
        }
        let motions = if self.reads_motion() { motions } else { None };
        if self.config.levels == Levels::One {
            // key frame = middle frame of each clip
            let keys = clips.iter().map(|c| c.get(c.len() / 2)).collect();
            let keys = ObjectArray::new(g, keys)?;
            return self.video_encode(g, &keys, motions, cond, rng);
        }
        let mut encoded = Vec::with_capacity(n);
        for (i, frames) in clips.iter().enumerate() {
            let m = match motions {
                Some(m) if self.clip.as_ref().is_some_and(Stage::has_motion) => Some(g.slice_rows(m, i, i + 1)?),
                _ => None,
            };
            let out = self.clip_encode(g, frames, m, cond, rng)?;
            encoded.push(out.stack(g)?);
        }
        match self.config.levels {
            Levels::OneAndHalf => {
                let pooled = if encoded.len() == 1 { encoded[0] } else { g.mean_of(&encoded)? };
                ObjectArray::new(g, vec![pooled])
            }
            Levels::Two => {
                let arr = ObjectArray::new(g, encoded)?;
                self.video_encode(g, &arr, motions, cond, rng)
            }
            Levels::Three => {
                let arr = ObjectArray::new(g, encoded)?;
                self.hyperclip_encode(g, &arr, motions, cond, rng)
            }
            Levels::One => unreachable!("handled above"),
        }
    }

    /// Encodes and reads out `õ_v` (`[1, d]`).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        clips: &[ObjectArray],
        motions: Option<Var>,
        cond: &Question,
        rng: &mut R,
    ) -> Result<Var> {
        let o = self.encode(g, clips, motions, cond, rng)?;
        let stacked = o.stack(g)?;
        Ok(self.readout.forward(g, stacked, cond)?.0)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.clip.iter().chain(&self.sub).chain(&self.video).flat_map(Stage::params).collect();
        if let Some(l) = &self.motion_lstm {
            ids.extend([l.w_ih, l.w_hh, l.bias]);
        }
        ids.extend(self.readout.params());
        ids
    }
}

//! Synthetic tasks with answers planted so an oracle can read them back.
//!
//! Noise is always projected off the planted directions, so the oracles are
//! exact at any noise scale. Task-level vectors (motifs, the visual question)
//! come from `seed` alone; per-sample draws also depend on `split`, so train
//! and eval sets share motifs but not samples.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::bundle::sample_key;
use super::{segment_subtitles, FeatureBundle, TaskKind, DEFAULT_SEGMENTS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub samples: usize,
    /// Clips per video (N).
    pub clips: usize,
    /// Frames per clip (T).
    pub clip_len: usize,
    /// Raw visual feature width.
    pub feature_dim: usize,
    /// Token embedding width.
    pub word_dim: usize,
    pub question_len: usize,
    /// Inclusive range of motif frames for the count task.
    pub motif_range: [usize; 2],
    pub noise: f64,
    pub seed: u64,
    pub split: u64,
    /// Candidate answers (long-form).
    pub choices: usize,
    pub subtitle_len: usize,
    pub segments: usize,
    /// Also plant the wrong candidates, away from the question cue.
    pub distractors: bool,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Count,
            samples: 64,
            clips: 8,
            clip_len: 8,
            feature_dim: 16,
            word_dim: 16,
            question_len: 4,
            motif_range: [0, 8],
            noise: 0.5,
            seed: 0,
            split: 0,
            choices: 4,
            subtitle_len: 48,
            segments: DEFAULT_SEGMENTS,
            distractors: false,
        }
    }
}

fn gen_err(msg: impl Into<String>) -> Error {
    Error::Generation(msg.into())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `count` mutually orthonormal vectors of width `dim`.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        project_off(&mut v, &basis);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

fn project_off(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

struct Noise {
    dist: Option<Normal<f64>>,
}

impl Noise {
    fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(gen_err(format!("noise scale must be finite and non-negative, got {scale}")));
        }
        Ok(Self {
            dist: (scale > 0.0).then(|| Normal::new(0.0, scale).expect("valid scale")),
        })
    }

    /// `rows` noise vectors orthogonal to every vector in `avoid`.
    fn rows(&self, rng: &mut ChaCha8Rng, rows: usize, dim: usize, avoid: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                let mut v: Vec<f64> = match &self.dist {
                    Some(d) => (0..dim).map(|_| d.sample(rng)).collect(),
                    None => vec![0.0; dim],
                };
                project_off(&mut v, avoid);
                v
            })
            .collect()
    }
}

fn flat(rows: &[Vec<f64>]) -> Vec<f32> {
    rows.iter().flatten().map(|&v| v as f32).collect()
}

fn rngs(spec: &SyntheticTaskSpec) -> (ChaCha8Rng, ChaCha8Rng) {
    let task = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = ChaCha8Rng::seed_from_u64(spec.seed);
    samples.set_stream(1 + spec.split);
    (task, samples)
}

fn check_visual(spec: &SyntheticTaskSpec, motifs: usize) -> Result<()> {
    if spec.samples == 0 || spec.clips == 0 || spec.clip_len == 0 || spec.question_len == 0 || spec.word_dim == 0 {
        return Err(gen_err("samples, clips, clip_len, question_len and word_dim must be positive"));
    }
    if spec.feature_dim <= motifs {
        return Err(gen_err(format!(
            "feature_dim {} leaves no room for noise beside {motifs} motif(s)",
            spec.feature_dim
        )));
    }
    Ok(())
}

/// Shared per-sample visual fields; `frames` already holds any planted motifs.
fn push_visual(
    bundle: &mut FeatureBundle,
    spec: &SyntheticTaskSpec,
    i: usize,
    frames: &[Vec<f64>],
    motion: &[Vec<f64>],
    question: &[Vec<f64>],
) -> Result<()> {
    let (l, d) = (spec.clips * spec.clip_len, spec.feature_dim);
    bundle.push(sample_key(i, "frames"), vec![l, d], flat(frames))?;
    bundle.push(sample_key(i, "motion"), vec![spec.clips, d], flat(motion))?;
    bundle.push(sample_key(i, "question"), vec![spec.question_len, spec.word_dim], flat(question))
}

/// Count task: the motif is added to exactly `c` frames; label `c`.
pub fn gen_count_task(spec: &SyntheticTaskSpec) -> Result<FeatureBundle> {
    check_visual(spec, 1)?;
    let slots = spec.clips * spec.clip_len;
    let [lo, hi] = spec.motif_range;
    if lo > hi || hi > slots {
        return Err(gen_err(format!(
            "motif range {lo}..={hi} does not fit {slots} frame slots"
        )));
    }
    let noise = Noise::new(spec.noise)?;
    let (mut task_rng, mut rng) = rngs(spec);
    let motif = orthonormal(&mut task_rng, 1, spec.feature_dim);
    let question = noise_free_tokens(&mut task_rng, spec.question_len, spec.word_dim);

    let mut bundle = FeatureBundle::new(TaskKind::Count, spec.samples);
    bundle.push("task/motif", vec![spec.feature_dim], flat(&motif))?;
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let c = rng.gen_range(lo..=hi);
        let mut frames = noise.rows(&mut rng, slots, spec.feature_dim, &motif);
        for pos in index::sample(&mut rng, slots, c) {
            frames[pos].iter_mut().zip(&motif[0]).for_each(|(x, m)| *x += m);
        }
        let motion = noise.rows(&mut rng, spec.clips, spec.feature_dim, &[]);
        push_visual(&mut bundle, spec, i, &frames, &motion, &question)?;
        labels.push(c as f32);
    }
    bundle.push("labels", vec![spec.samples], labels)?;
    Ok(bundle)
}

/// Transition task: motifs A and B go into two distinct frames; label 1
/// when B comes first.
pub fn gen_transition_task(spec: &SyntheticTaskSpec) -> Result<FeatureBundle> {
    check_visual(spec, 2)?;
    let slots = spec.clips * spec.clip_len;
    if slots < 2 {
        return Err(gen_err("transition needs at least two frames"));
    }
    let noise = Noise::new(spec.noise)?;
    let (mut task_rng, mut rng) = rngs(spec);
    let motifs = orthonormal(&mut task_rng, 2, spec.feature_dim);
    let question = noise_free_tokens(&mut task_rng, spec.question_len, spec.word_dim);

    let mut bundle = FeatureBundle::new(TaskKind::Transition, spec.samples);
    bundle.push("task/motif_a", vec![spec.feature_dim], flat(&motifs[..1]))?;
    bundle.push("task/motif_b", vec![spec.feature_dim], flat(&motifs[1..]))?;
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let mut frames = noise.rows(&mut rng, slots, spec.feature_dim, &motifs);
        let mut pos = index::sample(&mut rng, slots, 2).into_vec();
        pos.sort_unstable();
        let swapped = rng.gen_bool(0.5);
        let (first, second) = if swapped { (&motifs[1], &motifs[0]) } else { (&motifs[0], &motifs[1]) };
        frames[pos[0]].iter_mut().zip(first).for_each(|(x, m)| *x += m);
        frames[pos[1]].iter_mut().zip(second).for_each(|(x, m)| *x += m);
        let motion = noise.rows(&mut rng, spec.clips, spec.feature_dim, &[]);
        push_visual(&mut bundle, spec, i, &frames, &motion, &question)?;
        labels.push(swapped as u8 as f32);
    }
    bundle.push("labels", vec![spec.samples], labels)?;
    Ok(bundle)
}

fn noise_free_tokens(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid scale");
    (0..rows).map(|_| (0..dim).map(|_| normal.sample(rng)).collect()).collect()
}

/// Long-form choice: the question's first token is a cue; the subtitle
/// holds that cue immediately followed by the correct candidate, inside one
/// segment span. Label = index of that candidate.
pub fn gen_longform_task(spec: &SyntheticTaskSpec) -> Result<FeatureBundle> {
    check_visual(spec, 0)?;
    let a = spec.choices;
    if a < 2 {
        return Err(gen_err("long-form choice needs at least two candidates"));
    }
    if spec.word_dim < a + 2 {
        return Err(gen_err(format!(
            "word_dim {} cannot hold {a} candidates, a cue and noise",
            spec.word_dim
        )));
    }
    let spans = segment_subtitles(spec.subtitle_len, spec.segments).map_err(|e| gen_err(e.to_string()))?;
    if spans[0].1 < 2 {
        return Err(gen_err("subtitle segments must hold at least two tokens"));
    }
    let s = spec.subtitle_len.min(super::SUBTITLE_CAP);
    if spec.distractors && s < a + 2 {
        return Err(gen_err("subtitle too short to hold the distractors"));
    }
    let noise = Noise::new(spec.noise)?;
    let (_, mut rng) = rngs(spec);

    let mut bundle = FeatureBundle::new(TaskKind::LongformChoice, spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    let slots = spec.clips * spec.clip_len;
    for i in 0..spec.samples {
        let basis = orthonormal(&mut rng, a + 1, spec.word_dim);
        let (cue, answers) = (&basis[0], &basis[1..]);
        let label = rng.gen_range(0..a);

        let mut question = vec![cue.clone()];
        question.extend(noise.rows(&mut rng, spec.question_len - 1, spec.word_dim, &basis));
        let mut subtitle = noise.rows(&mut rng, s, spec.word_dim, &basis);
        let (start, len) = spans[rng.gen_range(0..spans.len())];
        let p = start + rng.gen_range(0..len - 1);
        subtitle[p] = cue.clone();
        subtitle[p + 1] = answers[label].clone();
        if spec.distractors {
            let free: Vec<usize> = (0..s).filter(|&j| j != p && j != p + 1 && j + 1 != p).collect();
            if free.len() < a - 1 {
                return Err(gen_err("subtitle too short to hold the distractors"));
            }
            let picks = index::sample(&mut rng, free.len(), a - 1);
            let wrong = (0..a).filter(|&j| j != label);
            for (slot, j) in picks.iter().zip(wrong) {
                subtitle[free[slot]] = answers[j].clone();
            }
        }

        let frames = noise.rows(&mut rng, slots, spec.feature_dim, &[]);
        let motion = noise.rows(&mut rng, spec.clips, spec.feature_dim, &[]);
        push_visual(&mut bundle, spec, i, &frames, &motion, &question)?;
        bundle.push(sample_key(i, "answers"), vec![a, 1, spec.word_dim], flat(answers))?;
        bundle.push(sample_key(i, "subtitle"), vec![s, spec.word_dim], flat(&subtitle))?;
        labels.push(label as f32);
    }
    bundle.push("labels", vec![spec.samples], labels)?;
    Ok(bundle)
}

pub fn gen_task(spec: &SyntheticTaskSpec) -> Result<FeatureBundle> {
    match spec.kind {
        TaskKind::Count => gen_count_task(spec),
        TaskKind::Transition => gen_transition_task(spec),
        TaskKind::LongformChoice => gen_longform_task(spec),
    }
}

fn rows_of<'a>(bundle: &'a FeatureBundle, name: &str) -> Result<(Vec<&'a [f32]>, usize)> {
    let e = bundle.get(name).ok_or_else(|| Error::Format {
        entry: name.to_string(),
        reason: "missing".into(),
    })?;
    let cols = *e.shape.last().unwrap_or(&1);
    Ok((e.data.chunks(cols.max(1)).collect(), cols))
}

fn dot32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Recomputes sample `i`'s label from its features.
pub fn oracle_label(bundle: &FeatureBundle, i: usize) -> Result<f64> {
    match bundle.task() {
        TaskKind::Count => {
            let (motif, _) = rows_of(bundle, "task/motif")?;
            let (frames, _) = rows_of(bundle, &sample_key(i, "frames"))?;
            Ok(frames.iter().filter(|f| dot32(f, motif[0]) > 0.5).count() as f64)
        }
        TaskKind::Transition => {
            let (a, _) = rows_of(bundle, "task/motif_a")?;
            let (b, _) = rows_of(bundle, "task/motif_b")?;
            let (frames, _) = rows_of(bundle, &sample_key(i, "frames"))?;
            let pa = argmax(frames.iter().map(|f| dot32(f, a[0])));
            let pb = argmax(frames.iter().map(|f| dot32(f, b[0])));
            Ok((pb < pa) as u8 as f64)
        }
        TaskKind::LongformChoice => {
            let (question, _) = rows_of(bundle, &sample_key(i, "question"))?;
            let (answers, _) = rows_of(bundle, &sample_key(i, "answers"))?;
            let (subtitle, _) = rows_of(bundle, &sample_key(i, "subtitle"))?;
            let cue = question[0];
            let p = argmax(subtitle.iter().map(|t| dot32(t, cue)));
            let next = subtitle.get(p + 1).ok_or_else(|| Error::Format {
                entry: sample_key(i, "subtitle"),
                reason: "cue has no following token".into(),
            })?;
            Ok(argmax(answers.iter().map(|a| dot32(next, a))) as f64)
        }
    }
}
